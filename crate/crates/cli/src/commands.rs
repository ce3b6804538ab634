//! Subcommand bodies. Each returns its files in memory; nothing touches the
//! output directory until the whole computation has succeeded.

use std::f64::consts::SQRT_2;

use kpo_core::fluctuations::{fluctuation_spectrum, sa_transform};
use kpo_core::labframe::{demodulate, integrate_lab, lab_params, max_lab_step};
use kpo_core::langevin::{
    assign_branches, default_dt, integrate_strided, pump_noisy_probe, welch_quadratures, NoiseSpec, ProbeOptions,
    WelchOptions,
};
use kpo_core::meanfield::{
    bifurcation_sweep, characteristic_exponents, find_steady_states, jacobian, phase_diagram, BifurcationSweep,
    SolverOptions, SteadyState, SweepOptions,
};
use kpo_core::model::{lobe_threshold, normal_modes};
use kpo_core::quantum::{
    default_axes, local_maxima, mean_field_points, quadrature_distribution, solve_lindblad, Correspondence,
    QuantumOptions,
};
use kpo_core::{Complex64, KpoError};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, Grid, Resolved};
use crate::output::{json_file, num, OutputFile, Table};

/// Failure of a subcommand.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Model(KpoError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Model(e) => match e {
                KpoError::NotStationary { .. }
                | KpoError::Diverged { .. }
                | KpoError::NonConvergence(_)
                | KpoError::DegenerateSteadyState(_)
                | KpoError::CutoffTooSmall(_) => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<KpoError> for RunError {
    fn from(e: KpoError) -> Self {
        RunError::Model(e)
    }
}

type Run = Result<Vec<OutputFile>, RunError>;

fn missing(key: &str) -> RunError {
    RunError::Config(ConfigError(vec![format!("{key}: task block missing")]))
}

fn invalid(msg: String) -> RunError {
    RunError::Config(ConfigError(vec![msg]))
}

fn solver(n_starts: Option<usize>) -> SolverOptions {
    let d = SolverOptions::default();
    SolverOptions { n_starts: n_starts.unwrap_or(d.n_starts), ..d }
}

fn values(g: &Grid) -> Vec<f64> {
    g.values.clone().unwrap_or_default()
}

fn site_cols(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}_{j}")).collect()
}

#[derive(Serialize)]
struct StateOut<'a> {
    index: usize,
    amplitudes: &'a [Complex64],
    norm: f64,
    stable: bool,
    symmetry: &'static str,
    exponents: &'a [Complex64],
    max_re_exponent: f64,
    residual: f64,
}

fn state_out(index: usize, s: &SteadyState) -> StateOut<'_> {
    StateOut {
        index,
        amplitudes: &s.amplitudes,
        norm: s.norm(),
        stable: s.stable,
        symmetry: s.symmetry.as_str(),
        exponents: &s.exponents,
        max_re_exponent: s.max_re_exponent(),
        residual: s.residual,
    }
}

pub fn states(cfg: &Resolved, hash: &str) -> Run {
    let p = cfg.params()?;
    let task = cfg.states.clone().unwrap_or_default();
    let found = find_steady_states(&p, &[], &solver(task.n_starts))?;
    let list: Vec<StateOut> = found.iter().enumerate().map(|(i, s)| state_out(i, s)).collect();
    Ok(vec![json_file(
        "states.json",
        &json!({ "config_hash": hash, "detunings": p.detunings(), "states": list }),
    )])
}

fn branches_table(sweep: &BifurcationSweep, n: usize, hash: &str) -> OutputFile {
    let mut header: Vec<String> =
        ["point", "sweep_value", "branch_id", "symmetry", "stable", "norm", "max_re_mu", "bifurcation", "match_distance"]
            .map(String::from)
            .to_vec();
    for j in 1..=n {
        header.push(format!("re_{j}"));
        header.push(format!("im_{j}"));
    }
    let axis = serde_json::to_value(sweep.axis).unwrap();
    let mut t = Table::new(hash, header).meta("axis", axis.as_str().unwrap_or_default());
    for (i, bp) in sweep.points.iter().enumerate() {
        let bif = !bp.bifurcations.is_empty();
        for (k, s) in bp.states.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                num(bp.sweep_value),
                bp.branch_ids[k].to_string(),
                s.symmetry.as_str().into(),
                (s.stable as u8).to_string(),
                num(s.norm()),
                num(s.max_re_exponent()),
                (bif as u8).to_string(),
                bp.match_distances[k].map(num).unwrap_or_default(),
            ];
            for a in &s.amplitudes {
                row.push(num(a.re));
                row.push(num(a.im));
            }
            t.push(row);
        }
    }
    t.into_file("branches.csv")
}

pub fn sweep(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let p = cfg.params()?;
    let d = SweepOptions::default();
    let opts = SweepOptions { solver: solver(task.n_starts), link_radius: task.link_radius.unwrap_or(d.link_radius), ..d };
    let sweep = bifurcation_sweep(&p, task.axis, &values(&task.grid), &opts)?;
    Ok(vec![branches_table(&sweep, p.n_sites(), hash)])
}

pub fn phase(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.phase_diagram.as_ref().ok_or_else(|| missing("phase_diagram"))?;
    let p = cfg.params()?;
    let pd = phase_diagram(&p, &values(&task.detuning), &values(&task.drive), &solver(task.n_starts))?;
    let header = ["detuning", "drive", "color", "brighter", "color_code", "labels"].map(String::from).to_vec();
    let mut t = Table::new(hash, header);
    for c in &pd.cells {
        t.push(vec![
            num(c.delta),
            num(c.drive),
            c.color.as_str().into(),
            (c.brighter as u8).to_string(),
            c.color_code(),
            c.labels_string(),
        ]);
    }
    Ok(vec![t.into_file("phase_diagram.csv")])
}

fn welch(segment_len: Option<usize>) -> WelchOptions {
    WelchOptions { segment_len, ..WelchOptions::default() }
}

pub fn psd(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.psd.clone().unwrap_or_default();
    let p = cfg.params()?;
    let n = p.n_sites();
    let sigma2 = cfg.noise_psd(task.noise_psd, "psd")?;
    let found = find_steady_states(&p, &[], &solver(task.n_starts))?;
    let stable: Vec<&SteadyState> = found.iter().filter(|s| s.stable).collect();
    let idx = task.state.unwrap_or(0);
    let state = *stable
        .get(idx)
        .ok_or_else(|| invalid(format!("psd.state: index {idx} but only {} stable states", stable.len())))?;
    let grid = task.freq.as_ref().map(values);
    let spec = fluctuation_spectrum(&p, &state.amplitudes, sigma2, grid.as_deref())?;

    let mut header = vec!["omega".to_string()];
    header.extend(site_cols("site", n));
    header.extend(site_cols("transfer_site", n));
    let pair = spec.psd_s.is_some();
    if pair {
        header.extend(["s", "a", "transfer_s", "transfer_a"].map(String::from));
    }
    let mut t = Table::new(hash, header)
        .meta("method", spec.method.as_str())
        .meta("state", idx)
        .meta("symmetry", state.symmetry.as_str())
        .meta("sigma2", num(sigma2));
    for (k, w) in spec.freq_grid.iter().enumerate() {
        let mut row = vec![num(*w)];
        row.extend(spec.psd_site.iter().map(|s| num(s[k])));
        row.extend(spec.transfer_site.iter().map(|s| num(s[k])));
        if pair {
            for s in [&spec.psd_s, &spec.psd_a, &spec.transfer_s, &spec.transfer_a] {
                row.push(num(s.as_ref().unwrap()[k]));
            }
        }
        t.push(row);
    }
    let mut files = vec![t.into_file("psd.csv")];

    if let Some(lv) = &task.langevin {
        let dt = lv.dt.unwrap_or_else(|| default_dt(&p, &state.amplitudes));
        let noise = NoiseSpec { psd: sigma2, seed: cfg.seed };
        let tr = integrate_strided(&p, &noise, &state.amplitudes, dt, lv.duration, lv.record_every.unwrap_or(1))?;
        let fluct: Vec<Vec<Complex64>> = tr
            .samples
            .iter()
            .map(|s| {
                let m = s.iter().sum::<Complex64>() / s.len() as f64;
                s.iter().map(|z| z - m).collect()
            })
            .collect();
        let opts = welch(lv.segment_len);
        let mut spectra = fluct.iter().map(|s| welch_quadratures(s, tr.dt, &opts)).collect::<Result<Vec<_>, _>>()?;
        let mut header = vec!["omega".to_string()];
        header.extend(site_cols("site", n));
        if n == 2 {
            let (s, a) = sa_transform(&fluct[0], &fluct[1])?;
            spectra.push(welch_quadratures(&s, tr.dt, &opts)?);
            spectra.push(welch_quadratures(&a, tr.dt, &opts)?);
            header.extend(["s", "a"].map(String::from));
        }
        let mut t = Table::new(hash, header).meta("segments", spectra[0].segments).meta("dt", num(tr.dt));
        for (k, w) in spectra[0].freq.iter().enumerate() {
            let mut row = vec![num(*w)];
            row.extend(spectra.iter().map(|s| num(s.psd[k])));
            t.push(row);
        }
        files.push(t.into_file("psd_welch.csv"));
    }
    Ok(files)
}

pub fn probe(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.probe.as_ref().ok_or_else(|| missing("probe"))?;
    let p = cfg.params()?;
    let n = p.n_sites();
    let grid = values(&task.grid);
    let noise = NoiseSpec { psd: cfg.noise_psd(task.noise_psd, "probe")?, seed: cfg.seed };
    let opts = ProbeOptions {
        dt: task.dt,
        record_every: task.record_every.unwrap_or(1),
        welch: welch(task.segment_len),
        solver: solver(task.n_starts),
        alpha_start: task.start.as_ref().map(|s| s.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()),
        ..ProbeOptions::default()
    };
    let mut points = pump_noisy_probe(&p, &noise, task.axis, &grid, task.settle_time, task.record_time, &opts)?;
    let mut files = Vec::new();
    let mut bif = vec![false; grid.len()];
    if task.with_sweep.unwrap_or(true) {
        let sw = bifurcation_sweep(&p, task.axis, &grid, &SweepOptions { solver: opts.solver.clone(), ..Default::default() })?;
        assign_branches(&mut points, &sw)?;
        for i in sw.bifurcation_intervals() {
            bif[i] = true;
        }
        files.push(branches_table(&sw, n, hash));
    }

    let mut header: Vec<String> =
        ["point", "sweep_value", "seed", "branch_id", "symmetry", "jump", "bifurcation", "rms"].map(String::from).to_vec();
    for j in 1..=n {
        header.push(format!("mean_re_{j}"));
        header.push(format!("mean_im_{j}"));
    }
    let mut t = Table::new(hash, header).meta("noise_psd", num(noise.psd));
    for (i, pp) in points.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            num(pp.sweep_value),
            pp.seed.to_string(),
            pp.branch_id.map(|b| b.to_string()).unwrap_or_default(),
            pp.symmetry.map(|s| s.as_str()).unwrap_or_default().into(),
            (pp.jump as u8).to_string(),
            (bif[i] as u8).to_string(),
            num(pp.rms),
        ];
        for a in &pp.mean {
            row.push(num(a.re));
            row.push(num(a.im));
        }
        t.push(row);
    }
    files.insert(0, t.into_file("probe.csv"));

    let mut header = vec!["point".to_string(), "sweep_value".into(), "omega".into()];
    header.extend(site_cols("site", n));
    if n == 2 {
        header.extend(["s", "a"].map(String::from));
    }
    let mut t = Table::new(hash, header);
    for (i, pp) in points.iter().enumerate() {
        for (k, w) in pp.freq.iter().enumerate() {
            let mut row = vec![i.to_string(), num(pp.sweep_value), num(*w)];
            row.extend(pp.psd_site.iter().map(|s| num(s[k])));
            for s in [&pp.psd_s, &pp.psd_a].into_iter().flatten() {
                row.push(num(s[k]));
            }
            t.push(row);
        }
    }
    files.insert(1, t.into_file("probe_psd.csv"));
    Ok(files)
}

pub fn lindblad(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.lindblad.clone().unwrap_or_default();
    let p = cfg.params()?;
    let n = p.n_sites();
    if n > 2 {
        return Err(invalid(format!("lindblad: quadrature maps need at most 2 sites, got {n}")));
    }
    let d = QuantumOptions::default();
    let opts = QuantumOptions {
        n_max: task.n_max,
        n_max_limit: task.n_max_limit.unwrap_or(d.n_max_limit),
        parity_reduce: task.parity_reduce.unwrap_or(d.parity_reduce),
        ..d
    };
    let run = solve_lindblad(&p, &opts)?;
    let mf = find_steady_states(&p, &[], &solver(task.n_starts))?;
    let amax = mf.iter().flat_map(|s| s.amplitudes.iter()).map(|a| a.norm()).fold(0.0, f64::max);
    let axes = default_axes(n, amax, task.grid_points.unwrap_or(121));
    let dist = quadrature_distribution(&run.state, &axes)?;
    let radius = task.correspondence_radius.unwrap_or(1.5 / SQRT_2);

    let correspondence = (n == 2).then(|| {
        let c = Correspondence::new(local_maxima(&dist, 0.01), mean_field_points(&mf));
        json!({
            "radius": radius,
            "holds": c.holds(radius),
            "hot_spots": c.maxima.iter().zip(&c.maximum_to_point)
                .map(|(m, d)| json!({ "x_1": m.0, "x_2": m.1, "p": m.2, "distance": d }))
                .collect::<Vec<_>>(),
            "mean_field_points": c.points.iter().zip(&c.point_to_maximum)
                .map(|(q, d)| json!({ "x_1": q.0, "x_2": q.1, "distance": d }))
                .collect::<Vec<_>>(),
        })
    });
    let s = &run.state;
    let obs = json!({
        "config_hash": hash,
        "n_max": run.n_max,
        "photon_change": run.photon_change,
        "method": s.method,
        "mean_amplitudes": s.mean_amplitudes,
        "mean_photons": s.mean_photons,
        "trace": s.trace,
        "hermiticity_error": s.hermiticity_error,
        "min_eigenvalue": s.min_eigenvalue,
        "residual": s.residual,
        "leakage": s.leakage,
        "parity_commutator": s.parity_commutator,
        "quadrature_integral": dist.integral,
        "correspondence": correspondence,
        "warnings": run.warnings,
    });

    let mut header = site_cols("x", n);
    header.push("p".into());
    let mut t = Table::new(hash, header);
    let m = axes[0].len();
    for (k, v) in dist.p.iter().enumerate() {
        let mut row: Vec<String> = if n == 2 { vec![num(axes[0][k / m]), num(axes[1][k % m])] } else { vec![num(axes[0][k])] };
        row.push(num(*v));
        t.push(row);
    }
    Ok(vec![json_file("rho_observables.json", &obs), t.into_file("quad_dist.csv")])
}

pub fn labframe(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.labframe.as_ref().ok_or_else(|| missing("labframe"))?;
    let p = cfg.params()?;
    let n = p.n_sites();
    let lab = lab_params(&p, task.hbar.unwrap_or(1.0))?;
    let dt = task.dt.unwrap_or_else(|| 0.4 * max_lab_step(&lab));
    let v0 = task.v0.clone().unwrap_or_else(|| vec![0.0; n]);
    let tr = integrate_lab(&lab, &task.x0, &v0, dt, task.duration, task.record_every.unwrap_or(1))?;
    let reference = task.ref_freq.unwrap_or(0.5 * lab.drive_freq);
    let bw = task.bandwidth.unwrap_or(reference / 50.0);
    let z: Vec<Vec<Complex64>> =
        tr.positions.iter().map(|x| demodulate(x, tr.dt, reference, bw)).collect::<Result<_, _>>()?;

    let mut header = vec!["t".to_string()];
    for c in ["x", "v", "u", "v_quad"] {
        header.extend(site_cols(c, n));
    }
    let mut t = Table::new(hash, header).meta("ref_freq", num(reference)).meta("bandwidth", num(bw));
    for j in 0..n {
        t = t.meta(&format!("amplitude_scale_{}", j + 1), num(lab.amplitude_scale(j)));
    }
    for k in 0..tr.len() {
        let mut row = vec![num(k as f64 * tr.dt)];
        row.extend(tr.positions.iter().map(|x| num(x[k])));
        row.extend(tr.velocities.iter().map(|v| num(v[k])));
        row.extend(z.iter().map(|s| num(s[k].re)));
        row.extend(z.iter().map(|s| num(s[k].im)));
        t.push(row);
    }
    Ok(vec![t.into_file("labframe.csv")])
}

pub fn modes(cfg: &Resolved, hash: &str) -> Run {
    let task = cfg.normal_modes.clone().unwrap_or_default();
    let p = cfg.params()?;
    let n = p.n_sites();
    let basis = normal_modes(&p);
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
    };
    // modes mix the site damping rates; the mean is exact for identical sites
    let gamma = p.damping().iter().sum::<f64>() / n as f64;
    let thresholds: Vec<f64> = basis.eigen_detunings.iter().map(|d| lobe_threshold(*d, gamma)).collect();
    let scan = task.scan.as_ref().map(|s| {
        values(&s.grid)
            .into_iter()
            .map(|v| {
                let q = s.axis.apply(&p, v);
                let mu = characteristic_exponents(&jacobian(&q, &vec![Complex64::new(0.0, 0.0); n]));
                json!({ "value": v, "detunings": q.detunings(), "exponents": mu })
            })
            .collect::<Vec<_>>()
    });
    let axis = task.scan.as_ref().map(|s| s.axis);
    Ok(vec![json_file(
        "modes.json",
        &json!({
            "config_hash": hash,
            "detunings": p.detunings(),
            "eigen_detunings": basis.eigen_detunings,
            "transform": rows(&basis.transform),
            "mode_drives": rows(&basis.mode_drives),
            "lobe_thresholds": thresholds,
            "scan_axis": axis,
            "scan": scan,
        }),
    )])
}
