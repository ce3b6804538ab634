use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{find_steady_states, SolverOptions, Symmetry};
use crate::error::{KpoError, Result};
use crate::model::NetworkParams;

/// Legend category of a phase-diagram cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseColor {
    /// Only the origin is stable.
    White,
    /// Stable S states.
    Blue,
    /// Stable S and A states.
    Red,
    /// Stable S and M states.
    Purple,
    /// Stable S, A and M states.
    DarkRed,
    /// Any other combination (not part of the legend).
    Other,
    /// No stable state was found.
    NoStable,
}

impl PhaseColor {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseColor::White => "white",
            PhaseColor::Blue => "blue",
            PhaseColor::Red => "red",
            PhaseColor::Purple => "purple",
            PhaseColor::DarkRed => "dark_red",
            PhaseColor::Other => "other",
            PhaseColor::NoStable => "none",
        }
    }

    /// Color for a set of stable-state labels; the second value is the
    /// "brighter" flag (origin stable alongside finite-amplitude states).
    pub fn from_labels(labels: &BTreeSet<Symmetry>) -> (Self, bool) {
        use Symmetry::*;
        let zero = labels.contains(&Zero);
        let finite: BTreeSet<Symmetry> = labels.iter().copied().filter(|l| *l != Zero).collect();
        let has = |s| finite.contains(&s);
        let color = match (has(S), has(A), has(M)) {
            _ if finite.is_empty() => {
                return if zero { (PhaseColor::White, false) } else { (PhaseColor::NoStable, false) };
            }
            (true, false, false) => PhaseColor::Blue,
            (true, true, false) => PhaseColor::Red,
            (true, false, true) => PhaseColor::Purple,
            (true, true, true) => PhaseColor::DarkRed,
            _ => PhaseColor::Other,
        };
        (color, zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub delta: f64,
    pub drive: f64,
    pub labels: BTreeSet<Symmetry>,
    pub color: PhaseColor,
    pub brighter: bool,
}

impl PhaseCell {
    /// Color code with a `_bright` suffix when the origin is also stable.
    pub fn color_code(&self) -> String {
        if self.brighter {
            format!("{}_bright", self.color.as_str())
        } else {
            self.color.as_str().to_string()
        }
    }

    /// Stable labels joined by `+`, e.g. `0+S`.
    pub fn labels_string(&self) -> String {
        self.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Cells in row-major order: drive is the slow index, detuning the fast one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub deltas: Vec<f64>,
    pub drives: Vec<f64>,
    pub cells: Vec<PhaseCell>,
}

impl PhaseDiagram {
    pub fn cell(&self, i_drive: usize, i_delta: usize) -> &PhaseCell {
        &self.cells[i_drive * self.deltas.len() + i_delta]
    }

    pub fn flagged(&self) -> impl Iterator<Item = &PhaseCell> {
        self.cells.iter().filter(|c| c.color == PhaseColor::NoStable)
    }
}

/// Classifies each (Δ, G) cell by the symmetry labels of its stable states.
///
/// The drive enters through `|G|`: a negative drive is a phase redefinition
/// of the amplitudes and gives the same map.
pub fn phase_diagram(
    params: &NetworkParams,
    delta_grid: &[f64],
    drive_grid: &[f64],
    opts: &SolverOptions,
) -> Result<PhaseDiagram> {
    if delta_grid.is_empty() || drive_grid.is_empty() {
        return Err(KpoError::InvalidInput("phase diagram grids must be non-empty".into()));
    }
    if delta_grid.iter().chain(drive_grid).any(|v| !v.is_finite()) {
        return Err(KpoError::InvalidInput("phase diagram grids must be finite".into()));
    }
    let jobs: Vec<(f64, f64)> =
        drive_grid.iter().flat_map(|&g| delta_grid.iter().map(move |&d| (d, g))).collect();
    let cells: Vec<PhaseCell> = jobs
        .par_iter()
        .map(|&(delta, drive)| {
            let p = params.with_detuning(delta).with_drive(drive.abs());
            let states = find_steady_states(&p, &[], opts)?;
            let labels: BTreeSet<Symmetry> = states.iter().filter(|s| s.stable).map(|s| s.symmetry).collect();
            let (color, brighter) = PhaseColor::from_labels(&labels);
            Ok(PhaseCell { delta, drive, labels, color, brighter })
        })
        .collect::<Result<_>>()?;
    for c in cells.iter().filter(|c| c.color == PhaseColor::NoStable) {
        warn!("no stable state found at delta = {}, drive = {}", c.delta, c.drive);
    }
    Ok(PhaseDiagram { deltas: delta_grid.to_vec(), drives: drive_grid.to_vec(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Symmetry::*;

    fn set(l: &[Symmetry]) -> BTreeSet<Symmetry> {
        l.iter().copied().collect()
    }

    #[test]
    fn legend() {
        assert_eq!(PhaseColor::from_labels(&set(&[Zero])), (PhaseColor::White, false));
        assert_eq!(PhaseColor::from_labels(&set(&[S])), (PhaseColor::Blue, false));
        assert_eq!(PhaseColor::from_labels(&set(&[S, A])), (PhaseColor::Red, false));
        assert_eq!(PhaseColor::from_labels(&set(&[S, M])), (PhaseColor::Purple, false));
        assert_eq!(PhaseColor::from_labels(&set(&[S, A, M])), (PhaseColor::DarkRed, false));
        assert_eq!(PhaseColor::from_labels(&set(&[Zero, S])), (PhaseColor::Blue, true));
        assert_eq!(PhaseColor::from_labels(&set(&[A])), (PhaseColor::Other, false));
        assert_eq!(PhaseColor::from_labels(&set(&[])), (PhaseColor::NoStable, false));
    }

    #[test]
    fn below_lobes_is_white() {
        let p = NetworkParams::identical(2, 0.0, 1.0, 0.0, -0.25, 0.1).unwrap();
        let deltas: Vec<f64> = (0..7).map(|i| -0.6 + 0.2 * i as f64).collect();
        let pd = phase_diagram(&p, &deltas, &[0.0, 0.02, 0.04], &SolverOptions::default()).unwrap();
        assert!(pd.cells.iter().all(|c| c.color == PhaseColor::White && !c.brighter));
        assert_eq!(pd.cell(1, 3).labels_string(), "0");
    }

    #[test]
    fn symmetric_in_drive_sign() {
        let p = NetworkParams::identical(2, 0.0, 1.0, 0.0, -0.25, 0.1).unwrap();
        let deltas = [-0.3, 0.0, 0.4];
        let a = phase_diagram(&p, &deltas, &[0.3], &SolverOptions::default()).unwrap();
        let b = phase_diagram(&p, &deltas, &[-0.3], &SolverOptions::default()).unwrap();
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!((x.color, x.brighter, &x.labels), (y.color, y.brighter, &y.labels));
        }
    }

    #[test]
    fn inside_s_lobe_is_blue() {
        // S lobe centred at Δ = J; with J < 0 the S lobe sits at negative Δ
        let p = NetworkParams::identical(2, 0.0, 1.0, 0.0, -0.25, 0.1).unwrap();
        let pd = phase_diagram(&p, &[-0.25], &[0.1], &SolverOptions::default()).unwrap();
        assert_eq!(pd.cells[0].color, PhaseColor::Blue);
        assert!(!pd.cells[0].brighter);
    }
}
