//! Output assembly: config hashing, CSV/JSON rendering and the warning log.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;

/// SHA-256 of the compact JSON form of the resolved config.
pub fn config_hash(cfg: &Resolved) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A file produced by a subcommand, kept in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

/// CSV with `# key=value` metadata lines ahead of the header.
pub struct Table {
    meta: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(hash: &str, header: Vec<String>) -> Self {
        Self { meta: vec![("config_hash".into(), hash.into())], header, rows: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn into_file(self, name: &str) -> OutputFile {
        let mut out = Vec::new();
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        OutputFile { name: name.into(), contents: w.into_inner().expect("in-memory flush") }
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn json_file<T: Serialize>(name: &str, value: &T) -> OutputFile {
    let mut contents = serde_json::to_vec_pretty(value).expect("output serializes");
    contents.push(b'\n');
    OutputFile { name: name.into(), contents }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub time: String,
    pub level: String,
    pub message: String,
}

static ENTRIES: Mutex<Vec<LogEntry>> = Mutex::new(Vec::new());
static VERBOSE: AtomicBool = AtomicBool::new(false);
static RECORDER: Recorder = Recorder;

struct Recorder;

impl Log for Recorder {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= Level::Info
    }

    fn log(&self, r: &Record) {
        if r.level() > Level::Info {
            return;
        }
        let entry = LogEntry {
            time: chrono::Utc::now().to_rfc3339(),
            level: r.level().to_string().to_lowercase(),
            message: r.args().to_string(),
        };
        if r.level() <= Level::Warn || VERBOSE.load(Ordering::Relaxed) {
            eprintln!("{}: {}", entry.level, entry.message);
        }
        if r.level() <= Level::Warn {
            ENTRIES.lock().unwrap().push(entry);
        }
    }

    fn flush(&self) {}
}

/// Installs the process logger; later calls only reset the record.
pub fn init_logger(verbose: bool) {
    VERBOSE.store(verbose, Ordering::Relaxed);
    if log::set_logger(&RECORDER).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
    ENTRIES.lock().unwrap().clear();
}

/// Warnings recorded since [`init_logger`].
pub fn take_warnings() -> Vec<LogEntry> {
    std::mem::take(&mut *ENTRIES.lock().unwrap())
}
