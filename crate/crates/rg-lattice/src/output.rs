//! In-memory run outputs and their emission to disk with `metadata.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const METADATA_FILE: &str = "metadata.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn sha256(&self) -> String {
        format!("{:x}", Sha256::digest(&self.bytes))
    }
}

/// CSV with a fixed header; floats use the shortest round-trip form, see [`num`].
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.iter().map(AsRef::as_ref))
            .expect("writing to memory");
        Self { writer, columns: header.len() }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let record: Vec<S> = fields.into_iter().collect();
        assert_eq!(record.len(), self.columns, "csv row width");
        self.writer.write_record(record).expect("writing to memory");
    }

    pub fn finish(self, name: impl Into<String>) -> OutputFile {
        let bytes = self.writer.into_inner().expect("flushing to memory");
        OutputFile { name: name.into(), bytes }
    }
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Totals from the process-wide conservation audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub worst_relative_residual_per_unit_time: f64,
    pub audited_runs: u64,
}

impl LedgerSummary {
    pub fn current() -> Self {
        let a = rg_lattice_core::lattice::conservation_audit();
        Self { worst_relative_residual_per_unit_time: a.worst_relative_residual, audited_runs: a.runs }
    }
}

/// Energy ledger of a single trajectory, for experiments that run one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunLedger {
    pub dissipated: f64,
    pub injected: f64,
    pub truncated: f64,
    pub initial_total: f64,
    pub final_total: f64,
}

impl RunLedger {
    pub fn new(ledger: &rg_lattice_core::EnergyLedger, initial_total: f64, final_total: f64) -> Self {
        Self {
            dissipated: ledger.dissipated,
            injected: ledger.injected,
            truncated: ledger.truncated,
            initial_total,
            final_total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment: String,
    pub files: Vec<OutputFile>,
    /// Experiment-specific results; written as `report.json`.
    pub report: Value,
    pub tolerances: Value,
    pub ledger: LedgerSummary,
    pub energy: Option<RunLedger>,
}

impl RunOutput {
    pub fn file(&self, name: &str) -> Option<&OutputFile> {
        self.files.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Serialize)]
struct FileEntry<'a> {
    name: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    experiment: &'a str,
    tool_version: &'static str,
    seed: u64,
    threads: usize,
    wall_time_s: f64,
    config: &'a ExperimentConfig,
    tolerances: &'a Value,
    ledger: LedgerSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<RunLedger>,
    /// Fitted `h` in `a_n ~ tau_n^h` of the initial state; not enforced.
    initial_decay_exponent: Option<f64>,
    files: Vec<FileEntry<'a>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes every file plus `report.json` and `metadata.json` into `dir`.
/// A non-empty `dir` is refused unless `overwrite` is set.
pub fn emit(
    output: &RunOutput,
    config: &ExperimentConfig,
    dir: &Path,
    overwrite: bool,
    threads: usize,
    wall_time_s: f64,
) -> Result<Vec<PathBuf>> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
        if entries.next().is_some() && !overwrite {
            return Err(Error::Refused(dir.to_path_buf()));
        }
    } else {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let report = OutputFile {
        name: "report.json".into(),
        bytes: to_json(&output.report)?,
    };
    let mut written = Vec::new();
    let data: Vec<&OutputFile> = output.files.iter().chain(std::iter::once(&report)).collect();
    for file in &data {
        let path = dir.join(&file.name);
        fs::write(&path, &file.bytes).map_err(io_err(&path))?;
        written.push(path);
    }
    let metadata = Metadata {
        experiment: &output.experiment,
        tool_version: TOOL_VERSION,
        seed: config.seed,
        threads,
        wall_time_s,
        config,
        tolerances: &output.tolerances,
        ledger: output.ledger,
        energy: output.energy,
        initial_decay_exponent: rg_lattice_core::lattice::decay_exponent(
            &config.initial.vector(config.regularization.n_last + 1),
        ),
        files: data
            .iter()
            .map(|f| FileEntry { name: &f.name, bytes: f.bytes.len(), sha256: f.sha256() })
            .collect(),
    };
    let path = dir.join(METADATA_FILE);
    fs::write(&path, to_json(&metadata)?).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn empty_run() -> RunOutput {
        RunOutput {
            experiment: "thm1_verify".into(),
            files: Vec::new(),
            report: serde_json::json!({}),
            tolerances: serde_json::json!({}),
            ledger: LedgerSummary { worst_relative_residual_per_unit_time: 0.0, audited_runs: 0 },
            energy: None,
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let mut t = CsvTable::new(&["n", "u"]);
        t.row([num(0.0), num(0.25)]);
        let f = t.finish("state.csv");
        assert_eq!(String::from_utf8(f.bytes).unwrap(), "n,u\n0,0.25\n");
        for x in [1e-16, -3.3e-7, 0.5, 12.0, 2e20, 1.0 / 3.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1e-16), "1e-16");
    }

    #[test]
    fn empty_output_writes_metadata_and_report_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = crate::registry::defaults("thm1_verify", Preset::Desk).unwrap();
        let written = emit(&empty_run(), &cfg, dir.path(), false, 1, 0.0).unwrap();
        assert_eq!(written.len(), 2);
        let meta: Value = serde_json::from_slice(&fs::read(dir.path().join(METADATA_FILE)).unwrap()).unwrap();
        assert_eq!(meta["files"][0]["name"], "report.json");
        assert_eq!(meta["config"]["experiment"], "thm1_verify");
    }

    #[test]
    fn non_empty_directory_is_refused_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("old.csv"), "x").unwrap();
        let cfg = crate::registry::defaults("thm1_verify", Preset::Desk).unwrap();
        assert!(matches!(
            emit(&empty_run(), &cfg, dir.path(), false, 1, 0.0),
            Err(Error::Refused(_))
        ));
        assert!(emit(&empty_run(), &cfg, dir.path(), true, 1, 0.0).is_ok());
    }
}
