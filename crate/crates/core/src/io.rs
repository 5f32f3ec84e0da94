//! Episode CSV traces, run manifests and Monte Carlo summary documents.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EpisodeTrace, MonteCarloSummary, ScenarioConfig};

/// Column order of the per-step trace file.
pub const CSV_COLUMNS: [&str; 22] = [
    "k",
    "t",
    "truth_x1",
    "truth_vx1",
    "truth_x2",
    "truth_vx2",
    "truth_omega",
    "true_mode",
    "z1",
    "z2",
    "est_x1",
    "est_vx1",
    "est_x2",
    "est_vx2",
    "est_omega",
    "mu1",
    "mu2",
    "mu3",
    "est_mode",
    "advisory_theta",
    "trigger_j",
    "separation",
];

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// One parsed row of an episode CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub truth_x1: f64,
    pub truth_vx1: f64,
    pub truth_x2: f64,
    pub truth_vx2: f64,
    pub truth_omega: f64,
    pub true_mode: u8,
    pub z1: f64,
    pub z2: f64,
    pub est_x1: f64,
    pub est_vx1: f64,
    pub est_x2: f64,
    pub est_vx2: f64,
    pub est_omega: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub est_mode: u8,
    pub advisory_theta: Option<f64>,
    pub trigger_j: Option<usize>,
    pub separation: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the trace as CSV text. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_episode_csv_to<W: Write>(
    trace: &EpisodeTrace,
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &trace.records {
        let s = &r.truth;
        let e = &r.estimate;
        let fields = [
            r.k.to_string(),
            r.t.to_string(),
            s.x1.to_string(),
            s.vx1.to_string(),
            s.x2.to_string(),
            s.vx2.to_string(),
            s.omega.to_string(),
            r.true_mode.to_string(),
            r.z[0].to_string(),
            r.z[1].to_string(),
            e[0].to_string(),
            e[1].to_string(),
            e[2].to_string(),
            e[3].to_string(),
            e[4].to_string(),
            r.mu[0].to_string(),
            r.mu[1].to_string(),
            r.mu[2].to_string(),
            r.est_mode.to_string(),
            r.advisory.map(|a| a.theta.to_string()).unwrap_or_default(),
            r.advisory
                .map(|a| a.trigger_j.to_string())
                .unwrap_or_default(),
            r.separation.to_string(),
        ];
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_csv(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_episode_csv_to(trace, BufWriter::new(file)).map_err(csv_err(path))
}

/// Parses CSV text written by [`write_episode_csv_to`]. The header must
/// match [`CSV_COLUMNS`] exactly.
pub fn read_episode_csv_from<R: Read>(input: R) -> std::result::Result<Vec<TraceRow>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!(
                "unexpected CSV header `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        )
        .into());
    }
    r.deserialize().collect()
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_episode_csv_from(std::io::BufReader::new(file)).map_err(csv_err(path))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Subcommand that produced the outputs: `run` or `monte-carlo`.
    pub command: String,
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &ScenarioConfig,
        seeds: Vec<u64>,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config: config.clone(),
            seeds,
            outputs,
        }
    }
}

/// Summary file layout. `generated_unix_s` is the only field that differs
/// between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub manifest: RunManifest,
    pub generated_unix_s: Option<u64>,
    #[serde(flatten)]
    pub summary: MonteCarloSummary,
}

fn now_unix() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

pub fn write_summary_json(
    summary: &MonteCarloSummary,
    manifest: &RunManifest,
    path: &Path,
) -> Result<()> {
    let doc = SummaryDocument {
        manifest: manifest.clone(),
        generated_unix_s: now_unix(),
        summary: summary.clone(),
    };
    write_json(&doc, path)
}

pub fn read_summary_json(path: &Path) -> Result<SummaryDocument> {
    read_json(path)
}

pub fn write_manifest_json(manifest: &RunManifest, path: &Path) -> Result<()> {
    write_json(manifest, path)
}

pub fn read_manifest_json(path: &Path) -> Result<RunManifest> {
    read_json(path)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}
