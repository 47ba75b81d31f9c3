//! Run-directory layout and serialization of stage outputs.
//!
//! ```text
//! <out>/snapshots.json  spectrum.csv  basis.json  meta.json
//! <out>/lqr_trajectory.csv  lqr_summary.json
//! <out>/r<r>/policy.json  value.csv  policy.csv  meta.json
//! <out>/r<r>/trajectory.csv  uncontrolled.csv
//! <out>/r<r>/relative_error.csv  state_difference.csv
//! ```
//! Only `meta.json` carries a timestamp; every other file is a pure function
//! of the resolved configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use podhjb::hjbgrid::SimplexGrid;
use podhjb::hjbsolve::ControlTable;
use podhjb::pipeline::PipelineConfig;
use podhjb::pod::{PodBasis, SnapshotSet};
use podhjb::reduced::Hyperbox;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const SNAPSHOTS: &str = "snapshots.json";
pub const BASIS: &str = "basis.json";
pub const SPECTRUM: &str = "spectrum.csv";
pub const META: &str = "meta.json";
pub const POLICY: &str = "policy.json";
pub const VALUE_CSV: &str = "value.csv";
pub const POLICY_CSV: &str = "policy.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const UNCONTROLLED: &str = "uncontrolled.csv";
pub const LQR_TRAJECTORY: &str = "lqr_trajectory.csv";
pub const LQR_SUMMARY: &str = "lqr_summary.json";
pub const RELATIVE_ERROR: &str = "relative_error.csv";
pub const STATE_DIFFERENCE: &str = "state_difference.csv";
pub const REPORT: &str = "report.json";

/// Column layout of every CSV artifact.
pub fn csv_schemas() -> Value {
    json!({
        SPECTRUM: "k,lambda_k",
        VALUE_CSV: "i_1..i_r (lattice index), y_1..y_r (node), v",
        POLICY_CSV: "i_1..i_r (lattice index), y_1..y_r (node), u, control_index",
        TRAJECTORY: "t, y_1..y_n, u",
        UNCONTROLLED: "t, y_1..y_n, u",
        LQR_TRAJECTORY: "t, y_1..y_n, u",
        RELATIVE_ERROR: "t, u_hjb, u_lqr, relative_error",
        STATE_DIFFERENCE: "t, e_1..e_n with e = y_hjb - y_lqr",
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotBundle {
    pub config: PipelineConfig,
    pub snapshots: SnapshotSet,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BasisBundle {
    pub config: PipelineConfig,
    pub basis: PodBasis,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub config: PipelineConfig,
    pub snapshot_box: Hyperbox,
    pub grid: SimplexGrid,
    pub table: ControlTable,
}

pub fn rank_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("r{r}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str, stage: &'static str) -> CliResult<T> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::NotFound {
                what,
                path: path.to_path_buf(),
                stage,
            })
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Write through a buffered file handle.
pub fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Set `stage` in the directory's `meta.json`, keeping the other stages.
pub fn update_meta(dir: &Path, stage: &str, config: &PipelineConfig, mut entry: Value) -> CliResult<()> {
    let path = dir.join(META);
    let mut meta: Value = match File::open(&path) {
        Ok(f) => serde_json::from_reader(std::io::BufReader::new(f)).unwrap_or_else(|_| json!({})),
        Err(_) => json!({}),
    };
    if !meta.is_object() {
        meta = json!({});
    }
    let seconds = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let obj = entry.as_object_mut().expect("meta entries are objects");
    obj.insert("generated_at".into(), json!(seconds));
    obj.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    meta["csv_schemas"] = csv_schemas();
    meta[stage] = entry;
    write_json(&path, &meta)
}

const SNAPSHOT_KEYS: &[&str] = &["test", "cells", "snapshot_controls", "dt", "horizon", "quotient_at_zero", "integrator"];
const BASIS_KEYS: &[&str] = &["tau", "drop_tol"];
const SOLVE_KEYS: &[&str] = &[
    "r",
    "k_r",
    "h",
    "lambda",
    "t_e",
    "controls",
    "guess_controls",
    "stop_tol",
    "max_iters",
    "clamp_policy",
    "margin",
    "anchor_origin",
    "node_budget",
    "cache_budget",
];

/// Settings a stage's output depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Snapshots,
    Basis,
    Solve,
}

impl Stage {
    fn keys(self) -> Vec<&'static str> {
        let mut keys = SNAPSHOT_KEYS.to_vec();
        if matches!(self, Stage::Basis | Stage::Solve) {
            keys.extend(BASIS_KEYS);
        }
        if self == Stage::Solve {
            keys.extend(SOLVE_KEYS);
        }
        keys
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Snapshots => "snapshots",
            Stage::Basis => "basis",
            Stage::Solve => "solve",
        }
    }
}

/// Fail when `stored` differs from `current` in a setting `stage` depends on.
pub fn check_fresh(path: &Path, stage: Stage, stored: &PipelineConfig, current: &PipelineConfig) -> CliResult<()> {
    let a = serde_json::to_value(stored).expect("config serializes");
    let b = serde_json::to_value(current).expect("config serializes");
    let differing: Vec<&str> = stage.keys().into_iter().filter(|k| a.get(k) != b.get(k)).collect();
    if differing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Stale {
            path: path.to_path_buf(),
            fields: differing.join(", "),
            stage: stage.command(),
        })
    }
}

/// Nodal table with lattice indices and coordinates.
pub fn write_nodal_csv<W: Write>(
    grid: &SimplexGrid,
    columns: &[&str],
    row: impl Fn(usize) -> String,
    mut out: W,
) -> std::io::Result<()> {
    let r = grid.dim();
    let mut header: Vec<String> = (1..=r).map(|k| format!("i_{k}")).collect();
    header.extend((1..=r).map(|k| format!("y_{k}")));
    header.extend(columns.iter().map(|c| c.to_string()));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..grid.node_count {
        for j in grid.multi_index(i) {
            write!(out, "{j},")?;
        }
        for y in grid.node(i) {
            write!(out, "{y},")?;
        }
        writeln!(out, "{}", row(i))?;
    }
    Ok(())
}
