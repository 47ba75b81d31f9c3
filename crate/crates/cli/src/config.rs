//! Resolution of the run configuration: test preset, then the optional
//! config file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use podhjb::hjbsolve::ClampPolicy;
use podhjb::pipeline::{PipelineConfig, TestCase};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML or JSON file with pipeline settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Benchmark: test1 or test2.
    #[arg(long)]
    pub test: Option<TestCase>,
    /// Run directory; defaults to out/<test>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Spatial cells.
    #[arg(long, visible_alias = "N")]
    pub cells: Option<usize>,
    /// Constant controls of the snapshot trajectories.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snapshot_controls: Option<Vec<f64>>,
    /// Snapshot sampling step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Snapshot horizon.
    #[arg(long = "T", allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// Derivative time scale; T when unset.
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Relative POD eigenvalue cut-off.
    #[arg(long)]
    pub drop_tol: Option<f64>,
    /// Difference quotient for the derivative at t = 0.
    #[arg(long)]
    pub quotient_at_zero: Option<bool>,
    /// Reduced dimension.
    #[arg(long)]
    pub r: Option<usize>,
    /// Target simplex diameter.
    #[arg(long)]
    pub k_r: Option<f64>,
    /// Scheme step; 0.1 k_r when unset.
    #[arg(long)]
    pub h: Option<f64>,
    /// Discount rate.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Simulation horizon.
    #[arg(long)]
    pub t_e: Option<f64>,
    /// Number of equally spaced controls.
    #[arg(long)]
    pub controls: Option<usize>,
    /// Lower end of the control interval.
    #[arg(long, allow_hyphen_values = true)]
    pub u_min: Option<f64>,
    /// Upper end of the control interval.
    #[arg(long, allow_hyphen_values = true)]
    pub u_max: Option<f64>,
    /// Constant controls of the initial value guess.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub guess_controls: Option<Vec<f64>>,
    /// Stop when one sweep changes the value by less than this.
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Sweep cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// clamp or reject.
    #[arg(long)]
    pub clamp_policy: Option<ClampPolicy>,
    /// Relative inflation of the reduced box.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Extend the box so the origin is a node.
    #[arg(long)]
    pub anchor_origin: Option<bool>,
    /// Maximum lattice nodes.
    #[arg(long)]
    pub node_budget: Option<usize>,
    /// Freeze the feedback on each sampling interval.
    #[arg(long)]
    pub hold: bool,
    /// Integrator relative tolerance.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Integrator absolute tolerance.
    #[arg(long)]
    pub abs_tol: Option<f64>,
    /// Seed recorded with the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

/// Keys of the file that are not pipeline settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileExtras {
    out: Option<PathBuf>,
    threads: Option<usize>,
}

fn read_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?
    } else {
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?
    };
    if !value.is_object() {
        return Err(CliError::Config(format!("{}: expected a table", path.display())));
    }
    Ok(value)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut file = match &self.config {
            Some(path) => read_file(path)?,
            None => Value::Object(Default::default()),
        };
        let obj = file.as_object_mut().expect("checked above");
        let mut extras = serde_json::Map::new();
        for key in ["out", "threads"] {
            if let Some(v) = obj.remove(key) {
                extras.insert(key.into(), v);
            }
        }
        let extras: FileExtras =
            serde_json::from_value(Value::Object(extras)).map_err(|e| CliError::Config(e.to_string()))?;
        let test = match (self.test, obj.get("test")) {
            (Some(t), _) => t,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("test: {e}")))?,
            (None, None) => TestCase::Test1,
        };
        let mut merged = serde_json::to_value(PipelineConfig::preset(test)).expect("config serializes");
        merge(&mut merged, file);
        let mut cfg: PipelineConfig = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.test = test;
        self.apply(&mut cfg);
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or(extras.out)
            .unwrap_or_else(|| PathBuf::from("out").join(test_name(test)));
        Ok(RunConfig {
            pipeline: cfg,
            out,
            threads: self.threads.or(extras.threads),
        })
    }

    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set!(
            cells => cfg.cells,
            snapshot_controls => cfg.snapshot_controls,
            dt => cfg.dt,
            horizon => cfg.horizon,
            drop_tol => cfg.drop_tol,
            quotient_at_zero => cfg.quotient_at_zero,
            r => cfg.r,
            k_r => cfg.k_r,
            lambda => cfg.lambda,
            t_e => cfg.t_e,
            controls => cfg.controls.count,
            u_min => cfg.controls.lo,
            u_max => cfg.controls.hi,
            stop_tol => cfg.stop_tol,
            max_iters => cfg.max_iters,
            clamp_policy => cfg.clamp_policy,
            margin => cfg.margin,
            anchor_origin => cfg.anchor_origin,
            node_budget => cfg.node_budget,
            rel_tol => cfg.integrator.rel_tol,
            abs_tol => cfg.integrator.abs_tol,
            seed => cfg.seed,
        );
        if self.tau.is_some() {
            cfg.tau = self.tau;
        }
        if self.h.is_some() {
            cfg.h = self.h;
        }
        if self.guess_controls.is_some() {
            cfg.guess_controls = self.guess_controls.clone();
        }
        if self.hold {
            cfg.sample_and_hold = true;
        }
    }
}

pub fn test_name(test: TestCase) -> &'static str {
    match test {
        TestCase::Test1 => "test1",
        TestCase::Test2 => "test2",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> RunArgs {
        RunArgs::default()
    }

    #[test]
    fn defaults_to_the_test1_preset() {
        let rc = args().resolve().unwrap();
        assert_eq!(rc.pipeline, PipelineConfig::test1());
        assert_eq!(rc.out, PathBuf::from("out/test1"));
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "test = \"test2\"\nr = 3\nk_r = 0.2\nout = \"elsewhere\"\n[integrator]\nrel_tol = 1e-9\n").unwrap();
        let mut a = args();
        a.config = Some(path);
        a.r = Some(2);
        let rc = a.resolve().unwrap();
        assert_eq!(rc.pipeline.test, TestCase::Test2);
        assert_eq!(rc.pipeline.r, 2);
        assert_eq!(rc.pipeline.k_r, 0.2);
        assert_eq!(rc.pipeline.integrator.rel_tol, 1e-9);
        assert_eq!(rc.pipeline.integrator.abs_tol, PipelineConfig::test2().integrator.abs_tol);
        assert!(rc.pipeline.quotient_at_zero);
        assert_eq!(rc.out, PathBuf::from("elsewhere"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "rank = 3\n").unwrap();
        let mut a = args();
        a.config = Some(path);
        assert!(matches!(a.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn zero_horizon_is_a_validation_error() {
        let mut a = args();
        a.horizon = Some(0.0);
        let err = a.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
