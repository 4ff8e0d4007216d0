//! The `sspsc` command line: `synth`, `train`, `predict`, `eval`, `sweep`.
//!
//! Exit codes: 0 on success, 2 for rejected input or configuration, 3 when a
//! numerical routine fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetPair, EigenSelection, Hyperparams};
use crate::error::{Error, Result};
use crate::eval::{run_cv, run_cv_multiclass, CvOptions, CvReport, LabeledSet};
use crate::io::{self, SavedModel};
use crate::losses::LossKind;
use crate::normalize::Normalizer;
use crate::synth::{self, SynthConfig};
use crate::trainer::{fit, FitOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Hyperparameters left unset fall back to [`Hyperparams::for_dim`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_inner_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen_selection: Option<EigenSelection>,
}

impl HyperparamOverrides {
    pub fn resolve(&self, m: usize) -> Hyperparams {
        let d = Hyperparams::for_dim(m);
        Hyperparams {
            c1: self.c1.unwrap_or(d.c1),
            c2: self.c2.unwrap_or(d.c2),
            c3: self.c3.unwrap_or(d.c3),
            r: self.r.unwrap_or(d.r),
            k: self.k.unwrap_or(d.k),
            delta: self.delta.unwrap_or(d.delta),
            rho: self.rho.unwrap_or(d.rho),
            loss: self.loss.unwrap_or(d.loss),
            max_outer_iters: self.max_outer_iters.unwrap_or(d.max_outer_iters),
            max_inner_iters: self.max_inner_iters.unwrap_or(d.max_inner_iters),
            tol: self.tol.unwrap_or(d.tol),
            seed: self.seed.unwrap_or(d.seed),
            eigen_selection: self.eigen_selection.unwrap_or(d.eigen_selection),
        }
    }

    fn is_empty(&self) -> bool {
        *self == HyperparamOverrides::default()
    }
}

/// Everything a `train`, `eval` or `sweep` run needs. Stored as TOML;
/// relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub normalize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_budget: Option<usize>,
    #[serde(default)]
    pub timings: bool,
    #[serde(default)]
    pub hyperparams: HyperparamOverrides,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&io::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.source, &mut cfg.target, &mut cfg.model, &mut cfg.trace, &mut cfg.report]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing `{name}` path")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "sspsc", version, about = "Semi-supervised transfer learning with a shared subspace and classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic source/target pair as CSV files.
    Synth(SynthArgs),
    /// Fit a model; writes the model file and a JSON training trace.
    Train(RunArgs),
    /// Score a CSV with a saved model.
    Predict(PredictArgs),
    /// Cross-validate on a fully labeled target set; writes a JSON report.
    Eval(RunArgs),
    /// Cross-validate over a grid of one weight parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long = "n-source", default_value_t = 200)]
    pub n_source: usize,
    #[arg(long = "n-target", default_value_t = 200)]
    pub n_target: usize,
    /// Labeled target rows, written first.
    #[arg(long = "n-labeled", default_value_t = 20)]
    pub n_labeled: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub shift: f64,
    #[arg(long = "rot-deg", default_value_t = 30.0, allow_negative_numbers = true)]
    pub rot_deg: f64,
    /// Receives source.csv and target.csv.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Also write target_truth.csv with every target label, for `eval`.
    #[arg(long)]
    pub truth: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration; cannot be combined with the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub c1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub c2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub c3: Option<f64>,
    #[arg(long = "subspace-dim")]
    pub subspace_dim: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub step: Option<f64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long = "inner-iters")]
    pub inner_iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "eigen-selection", value_enum)]
    pub eigen_selection: Option<EigenArg>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long = "label-budget")]
    pub label_budget: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
    /// Record per-fold wall time in reports (makes them non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EigenArg {
    Smallest,
    Largest,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data CSV; its label column is ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    C1,
    C2,
    C3,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values, e.g. 0.01,0.1,1,10,100.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Vec<f64>,
}

impl RunArgs {
    /// Builds the run configuration, rejecting a config file combined with
    /// any configuration flag.
    pub fn into_config(self) -> Result<RunConfig> {
        let hp = HyperparamOverrides {
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            r: self.subspace_dim,
            k: self.neighbors,
            delta: self.delta,
            rho: self.step,
            loss: self.loss,
            max_outer_iters: self.max_iters,
            max_inner_iters: self.inner_iters,
            tol: self.tol,
            seed: self.seed,
            eigen_selection: self.eigen_selection.map(|e| match e {
                EigenArg::Smallest => EigenSelection::Smallest,
                EigenArg::Largest => EigenSelection::Largest,
            }),
        };
        let from_flags = RunConfig {
            source: self.source,
            target: self.target,
            model: self.model,
            trace: self.trace,
            report: self.report,
            normalize: self.normalize,
            folds: self.folds,
            label_budget: self.label_budget,
            timings: self.timings,
            hyperparams: hp,
        };
        match self.config {
            None => Ok(from_flags),
            Some(path) => {
                if from_flags != RunConfig::default() || !from_flags.hyperparams.is_empty() {
                    return Err(Error::Config(
                        "--config cannot be combined with run or hyperparameter flags".into(),
                    ));
                }
                RunConfig::load(&path)
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a.into_config()?),
        Command::Predict(a) => cmd_predict(&a.model, &a.input, &a.output),
        Command::Eval(a) => cmd_eval(&a.into_config()?),
        Command::Sweep(a) => {
            let param = a.param;
            let grid = a.grid;
            cmd_sweep(&a.run.into_config()?, param, &grid)
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let pair = synth::generate(&SynthConfig {
        seed: a.seed,
        n_source: a.n_source,
        n_target: a.n_target,
        n_target_labeled: a.n_labeled,
        dim: a.dim,
        shift: a.shift,
        rot_deg: a.rot_deg,
    })?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let all = |ys: &[i8]| -> Vec<Option<i64>> { ys.iter().map(|&y| Some(y as i64)).collect() };
    let partial: Vec<Option<i64>> = pair
        .target_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (i < pair.n_target_labeled).then_some(y as i64))
        .collect();
    io::write_atomic(
        &a.out_dir.join("source.csv"),
        io::format_csv(&pair.source_features, &all(&pair.source_labels)).as_bytes(),
    )?;
    io::write_atomic(
        &a.out_dir.join("target.csv"),
        io::format_csv(&pair.target_features, &partial).as_bytes(),
    )?;
    if a.truth {
        io::write_atomic(
            &a.out_dir.join("target_truth.csv"),
            io::format_csv(&pair.target_features, &all(&pair.target_labels)).as_bytes(),
        )?;
    }
    Ok(())
}

fn binary_labels(labels: &[i64], name: &str) -> Result<Vec<i8>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| match y {
            1 => Ok(1),
            -1 => Ok(-1),
            _ => Err(Error::InvalidLabel {
                value: y,
                location: format!("{name} line {}", i + 2),
            }),
        })
        .collect()
}

/// Reads the training pair named by `cfg`, normalizing if requested.
pub fn load_training_pair(cfg: &RunConfig) -> Result<(DatasetPair, Option<Normalizer>)> {
    let sp = cfg.require(&cfg.source, "source")?;
    let tp = cfg.require(&cfg.target, "target")?;
    let (sname, tname) = (sp.display().to_string(), tp.display().to_string());
    let s = io::read_csv(sp)?;
    let t = io::read_csv(tp)?;
    let source_labels = binary_labels(&s.all_labels(&sname)?, &sname)?;
    let n3 = t.labeled_prefix(&tname)?;
    let target_labels: Vec<i64> = t.labels[..n3].iter().map(|l| l.expect("prefix is labeled")).collect();
    let target_labels = binary_labels(&target_labels, &tname)?;
    let (xs, xt, normalizer) = if cfg.normalize {
        if s.features.ncols() != t.features.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "source has {} features, target has {}",
                s.features.ncols(),
                t.features.ncols()
            )));
        }
        let n = Normalizer::fit(&[&s.features, &t.features])?;
        (n.apply(&s.features)?, n.apply(&t.features)?, Some(n))
    } else {
        (s.features, t.features, None)
    };
    let pair = DatasetPair {
        source_features: xs,
        source_labels,
        target_features: xt,
        target_labels,
    };
    pair.check()?;
    Ok((pair, normalizer))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg.require(&cfg.model, "model")?;
    let (pair, normalizer) = load_training_pair(cfg)?;
    let hp = cfg.hyperparams.resolve(pair.dim());
    let (state, trace) = fit(&pair, &hp)?;
    let model = SavedModel {
        hyperparams: hp,
        state,
        normalizer,
    };
    model.check()?;
    model.save(model_path)?;
    let trace_path = match &cfg.trace {
        Some(p) => p.clone(),
        None => {
            let mut p = model_path.as_os_str().to_owned();
            p.push(".trace.json");
            PathBuf::from(p)
        }
    };
    io::write_atomic(&trace_path, to_json(&trace)?.as_bytes())
}

pub fn cmd_predict(model_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let model = SavedModel::load(model_path)?;
    let data = io::read_csv(input)?;
    let (scores, labels) = model.predict(&data.features)?;
    io::write_atomic(output, io::format_predictions(&scores, &labels).as_bytes())
}

fn run_eval(cfg: &RunConfig) -> Result<CvReport> {
    let sp = cfg.require(&cfg.source, "source")?;
    let tp = cfg.require(&cfg.target, "target")?;
    let s = io::read_csv(sp)?;
    let t = io::read_csv(tp)?;
    let ys = s.all_labels(&sp.display().to_string())?;
    let yt = t.all_labels(&tp.display().to_string())?;
    if s.features.ncols() != t.features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            s.features.ncols(),
            t.features.ncols()
        )));
    }
    let hp = cfg.hyperparams.resolve(s.features.ncols());
    let opts = CvOptions {
        folds: cfg.folds.unwrap_or(10),
        seed: hp.seed,
        label_budget: cfg.label_budget,
        timings: cfg.timings,
        normalize: cfg.normalize,
    };
    let source = LabeledSet {
        features: &s.features,
        labels: &ys,
    };
    let target = LabeledSet {
        features: &t.features,
        labels: &yt,
    };
    let mut classes: Vec<i64> = ys.iter().chain(&yt).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.iter().all(|c| *c == 1 || *c == -1) {
        run_cv(source, target, &hp, &opts, FitOptions::default())
    } else {
        run_cv_multiclass(source, target, &classes, &hp, &opts)
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let report_path = cfg.require(&cfg.report, "report")?;
    let report = run_eval(cfg)?;
    io::write_atomic(report_path, to_json(&report)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let report_path = cfg.require(&cfg.report, "report")?;
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut point = cfg.clone();
        let slot = match param {
            SweepParam::C1 => &mut point.hyperparams.c1,
            SweepParam::C2 => &mut point.hyperparams.c2,
            SweepParam::C3 => &mut point.hyperparams.c3,
        };
        *slot = Some(value);
        let report = run_eval(&point)?;
        let hp = &report.hyperparams;
        rows.push(SweepRow {
            value,
            mean_accuracy: report.mean_accuracy,
            std_accuracy: report.std_accuracy,
            c1: hp.c1,
            c2: hp.c2,
            c3: hp.c3,
        });
    }
    io::write_atomic(report_path, to_json(&SweepReport { param, rows })?.as_bytes())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig {
            source: Some("s.csv".into()),
            target: Some("t.csv".into()),
            folds: Some(5),
            normalize: true,
            hyperparams: HyperparamOverrides {
                c1: Some(0.5),
                loss: Some(LossKind::Hinge),
                eigen_selection: Some(EigenSelection::Largest),
                ..Default::default()
            },
            ..Default::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn overrides_fill_defaults() {
        let hp = HyperparamOverrides {
            c3: Some(0.0),
            ..Default::default()
        }
        .resolve(5);
        assert_eq!(hp, Hyperparams { c3: 0.0, ..Hyperparams::for_dim(5) });
    }

    #[test]
    fn config_and_flags_conflict() {
        let cli = Cli::try_parse_from(["sspsc", "train", "--config", "x.toml", "--c1", "2"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert!(matches!(a.into_config(), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InfeasibleDelta(0.5)), EXIT_INPUT);
        assert_eq!(exit_code(&Error::QpNotConverged(3)), EXIT_NUMERIC);
        assert_eq!(run(["sspsc", "bogus"]), EXIT_INPUT);
        assert_eq!(run(["sspsc", "--help"]), EXIT_OK);
    }
}
