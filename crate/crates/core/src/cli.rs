//! `te` command-line front end: closure, split, train, eval and sweep.
//!
//! Every flag can also be set through an environment variable named after it
//! with a `TE_` prefix (`--dev-size` ↔ `TE_DEV_SIZE`). Exit codes: 0 success,
//! 1 usage or configuration error, 2 data error, 3 numerical divergence.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbeddingModel, LossHyper, ModelKind};
use crate::error::{Error, Result};
use crate::folds::{self, FoldSet, LabeledPair, Manifest, Protocol, SplitConfig};
use crate::metrics::{self, SweepSpec, SweepSystem};
use crate::poset::{ColumnOrder, PartialOrder};
use crate::scalar::Scalar;
use crate::train::{self, HyperGrid, TrainConfig, Trial};

#[derive(Debug, Parser)]
#[command(name = "te", version, about = "Embeddings and leakage-controlled evaluation for transitive relations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Close an edge file and write every implied pair.
    Closure(ClosureArgs),
    /// Generate learn/dev/eval folds under one protocol.
    Split(SplitArgs),
    /// Train (optionally grid-tune) a model on a fold directory.
    Train(TrainArgs),
    /// Evaluate a trained model, or the closure baseline, on a fold directory.
    Eval(EvalArgs),
    /// F1 on the eval fold as the learn fraction varies.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Args)]
pub struct EdgeInput {
    /// Tab-separated edge file.
    #[arg(long, env = "TE_EDGES")]
    pub edges: PathBuf,
    /// `child-first` or `parent-first` (hypernym first, as in WordNet dumps).
    #[arg(long, env = "TE_COLUMN_ORDER", default_value = "child-first")]
    pub column_order: ColumnOrder,
}

#[derive(Debug, Args)]
pub struct ClosureArgs {
    #[command(flatten)]
    pub input: EdgeInput,
    #[arg(long, env = "TE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitFlags {
    #[arg(long, env = "TE_PROTOCOL")]
    pub protocol: Protocol,
    /// Defaults to 4000 (oe) or 4393 (sanitized).
    #[arg(long, env = "TE_DEV_SIZE")]
    pub dev_size: Option<usize>,
    /// Defaults to 4000 (oe) or 4316 (sanitized).
    #[arg(long, env = "TE_EVAL_SIZE")]
    pub eval_size: Option<usize>,
    /// Defaults to 1.0 (oe) or 0.81048 (sanitized).
    #[arg(long, env = "TE_LEARN_FRACTION")]
    pub learn_fraction: Option<f64>,
    #[arg(long, env = "TE_SEED")]
    pub seed: u64,
}

impl SplitFlags {
    fn config(&self) -> SplitConfig {
        let base = SplitConfig::for_protocol(self.protocol, self.seed);
        SplitConfig {
            learn_fraction: self.learn_fraction.unwrap_or(base.learn_fraction),
            dev_size: self.dev_size.unwrap_or(base.dev_size),
            eval_size: self.eval_size.unwrap_or(base.eval_size),
            ..base
        }
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: EdgeInput,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Output directory for the fold files and manifest.
    #[arg(long, env = "TE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, env = "TE_DIM", default_value_t = 50)]
    pub dim: usize,
    #[arg(long, env = "TE_BATCH", default_value_t = 500)]
    pub batch: usize,
    #[arg(long, env = "TE_LR", default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, env = "TE_PATIENCE", default_value_t = 20)]
    pub patience: usize,
    #[arg(long, env = "TE_MAX_EPOCHS", default_value_t = 1000)]
    pub max_epochs: usize,
    #[arg(long, env = "TE_PRECISION", value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            learning_rate: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            dim: self.dim,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Loss hyperparameters. Each accepts a comma-separated list, used as the
/// search axis under `--grid`; without `--grid` a single value is required.
#[derive(Debug, Args)]
pub struct HyperFlags {
    #[arg(long, env = "TE_DELTA", value_delimiter = ',')]
    pub delta: Vec<f64>,
    #[arg(long, env = "TE_PSI", value_delimiter = ',')]
    pub psi: Vec<f64>,
    #[arg(long, env = "TE_ALPHA", value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long = "lambda", env = "TE_LAMBDA", value_delimiter = ',')]
    pub lambda: Vec<f64>,
}

impl HyperFlags {
    fn single<F: Scalar>(&self) -> Result<LossHyper<F>> {
        let d = LossHyper::<f64>::default();
        let pick = |name: &str, v: &[f64], default: f64| match v {
            [] => Ok(F::lit(default)),
            [x] => Ok(F::lit(*x)),
            _ => Err(Error::Config(format!("--{name} takes one value without --grid"))),
        };
        Ok(LossHyper {
            alpha: pick("alpha", &self.alpha, d.alpha)?,
            delta: pick("delta", &self.delta, d.delta)?,
            psi: pick("psi", &self.psi, d.psi)?,
            lambda: pick("lambda", &self.lambda, d.lambda)?,
        })
    }

    fn grid<F: Scalar>(&self) -> HyperGrid<F> {
        let d = HyperGrid::<F>::default();
        let axis = |v: &[f64], default: Vec<F>| {
            if v.is_empty() {
                default
            } else {
                v.iter().map(|&x| F::lit(x)).collect()
            }
        };
        HyperGrid {
            delta: axis(&self.delta, d.delta),
            psi: axis(&self.psi, d.psi),
            alpha: axis(&self.alpha, d.alpha),
            lambda: axis(&self.lambda, d.lambda),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Fold directory written by `te split`.
    #[arg(long, env = "TE_FOLDS")]
    pub folds: PathBuf,
    /// `oe`, `sigma-oe` or `rect`.
    #[arg(long, env = "TE_MODEL")]
    pub model: ModelKind,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Tune hyperparameters on the dev fold.
    #[arg(long, env = "TE_GRID")]
    pub grid: bool,
    #[arg(long, env = "TE_SEED")]
    pub seed: u64,
    /// Embedding file; `<out>.meta.json` and `<out>.history.csv` are written beside it.
    #[arg(long, env = "TE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding file written by `te train`.
    #[arg(long = "model", env = "TE_MODEL_PATH", required_unless_present = "tc_baseline")]
    pub model_path: Option<PathBuf>,
    #[arg(long, env = "TE_FOLDS")]
    pub folds: PathBuf,
    /// Evaluate the learn-fold closure baseline instead of a model.
    #[arg(long, env = "TE_TC_BASELINE")]
    pub tc_baseline: bool,
    #[arg(long, env = "TE_PRECISION", value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// JSON report.
    #[arg(long, env = "TE_OUT")]
    pub out: PathBuf,
    /// Recall-precision CSV.
    #[arg(long, env = "TE_CURVE")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: EdgeInput,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Comma-separated learn fractions in (0, 1].
    #[arg(long, env = "TE_FRACTIONS", value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub fractions: Vec<f64>,
    /// Comma-separated systems among `tc`, `oe`, `sigma-oe`, `rect`.
    #[arg(long, env = "TE_MODELS", value_delimiter = ',', default_value = "tc,oe")]
    pub models: Vec<SweepSystem>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub hyper: HyperFlags,
    #[arg(long, env = "TE_OUT")]
    pub out: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Divergence { .. } | Error::TuningFailed => 3,
        _ => 2,
    }
}

/// Parse arguments, run, report; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Execute one command, returning the text to print on success.
pub fn run(command: &Command) -> Result<String> {
    match command {
        Command::Closure(a) => cmd_closure(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => match a.train.precision {
            Precision::F32 => cmd_train::<f32>(a),
            Precision::F64 => cmd_train::<f64>(a),
        },
        Command::Eval(a) => match a.precision {
            Precision::F32 => cmd_eval::<f32>(a),
            Precision::F64 => cmd_eval::<f64>(a),
        },
        Command::Sweep(a) => match a.train.precision {
            Precision::F32 => cmd_sweep::<f32>(a),
            Precision::F64 => cmd_sweep::<f64>(a),
        },
    }
}

fn load(input: &EdgeInput) -> Result<(PartialOrder, String)> {
    let bytes = fs::read(&input.edges).map_err(|e| Error::io(&input.edges, e))?;
    let order = PartialOrder::load_edges(BufReader::new(bytes.as_slice()), input.column_order)?;
    Ok((order, sha256_hex(&bytes)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn cmd_closure(args: &ClosureArgs) -> Result<String> {
    let (order, _) = load(&args.input)?;
    let closure = order.closure();
    folds::write_lines(&args.out, |w| {
        use std::io::Write;
        for (x, y) in closure.pairs() {
            writeln!(w, "{}\t{}", order.name(x), order.name(y))?;
        }
        Ok(())
    })?;
    Ok(format!("{} -> {}\n", order.edges().len(), closure.len()))
}

pub fn cmd_split(args: &SplitArgs) -> Result<String> {
    let (order, checksum) = load(&args.input)?;
    let closure = order.closure();
    let cfg = args.split.config();
    let folds = folds::split(&closure, &cfg)?;
    let verification = folds::verify_folds(&folds, &closure, cfg.protocol);
    let manifest = Manifest {
        protocol: cfg.protocol,
        seed: cfg.seed,
        learn_fraction: cfg.learn_fraction,
        dev_size: cfg.dev_size,
        eval_size: cfg.eval_size,
        sizes: folds.sizes(),
        source_edges: args.input.edges.display().to_string(),
        source_sha256: checksum,
        closure_pairs: closure.len(),
        verification,
    };
    folds::write_fold_dir(&args.out, &order, &folds, &manifest)?;
    let s = manifest.sizes;
    Ok(format!(
        "learn\t{}\t{}\ndev\t{}\t{}\neval\t{}\t{}\nviolations\t{}\n",
        s.learn_pos,
        s.learn_neg,
        s.dev_pos,
        s.dev_neg,
        s.eval_pos,
        s.eval_neg,
        manifest.verification.total_violations()
    ))
}

/// Sidecar written next to a trained embedding file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub num_nodes: usize,
    pub dim: usize,
    /// `(rows, columns)` of each Adam moment matrix.
    pub optimizer_state: (usize, usize),
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub dev_loss: Option<f64>,
    pub hyper: LossHyper<f64>,
    pub train: TrainConfig,
    pub config_sha256: String,
    pub folds_manifest_sha256: Option<String>,
    /// Grid trials when `--grid` was used, the winner being `hyper`.
    pub tuning: Option<Vec<Trial<f64>>>,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_f64_hyper<F: Scalar>(h: &LossHyper<F>) -> LossHyper<f64> {
    LossHyper {
        alpha: h.alpha.as_f64(),
        delta: h.delta.as_f64(),
        psi: h.psi.as_f64(),
        lambda: h.lambda.as_f64(),
    }
}

pub fn cmd_train<F: Scalar>(args: &TrainArgs) -> Result<String> {
    let (order, folds) = folds::read_fold_dir(&args.folds)?;
    let cfg = args.train.config(args.seed);
    cfg.validate()?;
    let (model, history, hyper, tuning) = if args.grid {
        let outcome = train::tune_hyper(args.model, order.kinds(), &folds, &args.hyper.grid::<F>(), &cfg)?;
        let trials = outcome
            .trials
            .iter()
            .map(|t| Trial {
                hyper: to_f64_hyper(&t.hyper),
                dev_f1: t.dev_f1,
            })
            .collect();
        (outcome.model, outcome.history, outcome.best, Some(trials))
    } else {
        let hyper = args.hyper.single::<F>()?;
        let (model, history) = train::train_model(args.model, order.kinds(), &folds, &hyper, &cfg)?;
        (model, history, hyper, None)
    };

    model.write_file(&args.out, order.names())?;
    let history_path = sidecar(&args.out, ".history.csv");
    metrics::write_text(&history_path, &history.to_csv())?;

    let hyper = to_f64_hyper(&hyper);
    let config_json = serde_json::to_string(&(args.model, &cfg, &hyper)).expect("config serialises");
    let manifest_path = args.folds.join(folds::MANIFEST_FILE);
    let meta = CheckpointMeta {
        kind: args.model,
        num_nodes: model.num_nodes(),
        dim: model.dim(),
        optimizer_state: (model.num_nodes(), model.dim()),
        best_epoch: history.best_epoch,
        stopped_epoch: history.stopped_epoch,
        dev_loss: history.best_dev_loss(),
        hyper,
        train: cfg,
        config_sha256: sha256_hex(config_json.as_bytes()),
        folds_manifest_sha256: fs::read(&manifest_path).ok().map(|b| sha256_hex(&b)),
        tuning,
    };
    let meta_path = sidecar(&args.out, ".meta.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    metrics::write_text(&meta_path, &(json + "\n"))?;

    Ok(format!(
        "model\t{}\nepochs\t{}\nbest_epoch\t{}\ntrain_loss\t{:e}\ndev_loss\t{:e}\ndelta\t{}\npsi\t{}\nalpha\t{}\nlambda\t{}\n",
        args.model,
        history.stopped_epoch,
        history.best_epoch,
        history.final_train_loss().unwrap_or(f64::NAN),
        meta.dev_loss.unwrap_or(f64::NAN),
        hyper.delta,
        hyper.psi,
        hyper.alpha,
        hyper.lambda,
    ))
}

/// Re-index the held-out folds into the model's vocabulary.
fn align_folds(
    order: &PartialOrder,
    folds: &FoldSet,
    model_names: &[String],
) -> Result<FoldSet> {
    let index: std::collections::HashMap<&str, usize> = model_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut missing = std::collections::BTreeSet::new();
    let mut remap = |fold: &[LabeledPair]| -> Vec<LabeledPair> {
        fold.iter()
            .filter_map(|p| {
                let x = index.get(order.name(p.x));
                let y = index.get(order.name(p.y));
                if x.is_none() {
                    missing.insert(order.name(p.x).to_string());
                }
                if y.is_none() {
                    missing.insert(order.name(p.y).to_string());
                }
                Some(LabeledPair {
                    x: crate::poset::NodeId(*x? as u32),
                    y: crate::poset::NodeId(*y? as u32),
                    label: p.label,
                })
            })
            .collect()
    };
    let aligned = FoldSet {
        dev_pos: remap(&folds.dev_pos),
        dev_neg: remap(&folds.dev_neg),
        eval_pos: remap(&folds.eval_pos),
        eval_neg: remap(&folds.eval_neg),
        ..FoldSet::default()
    };
    if !missing.is_empty() {
        return Err(Error::Vocabulary(missing.into_iter().collect()));
    }
    Ok(aligned)
}

pub fn cmd_eval<F: Scalar>(args: &EvalArgs) -> Result<String> {
    let (order, folds) = folds::read_fold_dir(&args.folds)?;
    let report = if args.tc_baseline {
        let learn = folds.learn_closure(order.len())?;
        let test: Vec<LabeledPair> = folds.eval().copied().collect();
        metrics::tc_baseline(&learn, &test).report()
    } else {
        let path = args
            .model_path
            .as_ref()
            .ok_or_else(|| Error::Config("--model is required without --tc-baseline".into()))?;
        let (names, model) = EmbeddingModel::<F>::read_file(path)?;
        let aligned = align_folds(&order, &folds, &names)?;
        metrics::evaluate(&model, &aligned)?
    };
    metrics::write_text(&args.out, &(report.to_json() + "\n"))?;
    if let Some(curve) = &args.curve {
        metrics::write_text(curve, &metrics::rp_curve_csv(&report.rp_curve))?;
    }
    let c = report.classification;
    Ok(format!(
        "system\t{}\nthreshold\t{}\naccuracy\t{:.4}\nprecision\t{:.4}\nrecall\t{:.4}\nf1\t{:.4}\nap\t{}\n",
        report.system,
        report.threshold,
        c.accuracy,
        c.precision,
        c.recall,
        c.f1,
        report
            .average_precision
            .map_or("n/a".to_string(), |ap| format!("{ap:.4}"))
    ))
}

pub fn cmd_sweep<F: Scalar>(args: &SweepArgs) -> Result<String> {
    let (order, _) = load(&args.input)?;
    let closure = order.closure();
    let split = args.split.config();
    let spec = SweepSpec {
        protocol: split.protocol,
        fractions: &args.fractions,
        systems: &args.models,
        train: args.train.config(split.seed),
        split,
        hyper: args.hyper.single::<F>()?,
    };
    let rows = metrics::training_size_sweep(&closure, order.kinds(), &spec)?;
    metrics::write_text(&args.out, &metrics::sweep_csv(&rows))?;
    let mut summary = String::new();
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("sweep cell {} {}: {e}", r.fraction, r.system);
        }
        summary.push_str(&format!("{}\t{}\t{}\n", r.fraction, r.system, r.f1));
    }
    Ok(summary)
}
