//! The `mcel` command line.
//!
//! Exit codes: 0 on success, 1 on runtime or numeric failure, 2 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    emit_plot_script, format_sig, load_fashion, load_model, save_model, synthetic_blobs,
    write_sweep_csv, write_train_log_csv, Dataset, FashionSplit, FASHION_FILES,
};
use crate::error::{Error, Result};
use crate::fault::{ber_sweep, single_flip_delta, DEFAULT_BERS, DEFAULT_TRIALS};
use crate::losses::{LossKind, LossSpec, DEFAULT_BOUND};
use crate::metrics::{evaluate, margin_records, mlm};
use crate::network::{Model, TrainConfig, Trainer};
use crate::quant::QuantScheme;
use crate::rng::derive_seed;

pub const DATA_DIR_ENV: &str = "MCEL_DATA_DIR";
pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_FILE: &str = "ber_sweep.csv";
pub const MARGINS_FILE: &str = "margins.csv";
pub const MARGINS_SUMMARY_FILE: &str = "margins_summary.csv";

/// Shape of the synthetic blobs stand-in dataset.
const BLOB_CLASSES: usize = 10;
const BLOB_DIM: usize = 20;
const BLOB_SPREAD: f64 = 0.5;
const BLOB_TRAIN_PER_CLASS: usize = 100;
const BLOB_TEST_PER_CLASS: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "mcel", version, about = "Margin cross-entropy training and bit-error tolerance sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a quantized (or, with --bits 1, binarized) FC-MLP3.
    Train(TrainArgs),
    /// Inject random bit flips into a trained model's weights and measure accuracy.
    EvalBer(EvalBerArgs),
    /// Write per-sample top-2 logit margins of a trained model.
    Margins(MarginsArgs),
    /// Show how flipping one bit of a quantized code moves its value.
    FlipDemo(FlipDemoArgs),
    /// Write a matplotlib script plotting accuracy over BER for sweep CSVs.
    PlotScript(PlotScriptArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Fashion,
    Blobs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "fashion")]
    pub dataset: DatasetKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Weight bit width; 1 selects the binarized network.
    #[arg(long, default_value_t = 4, value_parser = parse_bits)]
    pub bits: u8,
    #[arg(long, default_value = "cel", value_parser = parse_loss)]
    pub loss: LossKind,
    /// Target-logit margin (celm, mcel) or hinge margin. Defaults to 192 for
    /// mcel and celm, 1 for hinge.
    #[arg(long)]
    pub m: Option<f64>,
    /// Saturation bound of the tanh clamp.
    #[arg(long = "L", default_value_t = DEFAULT_BOUND)]
    pub bound: f64,
    #[arg(long, default_value_t = 1.0)]
    pub logit_scale: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, default_value_t = 10)]
    pub step_size: usize,
    #[arg(long, default_value_t = 0.5, value_parser = parse_gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalBerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated bit error rates.
    #[arg(long, value_delimiter = ',', value_parser = parse_ber)]
    pub bers: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MarginsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlipDemoArgs {
    #[arg(long, default_value_t = 4, value_parser = parse_bits)]
    pub bits: u8,
    /// Code to flip; all codes when omitted.
    #[arg(long)]
    pub code: Option<u32>,
    /// Bit position to flip; all positions when omitted.
    #[arg(long)]
    pub position: Option<u32>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub v_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub v_max: f64,
}

#[derive(Debug, Args)]
pub struct PlotScriptArgs {
    /// Sweep CSV; repeat for one curve per file.
    #[arg(long = "csv", required = true)]
    pub csvs: Vec<PathBuf>,
    #[arg(long, default_value = "plot_ber.py")]
    pub out: PathBuf,
}

fn parse_bits(s: &str) -> std::result::Result<u8, String> {
    match s.parse::<u8>() {
        Ok(b @ (1 | 2 | 4 | 8)) => Ok(b),
        _ => Err(format!("'{s}' is not one of 1, 2, 4, 8")),
    }
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_gamma(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(g) if g > 0.0 && g <= 1.0 => Ok(g),
        _ => Err(format!("gamma '{s}' must lie in (0, 1]")),
    }
}

fn parse_ber(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(format!("bit error rate '{s}' must lie in [0, 1]")),
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::EvalBer(a) => cmd_eval_ber(&a),
        Command::Margins(a) => cmd_margins(&a),
        Command::FlipDemo(a) => cmd_flip_demo(&a),
        Command::PlotScript(a) => {
            let paths: Vec<&Path> = a.csvs.iter().map(PathBuf::as_path).collect();
            emit_plot_script(&paths, &a.out)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
    }
}

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/fashion"))
}

/// Train and test split of the selected dataset.
pub fn load_dataset(kind: DatasetKind, seed: u64) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Blobs => {
            let train = synthetic_blobs(BLOB_CLASSES, BLOB_TRAIN_PER_CLASS, BLOB_DIM, BLOB_SPREAD, seed)?;
            let test = synthetic_blobs(
                BLOB_CLASSES,
                BLOB_TEST_PER_CLASS,
                BLOB_DIM,
                BLOB_SPREAD,
                derive_seed(seed, &[1]),
            )?;
            Ok((train, test))
        }
        DatasetKind::Fashion => {
            let dir = data_dir();
            let load = || -> Result<(Dataset, Dataset)> {
                Ok((
                    load_fashion(&dir, FashionSplit::Train)?,
                    load_fashion(&dir, FashionSplit::Test)?,
                ))
            };
            load().inspect_err(|e| {
                if matches!(e, Error::MissingFile(_)) {
                    eprintln!(
                        "FashionMNIST not found. Place the uncompressed IDX files in {} (or set {DATA_DIR_ENV}):",
                        dir.display()
                    );
                    for (name, size) in FASHION_FILES {
                        eprintln!("  {}  ({size} bytes)", dir.join(name).display());
                    }
                }
            })
        }
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn loss_spec(a: &TrainArgs) -> LossSpec {
    let margin = a.m.unwrap_or(match a.loss {
        LossKind::Cel => 0.0,
        LossKind::Celm | LossKind::Mcel => 192.0,
        LossKind::Hinge => 1.0,
    });
    LossSpec {
        kind: a.loss,
        margin,
        bound: a.bound,
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        step_size: a.step_size,
        gamma: a.gamma,
        seed: a.seed,
    };
    cfg.validate()?;
    let loss = loss_spec(a);
    loss.validate()?;
    if !(a.logit_scale > 0.0 && a.logit_scale.is_finite()) {
        return Err(Error::Config(format!("logit scale {} must be > 0", a.logit_scale)));
    }
    let (train, test) = load_dataset(a.data.dataset, a.seed)?;
    prepare_out(&a.out)?;

    let model = Model::fc_mlp3(train.dim(), train.classes(), a.bits, a.logit_scale, a.seed)?;
    println!(
        "training {} ({} parameters) with {loss} on {} samples",
        model.architecture(),
        model.param_count(),
        train.len()
    );
    let mut trainer = Trainer::new(model, cfg, loss)?;
    let log = trainer.fit(&train, |s| {
        println!(
            "epoch {:>3}  loss {}  acc {}  mlm {}  lr {}",
            s.epoch,
            format_sig(s.loss, 6),
            format_sig(s.accuracy, 6),
            format_sig(s.mlm, 6),
            format_sig(s.lr, 6)
        );
    })?;
    let model = trainer.into_model();
    save_model(&model, &a.out.join(MODEL_FILE))?;
    write_train_log_csv(&log, &a.out.join(TRAIN_LOG_FILE))?;
    let (acc, margin) = evaluate(&model, &test)?;
    println!(
        "test accuracy {}  mean margin {}",
        format_sig(acc, 6),
        format_sig(margin, 6)
    );
    Ok(())
}

fn cmd_eval_ber(a: &EvalBerArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let bers = a.bers.clone().unwrap_or_else(|| DEFAULT_BERS.to_vec());
    let (_, test) = load_dataset(a.data.dataset, model.seed())?;
    prepare_out(&a.out)?;
    let result = ber_sweep(&model, &test, &bers, a.trials, a.seed)?;
    write_sweep_csv(&result, &a.out.join(SWEEP_FILE))?;
    println!("ber        mean_accuracy  mean_margin");
    for (ber, acc, margin) in result.summary() {
        println!(
            "{:<10} {:<14} {}",
            format_sig(ber, 6),
            format_sig(acc, 6),
            format_sig(margin, 6)
        );
    }
    Ok(())
}

fn cmd_margins(a: &MarginsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (_, test) = load_dataset(a.data.dataset, model.seed())?;
    prepare_out(&a.out)?;
    let records = margin_records(&model, &test)?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(a.out.join(MARGINS_FILE))?;
    w.write_record(["sample", "predicted", "top2_margin"])?;
    for r in &records {
        w.write_record([
            r.sample.to_string(),
            r.predicted.to_string(),
            format_sig(r.top2, 6),
        ])?;
    }
    w.flush()?;

    let mean = mlm(&records)?;
    let min = records.iter().map(|r| r.top2).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(|r| r.top2).fold(f64::NEG_INFINITY, f64::max);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(a.out.join(MARGINS_SUMMARY_FILE))?;
    w.write_record(["count", "mean", "min", "max"])?;
    w.write_record([
        records.len().to_string(),
        format_sig(mean, 6),
        format_sig(min, 6),
        format_sig(max, 6),
    ])?;
    w.flush()?;
    println!(
        "{} samples  mean {}  min {}  max {}",
        records.len(),
        format_sig(mean, 6),
        format_sig(min, 6),
        format_sig(max, 6)
    );
    Ok(())
}

fn cmd_flip_demo(a: &FlipDemoArgs) -> Result<()> {
    let scheme = QuantScheme::new(a.bits, a.v_min, a.v_max).map_err(|e| Error::Config(e.to_string()))?;
    let codes: Vec<u32> = match a.code {
        Some(c) if c > scheme.max_code() => {
            return Err(Error::Config(format!("code {c} does not fit in {} bits", a.bits)))
        }
        Some(c) => vec![c],
        None => (0..=scheme.max_code()).collect(),
    };
    let positions: Vec<u32> = match a.position {
        Some(i) if i >= a.bits as u32 => {
            return Err(Error::Config(format!("bit position {i} out of range for {} bits", a.bits)))
        }
        Some(i) => vec![i],
        None => (0..a.bits as u32).collect(),
    };
    let w = a.bits as usize;
    println!("delta step {}", format_sig(scheme.delta(), 6));
    println!("{:>w$}  {:>3}  {:>w$}  {:>12}  {:>12}  law", "code", "bit", "flipped", "delta", "2^i*step");
    let mut violations = 0;
    for &c in &codes {
        for &i in &positions {
            let delta = single_flip_delta(c, i, &scheme)?;
            let law = (1u64 << i) as f64 * scheme.delta();
            let ok = (delta - law).abs() <= 1e-9 * law.max(1.0);
            if !ok {
                violations += 1;
            }
            println!(
                "{:0w$b}  {i:>3}  {:0w$b}  {:>12}  {:>12}  {}",
                c,
                c ^ (1 << i),
                format_sig(delta, 6),
                format_sig(law, 6),
                if ok { "ok" } else { "VIOLATED" }
            );
        }
    }
    if violations > 0 {
        return Err(Error::Numeric(format!("{violations} flips broke the 2^i step law")));
    }
    Ok(())
}
