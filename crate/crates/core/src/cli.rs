//! Command-line driver: gen, train, eval, bench, inspect, gradcheck.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, missing input file,
//! invalid configuration), 2 data error (malformed or incompatible file),
//! 3 numeric failure (non-finite values, divergence, failed gradient check).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench, BatchMode, BenchConfig};
use crate::checks::gradient_suite;
use crate::data::synth::{ImpairmentRanges, PulseShape};
use crate::data::{checkpoint, generate, write_atomic, Dataset, GenConfig, Modulation};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{count_flops, count_params, DaeModel, FeatureTransform, ModelConfig, FLOP_CONVENTION};
use crate::numeric::{Rng, Stream};
use crate::render::{bench_key_value_text, bench_text, render_tables};
use crate::train::{stratified_split, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "rfdae", version, about = "LSTM denoising auto-encoder classifier for radio signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic SIGSET dataset.
    Gen(GenArgs),
    /// Train a model on a SIGSET dataset and write a checkpoint and training log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset partition and write report files.
    Eval(EvalArgs),
    /// Measure classifications per second for a checkpoint.
    Bench(BenchArgs),
    /// Print the header of a dataset or checkpoint with parameter and FLOP counts.
    Inspect(InspectArgs),
    /// Run the gradient-check suite; exits 3 if any tensor fails.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Comma-separated modulations (BPSK, QPSK, 8PSK, PAM4, QAM16, QAM64, GFSK, CPFSK).
    #[arg(long, value_delimiter = ',', required = true)]
    mods: Vec<String>,
    /// SNR range in dB as lo:step:hi (inclusive), or a single value.
    #[arg(long, default_value = "-20:2:18")]
    snrs: String,
    /// Records per (modulation, SNR) pair.
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    /// Samples per record.
    #[arg(long = "len", default_value_t = 128)]
    seq_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.35)]
    rolloff: f64,
    /// Samples per symbol.
    #[arg(long, default_value_t = 8)]
    sps: usize,
    /// Root-raised-cosine span in symbols.
    #[arg(long, default_value_t = 10)]
    span: usize,
    /// Frequency offsets are drawn from [-x, x] cycles/sample.
    #[arg(long, default_value_t = 0.001)]
    max_freq_offset: f64,
    /// Disable the random carrier phase.
    #[arg(long)]
    no_random_phase: bool,
    /// Disable the random fractional timing offset.
    #[arg(long)]
    no_random_timing: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FeatureArg {
    /// Amplitude/phase when m = 2, raw otherwise.
    Auto,
    AmpPhase,
    Raw,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Widths of the two hidden classifier layers.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 16])]
    widths: Vec<usize>,
    /// Leave the last classifier layer linear.
    #[arg(long)]
    no_final_relu: bool,
    #[arg(long, value_enum, default_value_t = FeatureArg::Auto)]
    features: FeatureArg,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Seed for the run (split, initialization, shuffling, masking, dropout).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.25])]
    split: Vec<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Training log (TSV). Defaults to the checkpoint path with `.log.tsv` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    mask_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    /// Worker threads for per-example gradients. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Clip minibatch gradients to this global L2 norm.
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
    /// Every record (for a dataset held out from training).
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for summary.txt, per_snr.tsv, confusion.csv and metrics.txt.
    #[arg(short, long)]
    output: PathBuf,
    /// Partition to score; train/val/test recompute the training split from --seed and --split.
    #[arg(long, value_enum, default_value_t = Part::Test)]
    part: Part,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence length of the probe inputs. Defaults to the checkpoint's.
    #[arg(long = "len")]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[arg(long, default_value_t = 1000)]
    duration_ms: u64,
    /// Classify this many examples per timed iteration instead of one.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the result as key=value lines to this file.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// A SIGSET dataset or a checkpoint. Without it, only the model section is printed.
    path: Option<PathBuf>,
    /// Model section: number of classes (default 11).
    #[arg(long)]
    num_classes: Option<usize>,
    /// Model section: features per step (default 2).
    #[arg(long)]
    features: Option<usize>,
    /// Model section: sequence length (default 128).
    #[arg(long = "len")]
    seq_len: Option<usize>,
    /// Model section: take m, n and K from the dataset instead of the defaults.
    #[arg(long)]
    from_dataset: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Exit class for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnsupportedModulation(_) | Error::TimerResolution { .. } => EXIT_USAGE,
        Error::NonFinite(_) | Error::Divergence { .. } | Error::GradCheck { .. } | Error::State(_) => EXIT_NUMERIC,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses, runs and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} {} does not exist", path.display()),
        )));
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", p.display()),
        ))),
        _ => Ok(()),
    }
}

/// `lo:step:hi` inclusive, or a single integer.
pub fn parse_snr_range(spec: &str) -> Result<Vec<i16>> {
    let bad = || Error::Config(format!("SNR range {spec:?} is not lo:step:hi or a single value"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<i16>().map_err(|_| bad());
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [lo, step, hi] => {
            let (lo, step, hi) = (num(lo)?, num(step)?, num(hi)?);
            if step <= 0 || lo > hi {
                return Err(bad());
            }
            Ok((lo..=hi).step_by(step as usize).collect())
        }
        _ => Err(bad()),
    }
}

fn cmd_gen(a: GenArgs) -> Result<i32> {
    require_parent(&a.output)?;
    let modulations = a
        .mods
        .iter()
        .map(|m| m.parse::<Modulation>())
        .collect::<Result<Vec<_>>>()?;
    let config = GenConfig {
        modulations,
        snrs_db: parse_snr_range(&a.snrs)?,
        per_class_snr: a.per_class,
        seq_len: a.seq_len,
        seed: a.seed,
        pulse: PulseShape {
            rolloff: a.rolloff,
            samples_per_symbol: a.sps,
            span_symbols: a.span,
        },
        impairments: ImpairmentRanges {
            random_phase: !a.no_random_phase,
            max_freq_offset: a.max_freq_offset,
            random_timing: !a.no_random_timing,
        },
    };
    let ds = generate(&config).map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    })?;
    ds.write(&a.output)?;
    println!(
        "wrote {} records ({} classes, n={}, m={}) to {}",
        ds.len(),
        ds.num_classes(),
        ds.seq_len,
        ds.num_features,
        a.output.display()
    );
    Ok(EXIT_OK)
}

fn model_config(args: &ModelArgs, ds: &Dataset, cfg: &TrainConfig) -> Result<ModelConfig> {
    let features = match args.features {
        FeatureArg::Auto if ds.num_features == 2 => FeatureTransform::AmpPhase,
        FeatureArg::Auto | FeatureArg::Raw => FeatureTransform::Raw,
        FeatureArg::AmpPhase => FeatureTransform::AmpPhase,
    };
    let widths = <[usize; 2]>::try_from(args.widths.as_slice())
        .map_err(|_| Error::Config(format!("--widths needs two values, got {}", args.widths.len())))?;
    let config = ModelConfig {
        input_features: ds.num_features,
        seq_len: ds.seq_len,
        hidden: args.hidden,
        encoder_depth: args.depth,
        classifier_widths: widths,
        num_classes: ds.num_classes(),
        final_relu: !args.no_final_relu,
        lambda: cfg.lambda,
        mask_rate: cfg.mask_rate,
        dropout_rate: cfg.dropout_rate,
        features,
    };
    config.validate()?;
    Ok(config)
}

fn split_fractions(v: &[f64]) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v)
        .map_err(|_| Error::Config(format!("--split needs three fractions, got {}", v.len())))
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    require_file(&a.dataset, "dataset")?;
    require_parent(&a.output)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.output.clone().into_os_string();
        s.push(".log.tsv");
        PathBuf::from(s)
    });
    require_parent(&log_path)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.split.seed,
        lambda: a.lambda,
        mask_rate: a.mask_rate,
        dropout_rate: a.dropout,
        split: split_fractions(&a.split.split)?,
        workers: a.workers,
        grad_clip: a.grad_clip,
    };
    cfg.validate()?;
    let ds = Dataset::read(&a.dataset)?;
    let config = model_config(&a.model, &ds, &cfg)?;
    let model = DaeModel::new(config, &mut Rng::new(cfg.seed).substream(Stream::Init))?;
    log::info!(
        "training {} parameters on {} records ({} classes), {} epochs",
        model.param_count(),
        ds.len(),
        ds.num_classes(),
        cfg.epochs
    );
    let out = train(model, &ds, &cfg)?;
    checkpoint::write(&out.model, &a.output)?;
    out.log.write(&log_path)?;
    let best = &out.log.records[out.log.best_epoch - 1];
    println!(
        "best epoch {} (validation accuracy {:.4}); checkpoint {}, log {}",
        out.log.best_epoch,
        best.val_acc,
        a.output.display(),
        log_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.dataset, "dataset")?;
    let model = checkpoint::read(&a.checkpoint)?;
    let ds = Dataset::read(&a.dataset)?;
    let indices: Vec<usize> = match a.part {
        Part::All => (0..ds.len()).collect(),
        part => {
            let fractions = split_fractions(&a.split.split)?;
            TrainConfig {
                split: fractions,
                ..Default::default()
            }
            .validate()?;
            let s = stratified_split(&ds, fractions, a.split.seed)?;
            match part {
                Part::Train => s.train,
                Part::Val => s.val,
                _ => s.test,
            }
        }
    };
    let report = evaluate(&model, &ds, &indices)?;
    let rendered = render_tables(&report, None);
    rendered.write_to(&a.output)?;
    print!("{}", rendered.summary);
    Ok(EXIT_OK)
}

fn cmd_bench(a: BenchArgs) -> Result<i32> {
    require_file(&a.checkpoint, "checkpoint")?;
    if let Some(out) = &a.output {
        require_parent(out)?;
    }
    let model = checkpoint::read(&a.checkpoint)?;
    let cfg = BenchConfig {
        seq_len: a.seq_len.unwrap_or(model.config.seq_len),
        repetitions: a.repetitions,
        duration_per_rep: Duration::from_millis(a.duration_ms),
        mode: a.batch.map_or(BatchMode::Single, BatchMode::Batched),
        seed: a.seed,
    };
    let result = bench(&model, &cfg)?;
    print!("{}", bench_text(&result));
    if let Some(out) = &a.output {
        write_atomic(out, bench_key_value_text(&result).as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn print_model_section(config: &ModelConfig) {
    println!("model:");
    println!(
        "  m={} n={} H={} depth={} head={}/{}/{} final_relu={}",
        config.input_features,
        config.seq_len,
        config.hidden,
        config.encoder_depth,
        config.classifier_widths[0],
        config.classifier_widths[1],
        config.num_classes,
        config.final_relu
    );
    println!("params: {}", count_params(config));
    println!("flops: {}", count_flops(config).flops);
    println!("flop convention: {FLOP_CONVENTION}");
}

fn cmd_inspect(a: InspectArgs) -> Result<i32> {
    let mut defaults = ModelConfig::paper(2, 128, 11);
    if let Some(path) = &a.path {
        require_file(path, "input")?;
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(crate::data::dataset::SIGSET_MAGIC) {
            let ds = Dataset::from_bytes(&bytes)?;
            println!("dataset: {}", path.display());
            println!("  format: SIGSET v{}", crate::data::dataset::SIGSET_VERSION);
            println!("  n_records: {}", ds.len());
            println!("  n: {}  m: {}  K: {}", ds.seq_len, ds.num_features, ds.num_classes());
            println!("  classes: {}", ds.class_names.join(", "));
            let snrs: Vec<String> = ds.snr_values().iter().map(i16::to_string).collect();
            println!("  snr_db: {}", snrs.join(", "));
            println!("  bytes: {}", bytes.len());
            if a.from_dataset {
                defaults = ModelConfig::paper(ds.num_features, ds.seq_len, ds.num_classes());
            }
        } else {
            let model = checkpoint::from_bytes(&bytes)?;
            let c = &model.config;
            println!("checkpoint: {}", path.display());
            println!("  format: v{}", checkpoint::CHECKPOINT_VERSION);
            println!(
                "  lambda={} mask_rate={} dropout={} features={:?}",
                c.lambda, c.mask_rate, c.dropout_rate, c.features
            );
            println!("  bytes: {}", bytes.len());
            defaults = *c;
        }
    }
    let config = ModelConfig {
        num_classes: a.num_classes.unwrap_or(defaults.num_classes),
        input_features: a.features.unwrap_or(defaults.input_features),
        seq_len: a.seq_len.unwrap_or(defaults.seq_len),
        ..defaults
    };
    print_model_section(&config);
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    if a.seeds == 0 || !(a.tolerance > 0.0) {
        return Err(Error::Config("need at least one seed and a positive tolerance".into()));
    }
    let results = gradient_suite(a.seeds, a.tolerance)?;
    let mut failed = 0;
    let mut worst = 0.0f64;
    for r in &results {
        worst = worst.max(r.report.max_relative_error);
        if !r.report.passed {
            failed += 1;
            println!(
                "FAIL {} seed {} {}: max relative error {:.3e} (tolerance {:.1e})",
                r.unit, r.seed, r.report.parameter_name, r.report.max_relative_error, a.tolerance
            );
        }
    }
    println!(
        "{} tensor checks over {} seeds, {} failed, worst relative error {:.3e}",
        results.len(),
        a.seeds,
        failed,
        worst
    );
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERIC })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_ranges() {
        assert_eq!(parse_snr_range("0:2:18").unwrap().len(), 10);
        assert_eq!(parse_snr_range("-20:2:18").unwrap().first(), Some(&-20));
        assert_eq!(parse_snr_range("10:2:18").unwrap(), vec![10, 12, 14, 16, 18]);
        assert_eq!(parse_snr_range("5").unwrap(), vec![5]);
        assert_eq!(parse_snr_range("0:3:7").unwrap(), vec![0, 3, 6]);
        for bad in ["0:0:10", "10:2:0", "a:b:c", "1:2"] {
            assert!(parse_snr_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Integrity { stored: 0, computed: 1 }), EXIT_DATA);
        assert_eq!(exit_code(&Error::Truncated { expected: 2, actual: 1 }), EXIT_DATA);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_NUMERIC);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::from(std::io::ErrorKind::NotFound))),
            EXIT_USAGE
        );
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["rfdae", "train", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(run(["rfdae", "--help"]), EXIT_OK);
    }
}
