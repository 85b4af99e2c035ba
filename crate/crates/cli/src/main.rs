use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrsel::harness::{
    self, dataset::DatasetConfig, Architecture, DatasetManifest, EvalConfig, ExplainConfig,
    OodTransformSpec, Shift, Split, TrainConfig,
};
use attrsel::image::Image;
use attrsel::model::checkpoint::{load_checkpoint, save_checkpoint};
use attrsel::partition::PartitionConfig;
use attrsel::submodular::ObjectiveWeights;
use attrsel::uncertainty::{fit_train_stats, TrainStats, UncertaintyConfig};
use attrsel::{Error, Result};
use clap::{Args, Parser, Subcommand};

mod selftest;

/// Uncertainty-aware region selection for image classifiers.
#[derive(Parser, Debug)]
#[command(name = "attrsel", version, args_override_self = true)]
struct Cli {
    /// Flat `key = value` file; keys are long flag names of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic shapes benchmark.
    GenData(GenDataArgs),
    /// Train a reference model on the benchmark's training split.
    Train(TrainArgs),
    /// Fit uncertainty statistics and class prototypes.
    FitStats(FitStatsArgs),
    /// Explain one image.
    Explain(ExplainArgs),
    /// Evaluate selection and uncertainty on the test splits.
    Eval(EvalArgs),
    /// Run quick internal consistency checks.
    Selftest,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 56)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    train_per_class: usize,
    #[arg(long, default_value_t = 25)]
    test_per_class: usize,
    #[arg(long, default_value_t = 10)]
    related_per_class: usize,
    #[arg(long, default_value_t = 40)]
    complementary: usize,
    /// `gaussian-noise:σ`, `blur:radius` or `rotation:degrees`.
    #[arg(long, default_value = "gaussian-noise:0.3")]
    transform: String,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "cnn")]
    arch: String,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct UncertaintyArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Covariance ridge; chosen from the covariance trace when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 8)]
    passes: usize,
    /// Comma-separated layer names; all parametric layers when omitted.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FitStatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    uncertainty: UncertaintyArgs,
    /// Use at most this many training images.
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SelectionArgs {
    /// `grid` or `slic`.
    #[arg(long, default_value = "grid")]
    partition: String,
    #[arg(long, default_value_t = 7)]
    grid_n: usize,
    #[arg(long, default_value_t = 7)]
    grid_m: usize,
    #[arg(long, default_value_t = 16)]
    superpixels: usize,
    #[arg(long, default_value_t = 0.1)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Greedy steps; every element when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lazy: bool,
    #[arg(long, default_value_t = 1.0)]
    mu1: f64,
    #[arg(long, default_value_t = 1.0)]
    mu2: f64,
    #[arg(long, default_value_t = 1.0)]
    mu3: f64,
    #[arg(long, default_value_t = 1.0)]
    mu4: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SelectionArgs {
    fn config(&self) -> Result<ExplainConfig> {
        let partition = match self.partition.as_str() {
            "grid" => PartitionConfig::Grid {
                n: self.grid_n,
                m: self.grid_m,
            },
            "slic" => PartitionConfig::Slic {
                superpixels: self.superpixels,
                compactness: self.compactness,
                iterations: self.iterations,
            },
            other => return Err(Error::Config(format!("unknown partition '{other}'"))),
        };
        Ok(ExplainConfig {
            partition,
            weights: ObjectiveWeights {
                mu1: self.mu1,
                mu2: self.mu2,
                mu3: self.mu3,
                mu4: self.mu4,
            },
            k: self.k,
            lazy: self.lazy,
            seed: self.seed,
        })
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// PNG or PGM image.
    #[arg(long)]
    image: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated shifts: id, related, complementary, transformed.
    #[arg(long, value_delimiter = ',', default_value = "id,related,complementary,transformed")]
    shifts: Vec<String>,
    #[arg(long)]
    max_per_shift: Option<usize>,
    #[arg(long, default_value_t = 20)]
    random_orders: usize,
    /// Skip the confidence-off comparison run.
    #[arg(long)]
    no_ablation: bool,
    #[command(flatten)]
    selection: SelectionArgs,
}

const SUBCOMMANDS: [&str; 6] = ["gen-data", "train", "fit-stats", "explain", "eval", "selftest"];

/// Turns `key = value` lines into flags placed right after the subcommand,
/// so that flags given on the command line (which come later) win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| Error::Config("--config needs a path".into()))?,
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{path}:{}: expected key = value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.to_string());
            }
        }
    }
    let sub = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .ok_or_else(|| Error::Config("no subcommand given".into()))?;
    let mut out = args[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let config = DatasetConfig {
        size: a.size,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        related_per_class: a.related_per_class,
        complementary: a.complementary,
        transform: OodTransformSpec::parse(&a.transform)?,
    };
    let m = harness::generate_dataset(&config, a.seed, &a.out)?;
    println!("wrote {} images to {}", m.entries.len(), a.out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct TrainLog<'a> {
    format_version: u32,
    config: &'a TrainConfig,
    epochs: &'a [harness::EpochLog],
    test_accuracy: f64,
}

fn train(a: &TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.data)?;
    let config = TrainConfig {
        architecture: Architecture::parse(&a.arch)?,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (images, labels) = manifest.labelled(Split::Train, Shift::Id)?;
    let model = config
        .architecture
        .build(manifest.input_shape(), manifest.class_count(), a.seed)?;
    let (model, logs) = harness::train_model(model, &images, &labels, &config)?;
    let (test_x, test_y) = manifest.labelled(Split::Test, Shift::Id)?;
    let test_accuracy = harness::accuracy(&model, &test_x, &test_y)?;
    save_checkpoint(&model, &a.out)?;
    write_json(
        &a.out.join("train_log.json"),
        &TrainLog {
            format_version: 1,
            config: &config,
            epochs: &logs,
            test_accuracy,
        },
    )?;
    println!("test accuracy {test_accuracy:.4}");
    Ok(())
}

fn fit_stats(a: &FitStatsArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let (mut images, mut labels) = manifest.labelled(Split::Train, Shift::Id)?;
    if let Some(max) = a.max_images {
        images.truncate(max);
        labels.truncate(max);
    }
    let u = &a.uncertainty;
    let config = UncertaintyConfig {
        alpha: u.alpha,
        beta: u.beta,
        gamma: u.gamma,
        lambda_ridge: u.lambda,
        passes: u.passes,
        seed: a.seed,
        layers: if u.layers.is_empty() {
            model.parametric_layers()
        } else {
            u.layers.clone()
        },
    };
    let stats = fit_train_stats(&model, &images, &labels, &config)?;
    stats.save(&a.out)?;
    println!(
        "fitted on {} images, raw score range [{:.4}, {:.4}]",
        images.len(),
        stats.norm_min,
        stats.norm_max
    );
    Ok(())
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let stats = TrainStats::load(&a.stats)?;
    let image = Image::load(&a.image)?;
    let id = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (report, candidates) =
        harness::explain_image(&model, &stats, &image, &id, &a.selection.config()?)?;
    harness::write_explain_outputs(&report, &candidates, &a.out)?;
    println!(
        "class {} order {:?} insertion {:.4} deletion {:.4}",
        report.class_id, report.trace.order, report.insertion.auc, report.deletion.auc
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let stats = TrainStats::load(&a.stats)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let config = EvalConfig {
        explain: a.selection.config()?,
        shifts: a.shifts.iter().map(|s| Shift::parse(s)).collect::<Result<_>>()?,
        max_per_shift: a.max_per_shift,
        random_orders: a.random_orders,
        ablation: !a.no_ablation,
        seed: a.selection.seed,
    };
    let report = harness::evaluate(&model, &stats, &manifest, &config)?;
    report.write(&a.out)?;
    print!("{}", report.summary_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::FitStats(a) => fit_stats(a),
        Command::Explain(a) => explain(a),
        Command::Eval(a) => eval(a),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
