//! `refhist` command-line tool: synthetic data, training, evaluation and
//! robustness sweeps, with every artifact written as JSON, JSONL or CSV.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use refhist::baseline::{baseline_train, Baseline, PointNetConfig, PointNetModel};
use refhist::network::{count_parameters, MlpConfig, MlpModel};
use refhist::perturb::{
    ablate_sample, importance_sweep, largest_value_target, noise_csv, noise_sweep, sweep_csv,
};
use refhist::pipeline::{evaluate, train, CloudClassifier, RefHist, TrainConfig, TrainingCurve};
use refhist::pointcloud::{
    read_clouds, split_by_track, write_clouds, Dataset, FeatureKind, PointCloud, Split,
};
use refhist::seed::derive_seed;
use refhist::synthgen::{
    generate, proportional_budgets, ProfileSet, SceneConfig, DEFAULT_CLASS_RATIO,
};
use refhist::{InputMode, NormStrategy, Normalizer};

#[derive(Parser, Debug)]
#[command(
    name = "refhist",
    version,
    about = "Histogram-based radar point cloud classification"
)]
#[command(args_override_self = true)]
struct Cli {
    /// JSON object whose keys are long flag names; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for evaluation and sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled corpus as JSONL.
    Generate(GenerateArgs),
    /// Split a corpus into train/val/test by track.
    Split(SplitArgs),
    /// Train a model; writes model.json, normalizer.json and curve.csv.
    Train(TrainArgs),
    /// Evaluate a model; writes report.json and confusion.csv.
    Eval(EvalArgs),
    /// Balanced accuracy under additive noise.
    NoiseSweep(NoiseArgs),
    /// Balanced accuracy after removing fractions of feature values.
    RemoveSweep(RemoveArgs),
    /// Remove selected values of one sample and compare predictions.
    Ablate(AblateArgs),
    /// Parameter counts of the three-layer MLP over a grid of hidden widths.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Master seed; every random stream is derived from it.
    #[arg(long, env = "REFHIST_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    seed: SeedArg,
    /// Total sample count, spread over the classes in the default ratio.
    #[arg(long, default_value_t = 6000, conflicts_with = "budgets")]
    samples: usize,
    /// Per-class sample counts: car, pedestrian, overridable, two_wheeler, underridable.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    budgets: Option<Vec<usize>>,
    /// Class profile JSON; the bundled defaults are used otherwise.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.2, 0.1])]
    fractions: Vec<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Refhist,
    Pointnet,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NormArg {
    FullRange,
    ManualClip,
    StatClip,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum InputModeArg {
    Raw,
    Density,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Refhist)]
    model_kind: ModelKind,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = NormArg::StatClip)]
    norm: NormArg,
    /// Lower bounds for manual-clip, one per feature.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    clip_lo: Option<Vec<f64>>,
    /// Upper bounds for manual-clip, one per feature.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    clip_hi: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = InputModeArg::Raw)]
    input_mode: InputModeArg,
    /// Hidden widths of the histogram MLP.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 16])]
    hidden: Vec<usize>,
    /// Shared per-point widths of the point-set model.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 16])]
    point_layers: Vec<usize>,
    /// Head widths of the point-set model.
    #[arg(long, value_delimiter = ',', default_values_t = [16])]
    head_layers: Vec<usize>,
    /// Maximum points per cloud for the point-set model.
    #[arg(long, default_value_t = 256)]
    capacity: usize,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    normalizer: PathBuf,
    /// Samples to evaluate (JSONL).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0125, 0.025])]
    sigmas: Vec<f64>,
    /// Value of the `model` column; defaults to the model kind.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RemoveArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [FeatureKind::Y, FeatureKind::Z])]
    features: Vec<FeatureKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.9])]
    fractions: Vec<f64>,
    /// Receives sweep.csv and one confusion CSV per cell.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Zero-based line of the sample in the input file.
    #[arg(long)]
    sample: usize,
    /// Values to remove as point:feature pairs, e.g. 3:z,0:rcs.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "largest",
        required_unless_present = "largest"
    )]
    targets: Vec<String>,
    /// Remove the single largest value of this feature instead.
    #[arg(long)]
    largest: Option<FeatureKind>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(long, default_value_t = 120)]
    input: usize,
    #[arg(long, default_value_t = 5)]
    out: usize,
    /// First-layer widths, `x`, second-layer widths.
    #[arg(long, default_value = "4,8,16,32x4,8,16,32")]
    grid: String,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config_file(argv) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::NoiseSweep(a) => cmd_noise(a),
        Command::RemoveSweep(a) => cmd_remove(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Params(a) => cmd_params(a),
    })
}

fn read_samples(path: &Path) -> Result<Vec<PointCloud>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_clouds(BufReader::new(file))
        .with_context(|| format!("malformed samples in {}", path.display()))
}

fn write_samples(path: &Path, clouds: &[PointCloud]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_clouds(clouds, &mut w)?;
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .context("cannot write to stdout")
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let budgets = match a.budgets {
        Some(b) => b.try_into().map_err(|b: Vec<usize>| {
            anyhow::anyhow!("--budgets needs 5 values, got {}", b.len())
        })?,
        None => proportional_budgets(a.samples, DEFAULT_CLASS_RATIO),
    };
    let profiles = match &a.profiles {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot open {}", path.display()))?;
            ProfileSet::from_json(&text)
                .with_context(|| format!("invalid profiles in {}", path.display()))?
        }
        None => ProfileSet::default_v1(),
    };
    let cfg = SceneConfig {
        budgets,
        seed: derive_seed(a.seed.seed, "generate"),
        profiles,
    };
    let dataset = generate(&cfg)?;
    write_samples(&a.out, dataset.samples())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let fractions: [f64; 3] = a
        .fractions
        .try_into()
        .map_err(|f: Vec<f64>| anyhow::anyhow!("--fractions needs 3 values, got {}", f.len()))?;
    let dataset = Dataset::new(read_samples(&a.input)?);
    let split = split_by_track(&dataset, fractions, derive_seed(a.seed.seed, "split"))
        .with_context(|| format!("cannot split {}", a.input.display()))?;
    ensure_dir(&a.out_dir)?;
    for s in Split::ALL {
        write_samples(
            &a.out_dir.join(format!("{}.jsonl", s.name())),
            &split.split_cloned(s),
        )?;
    }
    Ok(())
}

fn fixed<const N: usize>(values: Vec<f64>, flag: &str) -> Result<[f64; N]> {
    values
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("{flag} needs {N} values, got {}", v.len()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let norm = match a.norm {
        NormArg::FullRange => NormStrategy::FullRange,
        NormArg::StatClip => NormStrategy::StatClip,
        NormArg::ManualClip => {
            let (Some(lo), Some(hi)) = (a.clip_lo, a.clip_hi) else {
                bail!("--norm manual-clip requires --clip-lo and --clip-hi");
            };
            NormStrategy::ManualClip {
                lo: fixed(lo, "--clip-lo")?,
                hi: fixed(hi, "--clip-hi")?,
            }
        }
    };
    let hidden: [usize; 2] = a
        .hidden
        .try_into()
        .map_err(|h: Vec<usize>| anyhow::anyhow!("--hidden needs 2 values, got {}", h.len()))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed.seed,
        norm,
        bins: a.bins,
        input_mode: match a.input_mode {
            InputModeArg::Raw => InputMode::Raw,
            InputModeArg::Density => InputMode::Density,
        },
        hidden,
    };
    let train_set = read_samples(&a.train)?;
    let val_set = match &a.val {
        Some(path) => read_samples(path)?,
        None => Vec::new(),
    };
    let dataset = Dataset::from_splits(train_set, val_set, Vec::new());
    let (model_json, normalizer, curve): (serde_json::Value, Normalizer, TrainingCurve) =
        match a.model_kind {
            ModelKind::Refhist => {
                let (m, curve) = train(&dataset, &cfg)
                    .with_context(|| format!("training on {}", a.train.display()))?;
                (m.model.to_json(), m.normalizer, curve)
            }
            ModelKind::Pointnet => {
                let net = PointNetConfig {
                    point_layers: a.point_layers,
                    head_layers: a.head_layers,
                    capacity: a.capacity,
                    ..Default::default()
                };
                let (m, curve) = baseline_train(&dataset, &cfg, &net)
                    .with_context(|| format!("training on {}", a.train.display()))?;
                (m.model.to_json(), m.normalizer, curve)
            }
        };
    ensure_dir(&a.out_dir)?;
    write_text(
        &a.out_dir.join("model.json"),
        &serde_json::to_string_pretty(&model_json)?,
    )?;
    write_text(
        &a.out_dir.join("normalizer.json"),
        &serde_json::to_string_pretty(&normalizer)?,
    )?;
    write_text(&a.out_dir.join("curve.csv"), &curve.to_csv())
}

/// A trained classifier of either kind, plus its kind name.
fn load_classifier(
    args: &ModelArgs,
) -> Result<(Box<dyn CloudClassifier>, Normalizer, &'static str)> {
    let normalizer: Normalizer = serde_json::from_value(read_json(&args.normalizer)?)
        .with_context(|| format!("malformed normalizer in {}", args.normalizer.display()))?;
    let value = read_json(&args.model)?;
    let bad_model = || format!("malformed model in {}", args.model.display());
    if value.get("kind").and_then(|k| k.as_str()) == Some("pointnet") {
        let model = PointNetModel::from_json(value).with_context(bad_model)?;
        Ok((
            Box::new(Baseline {
                model,
                normalizer: normalizer.clone(),
            }),
            normalizer,
            "pointnet",
        ))
    } else {
        let model = MlpModel::from_json(value).with_context(bad_model)?;
        if model.config().input_dim != normalizer.input_dim() {
            bail!(
                "model {} expects {} inputs but normalizer {} yields {}",
                args.model.display(),
                model.config().input_dim,
                args.normalizer.display(),
                normalizer.input_dim()
            );
        }
        Ok((
            Box::new(RefHist {
                model,
                normalizer: normalizer.clone(),
            }),
            normalizer,
            "refhist",
        ))
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (clf, _, _) = load_classifier(&a.model)?;
    let samples = read_samples(&a.model.input)?;
    if samples.is_empty() {
        bail!("no samples in {}", a.model.input.display());
    }
    let report = evaluate(clf.as_ref(), &samples)?;
    ensure_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("report.json"), &report.to_json())?;
    write_text(&a.out_dir.join("confusion.csv"), &report.confusion_csv())
}

fn cmd_noise(a: NoiseArgs) -> Result<()> {
    let (clf, norm, kind) = load_classifier(&a.model)?;
    let samples = read_samples(&a.model.input)?;
    let cells = noise_sweep(
        clf.as_ref(),
        &norm,
        &samples,
        &a.sigmas,
        derive_seed(a.seed.seed, "noise"),
    )?;
    write_text(
        &a.out,
        &noise_csv(a.name.as_deref().unwrap_or(kind), &cells),
    )
}

fn cmd_remove(a: RemoveArgs) -> Result<()> {
    let (clf, _, _) = load_classifier(&a.model)?;
    let samples = read_samples(&a.model.input)?;
    let cells = importance_sweep(
        clf.as_ref(),
        &samples,
        &a.fractions,
        &a.features,
        derive_seed(a.seed.seed, "remove"),
    )?;
    ensure_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("sweep.csv"), &sweep_csv(&cells))?;
    for c in &cells {
        let name = format!("confusion_{}_{}.csv", c.feature, c.fraction);
        write_text(&a.out_dir.join(name), &c.report.confusion_csv())?;
    }
    Ok(())
}

fn parse_target(s: &str) -> Result<(usize, FeatureKind)> {
    let (point, feature) = s
        .split_once(':')
        .with_context(|| format!("target '{s}' is not point:feature"))?;
    let point = point
        .trim()
        .parse()
        .with_context(|| format!("bad point index in target '{s}'"))?;
    let feature = feature
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("target '{s}': {e}"))?;
    Ok((point, feature))
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let (clf, _, _) = load_classifier(&a.model)?;
    let samples = read_samples(&a.model.input)?;
    let cloud = samples.get(a.sample).with_context(|| {
        format!(
            "sample {} out of range, {} holds {} samples",
            a.sample,
            a.model.input.display(),
            samples.len()
        )
    })?;
    let targets = match a.largest {
        Some(feature) => vec![largest_value_target(cloud, feature)
            .with_context(|| format!("sample {} has no {feature} values", a.sample))?],
        None => a
            .targets
            .iter()
            .map(|t| parse_target(t))
            .collect::<Result<_>>()?,
    };
    let report = ablate_sample(clf.as_ref(), cloud, &targets).with_context(|| {
        format!(
            "ablating sample {} of {}",
            a.sample,
            a.model.input.display()
        )
    })?;
    match &a.out {
        Some(path) => write_text(path, &report.to_json()),
        None => print_stdout(&format!("{}\n", report.to_json())),
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .with_context(|| format!("bad width '{w}' in --grid"))
        })
        .collect()
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let (first, second) = a
        .grid
        .split_once('x')
        .context("--grid must look like 4,8x16,32")?;
    let (first, second) = (parse_widths(first)?, parse_widths(second)?);
    let mut out = String::from("layer1,layer2,parameters\n");
    for &h1 in &first {
        for &h2 in &second {
            let cfg = MlpConfig {
                input_dim: a.input,
                hidden: [h1, h2],
                output_dim: a.out,
                ..Default::default()
            };
            cfg.validate()?;
            out.push_str(&format!("{h1},{h2},{}\n", count_parameters(&cfg)));
        }
    }
    match &a.output {
        Some(path) => write_text(path, &out),
        None => print_stdout(&out),
    }
}
