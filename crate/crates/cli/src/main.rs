mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use expressnet::data::{make_synthetic_split, preprocess_to, read_gray, GrayImage, SyntheticSpec};
use expressnet::generator::export_heatmap_image;
use expressnet::metrics::{bpcer_at_apcer, det_curve, evaluate, DET_GRID};
use expressnet::resnet::arch_report;
use expressnet::train::{OptimizerKind, TrainConfig, Trainer};
use expressnet::{load_dataset, load_weights, save_weights, Dataset, Error, ExpressNet32, ExpressNetConfig, Split};

use config::FileConfig;

const TIE_RULE: &str = "scores are liveness probabilities; live iff score >= threshold";

#[derive(Parser)]
#[command(name = "expressnet", version, about = "Fingerprint liveness detection: train, evaluate, inspect")]
struct Cli {
    /// Flat `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write weights, history and checkpoints.
    Train(TrainArgs),
    /// Score a labelled dataset and write an APCER/BPCER/ACE report.
    Eval(EvalArgs),
    /// Export generator heatmaps as grayscale PNGs.
    Heatmap(HeatmapArgs),
    /// Sweep thresholds and write a DET curve as CSV and PNG.
    Det(DetArgs),
    /// Print the original vs slim classifier layout.
    ArchReport(ArchArgs),
    /// Write a synthetic dataset to `<out>/{train,test}/{live,spoof}`.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root with `live/` and `spoof/` subdirectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic dataset as `n_live,n_spoof`.
    #[arg(long)]
    synthetic: Option<Counts>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model size: full, desk or micro.
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Optional held-out directory scored every epoch.
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint `.exnw` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input image; repeat for several.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Export every image of a dataset directory instead.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of thresholds over [0, 1].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ArchArgs {
    /// Input side length used for the spatial schedule.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    synthetic: Option<Counts>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct Counts(usize, usize);

impl FromStr for Counts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `n_live,n_spoof`, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        let (live, spoof) = (parse(a)?, parse(b)?);
        if live == 0 || spoof == 0 {
            return Err("synthetic counts must be ≥ 1".into());
        }
        Ok(Counts(live, spoof))
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Model(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Model(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Model(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_model_error() || matches!(e, Error::Shape { .. }) {
            Failure::Model(msg)
        } else if matches!(e, Error::InvalidArgument { .. }) {
            Failure::Usage(msg)
        } else {
            Failure::Data(msg)
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    init_threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Train(a) => cmd_train(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::Heatmap(a) => cmd_heatmap(a, &file),
        Command::Det(a) => cmd_det(a, &file),
        Command::ArchReport(a) => cmd_arch_report(a, &file),
        Command::Synth(a) => cmd_synth(a, &file),
    }
}

fn init_threads() -> Outcome {
    let Ok(v) = std::env::var("EXPRESSNET_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Usage(format!("EXPRESSNET_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn pick<T: FromStr>(file: &FileConfig, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
where
    T::Err: fmt::Display,
{
    file.pick(flag, key).map_err(Failure::Usage)
}

fn arch(file: &FileConfig, flag: Option<String>) -> Result<ExpressNetConfig, Failure> {
    let name = pick(file, flag, "arch")?.unwrap_or_else(|| "desk".into());
    ExpressNetConfig::by_name(&name).ok_or_else(|| Failure::Usage(format!("unknown arch `{name}` (full, desk, micro)")))
}

fn out_dir(file: &FileConfig, flag: Option<PathBuf>, default: &str) -> Result<PathBuf, Failure> {
    let dir = pick(file, flag, "out")?.unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

struct Source {
    train: Dataset,
    test: Dataset,
}

/// Resolves `--data` / `--synthetic`; synthetic images are generated at the
/// model input size.
fn resolve_data(file: &FileConfig, args: &DataArgs, cfg: &ExpressNetConfig) -> Result<Option<Source>, Failure> {
    let data: Option<PathBuf> = pick(file, args.data.clone(), "data")?;
    let synthetic: Option<Counts> = pick(file, args.synthetic, "synthetic")?;
    let seed = pick(file, args.seed, "seed")?.unwrap_or(0);
    match (data, synthetic) {
        (Some(_), Some(_)) => Err(Failure::Usage("give either --data or --synthetic, not both".into())),
        (Some(dir), None) => {
            if !dir.is_dir() {
                return Err(Failure::Data(format!("dataset directory {} does not exist", dir.display())));
            }
            let d = load_dataset(&dir, Split::Test)?;
            Ok(Some(Source { train: d.clone(), test: d }))
        }
        (None, Some(Counts(n_live, n_spoof))) => {
            let (train, test) = make_synthetic_split(SyntheticSpec { n_live, n_spoof, seed, size: cfg.input_size });
            Ok(Some(Source { train, test }))
        }
        (None, None) => Ok(None),
    }
}

fn load_model(file: &FileConfig, flag: Option<PathBuf>, cfg: ExpressNetConfig) -> Result<ExpressNet32, Failure> {
    let path = pick(file, flag, "weights")?.ok_or_else(|| Failure::Usage("--weights is required".into()))?;
    if !path.is_file() {
        return Err(Failure::Model(format!("weights file {} does not exist", path.display())));
    }
    let params = load_weights(&path).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    ExpressNet32::from_params(cfg, params).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> Outcome {
    let out = out_dir(file, a.out, "runs/train")?;
    let checkpoints = out.join("checkpoints");
    let epochs = pick(file, a.epochs, "epochs")?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let meta = path.with_extension("json");
            Trainer::resume(path, &meta, epochs).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?
        }
        None => {
            let cfg = arch(file, a.data.arch.clone())?;
            let optimizer = match pick::<String>(file, a.optimizer, "optimizer")?.as_deref() {
                None | Some("adam") => OptimizerKind::Adam,
                Some("sgd") => OptimizerKind::Sgd,
                Some(other) => return Err(Failure::Usage(format!("unknown optimizer `{other}` (adam, sgd)"))),
            };
            let defaults = TrainConfig::default();
            let tc = TrainConfig {
                learning_rate: pick(file, a.lr, "lr")?.unwrap_or(defaults.learning_rate),
                batch_size: pick(file, a.batch, "batch")?.unwrap_or(defaults.batch_size),
                epochs: epochs.unwrap_or(defaults.epochs),
                seed: pick(file, a.data.seed, "seed")?.unwrap_or(defaults.seed),
                optimizer,
                checkpoint_every: pick(file, a.checkpoint_every, "checkpoint-every")?.unwrap_or(0),
            };
            tc.validate()?;
            let model = ExpressNet32::new(cfg, tc.seed);
            Trainer::new(model, tc)?
        }
    };
    let mut data = a.data.clone();
    if a.resume.is_some() && data.seed.is_none() {
        data.seed = Some(trainer.config.seed);
    }
    let test_dir: Option<PathBuf> = pick(file, a.test_data, "test-data")?;
    if let Some(d) = &test_dir {
        if !d.is_dir() {
            return Err(Failure::Data(format!("dataset directory {} does not exist", d.display())));
        }
    }
    let source = resolve_data(file, &data, &trainer.model.config)?
        .ok_or_else(|| Failure::Usage("train needs --data DIR or --synthetic L,S".into()))?;
    let validation = match (&test_dir, data.synthetic.is_some() || pick::<Counts>(file, None, "synthetic")?.is_some()) {
        (Some(d), _) => Some(load_dataset(d, Split::Test)?),
        (None, true) => Some(source.test),
        (None, false) => None,
    };
    let (train_set, total) = (source.train, trainer.config.epochs);
    println!(
        "training on {} samples ({} live, {} spoof), {} epochs, batch {}, lr {}",
        train_set.len(),
        train_set.count(expressnet::Label::Live),
        train_set.count(expressnet::Label::Spoof),
        total,
        trainer.config.batch_size,
        trainer.config.learning_rate
    );
    trainer.run(&train_set, validation.as_ref(), Some(&checkpoints), |r| {
        let val = r.val_ace.map(|v| format!(" val_ace {v:.2}")).unwrap_or_default();
        println!("epoch {}/{total} loss {:.6} train_acc {:.4}{val}", r.epoch, r.loss, r.train_acc);
    })?;
    let weights = out.join("weights.exnw");
    save_weights(&trainer.model.params, &weights)?;
    trainer.history.write_csv(&out.join("history.csv"))?;
    println!("wrote {}", weights.display());
    Ok(())
}

fn evaluation_set(file: &FileConfig, args: &DataArgs, cfg: &ExpressNetConfig) -> Result<Dataset, Failure> {
    let source = resolve_data(file, args, cfg)?.ok_or_else(|| Failure::Usage("need --data DIR or --synthetic L,S".into()))?;
    Ok(source.test)
}

fn cmd_eval(a: EvalArgs, file: &FileConfig) -> Outcome {
    let cfg = arch(file, a.data.arch.clone())?;
    let threshold = pick(file, a.threshold, "threshold")?.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Usage(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let data = evaluation_set(file, &a.data, &cfg)?;
    let model = load_model(file, a.weights, cfg)?;
    let out = out_dir(file, a.out, ".")?;
    let report = evaluate(&model, &data, threshold)?;
    let path = out.join("report.json");
    report.write_json(&path)?;
    println!("samples   {} live, {} spoof", report.live_total, report.spoof_total);
    println!("threshold {threshold}");
    println!("APCER     {:.2}", report.apcer);
    println!("BPCER     {:.2}", report.bpcer);
    println!("ACE       {:.2}", report.ace);
    println!("accuracy  {:.2}", report.accuracy);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_heatmap(a: HeatmapArgs, file: &FileConfig) -> Outcome {
    let cfg = arch(file, a.arch)?;
    let mut inputs: Vec<(String, GrayImage)> = Vec::new();
    for p in &a.input {
        let img = read_gray(p)?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string();
        inputs.push((stem, img));
    }
    if let Some(dir) = pick(file, a.data, "data")? {
        for s in load_dataset(&dir, Split::Test)?.samples() {
            inputs.push((s.id.replace('/', "_"), s.image.clone()));
        }
    }
    if inputs.is_empty() {
        return Err(Failure::Usage("heatmap needs --input IMAGE or --data DIR".into()));
    }
    let model = match pick::<PathBuf>(file, a.weights, "weights")? {
        Some(w) => load_model(file, Some(w), cfg)?,
        None => ExpressNet32::new(cfg, pick(file, a.seed, "seed")?.unwrap_or(0)),
    };
    let out = out_dir(file, a.out, ".")?;
    for (stem, img) in inputs {
        let x = preprocess_to::<f32>(&img, model.config.input_size);
        let h = model.heatmap(&x)?;
        let path = out.join(format!("{stem}_heatmap.png"));
        export_heatmap_image(&h, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_det(a: DetArgs, file: &FileConfig) -> Outcome {
    let cfg = arch(file, a.data.arch.clone())?;
    let grid = pick(file, a.grid, "grid")?.unwrap_or(DET_GRID);
    if grid < 2 {
        return Err(Failure::Usage(format!("--grid must be ≥ 2, got {grid}")));
    }
    let data = evaluation_set(file, &a.data, &cfg)?;
    let model = load_model(file, a.weights, cfg)?;
    let out = out_dir(file, a.out, ".")?;
    data.require_both_classes()?;
    let scores = model.score_samples(data.samples())?;
    let curve = det_curve(&scores, &data.labels(), grid)?;
    let (csv, png) = (out.join("det.csv"), out.join("det.png"));
    curve.write_csv(&csv)?;
    curve.write_plot(&png, 400)?;
    match bpcer_at_apcer(&curve, 1.0) {
        Ok(b) => println!("BPCER at APCER <= 1%: {b:.2}"),
        Err(e) => println!("BPCER at APCER <= 1%: n/a ({e})"),
    }
    println!("({TIE_RULE})");
    println!("wrote {} and {}", csv.display(), png.display());
    Ok(())
}

fn cmd_arch_report(a: ArchArgs, file: &FileConfig) -> Outcome {
    let size = pick(file, a.size, "size")?.unwrap_or(expressnet::INPUT_SIZE);
    if size < 32 {
        return Err(Failure::Usage(format!("--size must be ≥ 32, got {size}")));
    }
    print!("{}", arch_report(size));
    Ok(())
}

fn cmd_synth(a: SynthArgs, file: &FileConfig) -> Outcome {
    let Counts(n_live, n_spoof) =
        pick(file, a.synthetic, "synthetic")?.ok_or_else(|| Failure::Usage("synth needs --synthetic L,S".into()))?;
    let size = pick(file, a.size, "size")?.unwrap_or(expressnet::INPUT_SIZE);
    if size < 8 {
        return Err(Failure::Usage(format!("--size must be ≥ 8, got {size}")));
    }
    let seed = pick(file, a.seed, "seed")?.unwrap_or(0);
    let out = out_dir(file, a.out, "synthetic")?;
    let (train, test) = make_synthetic_split(SyntheticSpec { n_live, n_spoof, seed, size });
    for (name, d) in [("train", &train), ("test", &test)] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).map_err(write_err(&dir))?;
        d.materialize(&dir)?;
        println!("wrote {} samples to {}", d.len(), dir.display());
    }
    Ok(())
}
