mod overlay;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use deepspace::analysis::{
    build_confusion, distinctiveness, distinctiveness_to_csv, export_filter_grid, export_similarity_graph,
    normalize_misclass, pairs_to_csv, parse_prediction_log, rank_similar_pairs, render_prediction_log,
};
use deepspace::cam::{class_activation_map, render_overlay};
use deepspace::data::{
    decode_image, load_manifest, prepare, preprocess, synth_generate, write_image, BlurConfig, Dataset, ImageRecord,
    PrepConfig,
};
use deepspace::hierarchy::{classify, Hierarchy, HierarchyConfig, LevelPrediction};
use deepspace::model::{load, save, DeepSpaceConfig, ModelState};
use deepspace::training::{evaluate, train, Precision, TrainConfig};
use deepspace::{Real, Rng};

#[derive(Parser)]
#[command(name = "deepspace", version, about = "Indoor place recognition: data, training, prediction, CAMs and similarity analysis")]
struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// `key = value` file of flag values for the subcommand; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic indoor-scene dataset
    Synth(SynthArgs),
    /// Rescale, drop blurred frames and split off a validation set
    Prep(PrepArgs),
    /// Train a network and write its best checkpoint
    Train(TrainArgs),
    /// Top-1/top-5 accuracy of a model on a manifest
    Eval(EvalArgs),
    /// Classify images, refining through a hierarchy when configured
    Predict(PredictArgs),
    /// Class activation map overlay for one image
    Cam(CamArgs),
    /// Misclassification matrix, similar pairs, distinctiveness and graphs
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of room classes (at least 2)
    #[arg(long)]
    classes: usize,
    /// Images per class
    #[arg(long)]
    per_class: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Image side in pixels
    #[arg(long, default_value_t = 256)]
    side: usize,
}

#[derive(Args)]
struct PrepArgs {
    /// Manifest of the raw images
    #[arg(long)]
    in_manifest: PathBuf,
    /// Output directory for resized images and manifests
    #[arg(long)]
    out_dir: PathBuf,
    /// Frames with a blur indicator below this are dropped (paper)
    #[arg(long, default_value_t = 0.45)]
    blur_threshold: f64,
    /// Haar edge-magnitude threshold of the blur detector
    #[arg(long, default_value_t = 35.0)]
    edge_threshold: f64,
    /// Validation images per class (paper)
    #[arg(long, default_value_t = 300)]
    val_per_class: usize,
    /// Side images are rescaled to (paper)
    #[arg(long, default_value_t = 256)]
    side: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    /// Widths 96/256/384/512/512
    Canonical,
    /// Widths 8/16/16/24/24 with dropout 0.1
    Reduced,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest
    #[arg(long)]
    train: PathBuf,
    /// Validation manifest
    #[arg(long)]
    val: PathBuf,
    /// Expected class count; checked against the manifests
    #[arg(long)]
    classes: Option<usize>,
    /// Network input side (paper)
    #[arg(long, default_value_t = 227)]
    input_side: usize,
    /// Layer widths
    #[arg(long, value_enum, default_value_t = Arch::Canonical)]
    arch: Arch,
    /// Dropout rate, overriding the architecture default (paper: 0.5)
    #[arg(long)]
    dropout: Option<f64>,
    /// Skip subtracting the training-set channel mean
    #[arg(long)]
    no_mean: bool,
    /// Factor applied to mean-subtracted `[0, 1]` pixels
    #[arg(long, default_value_t = 255.0)]
    input_scale: f64,
    /// Base learning rate (paper)
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Momentum (paper)
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Iterations between learning-rate decays (paper)
    #[arg(long, default_value_t = 2000)]
    decay_every: u64,
    /// Learning-rate decay factor (paper)
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    /// Mini-batch size (paper)
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Training iterations; 0 writes the initialized model
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    /// Iterations between validation passes
    #[arg(long, default_value_t = 200)]
    eval_every: u64,
    /// Arithmetic precision; double makes reruns byte-identical
    #[arg(long, value_enum, default_value_t = PrecisionArg::Single)]
    precision: PrecisionArg,
    /// Where the best checkpoint is written
    #[arg(long)]
    out_model: PathBuf,
    /// Report CSV path [default: the model path with a .csv extension]
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Write `<true> <predicted>` lines for `analyze`
    #[arg(long, value_name = "PATH")]
    log_predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Single)]
    precision: PrecisionArg,
}

#[derive(Args)]
struct PredictArgs {
    /// Two-level configuration (`level1 = ...`, `route.<index> = ...`)
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    hierarchy_config: Option<PathBuf>,
    /// A single flat model
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct CamArgs {
    #[arg(long)]
    model: PathBuf,
    image: PathBuf,
    /// Class index, or `argmax` for the predicted class
    #[arg(long, default_value = "argmax")]
    class: String,
    /// Heat-map opacity
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    /// Overlay PNG
    #[arg(long)]
    out: PathBuf,
    /// Raw grid text [default: the overlay path with a .txt extension]
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// `<true> <predicted>` log written by `eval --log-predictions`
    #[arg(long)]
    predictions: PathBuf,
    /// Class names, one per line [default: from --model, else class_<i>]
    #[arg(long)]
    class_names: Option<PathBuf>,
    /// Minimum pair score for a similarity-graph edge
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Model whose first-layer filters are drawn to filters.png
    #[arg(long)]
    model: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => match e.downcast::<clap::Error>() {
            Ok(ce) => ce.exit(),
            Err(e) => {
                eprintln!("error: {}", report(&e));
                return ExitCode::from(2);
            }
        },
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", report(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes their parent already prints.
fn report(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn parse_cli(argv: Vec<OsString>) -> Result<Cli> {
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let Some(path) = matches.get_one::<PathBuf>("config").cloned() else {
        return Ok(Cli::from_arg_matches(&matches)?);
    };
    let argv = overlay::apply(&cmd, argv, &matches, &path)?;
    let matches = cmd.try_get_matches_from(argv)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Synth(a) => synth(a, seed),
        Cmd::Prep(a) => prep(a, seed),
        Cmd::Train(a) => match a.precision {
            PrecisionArg::Single => train_cmd::<f32>(a, seed),
            PrecisionArg::Double => train_cmd::<f64>(a, seed),
        },
        Cmd::Eval(a) => match a.precision {
            PrecisionArg::Single => eval_cmd::<f32>(a),
            PrecisionArg::Double => eval_cmd::<f64>(a),
        },
        Cmd::Predict(a) => predict(a),
        Cmd::Cam(a) => cam(a),
        Cmd::Analyze(a) => analyze(a),
    }
}

fn synth(a: SynthArgs, seed: u64) -> Result<ExitCode> {
    ensure!(a.classes >= 2, "--classes must be at least 2, got {}", a.classes);
    let m = synth_generate(a.classes, a.per_class, &a.out, a.side, &mut Rng::new(seed))?;
    eprintln!("wrote {} images in {} classes to {}", m.entries.len(), m.num_classes(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn prep(a: PrepArgs, seed: u64) -> Result<ExitCode> {
    let m = load_manifest(&a.in_manifest)?;
    let cfg = PrepConfig {
        side: a.side,
        blur: BlurConfig {
            threshold: a.blur_threshold,
            edge_threshold: a.edge_threshold,
        },
        val_per_class: a.val_per_class,
    };
    let out = prepare(&m, &a.out_dir, &cfg, &mut Rng::new(seed))?;
    print!("{}", out.report_csv());
    Ok(ExitCode::SUCCESS)
}

fn load_pair(train_path: &Path, val_path: &Path) -> Result<(deepspace::data::DatasetManifest, deepspace::data::DatasetManifest)> {
    let tr = load_manifest(train_path)?;
    let va = load_manifest(val_path)?;
    ensure!(
        tr.class_names == va.class_names,
        "{} and {} declare different classes",
        train_path.display(),
        val_path.display()
    );
    Ok((tr, va))
}

fn train_cmd<T: Real>(a: TrainArgs, seed: u64) -> Result<ExitCode> {
    let (tr, va) = load_pair(&a.train, &a.val)?;
    if let Some(n) = a.classes {
        ensure!(n == tr.num_classes(), "--classes {n} but the manifests declare {}", tr.num_classes());
    }
    let train_set = Dataset::load(&tr, a.input_side)?;
    let val_set = Dataset::load(&va, a.input_side)?;

    let mut arch = match a.arch {
        Arch::Canonical => DeepSpaceConfig::new(tr.num_classes(), a.input_side),
        Arch::Reduced => DeepSpaceConfig::reduced(tr.num_classes(), a.input_side),
    }
    .with_class_names(tr.class_names.clone());
    if let Some(d) = a.dropout {
        arch.dropout = d;
    }
    arch.input_scale = a.input_scale;
    let mut spec = arch.build()?;
    if !a.no_mean {
        spec.input_mean = Some(train_set.channel_mean()?);
    }
    let mut rng = Rng::new(seed);
    let model = ModelState::<T>::init(spec, &mut rng)?;
    let cfg = TrainConfig {
        base_lr: a.lr,
        decay_factor: a.decay,
        decay_every: a.decay_every,
        momentum: a.momentum,
        batch_size: a.batch,
        max_iterations: a.iters,
        eval_every: a.eval_every,
        seed: rng.fork().seed(),
        precision: a.precision.into(),
    };
    let (best, report) = train(model, &train_set, &val_set, &cfg, |r| {
        eprintln!(
            "iter {:>6}  loss {:.4}  top1 {:.4}  top5 {:.4}  lr {:e}",
            r.iteration, r.loss, r.top1, r.top5, r.lr
        )
    })?;
    save(&best, &a.out_model)?;
    let report_path = a.report.unwrap_or_else(|| a.out_model.with_extension("csv"));
    std::fs::write(&report_path, report.to_csv()).with_context(|| format!("writing {}", report_path.display()))?;
    println!("best_iteration {}", report.best_iteration);
    println!("best_top1 {:.6}", report.best_top1);
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd<T: Real>(a: EvalArgs) -> Result<ExitCode> {
    let model: ModelState<T> = load(&a.model)?;
    let m = load_manifest(&a.manifest)?;
    ensure!(
        m.class_names == model.class_names(),
        "{} declares classes {:?} but the model has {:?}",
        a.manifest.display(),
        m.class_names,
        model.class_names()
    );
    let data = Dataset::load(&m, model.spec().input_shape[1])?;
    let ev = evaluate(&model, &data)?;
    println!("top1 {:.6}", ev.top1);
    println!("top5 {:.6}", ev.top5);
    println!("loss {:.6}", ev.loss);
    if let Some(path) = a.log_predictions {
        let log: Vec<_> = data.labels().iter().copied().zip(ev.predictions).collect();
        std::fs::write(&path, render_prediction_log(&log)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn level_text(p: &LevelPrediction) -> String {
    let top: Vec<String> = p.top5.iter().map(|(_, n, c)| format!("{n}:{c:.4}")).collect();
    format!("{}:{:.4}\ttop5={}", p.class_name, p.confidence, top.join(","))
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let hierarchy = match (&a.hierarchy_config, &a.model) {
        (Some(cfg), _) => Hierarchy::load(&HierarchyConfig::load(cfg)?)?,
        (None, Some(m)) => Hierarchy::new(load(m)?, BTreeMap::new(), 0.0)?,
        (None, None) => bail!("need --hierarchy-config or --model"),
    };
    let mut failed = false;
    for path in &a.images {
        let outcome = decode_image(path).and_then(|img| hierarchy.predict(&img));
        match outcome {
            Ok(p) => {
                let mut line = format!("{}\t{}\tlevel1={}", path.display(), p.composite_label, level_text(&p.level1));
                if let Some(l2) = &p.level2 {
                    let _ = write!(line, "\tlevel2={}", level_text(l2));
                }
                println!("{line}");
            }
            Err(e) => {
                eprintln!("error: {e}");
                failed = true;
            }
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cam(a: CamArgs) -> Result<ExitCode> {
    let model: ModelState<f32> = load(&a.model)?;
    let img = decode_image(&a.image)?;
    let side = model.spec().input_shape[1];
    let x = preprocess::<f32>(&img.pixels, side)?;
    let class = match a.class.as_str() {
        "argmax" => None,
        s => {
            let c: usize = s.parse().with_context(|| format!("--class must be an index or `argmax`, got {s:?}"))?;
            ensure!(c < model.num_classes(), "class {c} out of range for {} classes", model.num_classes());
            Some(c)
        }
    };
    let cam = class_activation_map(&model, &x, class)?;
    let input = ImageRecord {
        pixels: x,
        source: a.image.clone(),
    };
    let overlay = render_overlay(&input, &cam, a.alpha)?;
    write_image(&overlay.pixels, &a.out)?;
    let raw_path = a.raw_out.unwrap_or_else(|| a.out.with_extension("txt"));
    std::fs::write(&raw_path, cam.raw_grid_text()).with_context(|| format!("writing {}", raw_path.display()))?;
    let pred = classify(&model, &img)?;
    println!(
        "class {} {}\tpredicted {}:{:.4}\tgrid {}x{}",
        cam.class_index,
        model.class_names()[cam.class_index],
        pred.class_name,
        pred.confidence,
        cam.raw.shape()[0],
        cam.raw.shape()[1]
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.predictions).with_context(|| format!("reading {}", a.predictions.display()))?;
    let log = parse_prediction_log(&text, &a.predictions)?;
    let model: Option<ModelState<f32>> = a.model.as_deref().map(load).transpose()?;
    let names: Vec<String> = match (&a.class_names, &model) {
        (Some(p), _) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        (None, Some(m)) => m.class_names().to_vec(),
        (None, None) => {
            let n = log.iter().map(|&(t, p)| t.max(p) + 1).max().unwrap_or(0);
            (0..n).map(|i| format!("class_{i}")).collect()
        }
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let cm = build_confusion(&log, &names)?;
    let mm = normalize_misclass(&cm)?;
    let pairs = rank_similar_pairs(&mm);
    let dist = distinctiveness(&mm);
    let files = [
        ("confusion.csv", cm.to_csv()),
        ("misclass.csv", mm.to_csv()),
        ("pairs.csv", pairs_to_csv(&pairs, &names)),
        ("distinctiveness.csv", distinctiveness_to_csv(&dist, &names)),
    ];
    for (name, body) in files {
        let p = a.out_dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    let graph = export_similarity_graph(&pairs, &names, a.threshold, &a.out_dir.join("similarity"))?;
    if let Some(m) = &model {
        let first = m.spec().param_groups()?[0].tensors[0].0.clone();
        export_filter_grid(m.params().get(&first)?, &a.out_dir.join("filters.png"))?;
    }
    println!("top1 {:.6}", cm.top1());
    println!("graph_edges {}", graph.edges.len());
    for p in pairs.iter().take(5) {
        println!("pair {}\t{}\t{:.6}", names[p.a], names[p.b], p.score);
    }
    if let Some(d) = dist.first() {
        println!("most_distinctive {}\t{:.6}", names[d.class], d.confusion_sum);
    }
    Ok(ExitCode::SUCCESS)
}
