use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde_json::json;

use scnet::checkpoint::{load_model, save_model, CheckpointMeta};
use scnet::config::{DataConfig, Splits};
use scnet::datapipe::{load_samples, manifest_imbalance, Record, Sample, SampleManifest};
use scnet::metrics::{
    default_grid, error_breakdown, f1_score, iterative_threshold, pr_curve, summary_line, write_error_breakdown,
    MetricReport,
};
use scnet::prior::{edge_path, load_edge_map, save_edge_map, EdgeDetector};
use scnet::synth::{write_dataset, Style, SynthConfig};
use scnet::trainer::{
    ablation_run, build_model, cross_evaluate, evaluate, predict_probs, score_maps, train, variant_set,
    write_ablation_csv,
};
use scnet::{Device, Error, ErrorKind, Model, Result, RunConfig};

mod report;

#[derive(Parser)]
#[command(name = "scnet", version, about = "Crack segmentation: training, evaluation and prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted override, e.g. `train.learning_rate=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample counts and crack/non-crack pixel shares.
    Stats(Common),
    /// Precompute edge maps with the configured detector.
    Edges(Common),
    /// Train a model; writes model.ckpt, history.csv and run.json.
    Train(Common),
    /// Evaluate a checkpoint on a data split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fixed threshold instead of the best one on the grid.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test", "all"])]
        split: String,
    },
    /// Probability map, mask and overlay for each image.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the threshold stored in the checkpoint.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Sweep the threshold grid on the validation split and store the best.
    Threshold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and score a set of ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `architecture` or `loss`.
        #[arg(long, default_value = "architecture")]
        variants: String,
    },
    /// F1 of every model on every dataset's test split.
    Crosseval {
        #[command(flatten)]
        common: Common,
        /// `name=<checkpoint>,<data root or manifest.json>`. Repeatable.
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
    },
    /// Write a synthetic crack dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
        /// `pavement` or `concrete`.
        #[arg(long, default_value = "pavement")]
        style: String,
        /// Target crack-pixel share.
        #[arg(long, default_value_t = 0.055)]
        rate: f64,
    },
    /// Consolidate run directories into tables and PR plots.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        cfg.apply_seed_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Data(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value).expect("json") + "\n")
}

/// Records the command, seed and resolved configuration of a run.
fn write_run_manifest(out: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let config: serde_json::Value = serde_json::from_str(&cfg.to_json()).expect("config json");
    write_json(
        &out.join("run.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.train.seed,
            "config": config,
            "details": extra,
        }),
    )
}

fn ids(records: &[Record]) -> Vec<&str> {
    records.iter().map(|r| r.id.as_str()).collect()
}

fn pick_split(splits: Splits, name: &str) -> Vec<Record> {
    match name {
        "train" => splits.train,
        "validation" => splits.validation,
        "test" => splits.test,
        _ => [splits.train, splits.validation, splits.test].concat(),
    }
}

fn cmd_stats(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let m = cfg.data.records()?;
    let stats = manifest_imbalance(&m)?;
    println!(
        "{} samples ({} rejected): crack {:.2}%, non-crack {:.2}%, {} pixels",
        m.len(),
        m.rejected.len(),
        stats.crack,
        stats.non_crack,
        stats.pixels
    );
    write_json(
        &out.join("stats.json"),
        &json!({
            "samples": m.len(),
            "rejected": m.rejected,
            "crack_percent": stats.crack,
            "non_crack_percent": stats.non_crack,
            "pixels": stats.pixels,
        }),
    )
}

fn cmd_edges(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let detector = EdgeDetector::from_config(&cfg.prior, &Device::Cpu)?;
    if detector.is_precomputed() {
        return Err(Error::Config(
            "prior.mode is `precomputed`; choose `classical-fallback` or `learned-edge-detector` to compute edges".into(),
        ));
    }
    let mut m = cfg.data.records()?;
    let dir = out.join("edges");
    for r in &mut m.records {
        let image = image::open(&r.image)
            .map_err(|e| Error::Data(format!("{}: {e}", r.image.display())))?
            .to_rgb8();
        let path = edge_path(&dir, &r.id);
        save_edge_map(&path, &detector.compute(&image)?)?;
        r.edge = Some(path);
    }
    m.rejected.clear();
    m.write_json(&out.join("manifest.json"))?;
    println!("wrote {} edge maps to {}", m.len(), dir.display());
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let device = Device::Cpu;
    let splits = cfg.data.splits(cfg.train.seed)?;
    let train_set = load_samples(&splits.train)?;
    let validation = load_samples(&splits.validation)?;
    let detector = EdgeDetector::from_config(&cfg.prior, &device)?;
    let model = build_model(&cfg, &device)?;
    log::info!("{} parameters, {} training samples", model.parameter_count(), train_set.len());
    let outcome = train(&model, &train_set, &validation, &cfg, &detector, Some(out))?;
    let tuning = if validation.is_empty() { &train_set } else { &validation };
    let tuned = evaluate(&model, tuning, &detector, &cfg.data.region, None)?;
    let meta = CheckpointMeta {
        threshold: Some(tuned.threshold),
        iterations: outcome.iterations,
        seed: cfg.train.seed,
    };
    save_model(out.join("model.ckpt"), &model, meta)?;
    if !splits.test.is_empty() {
        let report = evaluate(&model, &load_samples(&splits.test)?, &detector, &cfg.data.region, None)?;
        report.write_metrics_csv(&out.join("metrics.csv"))?;
        report.write_prc_csv(&out.join("prc.csv"))?;
        summary_line(&mut std::io::stdout(), "test", &report).ok();
    }
    write_run_manifest(
        out,
        "train",
        &cfg,
        json!({
            "iterations": outcome.iterations,
            "epochs": outcome.epochs,
            "stopped_early": outcome.stopped_early,
            "best_validation_f1": outcome.best_validation_f1,
            "threshold": tuned.threshold,
            "parameters": model.parameter_count(),
            "splits": {
                "train": ids(&splits.train),
                "validation": ids(&splits.validation),
                "test": ids(&splits.test),
            },
        }),
    )?;
    println!(
        "trained {} iterations over {} epochs; threshold {:.2}",
        outcome.iterations, outcome.epochs, tuned.threshold
    );
    Ok(())
}

fn check_channels(model: &Model, cfg: &RunConfig) -> Result<()> {
    let (m, c) = (model.config().input_channels, cfg.model.input_channels);
    if m != c {
        log::warn!("checkpoint takes {m} input channels, configuration says {c}; using the checkpoint");
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, threshold: Option<f64>, split: &str) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let device = Device::Cpu;
    let (model, _) = load_model(checkpoint, &device)?;
    check_channels(&model, &cfg)?;
    let records = pick_split(cfg.data.splits(cfg.train.seed)?, split);
    if records.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let detector = EdgeDetector::from_config(&cfg.prior, &device)?;
    let report = evaluate(&model, &load_samples(&records)?, &detector, &cfg.data.region, threshold)?;
    report.write_metrics_csv(&out.join("metrics.csv"))?;
    report.write_prc_csv(&out.join("prc.csv"))?;
    write_run_manifest(out, "eval", &cfg, json!({ "checkpoint": checkpoint, "split": split, "samples": records.len() }))?;
    summary_line(&mut std::io::stdout(), split, &report).ok();
    Ok(())
}

fn cmd_threshold(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let device = Device::Cpu;
    let (model, mut meta) = load_model(checkpoint, &device)?;
    let splits = cfg.data.splits(cfg.train.seed)?;
    let records = if splits.validation.is_empty() { splits.train } else { splits.validation };
    let detector = EdgeDetector::from_config(&cfg.prior, &device)?;
    let maps = score_maps(&model, &load_samples(&records)?, &detector)?;
    let grid = default_grid();
    let choice = iterative_threshold(&maps, &grid)?;
    let path = out.join("threshold.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Data(format!("writing threshold.csv: {e}"));
    w.write_record(["threshold", "precision", "recall", "f1"]).map_err(io)?;
    for p in pr_curve(&maps, &grid)? {
        w.write_record([
            format!("{:.2}", p.threshold),
            p.precision.to_string(),
            p.recall.to_string(),
            f1_score(p.precision, p.recall).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    meta.threshold = Some(choice.threshold);
    let name = checkpoint.file_name().map(PathBuf::from).unwrap_or_else(|| "model.ckpt".into());
    save_model(out.join(name), &model, meta)?;
    println!("t* = {:.2} (F1 {:.4}) on {} samples", choice.threshold, choice.f1, records.len());
    Ok(())
}

/// Image next to its edge map `<stem>.edge.png`, if one exists.
fn predict_sample(path: &Path) -> Result<Sample> {
    let image = image::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let edge_file = edge_path(path.parent().unwrap_or(Path::new("")), &id);
    let edge = if edge_file.is_file() { Some(load_edge_map(&edge_file)?) } else { None };
    let (w, h) = image.dimensions();
    Ok(Sample {
        id,
        image,
        mask: GrayImage::new(w, h),
        edge,
    })
}

fn cmd_predict(common: &Common, checkpoint: &Path, threshold: Option<f64>, images: &[PathBuf]) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let device = Device::Cpu;
    let (model, meta) = load_model(checkpoint, &device)?;
    let t = threshold.or(meta.threshold).unwrap_or_else(|| {
        log::warn!("no threshold given or stored; using 0.5");
        0.5
    });
    let detector = EdgeDetector::from_config(&cfg.prior, &device)?;
    for path in images {
        let sample = predict_sample(path)?;
        let probs = predict_probs(&model, &sample, &detector)?;
        let (w, h) = sample.image.dimensions();
        let prob: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            w,
            h,
            probs.iter().map(|&p| (f64::from(p).clamp(0.0, 1.0) * 65535.0).round() as u16).collect(),
        )
        .expect("sized");
        let mask = GrayImage::from_raw(w, h, probs.iter().map(|&p| if f64::from(p) >= t { 255 } else { 0 }).collect())
            .expect("sized");
        let overlay = RgbImage::from_fn(w, h, |x, y| {
            if mask.get_pixel(x, y).0[0] == 255 {
                Rgb([255, 255, 0])
            } else {
                *sample.image.get_pixel(x, y)
            }
        });
        let save = |suffix: &str, f: &dyn Fn(&Path) -> image::ImageResult<()>| {
            let p = out.join(format!("{}.{suffix}.png", sample.id));
            f(&p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        };
        save("prob", &|p| prob.save(p))?;
        save("mask", &|p| mask.save(p))?;
        save("overlay", &|p| overlay.save(p))?;
        println!("{}: {} crack pixels at t={t:.2}", sample.id, mask.pixels().filter(|p| p.0[0] == 255).count());
    }
    Ok(())
}

fn cmd_ablate(common: &Common, set: &str) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let variants = variant_set(set)?;
    let splits = cfg.data.splits(cfg.train.seed)?;
    let test = if splits.test.is_empty() { &splits.train } else { &splits.test };
    let dataset = splits.train[0].dataset.clone();
    let rows = ablation_run(
        &variants,
        &cfg,
        &dataset,
        &load_samples(&splits.train)?,
        &load_samples(test)?,
        Some(out),
    )?;
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    write_run_manifest(out, "ablate", &cfg, json!({ "variants": set }))?;
    for r in &rows {
        println!("{:<45} F1 {:.4}  {:.2}M params", r.variant, r.f1, r.size_m);
    }
    Ok(())
}

fn cmd_crosseval(common: &Common, datasets: &[String]) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let device = Device::Cpu;
    let mut models = Vec::new();
    let mut tests = Vec::new();
    for spec in datasets {
        let (name, rest) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--dataset `{spec}` is not name=<checkpoint>,<data>")))?;
        let (ckpt, data) = rest
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("--dataset `{spec}` is not name=<checkpoint>,<data>")))?;
        let data = PathBuf::from(data);
        let dc = DataConfig {
            root: data.is_dir().then(|| data.clone()),
            manifest: (!data.is_dir()).then(|| data.clone()),
            ..cfg.data.clone()
        };
        let test = dc.splits(cfg.train.seed)?.test;
        if test.is_empty() {
            return Err(Error::Data(format!("dataset `{name}` has an empty test split")));
        }
        models.push((name.to_string(), load_model(ckpt, &device)?.0));
        tests.push((name.to_string(), load_samples(&test)?));
    }
    let detector = EdgeDetector::from_config(&cfg.prior, &device)?;
    let refs: Vec<(String, &Model)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let matrix = cross_evaluate(&refs, &tests, &detector, &cfg.data.region)?;
    matrix.write_csv(&out.join("crosseval.csv"))?;
    for (name, row) in matrix.trained_on.iter().zip(&matrix.f1) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("{name}: {}", cells.join(" "));
    }
    Ok(())
}

fn cmd_synth(common: &Common, count: usize, size: u32, style: &str, rate: f64) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let sc = SynthConfig {
        count,
        size,
        style: style.parse::<Style>()?,
        foreground_rate: rate,
        seed: cfg.train.seed,
        ..Default::default()
    };
    let manifest: SampleManifest = write_dataset(out, &sc)?;
    let stats = manifest_imbalance(&manifest)?;
    write_run_manifest(out, "synth", &cfg, serde_json::to_value(&sc).expect("json"))?;
    println!("wrote {} images to {} (crack {:.2}%)", manifest.len(), out.display(), stats.crack);
    Ok(())
}

fn cmd_report(common: &Common, runs: &[PathBuf]) -> Result<()> {
    let out = common.out_dir()?;
    let missing: Vec<String> = runs
        .iter()
        .flat_map(|r| ["metrics.csv", "prc.csv"].map(|f| r.join(f)))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing report inputs:\n  {}", missing.join("\n  "))));
    }
    let mut reports = Vec::new();
    for r in runs {
        let name = r
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .unwrap_or_else(|| r.display().to_string());
        let rep = MetricReport::read_csv(&r.join("metrics.csv"), Some(&r.join("prc.csv")))?;
        reports.push((name, rep));
    }
    report::write_summary(&out.join("summary.csv"), &reports)?;
    let confusions: Vec<_> = reports.iter().map(|(n, r)| (n.clone(), r.confusion)).collect();
    write_error_breakdown(&out.join("error_breakdown.csv"), &error_breakdown(&confusions)?)?;
    write_file(&out.join("pr_curve.svg"), report::pr_svg(&reports))?;
    report::pr_png(&reports)
        .save(out.join("pr_curve.png"))
        .map_err(|e| Error::Data(format!("pr_curve.png: {e}")))?;
    let tables: Vec<PathBuf> = runs.iter().map(|r| r.join("ablation.csv")).filter(|p| p.is_file()).collect();
    if !tables.is_empty() {
        report::merge_ablation(&out.join("ablation_table.csv"), &tables)?;
    }
    for (n, r) in &reports {
        summary_line(&mut std::io::stdout(), n, r).ok();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Stats(c) => cmd_stats(c),
        Command::Edges(c) => cmd_edges(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval {
            common,
            checkpoint,
            threshold,
            split,
        } => cmd_eval(common, checkpoint, *threshold, split),
        Command::Predict {
            common,
            checkpoint,
            threshold,
            images,
        } => cmd_predict(common, checkpoint, *threshold, images),
        Command::Threshold { common, checkpoint } => cmd_threshold(common, checkpoint),
        Command::Ablate { common, variants } => cmd_ablate(common, variants),
        Command::Crosseval { common, datasets } => cmd_crosseval(common, datasets),
        Command::Synth {
            common,
            count,
            size,
            style,
            rate,
        } => cmd_synth(common, *count, *size, style, *rate),
        Command::Report { common, runs } => cmd_report(common, runs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
                ErrorKind::Other => 1,
            })
        }
    }
}
