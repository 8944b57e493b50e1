//! `ediv`: train low-cost CNN ensembles (snapshot / prune-and-tune), render
//! feature visualizations and saliency maps, hash them, and report
//! representational diversity.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ediv_core::data::{idx_image_count, IMAGE_SIZE};
use ediv_core::engine::{checkpoint, Network, Tensor};
use ediv_core::error::Error as CoreError;
use ediv_core::forge;
use ediv_core::imgio;
use ediv_core::lens::{self, ColorMatrix, SaliencyConfig, Sign, VizConfig, VizObjective};
use ediv_core::metrics::{bias_var_covar, PredictionSet};
use ediv_core::npy;
use ediv_core::phash::{self, HashAlg, PerceptualHash, RasterImage};
use ediv_core::pipeline::{self, tile_grid, DatasetConfig, ExperimentConfig, MetricStat};
use ediv_core::schedules::{CosineAnneal, OneCycle, SnapshotSchedule};

#[derive(Parser)]
#[command(name = "ediv", version, about = "Low-cost ensemble diversity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or re-render full experiments.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Train the parent and build ensemble children.
    Forge {
        #[command(subcommand)]
        cmd: ForgeCmd,
    },
    /// Emit learning-rate / momentum schedules as CSV.
    Schedule {
        #[command(subcommand)]
        cmd: ScheduleCmd,
    },
    /// Output-diversity metrics over stored prediction tensors.
    Metrics {
        #[command(subcommand)]
        cmd: MetricsCmd,
    },
    /// Feature visualization and saliency maps.
    Lens {
        #[command(subcommand)]
        cmd: LensCmd,
    },
    /// Perceptual hashing of PNG images.
    Hash {
        #[command(subcommand)]
        cmd: HashCmd,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run the full experiment described by a TOML config.
    Run { config: PathBuf },
    /// Reload `report.json` from a run directory and re-render the CSV.
    Report { run_dir: PathBuf },
}

#[derive(Subcommand)]
enum ForgeCmd {
    /// Train the parent network and save its checkpoint.
    TrainParent(ForgeArgs),
    /// Continue the parent under the cyclic schedule, checkpointing each cycle.
    Snapshot(ForgeArgs),
    /// Spawn anti-random pruned children and tune them.
    PruneTune(ForgeArgs),
}

#[derive(Args)]
struct ForgeArgs {
    /// Experiment config (shared with `pipeline run`).
    #[arg(long)]
    config: PathBuf,
    /// Parent checkpoint override (defaults to `<output_dir>/checkpoints/parent.ediv`).
    #[arg(long)]
    parent: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScheduleCmd {
    /// Print (t, lr, momentum) rows for one schedule block of a config.
    Dump {
        #[arg(long)]
        config: PathBuf,
        /// Which schedule block to evaluate.
        #[arg(long, value_enum)]
        which: ScheduleKind,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleKind {
    Parent,
    Snapshot,
    Tune,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Compute d_KL / d_PDR (and the regression decomposition for scalar
    /// outputs with targets) from stored predictions.
    Report {
        /// Predictions: NPY `[models, samples, classes]` or CSV rows of
        /// class probabilities grouped by model (requires --models).
        #[arg(long)]
        predictions: PathBuf,
        /// Number of models when reading CSV predictions.
        #[arg(long)]
        models: Option<usize>,
        /// Optional regression targets (NPY `[samples]` or one-column CSV).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum LensCmd {
    /// Optimize an input that maximizes one channel (or, with --grid, tile
    /// every channel of the layer into a contact sheet).
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target layer index (defaults to the final conv layer).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Visualize all channels and tile them into one image.
        #[arg(long)]
        grid: bool,
        /// Minimize the channel activation instead of maximizing it.
        #[arg(long)]
        minimize: bool,
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Experiment config supplying the color decorrelation matrix
        /// (identity when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "visualization.png")]
        out: PathBuf,
    },
    /// Saliency heatmap for a PNG input (vanilla, or SmoothGrad with --smooth).
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// SmoothGrad sample count (vanilla gradient when omitted).
        #[arg(long)]
        smooth: Option<usize>,
        /// SmoothGrad noise sigma as a fraction of the input range.
        #[arg(long, default_value_t = 0.10)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "saliency.png")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum HashCmd {
    /// Hash PNG files; prints `<hex16> <path>` per file.
    Compute {
        #[arg(long)]
        algo: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Hamming distance between two 16-character hex hashes.
    Dist { hex_a: String, hex_b: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<CoreError>() {
                Some(CoreError::Config(_)) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Pipeline { cmd } => pipeline_cmd(cmd),
        Command::Forge { cmd } => forge_cmd(cmd),
        Command::Schedule { cmd } => schedule_cmd(cmd),
        Command::Metrics { cmd } => metrics_cmd(cmd),
        Command::Lens { cmd } => lens_cmd(cmd),
        Command::Hash { cmd } => hash_cmd(cmd),
    }
}

fn pipeline_cmd(cmd: PipelineCmd) -> anyhow::Result<()> {
    match cmd {
        PipelineCmd::Run { config } => {
            let (cfg, digest) = ExperimentConfig::load(&config)?;
            let report = pipeline::run_experiment(&cfg, &digest)?;
            println!("report written to {}", cfg.run.output_dir.join("report.json").display());
            print_report_summary(&report);
        }
        PipelineCmd::Report { run_dir } => {
            let report = pipeline::rerender_report(&run_dir)?;
            print_report_summary(&report);
        }
    }
    Ok(())
}

fn print_report_summary(report: &pipeline::DiversityReport) {
    println!("parent accuracy: {:.4}", report.accuracy.parent);
    for (name, acc) in &report.accuracy.children {
        println!("  {name}: {acc:.4}");
    }
    let print_table = |title: &str, table: &std::collections::BTreeMap<String, std::collections::BTreeMap<String, MetricStat>>| {
        for (method, stats) in table {
            let row: Vec<String> = stats
                .iter()
                .map(|(k, s)| format!("{k} {:.3}±{:.3}", s.mean, s.stderr))
                .collect();
            println!("{title} [{method}]: {}", row.join("  "));
        }
    };
    print_table("visualization", &report.visualization);
    print_table("output", &report.output_metrics);
    print_table("saliency", &report.saliency);
}

fn forge_cmd(cmd: ForgeCmd) -> anyhow::Result<()> {
    let args = match &cmd {
        ForgeCmd::TrainParent(a) | ForgeCmd::Snapshot(a) | ForgeCmd::PruneTune(a) => a,
    };
    let (cfg, _) = ExperimentConfig::load(&args.config)?;
    let dataset = cfg.dataset()?;
    let ckpt_dir = cfg.run.output_dir.join("checkpoints");
    let parent_path =
        args.parent.clone().unwrap_or_else(|| ckpt_dir.join("parent.ediv"));

    match cmd {
        ForgeCmd::TrainParent(_) => {
            let parent = forge::train_parent(&dataset.train, &cfg.parent, cfg.run.seed)?;
            checkpoint::save(&parent, &parent_path)?;
            let acc = forge::accuracy(&parent, &dataset.val, cfg.parent.batch_size)?;
            println!("parent saved to {} (val accuracy {:.4})", parent_path.display(), acc);
        }
        ForgeCmd::Snapshot(_) => {
            let parent = checkpoint::load(&parent_path)?;
            let mut run = forge::snapshot_children(
                &parent,
                &dataset.train,
                &cfg.snapshot,
                cfg.run.seed,
                &parent_path,
                &ckpt_dir,
            )?;
            finish_forge_run(&mut run, &dataset, &cfg, "manifest_snapshot.json")?;
        }
        ForgeCmd::PruneTune(_) => {
            let parent = checkpoint::load(&parent_path)?;
            let mut run = forge::prune_tune_children(
                &parent,
                &dataset.train,
                &cfg.prune_tune,
                cfg.run.seed,
                &parent_path,
                &ckpt_dir,
            )?;
            finish_forge_run(&mut run, &dataset, &cfg, "manifest_prune_tune.json")?;
        }
    }
    Ok(())
}

fn finish_forge_run(
    run: &mut forge::EnsembleRun,
    dataset: &ediv_core::data::Dataset,
    cfg: &ExperimentConfig,
    manifest_name: &str,
) -> anyhow::Result<()> {
    let nets = run.load_children()?;
    for (entry, net) in run.children.iter_mut().zip(&nets) {
        let acc = forge::accuracy(net, &dataset.val, cfg.parent.batch_size)?;
        entry.val_accuracy = Some(acc);
        println!("{} -> {} (val accuracy {:.4})", entry.name, entry.path.display(), acc);
    }
    let manifest = cfg.run.output_dir.join(manifest_name);
    run.save(&manifest)?;
    println!("manifest written to {}", manifest.display());
    Ok(())
}

fn schedule_cmd(cmd: ScheduleCmd) -> anyhow::Result<()> {
    let ScheduleCmd::Dump { config, which, out } = cmd;
    let (cfg, _) = ExperimentConfig::load(&config)?;
    let train_size = match &cfg.dataset {
        DatasetConfig::Synthetic { train_size, .. } => *train_size,
        DatasetConfig::Idx { train_images, .. } => idx_image_count(train_images)?,
    };
    let mut csv = String::from("t,lr,momentum\n");
    match which {
        ScheduleKind::Parent => {
            let total = (cfg.parent.epochs * train_size.div_ceil(cfg.parent.batch_size)) as u64;
            let anneal =
                CosineAnneal::new(cfg.parent.lr_start, cfg.parent.lr_end, total.saturating_sub(1).max(1))?;
            for t in 0..total {
                csv.push_str(&format!("{t},{},{}\n", anneal.value(t)?, cfg.parent.momentum));
            }
        }
        ScheduleKind::Snapshot => {
            let spe = train_size.div_ceil(cfg.snapshot.batch_size) as u64;
            let total = cfg.snapshot.cycles as u64 * cfg.snapshot.epochs_per_cycle as u64 * spe;
            let sched = SnapshotSchedule::new(
                total,
                cfg.snapshot.cycles as u64,
                cfg.snapshot.peak_lr,
                cfg.snapshot.floor_lr,
            )?;
            for t in 1..=total {
                csv.push_str(&format!("{t},{},{}\n", sched.lr(t)?, cfg.snapshot.momentum));
            }
        }
        ScheduleKind::Tune => {
            let total =
                (cfg.prune_tune.epochs * train_size.div_ceil(cfg.prune_tune.batch_size)) as u64;
            let cycle = OneCycle::new(
                cfg.prune_tune.eta_min,
                cfg.prune_tune.eta_max,
                cfg.prune_tune.mu_min,
                cfg.prune_tune.mu_max,
                total.saturating_sub(1).max(2),
                cfg.prune_tune.split,
            )?;
            for t in 0..total.max(1) {
                let (lr, mu) = cycle.value(t.min(cycle.t_total))?;
                csv.push_str(&format!("{t},{lr},{mu}\n"));
            }
        }
    }
    match out {
        Some(path) => std::fs::write(&path, csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn metrics_cmd(cmd: MetricsCmd) -> anyhow::Result<()> {
    let MetricsCmd::Report { predictions, models, targets, out, format } = cmd;
    let (shape, data) = load_numeric(&predictions, models)?;
    if shape.len() != 3 {
        bail!("predictions must have shape [models, samples, classes], got {shape:?}");
    }
    let (m, n, c) = (shape[0], shape[1], shape[2]);

    let mut lines_json = serde_json::Map::new();
    let mut csv = String::from("method,metric,mean,stderr,n\n");

    let set = PredictionSet::new(data.clone(), m, n, c)?;
    let d_kl = set.kl_pairwise()?;
    let d_pdr = set.pdr()?;
    lines_json.insert("d_kl".into(), serde_json::json!(d_kl));
    lines_json.insert("d_pdr".into(), serde_json::json!(d_pdr));
    csv.push_str(&format!("predictions,d_kl,{d_kl},0,{n}\n"));
    csv.push_str(&format!("predictions,d_pdr,{d_pdr},0,{n}\n"));

    if let Some(tpath) = targets {
        if c != 1 {
            bail!("the bias-variance-covariance decomposition needs scalar outputs (classes = 1)");
        }
        let (tshape, tdata) = load_numeric(&tpath, None)?;
        let count: usize = tshape.iter().product();
        if count != n {
            bail!("{count} targets for {n} samples");
        }
        let d = bias_var_covar(&data, m, n, &tdata)?;
        lines_json.insert(
            "decomposition".into(),
            serde_json::json!({
                "bias_bar": d.bias_bar,
                "var_bar": d.var_bar,
                "covar_bar": d.covar_bar,
                "mse": d.mse,
            }),
        );
        csv.push_str(&format!("predictions,bias_bar,{},0,{n}\n", d.bias_bar));
        csv.push_str(&format!("predictions,var_bar,{},0,{n}\n", d.var_bar));
        if let Some(cv) = d.covar_bar {
            csv.push_str(&format!("predictions,covar_bar,{cv},0,{n}\n"));
        }
        csv.push_str(&format!("predictions,mse,{},0,{n}\n", d.mse));
    }

    let rendered = match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(&serde_json::Value::Object(lines_json))? + "\n"
        }
        ReportFormat::Csv => csv,
    };
    match out {
        Some(path) => std::fs::write(&path, rendered)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

/// Load an NPY file, or a CSV of comma-separated rows. CSV predictions are
/// reshaped to `[models, rows/models, columns]` when `models` is given.
fn load_numeric(path: &Path, models: Option<usize>) -> anyhow::Result<(Vec<usize>, Vec<f64>)> {
    let is_csv = path.extension().map(|e| e == "csv").unwrap_or(false);
    if !is_csv {
        return Ok(npy::read(path)?);
    }
    let raw = std::fs::read_to_string(path)?;
    let mut rows = 0usize;
    let mut cols = 0usize;
    let mut data = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        if cols == 0 {
            cols = vals.len();
        } else if cols != vals.len() {
            bail!("ragged CSV rows in {}", path.display());
        }
        rows += 1;
        data.extend(vals);
    }
    match models {
        Some(m) => {
            if m == 0 || rows % m != 0 {
                bail!("{rows} CSV rows do not divide into {m} models");
            }
            Ok((vec![m, rows / m, cols], data))
        }
        None if cols == 1 => Ok((vec![rows], data)),
        None => Ok((vec![rows, cols], data)),
    }
}

fn lens_cmd(cmd: LensCmd) -> anyhow::Result<()> {
    match cmd {
        LensCmd::Visualize {
            checkpoint: ckpt,
            layer,
            channel,
            grid,
            minimize,
            steps,
            lr,
            seed,
            config,
            out,
        } => {
            let net = checkpoint::load(&ckpt)?;
            let layer = match layer {
                Some(l) => l,
                None => net
                    .final_conv_layer()
                    .context("checkpoint has no convolution layer to visualize")?,
            };
            let color = match config {
                Some(path) => {
                    let (cfg, _) = ExperimentConfig::load(&path)?;
                    let ds = cfg.dataset()?;
                    ColorMatrix::from_covariance(&ds.train.pixel_covariance(), 3)?
                }
                None => ColorMatrix::identity(net.input_channels()),
            };
            let sign = if minimize { Sign::Minimize } else { Sign::Maximize };
            let base = VizConfig { steps, lr, seed, ..VizConfig::default() };
            if grid {
                let channels = net
                    .output_channels_at(layer)
                    .context("layer has no channel output")?;
                let mut tiles = Vec::with_capacity(channels);
                for z in 0..channels {
                    let cfg = VizConfig { seed: ediv_core::seeds::derive(seed, &format!("viz/{z}")), ..base };
                    let obj = VizObjective { layer, channel: z, sign };
                    let result = lens::visualize(&net, &obj, &cfg, &color, IMAGE_SIZE, IMAGE_SIZE)?;
                    tiles.push(lens::image_to_raster(&result.image)?);
                }
                imgio::save_png(&tile_grid(&tiles, 8)?, &out)?;
                println!("contact sheet of {channels} channels written to {}", out.display());
            } else {
                let obj = VizObjective { layer, channel, sign };
                let result = lens::visualize(&net, &obj, &base, &color, IMAGE_SIZE, IMAGE_SIZE)?;
                imgio::save_png(&lens::image_to_raster(&result.image)?, &out)?;
                println!(
                    "layer {layer} channel {channel}: objective {:.4} -> {:.4}, written to {}",
                    result.objective_start,
                    result.objective_end,
                    out.display()
                );
            }
        }
        LensCmd::Saliency { checkpoint: ckpt, image, smooth, sigma, seed, out } => {
            let net = checkpoint::load(&ckpt)?;
            let raster = imgio::load_png(&image)?;
            let x = raster_to_input(&raster, net.input_channels())?;
            let map = match smooth {
                Some(samples) => {
                    let cfg = SaliencyConfig { samples, sigma_frac: sigma, seed };
                    lens::smoothgrad(&net, &x, &cfg)?
                }
                None => lens::saliency(&net, &x)?,
            };
            imgio::save_png(&lens::heatmap_to_raster(&map)?, &out)?;
            println!("heatmap written to {}", out.display());
        }
    }
    Ok(())
}

/// PNG raster -> `[1, C, 32, 32]` network input (box-resized, gray inputs
/// replicated across channels).
fn raster_to_input(raster: &RasterImage, channels: usize) -> anyhow::Result<Tensor> {
    let resized = raster.resize(IMAGE_SIZE, IMAGE_SIZE)?;
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0; channels * hw];
    for p in 0..hw {
        let px = resized.pixel(p % IMAGE_SIZE, p / IMAGE_SIZE);
        for c in 0..channels {
            data[c * hw + p] = px[c.min(px.len() - 1)];
        }
    }
    Ok(Tensor::new(vec![1, channels, IMAGE_SIZE, IMAGE_SIZE], data)?)
}

fn hash_cmd(cmd: HashCmd) -> anyhow::Result<()> {
    match cmd {
        HashCmd::Compute { algo, files } => {
            let algo = HashAlg::parse(&algo)?;
            for path in files {
                let img = imgio::load_png(&path)?;
                let hash = phash::hash_image(&img, algo)?;
                println!("{} {}", hash.to_hex(), path.display());
            }
        }
        HashCmd::Dist { hex_a, hex_b } => {
            // raw bitstring distance; tags are unknown at the CLI boundary
            let a = PerceptualHash::from_hex(&hex_a, HashAlg::Ahash)?;
            let b = PerceptualHash::from_hex(&hex_b, HashAlg::Ahash)?;
            println!("{}", phash::hamming(&a, &b)?);
        }
    }
    Ok(())
}
