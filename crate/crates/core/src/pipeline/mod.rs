//! Experiment orchestrator: dataset, parent training, child generation,
//! per-channel visualization hashing, output-diversity metrics, saliency
//! distances, and report emission.
//!
//! Every randomized job derives its seed from the run seed and a stable
//! tag, so reports are byte-identical across reruns regardless of worker
//! count. The two children of a method share each job's seed: bitwise
//! identical children therefore produce identical visualizations and zero
//! distances.

pub mod config;
pub mod report;

pub use config::{DatasetConfig, ExperimentConfig, SaliencyStageConfig};
pub use report::{tile_grid, AccuracyBlock, DiversityReport, MetricStat, Provenance};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Split, IMAGE_SIZE};
use crate::engine::{checkpoint, Network};
use crate::error::{Error, Result};
use crate::forge::{self, EnsembleRun};
use crate::lens::{self, ColorMatrix, SaliencyConfig, Sign, VizConfig, VizObjective};
use crate::metrics::PredictionSet;
use crate::phash::{self, HashAlg, RasterImage};
use crate::seeds;
use crate::{imgio, lens::VizResult};

pub const METHOD_SNAPSHOT: &str = "snapshot";
pub const METHOD_PRUNE_TUNE: &str = "prune_tune";

/// Environment variable overriding the worker-pool size; `1` forces fully
/// single-threaded stage execution.
pub const WORKERS_ENV: &str = "EDIV_WORKERS";

fn run_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV}={raw} is not a worker count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Output of the visualization-distance stage for one method.
pub struct VizStageOutput {
    /// Per hash algorithm, Hamming distance statistics over channels.
    pub stats: BTreeMap<String, MetricStat>,
    /// Rendered visualizations, `[child][channel]`.
    pub images: Vec<Vec<RasterImage>>,
    pub channels: usize,
}

/// Visualize every channel of `layer` in the first two children and hash
/// each pair of sibling images with all five algorithms. The per-channel
/// seed is shared by both children so identical networks give identical
/// images.
pub fn stage_visualize(
    children: &[(String, Network)],
    layer: usize,
    viz: &VizConfig,
    color: &ColorMatrix,
    run_seed: u64,
    method: &str,
) -> Result<VizStageOutput> {
    if children.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "method {method} needs at least two children for pairwise distances"
        )));
    }
    let channels = children[0]
        .1
        .output_channels_at(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no channel output")))?;

    let pair = &children[..2];
    let per_channel: Vec<[RasterImage; 2]> = (0..channels)
        .into_par_iter()
        .map(|channel| -> Result<[RasterImage; 2]> {
            let seed = seeds::derive(run_seed, &format!("viz/{method}/{channel}"));
            let cfg = VizConfig { seed, ..*viz };
            let obj = VizObjective { layer, channel, sign: Sign::Maximize };
            let mut rendered = Vec::with_capacity(2);
            for (_, net) in pair {
                let out: VizResult = lens::visualize(net, &obj, &cfg, color, IMAGE_SIZE, IMAGE_SIZE)?;
                rendered.push(lens::image_to_raster(&out.image)?);
            }
            let b = rendered.pop().expect("two images");
            let a = rendered.pop().expect("two images");
            Ok([a, b])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stats = BTreeMap::new();
    for algo in HashAlg::ALL {
        let distances: Vec<f64> = per_channel
            .iter()
            .map(|[a, b]| -> Result<f64> {
                let ha = phash::hash_image(a, algo)?;
                let hb = phash::hash_image(b, algo)?;
                Ok(phash::hamming(&ha, &hb)? as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        stats.insert(algo.name().to_string(), MetricStat::from_values(&distances));
    }
    let images = vec![
        per_channel.iter().map(|[a, _]| a.clone()).collect(),
        per_channel.iter().map(|[_, b]| b.clone()).collect(),
    ];
    Ok(VizStageOutput { stats, images, channels })
}

/// d_KL and d_PDR between the first two children on the validation split.
pub fn stage_output_metrics(
    children: &[(String, Network)],
    val: &Split,
    batch_size: usize,
) -> Result<BTreeMap<String, MetricStat>> {
    if children.len() < 2 {
        return Err(Error::InvalidArgument("output metrics need two children".into()));
    }
    let mut probs = Vec::new();
    let mut classes = 0;
    for (_, net) in &children[..2] {
        let indices: Vec<usize> = (0..val.n).collect();
        for chunk in indices.chunks(batch_size.max(1)) {
            let (batch, _) = val.batch(chunk);
            let p = net.predict_proba(&batch)?;
            classes = p.shape()[1];
            probs.extend_from_slice(p.data());
        }
    }
    let set = PredictionSet::new(probs, 2, val.n, classes)?;
    let mut out = BTreeMap::new();
    out.insert("d_kl".to_string(), MetricStat::exact(set.kl_pairwise()?, val.n));
    out.insert("d_pdr".to_string(), MetricStat::exact(set.pdr()?, val.n));
    Ok(out)
}

/// SmoothGrad saliency distances between the first two children over the
/// first `min(max_images, val.n)` validation images: RMSE on the `[0, 1]`
/// maps plus the four grayscale hashes on the rendered 8-bit rasters.
/// Returns the stats and the rendered maps `[child][image]`.
pub fn stage_saliency(
    children: &[(String, Network)],
    val: &Split,
    stage_cfg: &SaliencyStageConfig,
    run_seed: u64,
    method: &str,
) -> Result<(BTreeMap<String, MetricStat>, Vec<Vec<RasterImage>>)> {
    if children.len() < 2 {
        return Err(Error::InvalidArgument("saliency distances need two children".into()));
    }
    let count = stage_cfg.max_images.min(val.n).max(1);
    let pair = &children[..2];

    struct PerImage {
        rmse: f64,
        hash_dist: [f64; 4],
        rendered: [RasterImage; 2],
    }

    let rows: Vec<PerImage> = (0..count)
        .into_par_iter()
        .map(|idx| -> Result<PerImage> {
            let (batch, _) = val.batch(&[idx]);
            let seed = seeds::derive(run_seed, &format!("sal/{method}/{idx}"));
            let cfg = SaliencyConfig {
                samples: stage_cfg.samples,
                sigma_frac: stage_cfg.sigma_frac,
                seed,
            };
            let map_a = lens::smoothgrad(&pair[0].1, &batch, &cfg)?;
            let map_b = lens::smoothgrad(&pair[1].1, &batch, &cfg)?;
            let rmse = lens::rmse(&map_a, &map_b)?;
            let ra = lens::heatmap_to_raster(&map_a)?;
            let rb = lens::heatmap_to_raster(&map_b)?;
            let mut hash_dist = [0.0; 4];
            for (k, algo) in HashAlg::GRAYSCALE.iter().enumerate() {
                let ha = phash::hash_image(&ra, *algo)?;
                let hb = phash::hash_image(&rb, *algo)?;
                hash_dist[k] = phash::hamming(&ha, &hb)? as f64;
            }
            Ok(PerImage { rmse, hash_dist, rendered: [ra, rb] })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stats = BTreeMap::new();
    let rmse_values: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    stats.insert("rmse".to_string(), MetricStat::from_values(&rmse_values));
    for (k, algo) in HashAlg::GRAYSCALE.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r.hash_dist[k]).collect();
        stats.insert(algo.name().to_string(), MetricStat::from_values(&values));
    }
    let rendered = vec![
        rows.iter().map(|r| r.rendered[0].clone()).collect(),
        rows.iter().map(|r| r.rendered[1].clone()).collect(),
    ];
    Ok((stats, rendered))
}

/// Wall-clock metadata and build manifests; kept out of `report.json` so
/// reruns with the same config produce byte-identical reports.
#[derive(serde::Serialize)]
struct RunManifest<'a> {
    config_digest: &'a str,
    seed: u64,
    unix_time_start: u64,
    unix_time_end: u64,
    snapshot: &'a EnsembleRun,
    prune_tune: &'a EnsembleRun,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run the full experiment and write every artifact under the configured
/// output directory: `checkpoints/`, `viz/<child>/`, `saliency/<child>/`,
/// `manifest.json`, `report.json`, `report.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, config_digest: &str) -> Result<DiversityReport> {
    let started = now_unix();
    let out_dir = cfg.run.output_dir.clone();
    fs::create_dir_all(&out_dir)?;
    let seed = cfg.run.seed;

    let dataset = cfg.dataset().map_err(|e| e.in_stage("dataset"))?;
    let color = ColorMatrix::from_covariance(&dataset.train.pixel_covariance(), 3)
        .map_err(|e| e.in_stage("dataset"))?;

    // parent
    let ckpt_dir = out_dir.join("checkpoints");
    let parent = forge::train_parent(&dataset.train, &cfg.parent, seed)
        .map_err(|e| e.in_stage("train-parent"))?;
    let parent_path = ckpt_dir.join("parent.ediv");
    checkpoint::save(&parent, &parent_path).map_err(|e| e.in_stage("train-parent"))?;
    let parent_acc = forge::accuracy(&parent, &dataset.val, cfg.parent.batch_size)
        .map_err(|e| e.in_stage("train-parent"))?;

    // children
    let mut snap_run =
        forge::snapshot_children(&parent, &dataset.train, &cfg.snapshot, seed, &parent_path, &ckpt_dir)
            .map_err(|e| e.in_stage("snapshot"))?;
    let mut pat_run = forge::prune_tune_children(
        &parent,
        &dataset.train,
        &cfg.prune_tune,
        seed,
        &parent_path,
        &ckpt_dir,
    )
    .map_err(|e| e.in_stage("prune-tune"))?;

    let mut accuracy_children = BTreeMap::new();
    let mut methods: Vec<(&str, Vec<(String, Network)>)> = Vec::new();
    for (method, run) in [(METHOD_SNAPSHOT, &mut snap_run), (METHOD_PRUNE_TUNE, &mut pat_run)] {
        let nets = run.load_children().map_err(|e| e.in_stage(method))?;
        let mut named = Vec::new();
        for (entry, net) in run.children.iter_mut().zip(nets) {
            let acc = forge::accuracy(&net, &dataset.val, cfg.parent.batch_size)
                .map_err(|e| e.in_stage(method))?;
            entry.val_accuracy = Some(acc);
            accuracy_children.insert(entry.name.clone(), acc);
            named.push((entry.name.clone(), net));
        }
        methods.push((method, named));
    }
    snap_run.save(&out_dir.join("manifest_snapshot.json"))?;
    pat_run.save(&out_dir.join("manifest_prune_tune.json"))?;

    let layer = parent
        .final_conv_layer()
        .ok_or_else(|| Error::InvalidArgument("architecture has no conv layer".into()))
        .map_err(|e| e.in_stage("visualize"))?;

    let pool = run_pool()?;
    let mut visualization = BTreeMap::new();
    let mut output_metrics = BTreeMap::new();
    let mut saliency = BTreeMap::new();
    let mut viz_channels = 0;
    for (method, children) in &methods {
        // feature-visualization hash distances + contact sheets
        let viz_out = pool
            .install(|| stage_visualize(children, layer, &cfg.viz, &color, seed, method))
            .map_err(|e| e.in_stage("visualize"))?;
        viz_channels = viz_out.channels;
        for (ci, (name, _)) in children.iter().take(2).enumerate() {
            let child_dir = out_dir.join("viz").join(name);
            for (channel, img) in viz_out.images[ci].iter().enumerate() {
                imgio::save_png(img, &child_dir.join(format!("{layer}_{channel}.png")))
                    .map_err(|e| e.in_stage("visualize"))?;
            }
            let sheet = tile_grid(&viz_out.images[ci], 8).map_err(|e| e.in_stage("visualize"))?;
            imgio::save_png(&sheet, &child_dir.join(format!("grid_{layer}.png")))
                .map_err(|e| e.in_stage("visualize"))?;
        }
        visualization.insert(method.to_string(), viz_out.stats);

        // output diversity
        let om = stage_output_metrics(children, &dataset.val, cfg.parent.batch_size)
            .map_err(|e| e.in_stage("output-metrics"))?;
        output_metrics.insert(method.to_string(), om);

        // saliency distances
        let (sal_stats, rendered) = pool
            .install(|| stage_saliency(children, &dataset.val, &cfg.saliency, seed, method))
            .map_err(|e| e.in_stage("saliency"))?;
        for (ci, (name, _)) in children.iter().take(2).enumerate() {
            let child_dir = out_dir.join("saliency").join(name);
            for (idx, img) in rendered[ci].iter().enumerate() {
                imgio::save_png(img, &child_dir.join(format!("{idx}.png")))
                    .map_err(|e| e.in_stage("saliency"))?;
            }
        }
        saliency.insert(method.to_string(), sal_stats);
    }

    let report = DiversityReport {
        provenance: Provenance {
            config_digest: config_digest.to_string(),
            seed,
            viz_channels,
        },
        accuracy: AccuracyBlock { parent: parent_acc, children: accuracy_children },
        visualization,
        output_metrics,
        saliency,
    };
    report.save(&out_dir).map_err(|e| e.in_stage("report"))?;

    let manifest = RunManifest {
        config_digest,
        seed,
        unix_time_start: started,
        unix_time_end: now_unix(),
        snapshot: &snap_run,
        prune_tune: &pat_run,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))?,
    )?;
    Ok(report)
}

/// Re-render `report.csv` (and return the report) from an existing run
/// directory.
pub fn rerender_report(run_dir: &Path) -> Result<DiversityReport> {
    let report = DiversityReport::load(&run_dir.join("report.json"))?;
    fs::write(run_dir.join("report.csv"), report.to_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, SyntheticConfig};

    #[test]
    fn identical_children_have_zero_distances() {
        let ds = synthetic(&SyntheticConfig { train_size: 20, val_size: 20, seed: 1 }).unwrap();
        let net = Network::desk32(77);
        let children =
            vec![("a".to_string(), net.clone()), ("b".to_string(), net.clone())];
        let viz = VizConfig { steps: 2, ..VizConfig::default() };
        let color = ColorMatrix::identity(3);
        let layer = net.final_conv_layer().unwrap();
        let out = stage_visualize(&children, layer, &viz, &color, 5, "degenerate").unwrap();
        for (algo, stat) in &out.stats {
            assert_eq!(stat.mean, 0.0, "{algo} distance should be zero");
            assert_eq!(stat.n, 32);
        }

        let om = stage_output_metrics(&children, &ds.val, 8).unwrap();
        assert_eq!(om["d_pdr"].mean, 0.0);
        assert_eq!(om["d_kl"].mean, 0.0);

        let sal_cfg = SaliencyStageConfig { samples: 2, sigma_frac: 0.1, max_images: 4 };
        let (stats, _) = stage_saliency(&children, &ds.val, &sal_cfg, 5, "degenerate").unwrap();
        assert_eq!(stats["rmse"].mean, 0.0);
        assert_eq!(stats["ahash"].mean, 0.0);
    }
}
