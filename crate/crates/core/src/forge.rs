//! Ensemble construction from a shared parent: snapshot checkpointing over
//! a cyclic schedule, and anti-random prune-and-tune child generation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::engine::{checkpoint, Network, Sgd, Tensor};
use crate::error::{Error, Result};
use crate::schedules::{CosineAnneal, OneCycle, SnapshotSchedule};
use crate::seeds;

/// Binary keep-masks for a network's prunable tensors (conv and linear
/// weights; biases are never pruned). A 1 keeps the weight, a 0 prunes it.
#[derive(Debug, Clone)]
pub struct PruneMask {
    masks: BTreeMap<String, Tensor>,
    sparsity: f64,
}

impl PruneMask {
    pub fn masks(&self) -> &BTreeMap<String, Tensor> {
        &self.masks
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn ones_count(&self, name: &str) -> Option<usize> {
        self.masks.get(name).map(|m| m.data().iter().filter(|&&v| v == 1.0).count())
    }

    /// Per-tensor `(kept, total)` counts, recorded in run manifests.
    pub fn sparsity_table(&self) -> BTreeMap<String, [usize; 2]> {
        self.masks
            .iter()
            .map(|(name, m)| {
                let ones = m.data().iter().filter(|&&v| v == 1.0).count();
                (name.clone(), [ones, m.len()])
            })
            .collect()
    }
}

/// Generate a mirrored pair of 50%-sparsity masks: the second mask is the
/// elementwise complement of the first, so the two children partition the
/// parent's weights. Even-sized tensors split exactly 50/50; odd-sized ones
/// give the first mask `floor(n/2)` ones and the sibling the remainder.
pub fn antirandom_pair(
    shapes: &BTreeMap<String, Vec<usize>>,
    seed: u64,
) -> Result<(PruneMask, PruneMask)> {
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("antirandom_pair needs at least one tensor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        let mut a = vec![0.0; n];
        for &i in &indices[..n / 2] {
            a[i] = 1.0;
        }
        let b: Vec<f64> = a.iter().map(|&v| 1.0 - v).collect();
        first.insert(name.clone(), Tensor::new(shape.clone(), a)?);
        second.insert(name.clone(), Tensor::new(shape.clone(), b)?);
    }
    Ok((
        PruneMask { masks: first, sparsity: 0.5 },
        PruneMask { masks: second, sparsity: 0.5 },
    ))
}

/// Cartesian distance between two equal-length bit vectors:
/// `sqrt(sum_i |a_i - b_i|)`. Maximized (at `sqrt(n)`) by complements.
pub fn cartesian_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "cartesian_distance".into(),
            detail: format!("{} vs {} elements", a.len(), b.len()),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>().sqrt())
}

/// Clone the network, zero the masked weights (Hadamard product with the
/// keep-mask) and install the mask so optimizer steps keep them frozen.
pub fn apply_mask(net: &Network, mask: &PruneMask) -> Result<Network> {
    let mut child = net.clone();
    for (name, m) in mask.masks() {
        child.set_mask(name, m.clone())?;
    }
    Ok(child)
}

// ── Training ────────────────────────────────────────────────────────

/// Parent training block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ParentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine-annealed from `lr_start` down to `lr_end` over all steps.
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
}

impl Default for ParentConfig {
    fn default() -> Self {
        ParentConfig { epochs: 20, batch_size: 32, lr_start: 0.1, lr_end: 1e-3, momentum: 0.9 }
    }
}

/// Snapshot-ensemble block: cyclic cosine decay, checkpoint at cycle ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotConfig {
    pub cycles: usize,
    pub epochs_per_cycle: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub momentum: f64,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig {
            cycles: 2,
            epochs_per_cycle: 10,
            batch_size: 32,
            peak_lr: 0.1,
            floor_lr: 1e-5,
            momentum: 0.9,
        }
    }
}

/// Prune-and-tune block: anti-random pairs plus one-cycle tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Number of anti-random pairs (the ensemble has `2 * pairs` children).
    pub pairs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub split: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        // 20 tuning epochs: 50% pruning removes half of an already tiny
        // network, and shorter one-cycle budgets leave the children several
        // accuracy points behind the parent
        TuneConfig {
            pairs: 1,
            epochs: 20,
            batch_size: 32,
            eta_min: 1e-5,
            eta_max: 0.1,
            mu_min: 0.85,
            mu_max: 0.95,
            split: 0.5,
        }
    }
}

/// Provenance of one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildOrigin {
    Snapshot,
    PruneAndTune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildEntry {
    pub name: String,
    pub path: PathBuf,
    pub origin: ChildOrigin,
    pub seed: u64,
    /// `(kept, total)` per prunable tensor; present for pruned children.
    pub mask_sparsity: Option<BTreeMap<String, [usize; 2]>>,
    pub val_accuracy: Option<f64>,
}

/// Manifest of one ensemble build: parent checkpoint, children, and the
/// schedule parameters that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub parent: PathBuf,
    pub children: Vec<ChildEntry>,
    pub schedule: serde_json::Value,
}

impl EnsembleRun {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EnsembleRun> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))
    }

    /// Load every child network, checking that each shares the parent's
    /// architecture (identical layer tables).
    pub fn load_children(&self) -> Result<Vec<Network>> {
        let parent = checkpoint::load(&self.parent)?;
        let mut nets = Vec::with_capacity(self.children.len());
        for child in &self.children {
            let net = checkpoint::load(&child.path)?;
            if net.layers() != parent.layers() {
                return Err(Error::Checkpoint(format!(
                    "child {} architecture differs from parent",
                    child.name
                )));
            }
            nets.push(net);
        }
        Ok(nets)
    }
}

fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    (n.div_ceil(batch)) as u64
}

/// Mini-batch SGD loop. `schedule` maps the 1-based global step to
/// `(lr, momentum)`; `on_step` runs after each optimizer step (checkpoint
/// hook). Aborts with a diagnostic when the loss turns non-finite.
fn train_loop(
    net: &mut Network,
    split: &Split,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut schedule: impl FnMut(u64) -> (f64, f64),
    mut on_step: impl FnMut(u64, &Network) -> Result<()>,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut opt = Sgd::new();
    let mut indices: Vec<usize> = (0..split.n).collect();
    let mut step = 0u64;
    for epoch in 0..epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(batch_size) {
            step += 1;
            let (batch, labels) = split.batch(chunk);
            let mut fwd = net.forward(&batch)?;
            let out_id = fwd.output_id();
            let loss_id = fwd.graph_mut().cross_entropy(out_id, &labels, "loss")?;
            let loss = fwd.graph().scalar(loss_id);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training diverged at epoch {epoch}, step {step}: loss = {loss}"
                )));
            }
            fwd.graph_mut().backward(loss_id, &[1.0])?;
            let grads = collect_param_grads(net, &fwd)?;
            let (lr, momentum) = schedule(step);
            opt.step(net, &grads, lr, momentum)?;
            on_step(step, net)?;
        }
    }
    Ok(())
}

fn collect_param_grads(
    net: &Network,
    fwd: &crate::engine::Forward,
) -> Result<BTreeMap<String, Tensor>> {
    let mut grads = BTreeMap::new();
    for name in net.params().keys() {
        // params were loaded onto the tape during forward_on
        let id = fwd
            .param_node(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter '{name}' not in graph")))?;
        let g = fwd
            .graph()
            .grad(id)
            .ok_or_else(|| Error::InvalidArgument("backward has not run".into()))?;
        grads.insert(
            name.clone(),
            Tensor::new(fwd.graph().shape(id).to_vec(), g.to_vec())?,
        );
    }
    Ok(grads)
}

/// Train a fresh parent network on the training split.
pub fn train_parent(split: &Split, cfg: &ParentConfig, seed: u64) -> Result<Network> {
    let mut net = Network::desk32(seeds::derive(seed, "parent-init"));
    let total = cfg.epochs as u64 * steps_per_epoch(split.n, cfg.batch_size);
    if total == 0 {
        return Ok(net);
    }
    let anneal = CosineAnneal::new(cfg.lr_start, cfg.lr_end, total.saturating_sub(1).max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "parent-shuffle"));
    let momentum = cfg.momentum;
    train_loop(
        &mut net,
        split,
        cfg.epochs,
        cfg.batch_size,
        &mut rng,
        |t| (anneal.value((t - 1).min(anneal.t_max)).expect("in range"), momentum),
        |_, _| Ok(()),
    )?;
    Ok(net)
}

/// Continue training a copy of the parent under the cyclic snapshot
/// schedule, saving a checkpoint at the end of each cycle. Produces
/// `cfg.cycles` children.
pub fn snapshot_children(
    parent: &Network,
    split: &Split,
    cfg: &SnapshotConfig,
    seed: u64,
    parent_path: &Path,
    out_dir: &Path,
) -> Result<EnsembleRun> {
    if cfg.cycles == 0 || cfg.epochs_per_cycle == 0 {
        return Err(Error::InvalidArgument("snapshot needs cycles >= 1 and epochs_per_cycle >= 1".into()));
    }
    let spe = steps_per_epoch(split.n, cfg.batch_size);
    let total = cfg.cycles as u64 * cfg.epochs_per_cycle as u64 * spe;
    let sched = SnapshotSchedule::new(total, cfg.cycles as u64, cfg.peak_lr, cfg.floor_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "snapshot-shuffle"));

    fs::create_dir_all(out_dir)?;
    let mut net = parent.clone();
    let mut children = Vec::new();
    let momentum = cfg.momentum;
    {
        let children = &mut children;
        train_loop(
            &mut net,
            split,
            cfg.cycles * cfg.epochs_per_cycle,
            cfg.batch_size,
            &mut rng,
            |t| (sched.lr(t).expect("in range"), momentum),
            |t, current| {
                if sched.is_cycle_end(t) {
                    let index = children.len();
                    let name = format!("snapshot_{index}");
                    let path = out_dir.join(format!("{name}.ediv"));
                    checkpoint::save(current, &path)?;
                    children.push(ChildEntry {
                        name,
                        path,
                        origin: ChildOrigin::Snapshot,
                        seed,
                        mask_sparsity: None,
                        val_accuracy: None,
                    });
                }
                Ok(())
            },
        )?;
    }
    Ok(EnsembleRun {
        parent: parent_path.to_path_buf(),
        children,
        schedule: serde_json::to_value(cfg).expect("config serializes"),
    })
}

/// Spawn `2 * cfg.pairs` anti-random children from the parent and tune each
/// with a one-cycle schedule. With zero tuning epochs a child is exactly the
/// masked parent.
pub fn prune_tune_children(
    parent: &Network,
    split: &Split,
    cfg: &TuneConfig,
    seed: u64,
    parent_path: &Path,
    out_dir: &Path,
) -> Result<EnsembleRun> {
    if cfg.pairs == 0 {
        return Err(Error::InvalidArgument("prune-and-tune needs pairs >= 1".into()));
    }
    fs::create_dir_all(out_dir)?;
    let shapes = parent.prunable_shapes();
    let mut children = Vec::new();
    for pair in 0..cfg.pairs {
        let mask_seed = seeds::derive(seed, &format!("antirandom-{pair}"));
        let (first, second) = antirandom_pair(&shapes, mask_seed)?;
        for (side, mask) in [(0usize, first), (1usize, second)] {
            let index = 2 * pair + side;
            let mut child = apply_mask(parent, &mask)?;
            tune_child(&mut child, split, cfg, seeds::derive(seed, &format!("tune-{index}")))?;
            let name = format!("prune_tune_{index}");
            let path = out_dir.join(format!("{name}.ediv"));
            checkpoint::save(&child, &path)?;
            children.push(ChildEntry {
                name,
                path,
                origin: ChildOrigin::PruneAndTune,
                seed: mask_seed,
                mask_sparsity: Some(mask.sparsity_table()),
                val_accuracy: None,
            });
        }
    }
    Ok(EnsembleRun {
        parent: parent_path.to_path_buf(),
        children,
        schedule: serde_json::to_value(cfg).expect("config serializes"),
    })
}

fn tune_child(child: &mut Network, split: &Split, cfg: &TuneConfig, seed: u64) -> Result<()> {
    let total = cfg.epochs as u64 * steps_per_epoch(split.n, cfg.batch_size);
    if total == 0 {
        return Ok(());
    }
    let cycle = OneCycle::new(
        cfg.eta_min,
        cfg.eta_max,
        cfg.mu_min,
        cfg.mu_max,
        total.saturating_sub(1).max(2),
        cfg.split,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_loop(
        child,
        split,
        cfg.epochs,
        cfg.batch_size,
        &mut rng,
        |t| cycle.value((t - 1).min(cycle.t_total)).expect("in range"),
        |_, _| Ok(()),
    )
}

// ── Prediction ──────────────────────────────────────────────────────

/// Arithmetic mean of several distributions (equal weights).
pub fn mean_distributions(dists: &[&[f64]]) -> Result<Vec<f64>> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero distributions".into()))?;
    let k = first.len();
    if dists.iter().any(|d| d.len() != k) {
        return Err(Error::Shape {
            context: "mean_distributions".into(),
            detail: "distributions have differing lengths".into(),
        });
    }
    let mut out = vec![0.0; k];
    for d in dists {
        for (o, v) in out.iter_mut().zip(*d) {
            *o += v;
        }
    }
    let m = dists.len() as f64;
    for o in &mut out {
        *o /= m;
    }
    Ok(out)
}

/// Equally weighted ensemble prediction: the mean of the members' softmax
/// outputs on a `[B, C, H, W]` batch. Returns `[B, classes]`.
pub fn ensemble_predict(members: &[Network], x: &Tensor) -> Result<Tensor> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("ensemble_predict needs at least one member".into()));
    }
    let mut acc: Option<Tensor> = None;
    for net in members {
        let p = net.predict_proba(x)?;
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                for (av, pv) in a.data_mut().iter_mut().zip(p.data()) {
                    *av += pv;
                }
                a
            }
        });
    }
    let mut out = acc.expect("members is nonempty");
    let m = members.len() as f64;
    for v in out.data_mut() {
        *v /= m;
    }
    Ok(out)
}

/// Fraction of validation samples whose argmax prediction matches the label.
pub fn accuracy(net: &Network, split: &Split, batch_size: usize) -> Result<f64> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..split.n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = split.batch(chunk);
        let probs = net.predict_proba(&batch)?;
        let k = probs.shape()[1];
        for (row, &label) in probs.data().chunks(k).zip(&labels) {
            if crate::metrics::argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / split.n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, SyntheticConfig};

    fn toy_shapes() -> BTreeMap<String, Vec<usize>> {
        let mut m = BTreeMap::new();
        m.insert("a.weight".to_string(), vec![2, 5]);
        m.insert("b.weight".to_string(), vec![3, 3]);
        m
    }

    #[test]
    fn antirandom_masks_are_complements() {
        let (a, b) = antirandom_pair(&toy_shapes(), 11).unwrap();
        for (name, ma) in a.masks() {
            let mb = &b.masks()[name];
            for (x, y) in ma.data().iter().zip(mb.data()) {
                assert_eq!(x + y, 1.0);
            }
        }
    }

    #[test]
    fn even_tensors_split_exactly_in_half() {
        let (a, b) = antirandom_pair(&toy_shapes(), 3).unwrap();
        assert_eq!(a.ones_count("a.weight"), Some(5));
        assert_eq!(b.ones_count("a.weight"), Some(5));
        // odd-sized tensor: floor(9/2) = 4 ones, sibling gets 5
        assert_eq!(a.ones_count("b.weight"), Some(4));
        assert_eq!(b.ones_count("b.weight"), Some(5));
    }

    #[test]
    fn complement_distance_is_sqrt_n() {
        let (a, b) = antirandom_pair(&toy_shapes(), 19).unwrap();
        for (name, ma) in a.masks() {
            let mb = &b.masks()[name];
            let d = cartesian_distance(ma.data(), mb.data()).unwrap();
            assert!((d - (ma.len() as f64).sqrt()).abs() < 1e-12, "{name}");
        }
    }

    #[test]
    fn cartesian_distance_examples() {
        assert_eq!(cartesian_distance(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), 0.0);
        let d = cartesian_distance(&[1.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(d, 2.0);
        assert!(cartesian_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn exhaustive_complement_distance_up_to_12_bits() {
        // brute-force oracle over every bitstring of length <= 12
        for n in 1..=12usize {
            for bits in 0u32..(1 << n) {
                let mask: Vec<f64> =
                    (0..n).map(|i| ((bits >> i) & 1) as f64).collect();
                let comp: Vec<f64> = mask.iter().map(|&v| 1.0 - v).collect();
                let mut sum = 0.0;
                for i in 0..n {
                    sum += (mask[i] - comp[i]).abs();
                }
                let expected = sum.sqrt();
                assert_eq!(cartesian_distance(&mask, &comp).unwrap(), expected);
                assert!((expected - (n as f64).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_mask_zeroes_exactly_the_pruned_positions() {
        let parent = Network::desk32(5);
        let (mask, _) = antirandom_pair(&parent.prunable_shapes(), 2).unwrap();
        let child = apply_mask(&parent, &mask).unwrap();
        for (name, m) in mask.masks() {
            let p = parent.params()[name].data();
            let c = child.params()[name].data();
            for i in 0..p.len() {
                if m.data()[i] == 1.0 {
                    assert_eq!(c[i], p[i], "{name}[{i}] should be kept");
                } else {
                    assert_eq!(c[i], 0.0, "{name}[{i}] should be pruned");
                }
            }
        }
        // identity mask keeps the child identical to the parent
        let all_ones = PruneMask {
            masks: parent
                .prunable_shapes()
                .iter()
                .map(|(n, s)| (n.clone(), Tensor::filled(s.clone(), 1.0)))
                .collect(),
            sparsity: 0.0,
        };
        let same = apply_mask(&parent, &all_ones).unwrap();
        for (name, t) in parent.params() {
            assert_eq!(t.data(), same.params()[name].data());
        }
    }

    #[test]
    fn anti_random_children_partition_the_parent() {
        let parent = Network::desk32(8);
        let (a, b) = antirandom_pair(&parent.prunable_shapes(), 4).unwrap();
        let ca = apply_mask(&parent, &a).unwrap();
        let cb = apply_mask(&parent, &b).unwrap();
        for (name, t) in parent.params() {
            if !name.ends_with(".weight") {
                continue;
            }
            let (pa, pb) = (ca.params()[name].data(), cb.params()[name].data());
            for i in 0..t.data().len() {
                let kept_a = pa[i] != 0.0;
                let kept_b = pb[i] != 0.0;
                assert!(!(kept_a && kept_b), "overlapping kept weight");
                if t.data()[i] != 0.0 {
                    // every nonzero parent weight survives in exactly one child
                    assert!(pa[i] == t.data()[i] || pb[i] == t.data()[i]);
                }
            }
        }
    }

    #[test]
    fn zero_tuning_epochs_child_equals_masked_parent() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(&SyntheticConfig { train_size: 20, val_size: 10, seed: 1 }).unwrap();
        let parent = Network::desk32(3);
        let ppath = dir.path().join("parent.ediv");
        checkpoint::save(&parent, &ppath).unwrap();
        let cfg = TuneConfig { epochs: 0, ..TuneConfig::default() };
        let run =
            prune_tune_children(&parent, &ds.train, &cfg, 7, &ppath, dir.path()).unwrap();
        assert_eq!(run.children.len(), 2);
        let (a, b) = antirandom_pair(&parent.prunable_shapes(), seeds::derive(7, "antirandom-0"))
            .unwrap();
        let expect_a = apply_mask(&parent, &a).unwrap();
        let expect_b = apply_mask(&parent, &b).unwrap();
        let loaded = run.load_children().unwrap();
        for (net, expect) in loaded.iter().zip([&expect_a, &expect_b]) {
            for (name, t) in expect.params() {
                assert_eq!(t.data(), net.params()[name].data(), "{name}");
            }
        }
    }

    #[test]
    fn single_cycle_snapshot_equals_final_state() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(&SyntheticConfig { train_size: 30, val_size: 10, seed: 2 }).unwrap();
        let parent = Network::desk32(9);
        let ppath = dir.path().join("parent.ediv");
        checkpoint::save(&parent, &ppath).unwrap();
        let cfg = SnapshotConfig { cycles: 1, epochs_per_cycle: 1, ..SnapshotConfig::default() };
        let run = snapshot_children(&parent, &ds.train, &cfg, 5, &ppath, dir.path()).unwrap();
        assert_eq!(run.children.len(), 1);

        // replicate the same training by hand and compare final parameters
        let spe = (ds.train.n as u64).div_ceil(cfg.batch_size as u64);
        let sched = SnapshotSchedule::new(spe, 1, cfg.peak_lr, cfg.floor_lr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(5, "snapshot-shuffle"));
        let mut net = parent.clone();
        train_loop(
            &mut net,
            &ds.train,
            1,
            cfg.batch_size,
            &mut rng,
            |t| (sched.lr(t).unwrap(), cfg.momentum),
            |_, _| Ok(()),
        )
        .unwrap();
        let child = &run.load_children().unwrap()[0];
        for (name, t) in net.params() {
            let bits_a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = child.params()[name].data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{name}");
        }
    }

    #[test]
    fn masked_positions_never_resurrect_through_tuning() {
        let ds = synthetic(&SyntheticConfig { train_size: 20, val_size: 10, seed: 3 }).unwrap();
        let parent = Network::desk32(1);
        let (mask, _) = antirandom_pair(&parent.prunable_shapes(), 6).unwrap();
        let mut child = apply_mask(&parent, &mask).unwrap();
        let cfg = TuneConfig { epochs: 1, batch_size: 10, ..TuneConfig::default() };
        tune_child(&mut child, &ds.train, &cfg, 1).unwrap();
        for (name, m) in mask.masks() {
            let p = child.params()[name].data();
            for i in 0..p.len() {
                if m.data()[i] == 0.0 {
                    assert_eq!(p[i], 0.0, "{name}[{i}] resurrected");
                }
            }
        }
    }

    #[test]
    fn mean_distribution_examples() {
        let a = vec![0.8, 0.2];
        let b = vec![0.4, 0.6];
        assert_eq!(mean_distributions(&[&a]).unwrap(), a);
        assert_eq!(mean_distributions(&[&a, &a]).unwrap(), a);
        let m = mean_distributions(&[&a, &b]).unwrap();
        assert!((m[0] - 0.6).abs() < 1e-15 && (m[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ensemble_predict_single_member_is_identity() {
        let net = Network::desk32(4);
        let x = Tensor::filled(vec![2, 3, 16, 16], 0.3);
        let own = net.predict_proba(&x).unwrap();
        let ens = ensemble_predict(std::slice::from_ref(&net), &x).unwrap();
        assert_eq!(own.data(), ens.data());
        let two = ensemble_predict(&[net.clone(), net], &x).unwrap();
        for (a, b) in own.data().iter().zip(two.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
