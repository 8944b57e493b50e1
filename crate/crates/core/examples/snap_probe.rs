use ediv_core::data::{synthetic, SyntheticConfig};
use ediv_core::forge::{self, ParentConfig, SnapshotConfig};
use ediv_core::engine::checkpoint;

fn main() {
    for seed in [42u64, 43, 44, 45] {
        let ds = synthetic(&SyntheticConfig { train_size: 2000, val_size: 500, seed: ediv_core::seeds::derive(seed, "dataset") }).unwrap();
        let parent = forge::train_parent(&ds.train, &ParentConfig::default(), seed).unwrap();
        let pacc = forge::accuracy(&parent, &ds.val, 64).unwrap();
        let dir = std::env::temp_dir().join(format!("ediv_snap_probe_{seed}"));
        let ppath = dir.join("parent.ediv");
        checkpoint::save(&parent, &ppath).unwrap();
        let run = forge::snapshot_children(&parent, &ds.train, &SnapshotConfig::default(), seed, &ppath, &dir).unwrap();
        let accs: Vec<f64> = run.load_children().unwrap().iter().map(|n| forge::accuracy(n, &ds.val, 64).unwrap()).collect();
        println!("seed {seed}: parent {pacc:.4} snapshots {accs:?}");
    }
}
