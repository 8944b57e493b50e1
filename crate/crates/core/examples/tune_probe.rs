use ediv_core::data::{synthetic, SyntheticConfig};
use ediv_core::forge::{self, ParentConfig, TuneConfig};
use ediv_core::engine::checkpoint;

fn main() {
    let ds = synthetic(&SyntheticConfig { train_size: 2000, val_size: 500, seed: ediv_core::seeds::derive(42, "dataset") }).unwrap();
    let parent = forge::train_parent(&ds.train, &ParentConfig::default(), 42).unwrap();
    let pacc = forge::accuracy(&parent, &ds.val, 64).unwrap();
    println!("parent: {pacc:.4}");
    let dir = std::env::temp_dir().join("ediv_tune_probe");
    let ppath = dir.join("parent.ediv");
    checkpoint::save(&parent, &ppath).unwrap();
    for epochs in [10usize, 15, 20, 30] {
        let cfg = TuneConfig { epochs, ..TuneConfig::default() };
        let run = forge::prune_tune_children(&parent, &ds.train, &cfg, 42, &ppath, &dir).unwrap();
        let nets = run.load_children().unwrap();
        let accs: Vec<f64> = nets.iter().map(|n| forge::accuracy(n, &ds.val, 64).unwrap()).collect();
        println!("tune epochs={epochs}: child accs {accs:?}  (gaps {:?})", accs.iter().map(|a| pacc - a).collect::<Vec<_>>());
    }
}
