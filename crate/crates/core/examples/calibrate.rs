use ediv_core::data::{synthetic, SyntheticConfig};
use ediv_core::forge::{self, ParentConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let ds = synthetic(&SyntheticConfig { train_size: train, val_size: 500, seed: 7 }).unwrap();
    let cfg = ParentConfig { epochs, batch_size: 32, lr_start: lr, lr_end: 1e-3, momentum: 0.9 };
    let t0 = Instant::now();
    let net = forge::train_parent(&ds.train, &cfg, 42).unwrap();
    let train_time = t0.elapsed();
    let acc = forge::accuracy(&net, &ds.val, 64).unwrap();
    let train_acc = forge::accuracy(&net, &ds.train, 64).unwrap();
    println!("train={train} epochs={epochs} lr={lr}: val_acc={acc:.4} train_acc={train_acc:.4} time={train_time:.2?}");
}
