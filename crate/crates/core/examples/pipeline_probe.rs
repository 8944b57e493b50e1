use ediv_core::pipeline::{run_experiment, ExperimentConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(64);
    let sal: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(42);
    let dir = std::env::temp_dir().join(format!("ediv_probe_{seed}_{steps}_{sal}"));
    let raw = format!(r#"
[run]
seed = {seed}
output_dir = "{}"

[viz]
steps = {steps}

[saliency]
max_images = {sal}
"#, dir.display());
    let (cfg, digest) = ExperimentConfig::from_toml_str(&raw).unwrap();
    let t0 = Instant::now();
    let report = run_experiment(&cfg, &digest).unwrap();
    println!("total time: {:.1?}", t0.elapsed());
    println!("parent acc {:.4}", report.accuracy.parent);
    for (name, acc) in &report.accuracy.children {
        println!("  {name}: {acc:.4}");
    }
    for (method, stats) in &report.visualization {
        print!("viz {method}:");
        for (algo, s) in stats {
            print!(" {algo}={:.2}±{:.2}", s.mean, s.stderr);
        }
        println!();
    }
    for (method, stats) in &report.output_metrics {
        println!("out {method}: d_kl={:.4} d_pdr={:.4}", stats["d_kl"].mean, stats["d_pdr"].mean);
    }
    for (method, stats) in &report.saliency {
        print!("sal {method}:");
        for (k, s) in stats {
            print!(" {k}={:.3}±{:.3}", s.mean, s.stderr);
        }
        println!();
    }
}
