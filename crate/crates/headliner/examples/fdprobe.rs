//! scratch probe (deleted before ship)
use headliner::pipeline::{run_experiment, ExperimentArgs};

fn main() {
    let seeds: Vec<u64> = std::env::var("SEEDS").unwrap_or("1".into())
        .split(',').map(|s| s.parse().unwrap()).collect();
    let mut args = ExperimentArgs { seeds, ..ExperimentArgs::default() };
    if let Ok(v) = std::env::var("EPOCHS") { args.max_epochs = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("RESTARTS") { args.lr_restarts = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("LAMBDA") { args.lambda_err = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("LR") { args.initial_lr = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("SSK") { args.ss_k = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("BS") { args.batch_size = v.parse().unwrap(); }
    if let Ok(v) = std::env::var("H") { args.hidden_dim = v.parse().unwrap(); }
    let start = std::time::Instant::now();
    let result = run_experiment(&args).unwrap();
    println!("{}", result.grid_table());
    println!("oracle:");
    for (name, s) in &result.oracle {
        println!("  {name:<12} R1 {:.2}", s.rouge1);
    }
    println!("total {:.0}s", start.elapsed().as_secs_f64());
}
