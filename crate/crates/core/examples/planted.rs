//! Runs the planted-bias experiment and prints a before/after table.
//!
//! `cargo run --release --example planted -- [seed]`

use scm_debias::pipeline;
use scm_debias::planted::{self, ExperimentConfig};

fn main() -> Result<(), scm_debias::Error> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = ExperimentConfig::default();
    config.problem.seed = seed;
    config.encoder.seed = seed;
    config.debias.seed = seed;
    config.measure.seed = seed;
    let (outcome, _) = planted::run_experiment(&config)?;
    for e in &outcome.log.epochs {
        println!("epoch {:>2}: mean L {:.6}", e.epoch, e.mean_l);
    }
    print!("{}", pipeline::compare(&outcome.before, &outcome.after)?.render_text());
    println!(
        "mean drift: targets {:.4}, attributes {:.4}",
        outcome.target_drift, outcome.attribute_drift
    );
    Ok(())
}
