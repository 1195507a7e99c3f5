//! Runs the reference experiment end to end and prints the per-round table.
//!
//! `cargo run --release -p dust --example reference_run -- [DIR] [SEED]`

use dust::experiment::{Experiment, ExperimentConfig};

fn main() -> dust::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "exp-reference".into());
    let mut cfg = ExperimentConfig::default();
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse().expect("seed must be an integer");
    }
    let exp = Experiment::open(dir.as_ref(), cfg)?;
    let summary = exp.run_pipeline()?;
    print!("{}", summary.to_table());
    Ok(())
}
