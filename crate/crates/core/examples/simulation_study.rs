//! A reduced version of the Mixture-CDF / NegBin simulation study: RMSE,
//! held-out -2 log-likelihood, Type I error and power for STAR and baselines.
//!
//! ```bash
//! cargo run --release --example simulation_study
//! ```

use star_regression::sim::{run_simulation, Generator, SimulationSpec};

fn main() -> star_regression::Result<()> {
    for generator in [Generator::MixtureCdf, Generator::Negbin] {
        let mut spec = SimulationSpec::new(generator, 2024);
        spec.n_reps = 10;
        spec.n_test = 500;
        let report = run_simulation(&spec)?;
        println!("{}", report.table());
    }
    Ok(())
}
