//! AIC and BIC backward elimination with the intercept protected.
//!
//! ```bash
//! cargo run --release --example model_selection
//! ```

use star_regression::em::{fit_star, EmConfig, TransformSpec};
use star_regression::inference::{backward_elimination, Criterion};
use star_regression::sim::{simulate_data, Generator, SimulationSpec};

fn main() -> star_regression::Result<()> {
    // Columns 1-5 carry signal and 6-10 are noise; the AR(1) correlation
    // order among them is randomly permuted.
    let spec = SimulationSpec::new(Generator::MixtureCdf, 3);
    let data = simulate_data(&spec, 0)?;
    let scheme = Generator::MixtureCdf.scheme();
    let config = EmConfig::new(3);
    let full = fit_star(&data.x, &data.y, &TransformSpec::Nonparametric, &scheme, None, &config)?;

    let signal: Vec<usize> = (1..spec.beta_star.len()).filter(|&k| spec.beta_star[k] != 0.0).collect();
    println!("columns with signal: {signal:?}");
    for criterion in [Criterion::Aic, Criterion::Bic] {
        let sel = backward_elimination(&full, &data.x, &data.y, criterion, &[0], &config)?;
        println!("\n{criterion:?} path:");
        for step in &sel.trace {
            match step.dropped {
                None => println!("  start          {:.2}", step.criterion),
                Some(c) => println!("  drop column {c:>2} {:.2}", step.criterion),
            }
        }
        println!("  kept {:?}", sel.columns);
    }
    Ok(())
}
