//! Fitted expected counts, predictive quantiles, sampling from the fitted
//! model, and a JSON round trip of the model document.
//!
//! ```bash
//! cargo run --release --example predict_and_save
//! ```

use star_regression::document::ModelDocument;
use star_regression::em::{fit_star, EmConfig, TransformSpec};
use star_regression::sim::{simulate_data, Generator, SimulationSpec};

fn main() -> star_regression::Result<()> {
    let spec = SimulationSpec::new(Generator::MixtureCdf, 9).with_p(2)?;
    let data = simulate_data(&spec, 0)?;
    let scheme = Generator::MixtureCdf.scheme();
    let fit = fit_star(&data.x, &data.y, &TransformSpec::Nonparametric, &scheme, None, &EmConfig::new(9))?;

    let names: Vec<String> = ["(Intercept)", "x1", "x2"].iter().map(|s| s.to_string()).collect();
    let doc = ModelDocument::from_fit(&fit, &names, 9, "y", None)?;
    let path = std::env::temp_dir().join("star_example_model.json");
    doc.save(&path)?;
    let model = ModelDocument::load(&path)?.model()?;

    println!("row  observed  expected   q05  q50  q95");
    for i in 0..8 {
        let row: Vec<f64> = data.x_test.row(i).iter().copied().collect();
        let q = |p| model.latent_quantile(&row, p);
        println!(
            "{i:>3} {:>9} {:>9.2} {:>5} {:>4} {:>4}",
            data.y_test[i],
            model.expected_count(&row)?,
            q(0.05)?,
            q(0.5)?,
            q(0.95)?
        );
    }
    let draws = model.sample(&data.x_test, 1)?;
    let mean = draws.iter().map(|&v| v as f64).sum::<f64>() / draws.len() as f64;
    println!("\nmean of one simulated test response vector: {mean:.2}");
    println!("model document written to {}", path.display());
    Ok(())
}
