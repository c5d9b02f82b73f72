//! Dunn-Smyth randomized quantile residuals: a correctly specified STAR fit
//! gives standard normal residuals, an equidispersed Poisson fit to the same
//! heaped data does not.
//!
//! ```bash
//! cargo run --release --example residual_diagnostics
//! ```

use star_regression::baselines::fit_poisson_irls;
use star_regression::em::{fit_star, EmConfig, TransformSpec};
use star_regression::residuals::{
    dunn_smyth_residuals, ks_normality, poisson_probabilities, qq_points,
    randomized_quantile_residuals,
};
use star_regression::sim::{simulate_data, Generator, SimulationSpec};
use star_regression::transform::box_cox_transform;

fn main() -> star_regression::Result<()> {
    let spec = SimulationSpec::new(Generator::MixtureCdf, 5);
    let data = simulate_data(&spec, 0)?;
    let scheme = Generator::MixtureCdf.scheme();
    let config = EmConfig::new(5);

    let fits = [
        ("STAR-np", TransformSpec::Nonparametric),
        ("STAR-sqrt", TransformSpec::Given(box_cox_transform(0.5, (0.0, 1.0), &scheme)?)),
    ];
    for (label, ts) in fits {
        let fit = fit_star(&data.x, &data.y, &ts, &scheme, None, &config)?;
        report(label, &dunn_smyth_residuals(&fit.model, &data.x, &data.y, 5, 1)?)?;
    }
    let pois = fit_poisson_irls(&data.x, &data.y)?;
    let probs = poisson_probabilities(&pois.mean(&data.x), &data.y)?;
    let r = randomized_quantile_residuals(&probs, 5, 1)?;
    report("Poisson", &r)?;

    // The QQ coordinates a plot would use: the lower tail of one set.
    println!("\nPoisson residual QQ, lowest five points (theoretical, sample):");
    for (t, s) in qq_points(r.column(0).as_slice()).iter().take(5) {
        println!("  {t:>7.3} {s:>7.3}");
    }
    Ok(())
}

fn report(label: &str, r: &nalgebra::DMatrix<f64>) -> star_regression::Result<()> {
    let p: Vec<String> = (0..r.ncols())
        .map(|k| ks_normality(r.column(k).as_slice()).map(|t| format!("{:.3}", t.p_value)))
        .collect::<star_regression::Result<_>>()?;
    println!("{label:<10} KS p-values per residual set: {}", p.join(" "));
    Ok(())
}
