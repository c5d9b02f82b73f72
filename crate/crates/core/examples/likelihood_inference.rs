//! Likelihood-ratio tests, profile-likelihood confidence intervals and
//! marginal p-values for a STAR fit.
//!
//! ```bash
//! cargo run --release --example likelihood_inference
//! ```

use star_regression::em::{fit_star, EmConfig, TransformSpec};
use star_regression::inference::{confidence_interval, drop_one_lrt, lrt, standard_errors};
use star_regression::sim::{simulate_data, Generator, SimulationSpec};

fn main() -> star_regression::Result<()> {
    let spec = SimulationSpec::new(Generator::Negbin, 11).with_p(4)?;
    let data = simulate_data(&spec, 0)?;
    let scheme = Generator::Negbin.scheme();
    let config = EmConfig::new(11);
    let fit = fit_star(&data.x, &data.y, &TransformSpec::Nonparametric, &scheme, None, &config)?;
    let se = standard_errors(&fit, &data.x, &data.y)?;

    println!("coef   truth  estimate     se   90% profile CI        LRT p");
    for k in 0..fit.model.n_coef() {
        let ci = confidence_interval(&fit, &data.x, &data.y, k, 0.90, &config)?;
        let test = drop_one_lrt(&fit, &data.x, &data.y, k, &config)?;
        println!(
            "{k:>4} {:>7.3} {:>9.3} {:>6.3}   [{:>7.3}, {:>7.3}]   {:.3e}",
            spec.beta_star[k], fit.model.theta[k], se[k], ci.lower, ci.upper, test.p_value
        );
    }

    // Joint test that the two null coefficients (columns 3 and 4) vanish.
    let joint = lrt(&fit, &data.x, &data.y, &[0, 1, 2], &config)?;
    println!(
        "\nH0: theta_3 = theta_4 = 0: -2 log Lambda = {:.3} on {} df, p = {:.3}",
        joint.stat, joint.df, joint.p_value
    );
    Ok(())
}
