//! The numerical core of the E-step: stable normal tail probabilities and
//! truncated-normal moments, including intervals far out in the tail.
//!
//! ```bash
//! cargo run --example truncated_normal
//! ```

use star_regression::special::{
    chisq_quantile, log_norm_cdf_diff, norm_cdf, norm_quantile, truncnorm_moments, Interval,
};

fn main() -> star_regression::Result<()> {
    println!("{:>18} {:>12} {:>12} {:>14}", "interval", "mean", "sd", "log P");
    for (lo, hi) in [
        (f64::NEG_INFINITY, 0.0),
        (-1.0, 1.0),
        (2.0, 2.001),
        (8.0, 9.0),
        (35.0, f64::INFINITY),
        (-40.0, -39.0),
    ] {
        let m = truncnorm_moments(0.0, 1.0, Interval::new(lo, hi)?)?;
        println!(
            "{:>18} {:>12.6} {:>12.6} {:>14.6}",
            format!("[{lo}, {hi}]"),
            m.m1,
            m.variance().sqrt(),
            log_norm_cdf_diff(lo, hi)
        );
    }
    println!("\nPhi(-10) = {:e}, Phi^-1(1e-300) = {:.6}", norm_cdf(-10.0), norm_quantile(1e-300)?);
    println!("chi-square(1) 95% quantile = {:.6}", chisq_quantile(0.95, 1)?);
    Ok(())
}
