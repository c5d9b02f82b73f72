//! Fritsch-Carlson monotone cubic interpolation: flat runs stay flat, the
//! curve never overshoots, and it extends linearly past the last knot.
//!
//! ```bash
//! cargo run --example monotone_spline
//! ```

use star_regression::spline::MonotoneSpline;

fn main() -> star_regression::Result<()> {
    let s = MonotoneSpline::fit(vec![0.0, 1.0, 2.0, 3.0, 6.0], vec![0.0, 0.1, 0.1, 2.0, 2.2])?;
    println!("tangents: {:?}", s.tangents());
    println!("   x      g(x)    g'(x)");
    for i in 0..=16 {
        let x = i as f64 * 0.5;
        println!("{x:>4.1} {:>9.4} {:>8.4}", s.evaluate(x), s.derivative(x));
    }
    println!("inverse of 1.0: {:.6}", s.inverse(1.0));
    Ok(())
}
