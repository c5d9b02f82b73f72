//! Load a CSV with a categorical column and survey weights, fit, and apply
//! the fitted model to new rows whose columns come in a different order.
//!
//! ```bash
//! cargo run --release --example csv_workflow
//! ```

use star_regression::document::ModelDocument;
use star_regression::em::{fit_star, EmConfig, TransformSpec};
use star_regression::io::{Dataset, Table};

const TRAIN: &str = "\
days,age,smoker,w
0,34,no,1.2
2,51,yes,0.8
0,29,no,1.0
5,62,yes,1.1
1,45,no,0.9
3,58,former,1.0
7,66,yes,1.3
0,23,no,0.7
4,49,former,1.0
10,71,yes,1.2
1,38,no,1.0
6,60,former,0.9
";

fn main() -> star_regression::Result<()> {
    let table = Table::from_reader(TRAIN.as_bytes())?;
    let data = Dataset::from_table(&table, "days", Some("w"), Some(30))?;
    println!("design columns: {:?}", data.column_names);

    let fit = fit_star(
        &data.design,
        &data.response,
        &TransformSpec::BoxCox(0.5),
        &data.scheme()?,
        data.weights.as_deref(),
        &EmConfig::new(1),
    )?;
    for (name, v) in data.column_names.iter().zip(&fit.model.theta) {
        println!("  {name:<14} {v:>8.4}");
    }

    // The saved model predicts at unit weight; the survey weights only
    // entered the fit.
    let doc = ModelDocument::from_fit(&fit, &data.column_names, 1, "days", Some("w"))?;
    let new = Table::from_reader("smoker,age\nformer,40\nyes,70\n".as_bytes())?;
    let x = new.aligned_design(&data.column_names, &[])?;
    println!("expected days for new rows: {:?}", doc.model()?.fitted_values(&x)?);

    let mut canonical = Vec::new();
    data.write_csv(&mut canonical)?;
    print!("\ncanonical form:\n{}", String::from_utf8_lossy(&canonical));
    Ok(())
}
