//! The `star` command line: fit, predict, diagnose, test, select, simulate.
//!
//! Exit codes: 0 success, 1 usage or data error, 2 non-convergence.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::document::ModelDocument;
use crate::em::{fit_em_with, fit_star, EmConfig, FitOptions, FitResult, TransformSpec};
use crate::error::{Result, StarError};
use crate::inference::{
    backward_elimination, confidence_interval_with_se, lrt, marginal_p_values, standard_errors,
    Criterion,
};
use crate::io::{format_float, read_csv, Table, INTERCEPT};
use crate::model::StarModel;
use crate::residuals::{dunn_smyth_residuals, ks_normality, qq_points};
use crate::sim::{run_simulation, Generator, Method, SimulationSpec};
use crate::transform::CountFamily;

#[derive(Debug, Parser)]
#[command(name = "star", version, about = "Count regression with simultaneous transformation and rounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and save it as JSON.
    Fit(FitArgs),
    /// Expected counts and latent quantile counts for new rows.
    Predict(PredictArgs),
    /// Randomized quantile residuals, QQ data and KS tests.
    Diagnose(DiagnoseArgs),
    /// Likelihood-ratio test for dropping columns.
    Test(TestArgs),
    /// Backward elimination by AIC or BIC.
    Select(SelectArgs),
    /// Monte Carlo comparison against reference methods.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Np,
    BoxCox,
    Sqrt,
    Log,
    Identity,
    Poisson,
    Negbin,
}

impl TransformArg {
    pub fn spec(self) -> TransformSpec {
        match self {
            TransformArg::Np => TransformSpec::Nonparametric,
            TransformArg::BoxCox => TransformSpec::BoxCoxProfile,
            TransformArg::Sqrt => TransformSpec::BoxCox(0.5),
            TransformArg::Log => TransformSpec::BoxCox(0.0),
            TransformArg::Identity => TransformSpec::BoxCox(1.0),
            TransformArg::Poisson => TransformSpec::Parametric(CountFamily::Poisson),
            TransformArg::Negbin => TransformSpec::Parametric(CountFamily::Negbin),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "np")]
    pub transform: TransformArg,
    /// Largest possible count; bounds the support.
    #[arg(long)]
    pub y_max: Option<u32>,
    /// Precision-weight column.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Number of EM starts.
    #[arg(long, default_value_t = 1)]
    pub starts: usize,
    #[arg(long)]
    pub seed: u64,
    /// Add profile-likelihood confidence intervals.
    #[arg(long)]
    pub ci: bool,
    #[arg(long, default_value_t = 0.90)]
    pub level: f64,
    /// Add single-coefficient likelihood-ratio p-values.
    #[arg(long)]
    pub pvalues: bool,
    /// Also write the coefficient table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of residual sets.
    #[arg(long, default_value_t = 10)]
    pub sets: usize,
    #[arg(long)]
    pub seed: u64,
    /// Residual CSV (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// QQ-plot CSV; defaults to `<out stem>_qq.csv` next to `--out`.
    #[arg(long)]
    pub qq: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct TestArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated columns to drop. A categorical variable's name drops
    /// all of its dummy columns.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub drop: Vec<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Bic,
}

#[derive(Debug, clap::Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "bic")]
    pub criterion: CriterionArg,
    /// Columns never dropped, in addition to the intercept.
    #[arg(long, value_delimiter = ',')]
    pub protect: Vec<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
    /// Write the selected model's JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    MixtureCdf,
    Negbin,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub generator: GeneratorArg,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.75)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.10)]
    pub alpha: f64,
    /// NegBin size.
    #[arg(long, default_value_t = 3.0)]
    pub r_star: f64,
    /// Latent standard deviation of the Mixture-CDF generator.
    #[arg(long, default_value_t = 0.7)]
    pub sigma_latent: f64,
    /// Comma-separated subset of star-np, star-bc, star-sqrt, poisson,
    /// gauss-log.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    /// Report CSV (printed after the table if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Output closed early (e.g. piped into `head`).
fn is_broken_pipe(e: &StarError) -> bool {
    let io = match e {
        StarError::Io(io) => Some(io),
        StarError::Csv(c) => match c.kind() {
            csv::ErrorKind::Io(io) => Some(io),
            _ => None,
        },
        _ => None,
    };
    io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

pub fn exit_code(e: &StarError) -> i32 {
    match e {
        StarError::VarianceCollapse { .. } => 2,
        _ => 1,
    }
}

/// Run a parsed command, writing the report to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Diagnose(a) => cmd_diagnose(&a, stdout),
        Command::Test(a) => cmd_test(&a, stdout),
        Command::Select(a) => cmd_select(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
    }
}

fn sink<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            StarError::Usage(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(stdout),
    })
}

fn converged_code(fit: &FitResult, out: &mut dyn Write) -> Result<i32> {
    if fit.converged {
        Ok(0)
    } else {
        writeln!(
            out,
            "WARNING: EM did not converge in {} iterations; results are provisional",
            fit.n_iter
        )?;
        eprintln!("warning: EM did not converge");
        Ok(2)
    }
}

fn cmd_fit(a: &FitArgs, stdout: &mut dyn Write) -> Result<i32> {
    let data = read_csv(&a.data, &a.response, a.weights.as_deref(), a.y_max)?;
    let scheme = data.scheme()?;
    let config = EmConfig::new(a.seed)
        .with_tol(a.tol)
        .with_max_iter(a.max_iter)
        .with_starts(a.starts);
    let (x, y) = (&data.design, &data.response);
    let fit = fit_star(x, y, &a.transform.spec(), &scheme, data.weights.as_deref(), &config)?;
    let doc = ModelDocument::from_fit(&fit, &data.column_names, a.seed, &a.response, a.weights.as_deref())?;
    doc.save(&a.out)?;

    let p = fit.model.n_coef();
    let cis = if a.ci {
        let se = standard_errors(&fit, x, y)?;
        (0..p)
            .map(|k| confidence_interval_with_se(&fit, x, y, k, a.level, se[k], &config).map(Some))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; p]
    };
    let pvals = if a.pvalues {
        marginal_p_values(&fit, x, y, &config)?.into_iter().map(Some).collect()
    } else {
        vec![None; p]
    };

    let mut header = vec!["name".to_string(), "estimate".to_string()];
    if a.ci {
        header.push(format!("ci{}_lower", pct(a.level)));
        header.push(format!("ci{}_upper", pct(a.level)));
    }
    if a.pvalues {
        header.push("p_value".into());
    }
    let rows: Vec<Vec<String>> = (0..p)
        .map(|k| {
            let mut row = vec![data.column_names[k].clone(), format_float(fit.model.theta[k])];
            if let Some(ci) = &cis[k] {
                row.push(format_float(ci.lower));
                row.push(format_float(ci.upper));
            }
            if let Some(pv) = pvals[k] {
                row.push(format_float(pv));
            }
            row
        })
        .collect();

    let mut report = String::new();
    let _ = writeln!(report, "transform: {}", fit.model.transform.kind().label());
    let _ = writeln!(
        report,
        "n = {}, loglik = {:.4}, aic = {:.4}, bic = {:.4}, sigma = {:.6}, iterations = {}",
        fit.n_obs, fit.loglik, fit.aic, fit.bic, fit.model.sigma, fit.n_iter
    );
    let _ = writeln!(report, "{}", format_table(&header, &rows));
    stdout.write_all(report.as_bytes())?;
    if let Some(path) = &a.table {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    converged_code(&fit, stdout)
}

fn pct(level: f64) -> String {
    let v = level * 100.0;
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        v.to_string()
    }
}

fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header);
    for r in rows {
        out.push('\n');
        out.push_str(&line(r));
    }
    out
}

/// A saved model together with a data file aligned to its columns.
struct Loaded {
    doc: ModelDocument,
    model: StarModel,
    x: DMatrix<f64>,
    table: Table,
}

impl Loaded {
    fn new(model_path: &Path, data_path: &Path) -> Result<Self> {
        let doc = ModelDocument::load(model_path)?;
        let table = Table::read(data_path)?;
        let mut exclude = vec![doc.fit.response.as_str()];
        exclude.extend(doc.fit.weights.as_deref());
        let x = table.aligned_design(&doc.names(), &exclude)?;
        let model = doc.model()?;
        Ok(Self { doc, model, x, table })
    }

    /// Responses and, when the model was fit with weights, the weighted model.
    fn with_response(mut self) -> Result<(Self, Vec<u32>)> {
        let y = self.table.response(&self.doc.fit.response, &self.model.scheme)?;
        if let Some(w) = &self.doc.fit.weights {
            self.model.weights = Some(self.table.weights(w)?);
        }
        Ok((self, y))
    }

    /// Refit on this data with the saved transformation held fixed, starting
    /// from the saved estimates.
    fn refit(&self, y: &[u32], config: &EmConfig) -> Result<FitResult> {
        let m = &self.model;
        let options = FitOptions {
            offset: None,
            start: Some((m.theta.clone(), m.sigma)),
        };
        fit_em_with(&self.x, y, &m.transform, &m.scheme, m.weights.as_deref(), config, &options)
    }
}

fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write) -> Result<i32> {
    let l = Loaded::new(&a.model, &a.data)?;
    let mut w = csv::Writer::from_writer(sink(a.out.as_deref(), stdout)?);
    w.write_record(["row", "expected", "q05", "q50", "q95"])?;
    for i in 0..l.x.nrows() {
        let mu = l.model.mean_row(&l.x, i);
        let s = l.model.sigma;
        let (expected, _) = l.model.expected_count_at(mu, s);
        let q = |p: f64| l.model.latent_quantile_at(mu, s, p).map(|v| v.to_string());
        w.write_record([(i + 1).to_string(), format_float(expected), q(0.05)?, q(0.5)?, q(0.95)?])?;
    }
    w.flush()?;
    Ok(0)
}

fn cmd_diagnose(a: &DiagnoseArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (l, y) = Loaded::new(&a.model, &a.data)?.with_response()?;
    let r = dunn_smyth_residuals(&l.model, &l.x, &y, a.sets, a.seed)?;
    let tests = (0..a.sets)
        .map(|k| ks_normality(r.column(k).as_slice()))
        .collect::<Result<Vec<_>>>()?;

    let qq_path = a.qq.clone().or_else(|| {
        a.out.as_ref().map(|o| {
            let stem = o.file_stem().map_or("residuals".into(), |s| s.to_string_lossy().into_owned());
            o.with_file_name(format!("{stem}_qq.csv"))
        })
    });
    if let Some(path) = &qq_path {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["set", "theoretical", "sample"])?;
        for k in 0..a.sets {
            for (t, s) in qq_points(r.column(k).as_slice()) {
                w.write_record([(k + 1).to_string(), format_float(t), format_float(s)])?;
            }
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_writer(sink(a.out.as_deref(), stdout)?);
    let mut header = vec!["row".to_string()];
    header.extend((1..=a.sets).map(|k| format!("r{k}")));
    w.write_record(&header)?;
    for i in 0..r.nrows() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(r.row(i).iter().map(|&v| format_float(v)));
        w.write_record(&rec)?;
    }
    let mut stat = vec!["ks_statistic".to_string()];
    stat.extend(tests.iter().map(|t| format_float(t.statistic)));
    w.write_record(&stat)?;
    let mut pv = vec!["ks_p_value".to_string()];
    pv.extend(tests.iter().map(|t| format_float(t.p_value)));
    w.write_record(&pv)?;
    w.flush()?;
    Ok(0)
}

/// Column indices named by `names`; a name also matches every dummy column
/// `name=level`.
fn resolve_columns(all: &[String], names: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for name in names.iter().filter(|n| !n.is_empty()) {
        let prefix = format!("{name}=");
        let hits: Vec<usize> = (0..all.len())
            .filter(|&k| all[k] == *name || all[k].starts_with(&prefix))
            .collect();
        if hits.is_empty() {
            return Err(StarError::Usage(format!("unknown column {name:?}")));
        }
        out.extend(hits);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn cmd_test(a: &TestArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (l, y) = Loaded::new(&a.model, &a.data)?.with_response()?;
    let names = l.doc.names();
    let dropped = resolve_columns(&names, &a.drop)?;
    let keep: Vec<usize> = (0..names.len()).filter(|k| !dropped.contains(k)).collect();
    let config = EmConfig::new(a.seed).with_tol(a.tol);
    let full = l.refit(&y, &config)?;
    let result = lrt(&full, &l.x, &y, &keep, &config)?;
    let mut w = csv::Writer::from_writer(stdout);
    w.write_record(["dropped", "statistic", "df", "p_value", "full_loglik", "restricted_loglik"])?;
    w.write_record([
        dropped.iter().map(|&k| names[k].as_str()).collect::<Vec<_>>().join(";"),
        format_float(result.stat),
        result.df.to_string(),
        format_float(result.p_value),
        format_float(result.full_loglik),
        format_float(result.restricted_loglik),
    ])?;
    w.flush()?;
    Ok(0)
}

fn cmd_select(a: &SelectArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (l, y) = Loaded::new(&a.model, &a.data)?.with_response()?;
    let names = l.doc.names();
    let mut protected = resolve_columns(&names, &a.protect)?;
    protected.extend(names.iter().position(|n| n == INTERCEPT));
    let criterion = match a.criterion {
        CriterionArg::Aic => Criterion::Aic,
        CriterionArg::Bic => Criterion::Bic,
    };
    let config = EmConfig::new(a.seed).with_tol(a.tol);
    let full = l.refit(&y, &config)?;
    let sel = backward_elimination(&full, &l.x, &y, criterion, &protected, &config)?;
    let mut w = csv::Writer::from_writer(&mut *stdout);
    w.write_record(["step", "dropped", "criterion", "columns"])?;
    for (s, step) in sel.trace.iter().enumerate() {
        w.write_record([
            s.to_string(),
            step.dropped.map_or(String::new(), |k| names[k].clone()),
            format_float(step.criterion),
            step.columns.iter().map(|&k| names[k].as_str()).collect::<Vec<_>>().join(";"),
        ])?;
    }
    w.flush()?;
    drop(w);
    if let Some(path) = &a.out {
        let kept: Vec<String> = sel.columns.iter().map(|&k| names[k].clone()).collect();
        let doc = ModelDocument::from_fit(
            &sel.fit,
            &kept,
            a.seed,
            &l.doc.fit.response,
            l.doc.fit.weights.as_deref(),
        )?;
        doc.save(path)?;
    }
    converged_code(&sel.fit, stdout)
}

fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let generator = match a.generator {
        GeneratorArg::MixtureCdf => Generator::MixtureCdf,
        GeneratorArg::Negbin => Generator::Negbin,
    };
    let mut spec = SimulationSpec::new(generator, a.seed).with_p(a.p)?;
    spec.n = a.n;
    spec.n_reps = a.reps;
    spec.n_test = a.n_test;
    spec.rho = a.rho;
    spec.alpha = a.alpha;
    spec.r_star = a.r_star;
    spec.sigma_latent = a.sigma_latent;
    if !a.methods.is_empty() {
        spec.methods = a
            .methods
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| StarError::Usage(format!("unknown method {m:?}"))))
            .collect::<Result<_>>()?;
    }
    let report = run_simulation(&spec)?;
    stdout.write_all(report.table().as_bytes())?;
    match &a.out {
        Some(path) => report.write_csv(BufWriter::new(File::create(path)?))?,
        None => {
            writeln!(stdout)?;
            report.write_csv(&mut *stdout)?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let r = Cli::try_parse_from(["star", "fit", "--data", "d.csv", "--response", "y", "--out", "m.json"]);
        assert!(r.is_err());
        assert_eq!(main_with_args(["star", "simulate", "--generator", "negbin"]), 1);
    }

    #[test]
    fn drop_names_expand_to_dummies() {
        let all: Vec<String> = ["(Intercept)", "x", "g=B", "g=C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(resolve_columns(&all, &["g".into()]).unwrap(), [2, 3]);
        assert_eq!(resolve_columns(&all, &["g=C".into(), "x".into()]).unwrap(), [1, 3]);
        assert!(resolve_columns(&all, &[]).unwrap().is_empty());
        assert!(resolve_columns(&all, &["z".into()]).is_err());
    }
}
