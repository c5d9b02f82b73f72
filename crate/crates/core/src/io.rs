//! CSV ingestion and the canonical dataset format.
//!
//! Every non-response, non-weight column becomes part of the design, in file
//! order, after a leading `(Intercept)` column. A column with any
//! non-numeric cell is categorical and is one-hot encoded against its
//! first-seen level: level `L` of column `c` becomes the 0/1 column `c=L`.
//! Reorder rows to choose a different baseline. Row numbers in errors count
//! data rows from 1 (the header is not counted).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, StarError};
use crate::rounding::RoundingScheme;

pub const INTERCEPT: &str = "(Intercept)";

/// Raw CSV cells under a header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest decimal that parses back to exactly `v`, switching to
/// scientific notation outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| StarError::Usage(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(StarError::Usage("CSV header row is missing".into()));
        }
        for (k, h) in headers.iter().enumerate() {
            if headers[..k].contains(h) {
                return Err(StarError::Usage(format!("duplicate column name {h:?}")));
            }
        }
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StarError::Usage(format!("unknown column {name:?}")))
    }

    fn cell(&self, row: usize, col: usize) -> Result<&str> {
        let cell = self.rows[row][col].as_str();
        if is_missing(cell) {
            return Err(StarError::Data {
                row: row + 1,
                message: format!("missing value in column {:?}", self.headers[col]),
            });
        }
        Ok(cell)
    }

    fn numeric_column(&self, col: usize) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for i in 0..self.rows.len() {
            match parse_number(self.cell(i, col)?) {
                Some(v) => out.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    /// Counts in column `name`, checked against `scheme`.
    pub fn response(&self, name: &str, scheme: &RoundingScheme) -> Result<Vec<u32>> {
        let col = self.column_index(name)?;
        (0..self.rows.len())
            .map(|i| {
                let cell = self.cell(i, col)?;
                let v = parse_number(cell)
                    .filter(|v| v.fract() == 0.0 && v.abs() < 1e15)
                    .ok_or_else(|| StarError::Data {
                        row: i + 1,
                        message: format!("response {cell:?} is not a non-negative integer"),
                    })?;
                scheme.check_response(i + 1, v as i64)
            })
            .collect()
    }

    pub fn weights(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column_index(name)?;
        (0..self.rows.len())
            .map(|i| {
                let cell = self.cell(i, col)?;
                parse_number(cell).filter(|&v| v > 0.0).ok_or_else(|| StarError::Data {
                    row: i + 1,
                    message: format!("weight {cell:?} is not a positive number"),
                })
            })
            .collect()
    }

    /// Encode every column not in `exclude` into a design with a leading
    /// intercept.
    pub fn encode_design(&self, exclude: &[&str]) -> Result<(Vec<String>, DMatrix<f64>)> {
        let n = self.rows.len();
        let mut names = vec![INTERCEPT.to_string()];
        let mut columns = vec![vec![1.0; n]];
        for (col, header) in self.headers.iter().enumerate() {
            if exclude.contains(&header.as_str()) {
                continue;
            }
            if let Some(values) = self.numeric_column(col)? {
                names.push(header.clone());
                columns.push(values);
                continue;
            }
            let mut levels: Vec<&str> = Vec::new();
            for i in 0..n {
                let cell = self.cell(i, col)?;
                if !levels.contains(&cell) {
                    levels.push(cell);
                }
            }
            for level in levels.iter().skip(1) {
                names.push(format!("{header}={level}"));
                columns.push(
                    (0..n)
                        .map(|i| f64::from(u8::from(self.rows[i][col] == *level)))
                        .collect(),
                );
            }
        }
        for (k, name) in names.iter().enumerate() {
            if names[..k].contains(name) {
                return Err(StarError::Usage(format!("design column name {name:?} is not unique")));
            }
        }
        let design = DMatrix::from_fn(n, names.len(), |i, k| columns[k][i]);
        Ok((names, design))
    }

    /// Rebuild the design columns `names` (as produced by
    /// [`Table::encode_design`]) from this table, ignoring `exclude`.
    /// Categorical levels are matched by name, so a new file need not list
    /// them in the same order.
    pub fn aligned_design(&self, names: &[String], exclude: &[&str]) -> Result<DMatrix<f64>> {
        let n = self.rows.len();
        let mut used = vec![false; self.headers.len()];
        let mut missing = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for name in names {
            if name == INTERCEPT {
                columns.push(vec![1.0; n]);
                continue;
            }
            if let Some(col) = self.headers.iter().position(|h| h == name) {
                if let Some(values) = self.numeric_column(col)? {
                    used[col] = true;
                    columns.push(values);
                    continue;
                }
            }
            let dummy = self.headers.iter().enumerate().find_map(|(col, h)| {
                name.strip_prefix(h.as_str())
                    .and_then(|rest| rest.strip_prefix('='))
                    .map(|level| (col, level))
            });
            match dummy {
                Some((col, level)) => {
                    used[col] = true;
                    let mut values = Vec::with_capacity(n);
                    for i in 0..n {
                        values.push(f64::from(u8::from(self.cell(i, col)? == level)));
                    }
                    columns.push(values);
                }
                None => {
                    missing.push(name.clone());
                    columns.push(Vec::new());
                }
            }
        }
        let extra: Vec<String> = self
            .headers
            .iter()
            .zip(&used)
            .filter(|(h, &u)| !u && !exclude.contains(&h.as_str()))
            .map(|(h, _)| h.clone())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(StarError::ColumnMismatch { missing, extra });
        }
        Ok(DMatrix::from_fn(n, names.len(), |i, k| columns[k][i]))
    }
}

/// A regression dataset: counts, a named design and optional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub response_name: String,
    pub response: Vec<u32>,
    /// Design column names, starting with [`INTERCEPT`].
    pub column_names: Vec<String>,
    pub design: DMatrix<f64>,
    pub weight_name: Option<String>,
    pub weights: Option<Vec<f64>>,
    /// Largest allowed count: the `--y-max` value, or the response maximum.
    pub y_max: u32,
    /// Whether `y_max` was supplied (and so bounds the support).
    pub bounded: bool,
}

impl Dataset {
    pub fn from_table(
        table: &Table,
        response_name: &str,
        weight_name: Option<&str>,
        y_max: Option<u32>,
    ) -> Result<Self> {
        let scheme = match y_max {
            Some(m) => RoundingScheme::bounded(m)?,
            None => RoundingScheme::unbounded(),
        };
        let response = table.response(response_name, &scheme)?;
        if response.is_empty() {
            return Err(StarError::EmptySample);
        }
        let weights = weight_name.map(|w| table.weights(w)).transpose()?;
        let mut exclude = vec![response_name];
        exclude.extend(weight_name);
        let (column_names, design) = table.encode_design(&exclude)?;
        Ok(Self {
            response_name: response_name.to_string(),
            y_max: y_max.unwrap_or_else(|| response.iter().copied().max().unwrap_or(0)),
            bounded: y_max.is_some(),
            response,
            column_names,
            design,
            weight_name: weight_name.map(str::to_string),
            weights,
        })
    }

    pub fn scheme(&self) -> Result<RoundingScheme> {
        if self.bounded {
            RoundingScheme::bounded(self.y_max)
        } else {
            Ok(RoundingScheme::unbounded())
        }
    }

    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    /// Write the canonical form: response, the encoded design columns
    /// (without the intercept) and the weights. Reading it back reproduces
    /// the same dataset.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.column_names.iter().filter(|c| *c != INTERCEPT).cloned());
        header.extend(self.weight_name.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_obs() {
            let mut record = vec![self.response[i].to_string()];
            for (k, name) in self.column_names.iter().enumerate() {
                if name != INTERCEPT {
                    record.push(format_float(self.design[(i, k)]));
                }
            }
            if let Some(wt) = &self.weights {
                record.push(format_float(wt[i]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a dataset from a CSV file.
pub fn read_csv(
    path: impl AsRef<Path>,
    response_name: &str,
    weight_name: Option<&str>,
    y_max: Option<u32>,
) -> Result<Dataset> {
    Dataset::from_table(&Table::read(path)?, response_name, weight_name, y_max)
}
