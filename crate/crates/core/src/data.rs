//! Dataset ingestion and covariate encoding.
//!
//! Input files carry the columns `time,status,trt` followed by the covariates
//! declared in a [`CovariateSchema`]. Categorical covariates are expanded to
//! one-of-K indicator columns so every tree rule has the form `u_k <= c`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of one declared covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Declared covariate layout, usually read from a TOML sidecar:
///
/// ```toml
/// delimiter = ","
/// [[columns]]
/// name = "age"
/// kind = "continuous"
/// [[columns]]
/// name = "site"
/// kind = "categorical"
/// levels = ["a", "b", "c"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub columns: Vec<ColumnSpec>,
}

fn default_delimiter() -> char {
    ','
}

impl CovariateSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = CovariateSchema {
            delimiter: ',',
            columns,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// All-continuous schema with the given column names.
    pub fn continuous(names: &[String]) -> Self {
        CovariateSchema {
            delimiter: ',',
            columns: names
                .iter()
                .map(|n| ColumnSpec {
                    name: n.clone(),
                    kind: ColumnKind::Continuous,
                })
                .collect(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: CovariateSchema =
            toml::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::InputNotFound(path.to_path_buf()));
        }
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for c in &self.columns {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            if let ColumnKind::Categorical { levels } = &c.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("column `{}` has no levels", c.name)));
                }
                let mut lv: Vec<&String> = levels.iter().collect();
                lv.sort();
                lv.dedup();
                if lv.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "column `{}` has repeated levels",
                        c.name
                    )));
                }
                if levels.iter().any(|l| l.is_empty()) {
                    return Err(Error::Schema(format!(
                        "column `{}` has an empty level",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of encoded columns.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::Categorical { levels } => levels.len(),
                _ => 1,
            })
            .sum()
    }

    /// Names of the encoded columns (`col=level` for indicators).
    pub fn encoded_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Categorical { levels } => {
                    out.extend(levels.iter().map(|l| format!("{}={}", c.name, l)))
                }
                _ => out.push(c.name.clone()),
            }
        }
        out
    }

    /// Whether each encoded column only takes values in {0, 1}.
    pub fn encoded_indicator(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Continuous => out.push(false),
                ColumnKind::Binary => out.push(true),
                ColumnKind::Categorical { levels } => out.extend(levels.iter().map(|_| true)),
            }
        }
        out
    }
}

/// One raw observation before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub y: f64,
    pub delta: bool,
    pub a: bool,
    pub x: Vec<f64>,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Encoded survival data ready for model fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub y: Vec<f64>,
    pub delta: Vec<bool>,
    pub arm: Vec<bool>,
    pub x: Matrix,
    pub schema: CovariateSchema,
}

impl EncodedDataset {
    pub fn new(
        y: Vec<f64>,
        delta: Vec<bool>,
        arm: Vec<bool>,
        x: Matrix,
        schema: CovariateSchema,
    ) -> Result<Self> {
        let n = y.len();
        if delta.len() != n || arm.len() != n || x.nrows() != n {
            return Err(Error::LengthMismatch(format!(
                "y has {n} rows, delta {}, arm {}, covariates {}",
                delta.len(),
                arm.len(),
                x.nrows()
            )));
        }
        if x.ncols() != schema.encoded_width() {
            return Err(Error::Schema(format!(
                "design has {} columns but schema encodes {}",
                x.ncols(),
                schema.encoded_width()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("at least 2 rows are required".into()));
        }
        for (i, &yi) in y.iter().enumerate() {
            if !(yi > 0.0) || !yi.is_finite() {
                return Err(Error::Load {
                    row: i + 1,
                    column: "time".into(),
                    reason: "nonpositive time".into(),
                });
            }
        }
        Ok(EncodedDataset {
            y,
            delta,
            arm,
            x,
            schema,
        })
    }

    /// Dataset with all-continuous covariates named `x1..xp`.
    pub fn from_continuous(
        y: Vec<f64>,
        delta: Vec<bool>,
        arm: Vec<bool>,
        x: Matrix,
    ) -> Result<Self> {
        let names: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let schema = CovariateSchema::continuous(&names);
        Self::new(y, delta, arm, x, schema)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_enc(&self) -> usize {
        self.x.ncols()
    }

    pub fn log_y(&self) -> Vec<f64> {
        self.y.iter().map(|v| v.ln()).collect()
    }

    pub fn n_events(&self) -> usize {
        self.delta.iter().filter(|d| **d).count()
    }

    /// Tree predictor matrix: column 0 is the treatment arm, the rest are
    /// the encoded covariates.
    pub fn predictors(&self) -> Matrix {
        predictor_matrix(&self.arm, &self.x)
    }

    /// Subset of rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut x = Matrix::zeros(rows.len(), self.p_enc());
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.x.row(i));
        }
        Self::new(
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.delta[i]).collect(),
            rows.iter().map(|&i| self.arm[i]).collect(),
            x,
            self.schema.clone(),
        )
    }

    /// Write as delimiter-separated text in the input layout. Indicator
    /// groups are collapsed back to level names.
    pub fn to_csv_string(&self) -> String {
        let d = self.schema.delimiter;
        let mut out = String::new();
        out.push_str(&format!("time{d}status{d}trt"));
        for c in &self.schema.columns {
            out.push(d);
            out.push_str(&c.name);
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&format!(
                "{}{d}{}{d}{}",
                self.y[i], self.delta[i] as u8, self.arm[i] as u8
            ));
            let row = self.x.row(i);
            let mut j = 0;
            for c in &self.schema.columns {
                out.push(d);
                match &c.kind {
                    ColumnKind::Categorical { levels } => {
                        let k = (0..levels.len()).find(|&k| row[j + k] == 1.0).unwrap_or(0);
                        out.push_str(&levels[k]);
                        j += levels.len();
                    }
                    ColumnKind::Binary => {
                        out.push_str(&format!("{}", row[j] as u8));
                        j += 1;
                    }
                    ColumnKind::Continuous => {
                        out.push_str(&format!("{}", row[j]));
                        j += 1;
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Prepend the arm column to a covariate matrix.
pub fn predictor_matrix(arm: &[bool], x: &Matrix) -> Matrix {
    let n = x.nrows();
    let p = x.ncols() + 1;
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n {
        data.push(if arm[i] { 1.0 } else { 0.0 });
        data.extend_from_slice(x.row(i));
    }
    Matrix::new(n, p, data)
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<bool> {
    match field.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(Error::Load {
            row,
            column: column.into(),
            reason: format!("expected 0 or 1, found `{other}`"),
        }),
    }
}

/// Parse delimiter-separated text with a header row matching the schema.
pub fn parse_dataset(text: &str, schema: &CovariateSchema) -> Result<EncodedDataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut expected = vec!["time".to_string(), "status".into(), "trt".into()];
    expected.extend(schema.columns.iter().map(|c| c.name.clone()));
    if header != expected {
        return Err(Error::Schema(format!(
            "header {:?} does not match expected {:?}",
            header, expected
        )));
    }

    let width = schema.encoded_width();
    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut arm = Vec::new();
    let mut data = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Load {
            row,
            column: "*".into(),
            reason: e.to_string(),
        })?;
        if record.len() != expected.len() {
            return Err(Error::Load {
                row,
                column: "*".into(),
                reason: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        for (field, name) in record.iter().zip(&expected) {
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                return Err(Error::Load {
                    row,
                    column: name.clone(),
                    reason: "missing value".into(),
                });
            }
        }
        let t: f64 = record[0].parse().map_err(|_| Error::Load {
            row,
            column: "time".into(),
            reason: format!("not a number: `{}`", &record[0]),
        })?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Load {
                row,
                column: "time".into(),
                reason: "nonpositive time".into(),
            });
        }
        y.push(t);
        delta.push(parse_binary(&record[1], row, "status")?);
        arm.push(parse_binary(&record[2], row, "trt")?);

        for (c, field) in schema.columns.iter().zip(record.iter().skip(3)) {
            match &c.kind {
                ColumnKind::Continuous => {
                    let v: f64 = field.parse().map_err(|_| Error::Load {
                        row,
                        column: c.name.clone(),
                        reason: format!("not a number: `{field}`"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Load {
                            row,
                            column: c.name.clone(),
                            reason: "non-finite value".into(),
                        });
                    }
                    data.push(v);
                }
                ColumnKind::Binary => {
                    data.push(if parse_binary(field, row, &c.name)? { 1.0 } else { 0.0 })
                }
                ColumnKind::Categorical { levels } => {
                    let k = levels.iter().position(|l| l == field).ok_or_else(|| {
                        Error::Load {
                            row,
                            column: c.name.clone(),
                            reason: format!("unknown categorical level `{field}`"),
                        }
                    })?;
                    data.extend((0..levels.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    let n = y.len();
    EncodedDataset::new(y, delta, arm, Matrix::new(n, width, data), schema.clone())
}

/// Read and encode a dataset from disk.
pub fn load_dataset(path: &Path, schema: &CovariateSchema) -> Result<EncodedDataset> {
    if !path.exists() {
        return Err(Error::InputNotFound(path.to_path_buf()));
    }
    parse_dataset(&fs::read_to_string(path)?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat_schema() -> CovariateSchema {
        CovariateSchema::new(vec![ColumnSpec {
            name: "g".into(),
            kind: ColumnKind::Categorical {
                levels: vec!["a".into(), "b".into(), "c".into()],
            },
        }])
        .unwrap()
    }

    #[test]
    fn identity_encoding_for_continuous() {
        let schema = CovariateSchema::continuous(&["age".into()]);
        let text = "time,status,trt,age\n1.5,1,0,40\n2.0,0,1,50\n3.0,1,1,61.5\n";
        let d = parse_dataset(text, &schema).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p_enc(), 1);
        assert_eq!(d.x.column(0), vec![40.0, 50.0, 61.5]);
        assert_eq!(d.delta, vec![true, false, true]);
        assert_eq!(d.arm, vec![false, true, true]);
    }

    #[test]
    fn categorical_is_one_of_k() {
        let text = "time,status,trt,g\n1,1,0,b\n2,1,1,a\n";
        let d = parse_dataset(text, &cat_schema()).unwrap();
        assert_eq!(d.x.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(d.x.row(1), &[1.0, 0.0, 0.0]);
        for i in 0..d.n() {
            assert_eq!(d.x.row(i).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(d.schema.encoded_names(), vec!["g=a", "g=b", "g=c"]);
    }

    #[test]
    fn rejects_bad_rows() {
        let schema = CovariateSchema::continuous(&["age".into()]);
        let err = parse_dataset("time,status,trt,age\n0,1,0,40\n1,1,0,3\n", &schema)
            .unwrap_err();
        assert!(err.to_string().contains("nonpositive time"), "{err}");

        let err = parse_dataset("time,status,trt,age\n1,1,0,\n1,1,0,3\n", &schema).unwrap_err();
        match err {
            Error::Load { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }

        let err = parse_dataset("time,status,trt,g\n1,1,0,z\n1,1,0,a\n", &cat_schema())
            .unwrap_err();
        assert!(err.to_string().contains("unknown categorical level"));

        let err = parse_dataset("time,status,trt,g\n1,2,0,a\n1,1,0,a\n", &cat_schema())
            .unwrap_err();
        assert!(err.to_string().contains("status"));
    }

    #[test]
    fn header_must_match() {
        let schema = CovariateSchema::continuous(&["age".into()]);
        assert!(parse_dataset("time,status,trt,weight\n1,1,0,3\n2,1,0,4\n", &schema).is_err());
    }

    #[test]
    fn schema_validation() {
        let s = "[[columns]]\nname = \"g\"\nkind = \"categorical\"\nlevels = [\"a\", \"a\"]\n";
        assert!(CovariateSchema::from_toml_str(s).is_err());
        let s = "delimiter = \";\"\n[[columns]]\nname = \"x\"\nkind = \"continuous\"\n\
                 [[columns]]\nname = \"b\"\nkind = \"binary\"\n\
                 [[columns]]\nname = \"g\"\nkind = \"categorical\"\nlevels = [\"u\", \"v\"]\n";
        let schema = CovariateSchema::from_toml_str(s).unwrap();
        assert_eq!(schema.delimiter, ';');
        assert_eq!(schema.encoded_width(), 4);
        assert_eq!(schema.encoded_indicator(), vec![false, true, true, true]);
    }

    #[test]
    fn csv_round_trip() {
        let text = "time,status,trt,g\n1.25,1,0,b\n2,0,1,c\n";
        let d = parse_dataset(text, &cat_schema()).unwrap();
        let back = parse_dataset(&d.to_csv_string(), &cat_schema()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn predictor_matrix_prepends_arm() {
        let x = Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        let u = predictor_matrix(&[true, false], &x);
        assert_eq!(u.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(u.row(1), &[0.0, 4.0, 5.0]);
    }
}
