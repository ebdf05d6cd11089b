//! The eligible population and its delimited-text ingestion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::propensity::Propensity;

/// Which file columns supply which fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    /// Sampling stratification variables.
    pub psi1: Vec<String>,
    /// Assignment stratification variables; empty means "same as psi1".
    pub psi2: Vec<String>,
    pub cost: Option<String>,
    pub y: Option<String>,
    pub y0: Option<String>,
    pub y1: Option<String>,
    pub id: Option<String>,
}

impl ColumnSchema {
    pub fn with_psi(cols: &[&str]) -> Self {
        ColumnSchema {
            psi1: cols.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }
}

/// A header plus string records, before any typing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 0,
                column: String::new(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut index = HashMap::new();
        for (j, h) in headers.iter().enumerate() {
            if index.insert(h.clone(), j).is_some() {
                return Err(Error::Parse {
                    row: 0,
                    column: h.clone(),
                    message: "duplicate column name".into(),
                });
            }
        }
        let mut records = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: r + 1,
                column: String::new(),
                message: format!("malformed row: {e}"),
            })?;
            records.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable {
            headers,
            records,
            index,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn col_index(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "column not found".into(),
        })
    }

    /// The raw strings of a column.
    pub fn strings(&self, name: &str) -> Result<Vec<String>> {
        let j = self.col_index(name)?;
        Ok(self.records.iter().map(|r| r[j].clone()).collect())
    }

    /// A column of finite numbers.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.parse_col(name, |s| {
            let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{s}` is not finite"))
            }
        })
    }

    /// A numeric column where empty cells become NaN.
    pub fn numeric_or_missing(&self, name: &str) -> Result<Vec<f64>> {
        self.parse_col(name, |s| {
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{s}` is not finite"))
            }
        })
    }

    /// A 0/1 column.
    pub fn binary(&self, name: &str) -> Result<Vec<u8>> {
        self.parse_col(name, |s| match s {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(format!("`{s}` is not 0 or 1")),
        })
    }

    /// A column of `a/k` propensities.
    pub fn propensities(&self, name: &str) -> Result<Vec<Propensity>> {
        self.parse_col(name, |s| {
            s.parse::<Propensity>()
                .map_err(|_| format!("`{s}` is not a propensity a/k"))
        })
    }

    pub fn integers(&self, name: &str) -> Result<Vec<usize>> {
        self.parse_col(name, |s| {
            s.parse::<usize>()
                .map_err(|_| format!("`{s}` is not a nonnegative integer"))
        })
    }

    fn parse_col<T>(
        &self,
        name: &str,
        f: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Vec<T>> {
        let j = self.col_index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                f(&rec[j]).map_err(|message| Error::Parse {
                    row: r + 1,
                    column: name.to_string(),
                    message,
                })
            })
            .collect()
    }

    fn matrix(&self, cols: &[String]) -> Result<Matrix> {
        let n = self.len();
        let mut m = Matrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in self.numeric(c)?.into_iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }
}

/// The eligible population. Unit identity is the row index.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitTable {
    pub psi1: Matrix,
    pub psi2: Matrix,
    pub psi1_names: Vec<String>,
    pub psi2_names: Vec<String>,
    pub cost: Option<Vec<f64>>,
    /// Observed outcomes; NaN where not observed.
    pub y_obs: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    /// External identifiers carried as opaque metadata.
    pub ids: Option<Vec<String>>,
}

fn default_names(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

impl UnitTable {
    /// A table whose assignment variables alias its sampling variables.
    pub fn from_psi(psi: Matrix) -> Result<Self> {
        let names = default_names("x", psi.cols());
        let t = UnitTable {
            psi2: psi.clone(),
            psi2_names: names.clone(),
            psi1: psi,
            psi1_names: names,
            cost: None,
            y_obs: None,
            y0: None,
            y1: None,
            ids: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.psi1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 2 {
            return Err(invalid(format!("need at least 2 units, got {n}")));
        }
        if self.psi2.rows() != n {
            return Err(invalid("psi1 and psi2 row counts differ"));
        }
        for (m, names) in [(&self.psi1, &self.psi1_names), (&self.psi2, &self.psi2_names)] {
            if names.len() != m.cols() {
                return Err(invalid("column names do not match matrix width"));
            }
            for i in 0..n {
                for (j, v) in m.row(i).iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: names[j].clone(),
                            message: "covariate is not finite".into(),
                        });
                    }
                }
            }
        }
        let check_len = |v: &Option<Vec<f64>>, what: &str| -> Result<()> {
            match v {
                Some(v) if v.len() != n => Err(invalid(format!("{what} has length {}, expected {n}", v.len()))),
                _ => Ok(()),
            }
        };
        check_len(&self.cost, "cost")?;
        check_len(&self.y_obs, "y")?;
        check_len(&self.y0, "y0")?;
        check_len(&self.y1, "y1")?;
        if let Some(c) = &self.cost {
            for (i, v) in c.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: "cost".into(),
                        message: format!("cost must be positive, got {v}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn from_raw(raw: &RawTable, schema: &ColumnSchema) -> Result<Self> {
        if schema.psi1.is_empty() {
            return Err(invalid("no stratification columns given"));
        }
        let psi2_names = if schema.psi2.is_empty() {
            schema.psi1.clone()
        } else {
            schema.psi2.clone()
        };
        let psi1 = raw.matrix(&schema.psi1)?;
        let psi2 = raw.matrix(&psi2_names)?;
        fn opt<'s>(raw: &RawTable, name: &'s Option<String>) -> Option<&'s String> {
            name.as_ref().filter(|c| raw.has(c))
        }
        let cost = match opt(raw, &schema.cost) {
            Some(c) => {
                let v = raw.numeric(c)?;
                for (i, x) in v.iter().enumerate() {
                    if *x <= 0.0 {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: c.clone(),
                            message: format!("cost must be positive, got {x}"),
                        });
                    }
                }
                Some(v)
            }
            None => None,
        };
        let y_obs = opt(raw, &schema.y).map(|c| raw.numeric_or_missing(c)).transpose()?;
        let y0 = opt(raw, &schema.y0).map(|c| raw.numeric(c)).transpose()?;
        let y1 = opt(raw, &schema.y1).map(|c| raw.numeric(c)).transpose()?;
        let ids = opt(raw, &schema.id).map(|c| raw.strings(c)).transpose()?;
        let t = UnitTable {
            psi1,
            psi2,
            psi1_names: schema.psi1.clone(),
            psi2_names,
            cost,
            y_obs,
            y0,
            y1,
            ids,
        };
        t.validate()?;
        Ok(t)
    }

    /// Writes every field back out as a header-row CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let extra2: Vec<usize> = (0..self.psi2.cols())
            .filter(|&j| !self.psi1_names.contains(&self.psi2_names[j]))
            .collect();
        let mut header: Vec<String> = self.psi1_names.clone();
        header.extend(extra2.iter().map(|&j| self.psi2_names[j].clone()));
        let opts: [(&str, Option<&Vec<f64>>); 4] = [
            ("cost", self.cost.as_ref()),
            ("y", self.y_obs.as_ref()),
            ("y0", self.y0.as_ref()),
            ("y1", self.y1.as_ref()),
        ];
        for (name, v) in &opts {
            if v.is_some() {
                header.push(name.to_string());
            }
        }
        if self.ids.is_some() {
            header.push("id".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.psi1.row(i).iter().map(|v| v.to_string()).collect();
            rec.extend(extra2.iter().map(|&j| self.psi2.get(i, j).to_string()));
            for (_, v) in &opts {
                if let Some(v) = v {
                    rec.push(if v[i].is_nan() { String::new() } else { v[i].to_string() });
                }
            }
            if let Some(ids) = &self.ids {
                rec.push(ids[i].clone());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// The schema matching [`UnitTable::write_csv`] output.
    pub fn written_schema(&self) -> ColumnSchema {
        ColumnSchema {
            psi1: self.psi1_names.clone(),
            psi2: self.psi2_names.clone(),
            cost: self.cost.as_ref().map(|_| "cost".into()),
            y: self.y_obs.as_ref().map(|_| "y".into()),
            y0: self.y0.as_ref().map(|_| "y0".into()),
            y1: self.y1.as_ref().map(|_| "y1".into()),
            id: self.ids.as_ref().map(|_| "id".into()),
        }
    }
}

/// Reads a comma-separated file with a header row.
pub fn load_units(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<UnitTable> {
    UnitTable::from_raw(&RawTable::from_path(path)?, schema)
}

/// Reads the same format from any reader.
pub fn read_units<R: Read>(reader: R, schema: &ColumnSchema) -> Result<UnitTable> {
    UnitTable::from_raw(&RawTable::from_reader(reader)?, schema)
}

fn standardize_matrix(m: &Matrix, names: &[String]) -> Result<Matrix> {
    let n = m.rows();
    if n < 2 {
        return Err(invalid("standardization needs at least 2 units"));
    }
    let mut out = m.clone();
    for j in 0..m.cols() {
        let col = m.col_values(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let scale = mean.abs().max(1.0);
        if !(var > 1e-24 * scale * scale) {
            return Err(Error::ZeroVariance(names[j].clone()));
        }
        let sd = var.sqrt();
        for (i, v) in col.iter().enumerate() {
            out.set(i, j, (v - mean) / sd);
        }
    }
    Ok(out)
}

/// Centers every covariate column and scales it to unit sample variance
/// (denominator `n - 1`). Costs and outcomes are left alone.
pub fn standardize(table: &UnitTable) -> Result<UnitTable> {
    let mut t = table.clone();
    t.psi1 = standardize_matrix(&table.psi1, &table.psi1_names)?;
    t.psi2 = standardize_matrix(&table.psi2, &table.psi2_names)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema {
            cost: Some("cost".into()),
            ..ColumnSchema::with_psi(&["x1", "x2"])
        }
    }

    #[test]
    fn parses_small_file() {
        let data = "x1,x2,cost\n1,2,1.5\n3,4,2\n5,6,10\n";
        let t = read_units(data.as_bytes(), &schema()).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.psi1.cols(), 2);
        assert_eq!(t.cost.as_deref(), Some(&[1.5, 2.0, 10.0][..]));
        assert_eq!(t.psi2, t.psi1);
        assert!(t.y_obs.is_none());
    }

    #[test]
    fn zero_cost_names_row() {
        let data = "x1,x2,cost\n1,2,1\n3,4,0\n5,6,1\n";
        let err = read_units(data.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "cost");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_numeric_covariate_names_row_and_column() {
        let data = "x1,x2\n1,2\n3,abc\n";
        let err = read_units(data.as_bytes(), &ColumnSchema::with_psi(&["x1", "x2"])).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "x2"));
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("x2"), "{msg}");
    }

    #[test]
    fn ragged_row_fails() {
        let data = "x1,x2\n1,2\n3\n";
        assert!(matches!(
            read_units(data.as_bytes(), &ColumnSchema::with_psi(&["x1", "x2"])),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn absent_optional_columns() {
        let data = "x1\n1\n2\n";
        let s = ColumnSchema {
            y: Some("y".into()),
            ..ColumnSchema::with_psi(&["x1"])
        };
        let t = read_units(data.as_bytes(), &s).unwrap();
        assert!(t.y_obs.is_none());
    }

    #[test]
    fn standardize_by_hand() {
        let t = UnitTable::from_psi(Matrix::column(&[1.0, 2.0, 3.0])).unwrap();
        let s = standardize(&t).unwrap();
        let col = s.psi1.col_values(0);
        for (a, b) in col.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let again = standardize(&s).unwrap();
        for (a, b) in again.psi1.data().iter().zip(s.psi1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_column_fails() {
        let t = UnitTable::from_psi(Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0]]).unwrap()).unwrap();
        match standardize(&t) {
            Err(Error::ZeroVariance(c)) => assert_eq!(c, "x1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
