//! Numeric CSV tables with `NA` for missing cells, and the layout file.
//!
//! Layout files are `key = value` lines; `#` starts a comment:
//!
//! ```text
//! site1 = intercept, X1, X2
//! site2 = X3, X4
//! missing = X1
//! outcome = Y
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{PartitionLayout, VerticalDataset, INTERCEPT};

pub const NA: &str = "NA";

/// Column-major table of reals; NaN marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Shape(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("columns of different lengths".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Parse(format!("duplicate column `{a}`")));
            }
        }
        Ok(Self { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|j| self.columns[j].as_slice())
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn set_value(&mut self, row: usize, col: usize, v: f64) {
        self.columns[col][row] = v;
    }

    pub fn missing_count(&self, name: &str) -> Option<usize> {
        self.column(name).map(|c| c.iter().filter(|v| v.is_nan()).count())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    names.len()
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let v =
                    if field == NA {
                        f64::NAN
                    } else {
                        field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                            Error::Parse(format!("row {}, column `{}`: `{field}`", line + 1, names[j]))
                        })?
                    };
                columns[j].push(v);
            }
        }
        Self::new(names, columns)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for i in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| if c[i].is_nan() { NA.to_string() } else { c[i].to_string() }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }
}

/// A parsed layout file.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutSpec {
    pub layout: PartitionLayout,
    pub outcome: String,
}

pub fn parse_layout(text: &str) -> Result<LayoutSpec> {
    let mut sites: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut missing = None;
    let mut outcome = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("layout line {}: expected `key = value`", no + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(idx) = key.strip_prefix("site") {
            let k: usize = idx
                .parse()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::Parse(format!("layout line {}: bad site key `{key}`", no + 1)))?;
            let cols: Vec<String> = value.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            if sites.insert(k, cols).is_some() {
                return Err(Error::Parse(format!("layout line {}: site {k} given twice", no + 1)));
            }
        } else if key == "missing" {
            missing = Some(value.to_string());
        } else if key == "outcome" {
            outcome = Some(value.to_string());
        } else {
            return Err(Error::Parse(format!("layout line {}: unknown key `{key}`", no + 1)));
        }
    }
    let count = sites.len();
    if sites.keys().copied().ne(1..=count) {
        return Err(Error::Layout("site keys must be site1..siteK without gaps".into()));
    }
    let missing = missing.ok_or_else(|| Error::Layout("layout names no `missing` column".into()))?;
    let outcome = outcome.ok_or_else(|| Error::Layout("layout names no `outcome` column".into()))?;
    let layout = PartitionLayout::new(sites.into_values().collect(), missing)?;
    if layout.index_of(&outcome).is_some() {
        return Err(Error::Layout(format!("outcome `{outcome}` is also a covariate")));
    }
    Ok(LayoutSpec { layout, outcome })
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<LayoutSpec> {
    parse_layout(&std::fs::read_to_string(path)?)
}

fn block_from_table(table: &Table, columns: &[String], n: usize) -> Result<Matrix<f64>> {
    let cols = columns
        .iter()
        .map(|name| match table.column(name) {
            Some(c) => Ok(c.to_vec()),
            None if name == INTERCEPT => Ok(vec![1.0; n]),
            None => Err(Error::Layout(format!("column `{name}` absent from its site file"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_columns(n, &cols)
}

/// One table per site (in layout order) plus a table holding the outcome.
pub fn load_sites(spec: &LayoutSpec, sites: &[Table], outcome: &Table) -> Result<VerticalDataset<f64>> {
    let layout = &spec.layout;
    if sites.len() != layout.site_count() {
        return Err(Error::Layout(format!("{} site files for {} sites", sites.len(), layout.site_count())));
    }
    let y = outcome
        .column(&spec.outcome)
        .ok_or_else(|| Error::Layout(format!("outcome column `{}` absent", spec.outcome)))?
        .to_vec();
    let n = y.len();
    let mut blocks = Vec::with_capacity(sites.len());
    for (k, t) in sites.iter().enumerate() {
        if t.rows() != n {
            return Err(Error::Shape(format!("site {} file has {} rows, outcome has {n}", k + 1, t.rows())));
        }
        blocks.push(block_from_table(t, layout.columns(k), n)?);
    }
    VerticalDataset::from_blocks(layout.clone(), blocks, y)
}

/// A single table holding every column; split into sites by the layout.
pub fn load_single(spec: &LayoutSpec, table: &Table) -> Result<VerticalDataset<f64>> {
    let copies = vec![table.clone(); spec.layout.site_count()];
    load_sites(spec, &copies, table)
}
