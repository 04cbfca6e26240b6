//! Mixed categorical/continuous tables with declared domains.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DipsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSpec {
    Categorical { name: String, levels: Vec<String> },
    Continuous { name: String, lo: f64, hi: f64 },
}

impl ColumnSpec {
    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        ColumnSpec::Categorical {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        ColumnSpec::Continuous {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ColumnSpec::Categorical { name, .. } | ColumnSpec::Continuous { name, .. } => name,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ColumnSpec::Categorical { name, levels } if levels.is_empty() => Err(
                DipsError::Schema(format!("categorical column `{name}` has no levels")),
            ),
            ColumnSpec::Continuous { name, lo, hi }
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() =>
            {
                Err(DipsError::Schema(format!(
                    "continuous column `{name}` needs finite lo < hi"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        for c in &columns {
            c.validate()?;
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.name() == c.name()) {
                return Err(DipsError::Schema(format!(
                    "duplicate column `{}`",
                    c.name()
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name() == name)
            .ok_or_else(|| DipsError::Schema(format!("no column named `{name}`")))
    }

    pub fn categorical_columns(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, ColumnSpec::Categorical { .. }))
    }

    pub fn continuous_columns(&self) -> impl Iterator<Item = (usize, &ColumnSpec)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, ColumnSpec::Continuous { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// Level indices into the spec's level list.
    Categorical(Vec<u32>),
    Continuous(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` rows over a fixed schema, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    n: usize,
}

impl TabularDataset {
    pub fn new(schema: Schema, columns: Vec<ColumnData>) -> Result<Self> {
        if schema.columns.len() != columns.len() {
            return Err(DipsError::Schema(
                "column count does not match schema".into(),
            ));
        }
        let n = columns.first().map_or(0, ColumnData::len);
        for (spec, data) in schema.columns.iter().zip(&columns) {
            if data.len() != n {
                return Err(DipsError::Schema(format!(
                    "column `{}` has a different length",
                    spec.name()
                )));
            }
            match (spec, data) {
                (ColumnSpec::Categorical { name, levels }, ColumnData::Categorical(v)) => {
                    if let Some(bad) = v.iter().find(|x| **x as usize >= levels.len()) {
                        return Err(DipsError::OutOfDomain {
                            axis: name.clone(),
                            value: bad.to_string(),
                        });
                    }
                }
                (ColumnSpec::Continuous { name, lo, hi }, ColumnData::Continuous(v)) => {
                    if let Some(bad) = v.iter().find(|x| !(*x >= lo && *x <= hi)) {
                        return Err(DipsError::OutOfDomain {
                            axis: name.clone(),
                            value: bad.to_string(),
                        });
                    }
                }
                _ => {
                    return Err(DipsError::Schema(format!(
                        "column `{}` has the wrong kind",
                        spec.name()
                    )))
                }
            }
        }
        Ok(Self { schema, columns, n })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    /// The named columns only, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.schema.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        let schema = Schema::new(
            idx.iter()
                .map(|i| self.schema.columns[*i].clone())
                .collect(),
        )?;
        Ok(Self {
            schema,
            columns: idx.iter().map(|i| self.columns[*i].clone()).collect(),
            n: self.n,
        })
    }

    pub fn categorical(&self, name: &str) -> Result<&[u32]> {
        match self.column(name)? {
            ColumnData::Categorical(v) => Ok(v),
            _ => Err(DipsError::Schema(format!(
                "column `{name}` is not categorical"
            ))),
        }
    }

    pub fn continuous(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            ColumnData::Continuous(v) => Ok(v),
            _ => Err(DipsError::Schema(format!(
                "column `{name}` is not continuous"
            ))),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.schema.columns.iter().map(ColumnSpec::name))?;
        for i in 0..self.n {
            let row: Vec<String> = self
                .schema
                .columns
                .iter()
                .zip(&self.columns)
                .map(|(spec, col)| match (spec, col) {
                    (ColumnSpec::Categorical { levels, .. }, ColumnData::Categorical(v)) => {
                        levels[v[i] as usize].clone()
                    }
                    (_, ColumnData::Continuous(v)) => v[i].to_string(),
                    _ => unreachable!("validated at construction"),
                })
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parse a CSV whose header names every schema column.
    pub fn read_csv<R: Read>(r: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let pos: Vec<usize> = schema
            .columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h.trim() == c.name())
                    .ok_or_else(|| DipsError::Schema(format!("CSV lacks column `{}`", c.name())))
            })
            .collect::<Result<_>>()?;
        let mut cols: Vec<ColumnData> = schema
            .columns
            .iter()
            .map(|c| match c {
                ColumnSpec::Categorical { .. } => ColumnData::Categorical(Vec::new()),
                ColumnSpec::Continuous { .. } => ColumnData::Continuous(Vec::new()),
            })
            .collect();
        for rec in rdr.records() {
            let rec = rec?;
            for ((spec, col), p) in schema.columns.iter().zip(cols.iter_mut()).zip(&pos) {
                let raw = rec.get(*p).unwrap_or("").trim();
                match (spec, col) {
                    (ColumnSpec::Categorical { name, levels }, ColumnData::Categorical(v)) => {
                        let idx = levels.iter().position(|l| l == raw).ok_or_else(|| {
                            DipsError::OutOfDomain {
                                axis: name.clone(),
                                value: raw.to_string(),
                            }
                        })?;
                        v.push(idx as u32);
                    }
                    (ColumnSpec::Continuous { name, .. }, ColumnData::Continuous(v)) => {
                        let x: f64 = raw.parse().map_err(|_| DipsError::OutOfDomain {
                            axis: name.clone(),
                            value: raw.to_string(),
                        })?;
                        v.push(x);
                    }
                    _ => unreachable!(),
                }
            }
        }
        TabularDataset::new(schema.clone(), cols)
    }

    /// Guess a schema from CSV contents: all-numeric columns become
    /// continuous with the observed range as bounds, anything else becomes
    /// categorical with its observed levels in sorted order. Data-derived
    /// bounds are not private; declare a schema for real releases.
    pub fn infer_schema<R: Read>(r: R) -> Result<Schema> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut values: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (i, v) in values.iter_mut().enumerate() {
                v.push(rec.get(i).unwrap_or("").trim().to_string());
            }
        }
        let columns = header
            .into_iter()
            .zip(values)
            .map(|(name, vals)| {
                let nums: Option<Vec<f64>> = vals.iter().map(|s| s.parse::<f64>().ok()).collect();
                match nums {
                    Some(xs) if !xs.is_empty() && xs.iter().any(|x| x.fract() != 0.0) => {
                        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let hi = if hi > lo { hi } else { lo + 1.0 };
                        ColumnSpec::Continuous { name, lo, hi }
                    }
                    _ => {
                        let mut levels = vals;
                        levels.sort();
                        levels.dedup();
                        ColumnSpec::Categorical { name, levels }
                    }
                }
            })
            .collect();
        Schema::new(columns)
    }
}
