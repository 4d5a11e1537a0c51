//! Long-format CSV ingestion and export.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelParts};

/// Column mapping for a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub y: String,
    #[serde(default)]
    pub x: Vec<String>,
    pub w: Vec<String>,
    #[serde(default)]
    pub factors: Vec<String>,
}

impl PanelSchema {
    fn numeric_columns(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.y)
            .chain(&self.x)
            .chain(&self.w)
            .chain(&self.factors)
    }
}

pub fn load_panel_path(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    load_panel(File::open(path)?, schema)
}

/// Reads a balanced panel; rows may come in any order.
pub fn load_panel<R: Read>(source: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("input is empty (no header row)".into()));
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let unit_idx = find(&schema.unit)?;
    let period_idx = find(&schema.period)?;
    let numeric: Vec<(String, usize)> = schema
        .numeric_columns()
        .map(|c| find(c).map(|i| (c.clone(), i)))
        .collect::<Result<_>>()?;

    let mut cells: HashMap<(String, String), Vec<f64>> = HashMap::new();
    let mut units: Vec<String> = Vec::new();
    let mut periods: Vec<String> = Vec::new();
    let mut seen_unit: HashMap<String, ()> = HashMap::new();
    let mut seen_period: HashMap<String, ()> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let unit = record.get(unit_idx).unwrap_or("").to_string();
        let period = record.get(period_idx).unwrap_or("").to_string();
        let mut values = Vec::with_capacity(numeric.len());
        for (name, idx) in &numeric {
            let raw = record.get(*idx).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        line,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        if seen_unit.insert(unit.clone(), ()).is_none() {
            units.push(unit.clone());
        }
        if seen_period.insert(period.clone(), ()).is_none() {
            periods.push(period.clone());
        }
        if cells.insert((unit.clone(), period.clone()), values).is_some() {
            return Err(Error::Duplicate { unit, period });
        }
    }
    if cells.is_empty() {
        return Err(Error::Schema("input has a header but no data rows".into()));
    }
    sort_labels(&mut units);
    sort_labels(&mut periods);

    let n = units.len();
    let t_len = periods.len();
    let p_x = schema.x.len();
    let p_w = schema.w.len();
    let p_d = schema.factors.len();
    let mut y = DMatrix::zeros(t_len, n);
    let mut x = vec![DMatrix::zeros(t_len, p_x); n];
    let mut w = vec![DMatrix::zeros(t_len, p_w); n];
    let mut factors = DMatrix::zeros(t_len, p_d);
    for (i, unit) in units.iter().enumerate() {
        for (t, period) in periods.iter().enumerate() {
            let row = cells
                .get(&(unit.clone(), period.clone()))
                .ok_or_else(|| Error::Unbalanced {
                    unit: unit.clone(),
                    period: period.clone(),
                })?;
            y[(t, i)] = row[0];
            for c in 0..p_x {
                x[i][(t, c)] = row[1 + c];
            }
            for c in 0..p_w {
                w[i][(t, c)] = row[1 + p_x + c];
            }
            for c in 0..p_d {
                let v = row[1 + p_x + p_w + c];
                if i == 0 {
                    factors[(t, c)] = v;
                } else if factors[(t, c)] != v {
                    return Err(Error::Schema(format!(
                        "factor column `{}` varies within period `{period}`",
                        schema.factors[c]
                    )));
                }
            }
        }
    }
    PanelDataset::new(PanelParts {
        y,
        x,
        w,
        observed_factors: Some(factors),
        unit_labels: Some(units),
        period_labels: Some(periods),
        x_names: Some(schema.x.clone()),
        w_names: Some(schema.w.clone()),
        factor_names: Some(schema.factors.clone()),
    })
}

/// Numeric labels sort by value, everything else lexicographically (ISO dates sort correctly).
fn sort_labels(labels: &mut [String]) {
    let numeric: Option<BTreeMap<usize, f64>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    if numeric.is_some() {
        labels.sort_by(|a, b| {
            let (va, vb) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            va.partial_cmp(&vb).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
}

/// Schema matching the dataset's own column names.
pub fn default_schema(data: &PanelDataset) -> PanelSchema {
    PanelSchema {
        unit: "unit".into(),
        period: "period".into(),
        y: "y".into(),
        x: data.x_names().to_vec(),
        w: data.w_names().to_vec(),
        factors: data.factor_names().to_vec(),
    }
}

/// Writes the panel in long format, sorted by (unit, period).
pub fn write_panel<W: Write>(sink: W, data: &PanelDataset, schema: &PanelSchema) -> Result<()> {
    if schema.x.len() != data.p_x() || schema.w.len() != data.p_w() || schema.factors.len() != data.p_d()
    {
        return Err(Error::Schema("schema does not match dataset dimensions".into()));
    }
    let mut out = csv::Writer::from_writer(sink);
    let mut header = vec![schema.unit.clone(), schema.period.clone(), schema.y.clone()];
    header.extend(schema.numeric_columns().skip(1).cloned());
    out.write_record(&header)?;
    for i in 0..data.n_units() {
        for t in 0..data.n_periods() {
            let mut row = vec![
                data.unit_labels()[i].clone(),
                data.period_labels()[t].clone(),
                data.y()[(t, i)].to_string(),
            ];
            row.extend((0..data.p_x()).map(|c| data.x()[i][(t, c)].to_string()));
            row.extend((0..data.p_w()).map(|c| data.w()[i][(t, c)].to_string()));
            row.extend((0..data.p_d()).map(|c| data.observed_factors()[(t, c)].to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}
