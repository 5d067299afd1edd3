//! Tabular datasets: rows of (possibly missing) feature values with labels,
//! entity identifiers, and optional financial columns for the economic
//! evaluation.

pub mod io;
pub mod split;
pub mod synth;

pub use io::{load_dataset, load_schema, save_dataset};
pub use split::{stratified_split, SplitFractions, SplitMode, Splits};
pub use synth::{synth_generate, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    EntityId,
    Portfolio,
    DefaultRate,
    ZeroTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ctype: ColumnType,
    pub role: ColumnRole,
}

/// Sidecar schema: one entry per CSV column, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

/// Per-row financial fields (constant within an entity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinancialRow {
    pub portfolio: f64,
    pub default_rate: f64,
    pub zero_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub feature_types: Vec<ColumnType>,
    /// `rows[r][f]`: `None` marks a missing value.
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<u8>,
    pub entity_ids: Vec<String>,
    pub financial: Option<Vec<FinancialRow>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn fraud_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// Non-missing fraction per feature, in feature order.
    pub fn fill_rates(&self) -> Vec<(String, f64)> {
        self.feature_names
            .iter()
            .enumerate()
            .map(|(f, name)| {
                let present = self.rows.iter().filter(|r| r[f].is_some()).count();
                let rate = if self.rows.is_empty() {
                    0.0
                } else {
                    present as f64 / self.rows.len() as f64
                };
                (name.clone(), rate)
            })
            .collect()
    }

    /// Column values of one feature across all rows.
    pub fn column(&self, index: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[index]).collect()
    }

    /// Keep only the named features (in the given order).
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let indices: Vec<usize> = names.iter().map(|n| self.feature_index(n)).collect::<Result<_>>()?;
        Ok(Dataset {
            feature_names: names.to_vec(),
            feature_types: indices.iter().map(|&i| self.feature_types[i]).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&i| r[i]).collect())
                .collect(),
            labels: self.labels.clone(),
            entity_ids: self.entity_ids.clone(),
            financial: self.financial.clone(),
        })
    }

    /// Append one numeric feature column.
    pub fn push_feature(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::shape(
                "new feature column",
                format!("{} rows", self.n_rows()),
                format!("{}", values.len()),
            ));
        }
        self.feature_names.push(name.into());
        self.feature_types.push(ColumnType::Numeric);
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v);
        }
        Ok(())
    }

    /// Schema describing this dataset's CSV layout.
    pub fn schema(&self) -> Schema {
        let mut columns = vec![ColumnSpec {
            name: "entity_id".into(),
            ctype: ColumnType::Categorical,
            role: ColumnRole::EntityId,
        }];
        columns.extend(self.feature_names.iter().zip(&self.feature_types).map(|(n, &t)| ColumnSpec {
            name: n.clone(),
            ctype: t,
            role: ColumnRole::Feature,
        }));
        columns.push(ColumnSpec {
            name: "label".into(),
            ctype: ColumnType::Numeric,
            role: ColumnRole::Label,
        });
        if self.financial.is_some() {
            columns.push(ColumnSpec {
                name: "portfolio".into(),
                ctype: ColumnType::Numeric,
                role: ColumnRole::Portfolio,
            });
            columns.push(ColumnSpec {
                name: "default_rate".into(),
                ctype: ColumnType::Numeric,
                role: ColumnRole::DefaultRate,
            });
            columns.push(ColumnSpec {
                name: "zero_target".into(),
                ctype: ColumnType::Numeric,
                role: ColumnRole::ZeroTarget,
            });
        }
        Schema { columns }
    }

    /// Validate core invariants (arity, label presence).
    pub fn validate(&self) -> Result<()> {
        let nf = self.n_features();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != nf {
                return Err(Error::shape(
                    format!("row {}", i),
                    format!("{} features", nf),
                    format!("{}", row.len()),
                ));
            }
        }
        if self.labels.len() != self.n_rows() || self.entity_ids.len() != self.n_rows() {
            return Err(Error::InvalidInput("labels/entity ids must cover every row".into()));
        }
        if let Some(fin) = &self.financial {
            if fin.len() != self.n_rows() {
                return Err(Error::InvalidInput("financial columns must cover every row".into()));
            }
        }
        Ok(())
    }
}

/// Per-feature standardization fitted on a row subset; missing values are
/// imputed as zero after standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn fit(dataset: &Dataset, rows: &[usize]) -> Scaler {
        let nf = dataset.n_features();
        let mut means = vec![0.0; nf];
        let mut stds = vec![1.0; nf];
        for f in 0..nf {
            let values: Vec<f64> = rows.iter().filter_map(|&r| dataset.rows[r][f]).collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
            means[f] = mean;
            stds[f] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Scaler { means, stds }
    }

    /// Standardize the selected rows into a `(B, 1, F)` network input.
    pub fn transform(&self, dataset: &Dataset, rows: &[usize]) -> Result<Tensor> {
        let nf = dataset.n_features();
        if self.means.len() != nf {
            return Err(Error::shape(
                "scaler",
                format!("{} features", self.means.len()),
                format!("{}", nf),
            ));
        }
        let mut values = Vec::with_capacity(rows.len() * nf);
        for &r in rows {
            for f in 0..nf {
                let v = match dataset.rows[r][f] {
                    Some(v) => (v - self.means[f]) / self.stds[f],
                    None => 0.0,
                };
                values.push(v);
            }
        }
        Tensor::new(&[rows.len(), 1, nf], values)
    }
}
