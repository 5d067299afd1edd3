//! Exhaustive grid search over hyperparameter combinations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::train::{train, TrainConfig, TrainData, TrainHistory};

/// Candidate values per hyperparameter name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpace(pub BTreeMap<String, Vec<Value>>);

/// One point of the Cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint(pub BTreeMap<String, Value>);

impl GridPoint {
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_f64)
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.0.get(key).and_then(Value::as_u64).map(|v| v as usize)
    }
}

impl GridSpace {
    /// All combinations in deterministic order: keys sorted by name, the
    /// last key cycling fastest.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        if self.0.is_empty() {
            return Err(Error::InvalidInput("empty grid space".into()));
        }
        for (key, candidates) in &self.0 {
            if candidates.is_empty() {
                return Err(Error::InvalidInput(format!("grid key `{}` has no candidates", key)));
            }
        }
        let keys: Vec<&String> = self.0.keys().collect();
        let sizes: Vec<usize> = keys.iter().map(|k| self.0[*k].len()).collect();
        let total: usize = sizes.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut odometer = vec![0usize; keys.len()];
        for _ in 0..total {
            let mut point = BTreeMap::new();
            for (k, key) in keys.iter().enumerate() {
                point.insert((*key).clone(), self.0[*key][odometer[k]].clone());
            }
            points.push(GridPoint(point));
            for k in (0..keys.len()).rev() {
                odometer[k] += 1;
                if odometer[k] < sizes[k] {
                    break;
                }
                odometer[k] = 0;
            }
        }
        Ok(points)
    }
}

/// Outcome of training one combination. Failed builds keep their error
/// message and rank last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub config: GridPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_auc_pr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_auc_roc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GridPoint,
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Train every combination and rank by validation AUC-PR (descending), ties
/// by AUC-ROC, then by enumeration order of the space.
pub fn grid_search<F>(space: &GridSpace, data: &TrainData, mut instantiate: F) -> Result<GridSearchResult>
where
    F: FnMut(&GridPoint) -> Result<(Network, TrainConfig)>,
{
    let points = space.points()?;
    let mut rows: Vec<(usize, LeaderboardRow)> = Vec::with_capacity(points.len());
    for (order, point) in points.into_iter().enumerate() {
        let row = match instantiate(&point).and_then(|(mut net, config)| {
            let history: TrainHistory = train(&mut net, data, &config)?;
            let best = history
                .epochs
                .iter()
                .find(|e| e.epoch == history.best_epoch)
                .ok_or_else(|| Error::InvalidInput("empty training history".into()))?;
            Ok((best.val_auc_pr, best.val_auc_roc, history.best_epoch))
        }) {
            Ok((pr, roc, epoch)) => LeaderboardRow {
                rank: 0,
                config: point,
                val_auc_pr: Some(pr),
                val_auc_roc: Some(roc),
                best_epoch: Some(epoch),
                error: None,
            },
            Err(e) => LeaderboardRow {
                rank: 0,
                config: point,
                val_auc_pr: None,
                val_auc_roc: None,
                best_epoch: None,
                error: Some(e.to_string()),
            },
        };
        rows.push((order, row));
    }
    rows.sort_by(|(oa, a), (ob, b)| {
        let pa = a.val_auc_pr.unwrap_or(f64::NEG_INFINITY);
        let pb = b.val_auc_pr.unwrap_or(f64::NEG_INFINITY);
        pb.partial_cmp(&pa)
            .unwrap()
            .then_with(|| {
                let ra = a.val_auc_roc.unwrap_or(f64::NEG_INFINITY);
                let rb = b.val_auc_roc.unwrap_or(f64::NEG_INFINITY);
                rb.partial_cmp(&ra).unwrap()
            })
            .then_with(|| oa.cmp(ob))
    });
    let leaderboard: Vec<LeaderboardRow> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut row))| {
            row.rank = i + 1;
            row
        })
        .collect();
    let best = leaderboard
        .iter()
        .find(|r| r.error.is_none())
        .ok_or_else(|| Error::InvalidInput("every grid combination failed".into()))?
        .config
        .clone();
    Ok(GridSearchResult { best, leaderboard })
}
