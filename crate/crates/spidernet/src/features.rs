//! Anomaly feature engineering: per-entity distribution divergences
//! (B-tests and W-tests) plus the fill-rate and cross-correlation feature
//! selection steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnType, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_RECORDS: usize = 30;

/// Empirical quantile edges (`n - 1` interior edges) by linear interpolation
/// between order statistics.
pub fn quantile_bins(values: &[f64], n: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty population for quantile bins".into()));
    }
    if n < 2 {
        return Err(Error::hyper("n_quantiles", "must be >= 2"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let mut edges = Vec::with_capacity(n - 1);
    for i in 1..n {
        let h = (i as f64 / n as f64) * (m - 1) as f64;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let edge = if lo + 1 < m {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        };
        edges.push(edge);
    }
    Ok(edges)
}

/// Right-closed binning: a value lands in the first bin whose upper edge is
/// `>= v`; anything above the last edge lands in the final bin.
pub fn assign_bin(edges: &[f64], value: f64) -> usize {
    for (i, &e) in edges.iter().enumerate() {
        if value <= e {
            return i;
        }
    }
    edges.len()
}

/// Area difference of two discrete distributions,
/// `S = 0.5 * sum_i |a_i - b_i|` (total variation distance, in `[0, 1]`).
pub fn btest(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("btest", format!("{} bins", a.len()), format!("{}", b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("btest on empty distributions".into()));
    }
    for (name, v) in [("a", a), ("b", b)] {
        if v.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidInput(format!("distribution {} has negative mass", name)));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("distribution {} sums to {}, expected 1", name, sum)));
        }
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// First Wasserstein distance between two empirical distributions, computed
/// as the area between their empirical CDFs.
pub fn wtest(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput("wtest needs nonempty samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "wtest sample".into() });
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // merge the breakpoints of both CDFs
    let mut points: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();

    let mut dist = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    for w in points.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        dist += (fa - fb).abs() * (w[1] - w[0]);
    }
    Ok(dist)
}

/// One B-test column: divergence of each entity's distribution of `feature`
/// from its population (optionally segmented by another column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BTestConfig {
    pub feature: String,
    pub n_quantiles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<String>,
    /// When set, the column is binarized: `1` if `S >= threshold`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// One W-test column (numeric features only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WTestConfig {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<String>,
}

/// File format of the B/W feature generation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BwConfig {
    /// Entities with fewer usable records than this get a missing value.
    pub min_records: usize,
    pub b_tests: Vec<BTestConfig>,
    pub w_tests: Vec<WTestConfig>,
}

impl Default for BwConfig {
    fn default() -> Self {
        BwConfig {
            min_records: DEFAULT_MIN_RECORDS,
            b_tests: Vec::new(),
            w_tests: Vec::new(),
        }
    }
}

impl BwConfig {
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in &self.b_tests {
            names.push(bt_column_name(b));
        }
        for w in &self.w_tests {
            names.push(wt_column_name(w));
        }
        names
    }
}

fn bt_column_name(config: &BTestConfig) -> String {
    match &config.segment {
        Some(seg) => format!("bt{}_{}_by_{}", config.n_quantiles, config.feature, seg),
        None => format!("bt{}_{}", config.n_quantiles, config.feature),
    }
}

fn wt_column_name(config: &WTestConfig) -> String {
    match &config.segment {
        Some(seg) => format!("wt_{}_by_{}", config.feature, seg),
        None => format!("wt_{}", config.feature),
    }
}

/// Rows grouped by segment value (one global group without a segment key),
/// then by entity within each group.
fn group_rows<'a>(
    dataset: &'a Dataset,
    segment: Option<&str>,
) -> Result<BTreeMap<String, BTreeMap<&'a str, Vec<usize>>>> {
    let seg_idx = match segment {
        Some(name) => Some(dataset.feature_index(name)?),
        None => None,
    };
    let mut groups: BTreeMap<String, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for r in 0..dataset.n_rows() {
        let key = match seg_idx {
            Some(f) => match dataset.rows[r][f] {
                Some(v) => format!("{}", v),
                None => "<missing>".to_string(),
            },
            None => String::new(),
        };
        groups
            .entry(key)
            .or_default()
            .entry(dataset.entity_ids[r].as_str())
            .or_default()
            .push(r);
    }
    Ok(groups)
}

fn btest_column(dataset: &Dataset, config: &BTestConfig, min_records: usize) -> Result<Vec<Option<f64>>> {
    let fidx = dataset.feature_index(&config.feature)?;
    if config.n_quantiles < 2 {
        return Err(Error::hyper("n_quantiles", "must be >= 2"));
    }
    if let Some(t) = config.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::hyper("threshold", "must be in [0, 1]"));
        }
    }
    let categorical = dataset.feature_types[fidx] == ColumnType::Categorical;
    let mut column = vec![None; dataset.n_rows()];
    for (_, entities) in group_rows(dataset, config.segment.as_deref())? {
        let population: Vec<f64> = entities
            .values()
            .flatten()
            .filter_map(|&r| dataset.rows[r][fidx])
            .collect();
        if population.is_empty() {
            continue;
        }
        // bin layout from the population (which contains every entity)
        let (edges, categories) = if categorical {
            let mut cats = population.clone();
            cats.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cats.dedup();
            (Vec::new(), cats)
        } else {
            (quantile_bins(&population, config.n_quantiles)?, Vec::new())
        };
        let n_bins = if categorical { categories.len() } else { config.n_quantiles };
        let bin_of = |v: f64| -> usize {
            if categorical {
                categories.iter().position(|&c| c == v).unwrap_or(0)
            } else {
                assign_bin(&edges, v)
            }
        };
        let mut pop_counts = vec![0.0f64; n_bins];
        for &v in &population {
            pop_counts[bin_of(v)] += 1.0;
        }
        let pop_dist: Vec<f64> = pop_counts.iter().map(|c| c / population.len() as f64).collect();

        for (_, rows) in entities {
            let values: Vec<f64> = rows.iter().filter_map(|&r| dataset.rows[r][fidx]).collect();
            let score = if values.len() < min_records {
                None
            } else {
                let mut counts = vec![0.0f64; n_bins];
                for &v in &values {
                    counts[bin_of(v)] += 1.0;
                }
                let dist: Vec<f64> = counts.iter().map(|c| c / values.len() as f64).collect();
                let s = btest(&dist, &pop_dist)?;
                Some(match config.threshold {
                    Some(t) => {
                        if s >= t {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    None => s,
                })
            };
            for r in rows {
                column[r] = score;
            }
        }
    }
    Ok(column)
}

fn wtest_column(dataset: &Dataset, config: &WTestConfig, min_records: usize) -> Result<Vec<Option<f64>>> {
    let fidx = dataset.feature_index(&config.feature)?;
    if dataset.feature_types[fidx] == ColumnType::Categorical {
        return Err(Error::InvalidInput(format!(
            "wtest needs a numeric feature, `{}` is categorical",
            config.feature
        )));
    }
    let mut column = vec![None; dataset.n_rows()];
    for (_, entities) in group_rows(dataset, config.segment.as_deref())? {
        let population: Vec<f64> = entities
            .values()
            .flatten()
            .filter_map(|&r| dataset.rows[r][fidx])
            .collect();
        if population.is_empty() {
            continue;
        }
        for (_, rows) in entities {
            let values: Vec<f64> = rows.iter().filter_map(|&r| dataset.rows[r][fidx]).collect();
            let score = if values.len() < min_records {
                None
            } else {
                Some(wtest(&values, &population)?)
            };
            for r in rows {
                column[r] = score;
            }
        }
    }
    Ok(column)
}

/// Append one column per configured test to a copy of the dataset.
pub fn generate_bw_features(dataset: &Dataset, config: &BwConfig) -> Result<Dataset> {
    let mut names = config.column_names();
    names.sort();
    names.dedup();
    if names.len() != config.b_tests.len() + config.w_tests.len() {
        return Err(Error::InvalidInput("duplicate B/W test output columns".into()));
    }
    let mut out = dataset.clone();
    for b in &config.b_tests {
        let column = btest_column(dataset, b, config.min_records)?;
        out.push_feature(bt_column_name(b), column)?;
    }
    for w in &config.w_tests {
        let column = wtest_column(dataset, w, config.min_records)?;
        out.push_feature(wt_column_name(w), column)?;
    }
    Ok(out)
}

/// Names of features whose non-missing fraction is at least `min_rate`.
pub fn fill_rate_filter(dataset: &Dataset, min_rate: f64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&min_rate) {
        return Err(Error::hyper("min_rate", "must be in [0, 1]"));
    }
    Ok(dataset
        .fill_rates()
        .into_iter()
        .filter(|(_, rate)| *rate >= min_rate)
        .map(|(name, _)| name)
        .collect())
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0; // zero-variance features correlate with nothing
    }
    sxy / (sxx * syy).sqrt()
}

/// Pairwise-complete Pearson correlation between two feature columns.
fn feature_correlation(dataset: &Dataset, a: usize, b: usize) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in &dataset.rows {
        if let (Some(x), Some(y)) = (row[a], row[b]) {
            xs.push(x);
            ys.push(y);
        }
    }
    pearson(&xs, &ys)
}

fn label_correlation(dataset: &Dataset, f: usize) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, &label) in dataset.rows.iter().zip(&dataset.labels) {
        if let Some(x) = row[f] {
            xs.push(x);
            ys.push(label as f64);
        }
    }
    pearson(&xs, &ys)
}

/// Of each highly correlated pair (`|rho| > threshold`), drop the feature
/// less correlated with the label. Pairs are processed in descending
/// `|rho|`, ties broken by feature names, so the result does not depend on
/// column order.
pub fn correlation_prune(dataset: &Dataset, threshold: f64) -> Result<Vec<String>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::hyper("threshold", "must be in (0, 1)"));
    }
    let nf = dataset.n_features();
    // order features by name so the procedure ignores column order
    let mut by_name: Vec<usize> = (0..nf).collect();
    by_name.sort_by(|&a, &b| dataset.feature_names[a].cmp(&dataset.feature_names[b]));

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &fa) in by_name.iter().enumerate() {
        for &fb in &by_name[i + 1..] {
            let rho = feature_correlation(dataset, fa, fb);
            if rho.abs() > threshold {
                pairs.push((rho.abs(), fa, fb));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then_with(|| dataset.feature_names[x.1].cmp(&dataset.feature_names[y.1]))
            .then_with(|| dataset.feature_names[x.2].cmp(&dataset.feature_names[y.2]))
    });

    let mut dropped = vec![false; nf];
    for (_, a, b) in pairs {
        if dropped[a] || dropped[b] {
            continue;
        }
        let ca = label_correlation(dataset, a).abs();
        let cb = label_correlation(dataset, b).abs();
        let victim = if ca > cb {
            b
        } else if cb > ca {
            a
        } else {
            // tie: keep the lexicographically smaller name
            if dataset.feature_names[a] <= dataset.feature_names[b] {
                b
            } else {
                a
            }
        };
        dropped[victim] = true;
    }
    Ok((0..nf)
        .filter(|&f| !dropped[f])
        .map(|f| dataset.feature_names[f].clone())
        .collect())
}
