//! Evaluation statistics: ranking metrics with confidence intervals,
//! the Prevented Loss business metric, and the one-sided sign test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scored(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "auc_roc needs at least one positive and one negative".into(),
        ));
    }
    // sweep scores in ascending order, grouping ties
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut wins = 0u64; // positive strictly above negative
    let mut ties = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here = 0u64;
        let mut neg_here = 0u64;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins += pos_here * neg_below;
        ties += pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (n_pos as f64 * n_neg as f64))
}

/// Average precision: `sum_i (R_i - R_{i-1}) * P_i` over descending-score
/// thresholds, equal scores grouped into one threshold.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scored(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::InvalidInput("auc_pr needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here = 0u64;
        let mut neg_here = 0u64;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        tp += pos_here;
        fp += neg_here;
        if pos_here > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall_step = pos_here as f64 / n_pos as f64;
            ap += recall_step * precision;
        }
        i = j;
    }
    Ok(ap)
}

fn check_scored(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "scores/labels",
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty score vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { context: "scores".into() });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    Roc,
    Pr,
}

/// A point estimate with its two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCi {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    /// Set when the estimate sits on the boundary and the asymptotic
    /// interval degenerates to a point.
    pub degenerate: bool,
}

/// Asymptotic confidence interval.
///
/// ROC uses the Hanley-McNeil standard error; PR uses a logit-scale normal
/// interval with `se = sqrt(AP (1-AP) / n_pos)` propagated through the
/// logit transform.
pub fn auc_ci(value: f64, n_pos: usize, n_neg: usize, alpha: f64, kind: CiKind) -> Result<MetricWithCi> {
    if n_pos < 1 || n_neg < 1 {
        return Err(Error::InvalidInput("confidence interval needs n_pos, n_neg >= 1".into()));
    }
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::hyper("alpha", "must be in (0, 1)"));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidInput(format!("metric value {} outside [0, 1]", value)));
    }
    if value == 0.0 || value == 1.0 {
        return Ok(MetricWithCi {
            value,
            lo: value,
            hi: value,
            alpha,
            degenerate: true,
        });
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let (lo, hi) = match kind {
        CiKind::Roc => {
            let a = value;
            let q1 = a / (2.0 - a);
            let q2 = 2.0 * a * a / (1.0 + a);
            let np = n_pos as f64;
            let nn = n_neg as f64;
            let var = (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
            let se = var.max(0.0).sqrt();
            (a - z * se, a + z * se)
        }
        CiKind::Pr => {
            let eta = (value / (1.0 - value)).ln();
            let se_logit = 1.0 / (n_pos as f64 * value * (1.0 - value)).sqrt();
            let lo = logistic(eta - z * se_logit);
            let hi = logistic(eta + z * se_logit);
            (lo, hi)
        }
    };
    Ok(MetricWithCi {
        value,
        lo: lo.clamp(0.0, 1.0),
        hi: hi.clamp(0.0, 1.0),
        alpha,
        degenerate: false,
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-entity prevented loss: `P * (DR - DR0) / (1 - DR0)`. Negative values
/// are reported as is.
pub fn prevented_loss_entity(portfolio: f64, default_rate: f64, zero_target: f64) -> Result<f64> {
    if zero_target >= 1.0 {
        return Err(Error::hyper("DR0", format!("must be < 1, got {}", zero_target)));
    }
    Ok(portfolio * ((default_rate - zero_target) / (1.0 - zero_target)))
}

/// One entity as seen by the economic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity_id: String,
    pub score: f64,
    pub label: u8,
    pub portfolio: f64,
    pub default_rate: f64,
    pub zero_target: f64,
}

/// Total prevented loss over the `k` highest-scored entities (score ties
/// broken by entity id): `sum PL_i * b_i`.
pub fn total_pl(entities: &[ScoredEntity], budget: usize) -> Result<f64> {
    if budget < 1 {
        return Err(Error::hyper("budget", "must be >= 1"));
    }
    let mut ranked: Vec<&ScoredEntity> = entities.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    let mut total = 0.0;
    for e in ranked.into_iter().take(budget) {
        if e.label == 1 {
            total += prevented_loss_entity(e.portfolio, e.default_rate, e.zero_target)?;
        }
    }
    Ok(total)
}

/// Number of fraud entities among the `k` highest-scored.
pub fn fraud_detected(entities: &[ScoredEntity], budget: usize) -> usize {
    let mut ranked: Vec<&ScoredEntity> = entities.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    ranked.into_iter().take(budget).filter(|e| e.label == 1).count()
}

/// One-sided exact binomial tail: `p = sum_{j=wins..n} C(n,j) / 2^n`.
pub fn sign_test(wins: usize, n: usize) -> Result<f64> {
    if wins > n {
        return Err(Error::InvalidInput(format!("wins {} exceeds n {}", wins, n)));
    }
    if n == 0 {
        return Ok(1.0);
    }
    if n > 60 {
        return Err(Error::InvalidInput("sign test supports n <= 60".into()));
    }
    let mut tail = 0.0f64;
    for j in wins..=n {
        tail += binomial(n, j);
    }
    Ok(tail * 0.5f64.powi(n as i32))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Evaluation summary for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub auc_pr: MetricWithCi,
    pub auc_roc: MetricWithCi,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pl_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraud_detected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pl_per_entity: Option<Vec<(String, f64)>>,
}

impl EvalReport {
    /// Build a report from record-level scores; the economic block is
    /// filled when entity data is supplied.
    pub fn from_scores(
        model: impl Into<String>,
        scores: &[f64],
        labels: &[u8],
        alpha: f64,
        entities: Option<(&[ScoredEntity], usize)>,
    ) -> Result<EvalReport> {
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let n_neg = labels.len() - n_pos;
        let pr = auc_pr(scores, labels)?;
        let roc = auc_roc(scores, labels)?;
        let mut report = EvalReport {
            model: model.into(),
            auc_pr: auc_ci(pr, n_pos, n_neg, alpha, CiKind::Pr)?,
            auc_roc: auc_ci(roc, n_pos, n_neg, alpha, CiKind::Roc)?,
            n: labels.len(),
            n_pos,
            n_neg,
            budget: None,
            pl_total: None,
            fraud_detected: None,
            pl_per_entity: None,
        };
        if let Some((entities, budget)) = entities {
            report.budget = Some(budget);
            report.pl_total = Some(total_pl(entities, budget)?);
            report.fraud_detected = Some(fraud_detected(entities, budget));
            let mut per_entity: Vec<(String, f64)> = entities
                .iter()
                .map(|e| {
                    prevented_loss_entity(e.portfolio, e.default_rate, e.zero_target)
                        .map(|pl| (e.entity_id.clone(), pl))
                })
                .collect::<Result<_>>()?;
            per_entity.sort_by(|a, b| a.0.cmp(&b.0));
            report.pl_per_entity = Some(per_entity);
        }
        Ok(report)
    }

    /// Metric map used by the sign-test comparison.
    pub fn metric_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("auc_pr".to_string(), self.auc_pr.value),
            ("auc_roc".to_string(), self.auc_roc.value),
        ];
        if let Some(pl) = self.pl_total {
            out.push(("pl_total".to_string(), pl));
        }
        if let Some(fd) = self.fraud_detected {
            out.push(("fraud_detected".to_string(), fd as f64));
        }
        out
    }
}

/// Plain-text comparison table: one row per report, `value (± half-width)`
/// per metric column.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<[String; 3]> = vec![[
        "Model".to_string(),
        "AUC PR".to_string(),
        "AUC ROC".to_string(),
    ]];
    for r in reports {
        rows.push([
            r.model.clone(),
            format_ci(&r.auc_pr),
            format_ci(&r.auc_roc),
        ]);
    }
    let widths: Vec<usize> = (0..3)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{:<width$}", cell, width = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn format_ci(m: &MetricWithCi) -> String {
    let half = ((m.hi - m.lo) / 2.0).abs();
    format!("{:.4} (±{:.6})", m.value, half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_scores_one() {
        assert_eq!(auc_roc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        assert_eq!(auc_roc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn pairwise_fixture() {
        // pairs: (0.8 > 0.6) wins, (0.4 < 0.6) loses -> 1/2
        assert_eq!(auc_roc(&[0.8, 0.6, 0.4], &[1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auc_pr(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn reversed_ranking_single_positive() {
        // thresholds: 0.9 (neg), 0.1 (pos): AP = 1 * 1/2
        assert_eq!(auc_pr(&[0.1, 0.9], &[1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn monotone_transform_leaves_roc_unchanged() {
        let scores = [0.3, 0.7, 0.1, 0.9, 0.5, 0.2];
        let labels = [0, 1, 0, 1, 1, 0];
        let base = auc_roc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 11.0).collect();
        assert_eq!(auc_roc(&exp, &labels).unwrap(), base);
        assert_eq!(auc_roc(&affine, &labels).unwrap(), base);
    }

    #[test]
    fn label_flip_complements_roc_on_tie_free_data() {
        let scores = [0.31, 0.72, 0.11, 0.93, 0.54, 0.26];
        let labels = [0u8, 1, 0, 1, 1, 0];
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        let b = auc_roc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ci_width_shrinks_with_sample_size() {
        let small = auc_ci(0.8, 20, 20, 0.05, CiKind::Roc).unwrap();
        let large = auc_ci(0.8, 2000, 2000, 0.05, CiKind::Roc).unwrap();
        assert!(large.hi - large.lo < small.hi - small.lo);
        let small = auc_ci(0.4, 20, 20, 0.05, CiKind::Pr).unwrap();
        let large = auc_ci(0.4, 2000, 2000, 0.05, CiKind::Pr).unwrap();
        assert!(large.hi - large.lo < small.hi - small.lo);
    }

    #[test]
    fn ci_stays_in_unit_interval_and_brackets_value() {
        for &v in &[0.01, 0.3, 0.5, 0.9, 0.999] {
            for kind in [CiKind::Roc, CiKind::Pr] {
                let ci = auc_ci(v, 5, 7, 0.05, kind).unwrap();
                assert!(ci.lo >= 0.0 && ci.hi <= 1.0);
                assert!(ci.lo <= v && v <= ci.hi);
            }
        }
    }

    #[test]
    fn boundary_value_degenerates_with_flag() {
        let ci = auc_ci(1.0, 10, 10, 0.05, CiKind::Roc).unwrap();
        assert!(ci.degenerate);
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
    }

    #[test]
    fn hanley_mcneil_hand_value() {
        // A=0.5, n_pos=n_neg=100: Q1=Q2=1/3, var=(0.25+99*(1/3-0.25)*2)/10000
        let ci = auc_ci(0.5, 100, 100, 0.05, CiKind::Roc).unwrap();
        let var: f64 = (0.25 + 99.0 * (1.0 / 3.0 - 0.25) + 99.0 * (1.0 / 3.0 - 0.25)) / 10_000.0;
        let z = 1.959963984540054;
        let lo = 0.5 - z * var.sqrt();
        let hi = 0.5 + z * var.sqrt();
        assert!((ci.lo - lo).abs() < 1e-9);
        assert!((ci.hi - hi).abs() < 1e-9);
    }

    #[test]
    fn prevented_loss_fixtures() {
        // 0.55 and 0.1 are not binary-exact, so the result can sit one ulp
        // off the decimal value
        assert!((prevented_loss_entity(90_000.0, 0.55, 0.1).unwrap() - 45_000.0).abs() < 1e-9);
        assert_eq!(prevented_loss_entity(1234.0, 0.2, 0.2).unwrap(), 0.0);
        assert_eq!(prevented_loss_entity(500.0, 0.3, 0.0).unwrap(), 500.0 * 0.3);
        assert!(prevented_loss_entity(1.0, 0.5, 1.0).is_err());
    }

    fn entity(id: &str, score: f64, label: u8, p: f64, dr: f64, dr0: f64) -> ScoredEntity {
        ScoredEntity {
            entity_id: id.to_string(),
            score,
            label,
            portfolio: p,
            default_rate: dr,
            zero_target: dr0,
        }
    }

    #[test]
    fn total_pl_hand_fixture() {
        let entities = vec![
            entity("a", 0.9, 1, 90_000.0, 0.55, 0.1), // 45000, in top-2
            entity("b", 0.8, 0, 50_000.0, 0.40, 0.1), // non-fraud, skipped
            entity("c", 0.7, 1, 10_000.0, 0.30, 0.0), // 3000, outside top-2 at k=2
            entity("d", 0.2, 1, 99_000.0, 0.90, 0.1), // low score
            entity("e", 0.1, 0, 1_000.0, 0.05, 0.1),
        ];
        assert!((total_pl(&entities, 2).unwrap() - 45_000.0).abs() < 1e-9);
        assert!((total_pl(&entities, 3).unwrap() - 48_000.0).abs() < 1e-9);
        // k >= n sums every fraud entity
        let full = 45_000.0 + 3_000.0 + 99_000.0 * ((0.9 - 0.1) / 0.9);
        assert!((total_pl(&entities, 10).unwrap() - full).abs() < 1e-9);
        assert_eq!(fraud_detected(&entities, 2), 1);
    }

    #[test]
    fn total_pl_ignores_input_order_and_grows_with_budget() {
        let mut entities = vec![
            entity("a", 0.9, 1, 100.0, 0.5, 0.0),
            entity("b", 0.8, 1, 200.0, 0.5, 0.0),
            entity("c", 0.7, 1, 400.0, 0.5, 0.0),
        ];
        let forward = total_pl(&entities, 2).unwrap();
        entities.reverse();
        assert_eq!(total_pl(&entities, 2).unwrap(), forward);
        let mut prev = 0.0;
        for k in 1..=3 {
            let pl = total_pl(&entities, k).unwrap();
            assert!(pl >= prev);
            prev = pl;
        }
    }

    #[test]
    fn no_fraud_in_top_k_gives_zero() {
        let entities = vec![
            entity("a", 0.9, 0, 100.0, 0.5, 0.0),
            entity("b", 0.1, 1, 100.0, 0.5, 0.0),
        ];
        assert_eq!(total_pl(&entities, 1).unwrap(), 0.0);
    }

    #[test]
    fn sign_test_exact_values() {
        assert_eq!(sign_test(6, 6).unwrap(), 0.015625);
        assert_eq!(sign_test(0, 6).unwrap(), 1.0);
        assert_eq!(sign_test(5, 6).unwrap(), 0.109375);
        for n in 1..=20 {
            assert_eq!(sign_test(0, n).unwrap(), 1.0, "n={}", n);
            assert_eq!(sign_test(n, n).unwrap(), 0.5f64.powi(n as i32), "n={}", n);
        }
    }

    #[test]
    fn report_table_mentions_ci_columns() {
        let r = EvalReport::from_scores("demo", &[0.9, 0.4, 0.1], &[1, 0, 0], 0.05, None).unwrap();
        let table = render_table(&[r]);
        assert!(table.contains("AUC PR"));
        assert!(table.contains("±"));
    }
}
