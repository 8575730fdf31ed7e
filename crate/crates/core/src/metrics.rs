//! Classification metrics and the fold-wise significance test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided significance level used for test conclusions.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} scores", labels.len()),
            found: scores.len().to_string(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() || pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the normalized Mann-Whitney U statistic.
/// Tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid_rank * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean of sensitivity and specificity, predicting positive when
/// `score > threshold`.
pub fn balanced_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l) {
            (true, 1) => tp += 1,
            (false, 0) => tn += 1,
            _ => {}
        }
    }
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestMode {
    /// Student's t on per-fold differences, `k − 1` degrees of freedom.
    Paired,
    /// Pooled-variance Student's t treating the two arms as independent,
    /// `2k − 2` degrees of freedom.
    TwoSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    NoSignificantDifference,
    SignificantDifference,
    /// The differences have zero variance; no t statistic exists. If they are
    /// all zero the arms are exactly equal.
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub metric: String,
    pub mode: TTestMode,
    /// `a − b` per fold.
    pub differences: Vec<f64>,
    pub mean_difference: f64,
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub degrees_of_freedom: usize,
    pub outcome: TestOutcome,
}

impl PairedTestResult {
    /// True for the exact-equality degenerate case.
    pub fn exactly_equal(&self) -> bool {
        self.outcome == TestOutcome::ZeroVariance && self.differences.iter().all(|&d| d == 0.0)
    }
}

fn two_sided_p(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df ≥ 1");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Paired two-sided Student's t-test of `a` against `b` over folds.
pub fn paired_t_test(metric: &str, a: &[f64], b: &[f64]) -> Result<PairedTestResult> {
    t_test(metric, a, b, TTestMode::Paired)
}

pub fn t_test(metric: &str, a: &[f64], b: &[f64], mode: TTestMode) -> Result<PairedTestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("{} values", a.len()),
            found: b.len().to_string(),
        });
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            found: k,
        });
    }
    let kf = k as f64;
    let differences: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_difference = differences.iter().sum::<f64>() / kf;
    let sample_var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / kf;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (kf - 1.0)
    };

    let (std_err, df) = match mode {
        TTestMode::Paired => ((sample_var(&differences) / kf).sqrt(), k - 1),
        TTestMode::TwoSample => {
            let pooled = 0.5 * (sample_var(a) + sample_var(b));
            ((pooled * 2.0 / kf).sqrt(), 2 * k - 2)
        }
    };
    let degenerate = match mode {
        TTestMode::Paired => differences.iter().all(|&d| d == differences[0]),
        TTestMode::TwoSample => std_err == 0.0,
    };

    let (t_statistic, p_value, outcome) = if degenerate || std_err == 0.0 {
        (None, None, TestOutcome::ZeroVariance)
    } else {
        let t = mean_difference / std_err;
        let p = two_sided_p(t, df);
        let outcome = if p < SIGNIFICANCE_LEVEL {
            TestOutcome::SignificantDifference
        } else {
            TestOutcome::NoSignificantDifference
        };
        (Some(t), Some(p), outcome)
    };
    Ok(PairedTestResult {
        metric: metric.to_string(),
        mode,
        differences,
        mean_difference,
        t_statistic,
        p_value,
        degrees_of_freedom: df,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(),
            0.75
        );
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn balanced_accuracy_cases() {
        let labels = [1, 1, 1, 1, 0, 0, 0, 0];
        let perfect = [0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4];
        assert_eq!(balanced_accuracy(&perfect, &labels, 0.5).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0.9; 8], &labels, 0.5).unwrap(), 0.5);
        // 2 of 4 positives and 3 of 4 negatives correct.
        let mixed = [0.9, 0.8, 0.2, 0.1, 0.1, 0.2, 0.3, 0.7];
        assert_eq!(balanced_accuracy(&mixed, &labels, 0.5).unwrap(), 0.625);
        assert!(balanced_accuracy(&[0.5], &[0], 0.5).is_err());
    }

    #[test]
    fn t_test_degenerate_paths() {
        let same = paired_t_test("auc", &[0.7, 0.8, 0.75], &[0.7, 0.8, 0.75]).unwrap();
        assert_eq!(same.outcome, TestOutcome::ZeroVariance);
        assert!(same.exactly_equal());
        assert!(same.t_statistic.is_none());

        let shifted = paired_t_test("auc", &[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(shifted.outcome, TestOutcome::ZeroVariance);
        assert!(!shifted.exactly_equal());
        assert_eq!(shifted.mean_difference, 1.0);
    }

    #[test]
    fn t_test_against_textbook_values() {
        // scipy.stats.ttest_1samp([0.02, -0.01, 0.03, 0.00, -0.02], 0)
        let d = [0.02, -0.01, 0.03, 0.00, -0.02];
        let r = paired_t_test("auc", &d, &[0.0; 5]).unwrap();
        assert_eq!(r.degrees_of_freedom, 4);
        assert!((r.t_statistic.unwrap() - 0.431_331_092_813_753_65).abs() < 1e-12);
        assert!((r.p_value.unwrap() - 0.688_457_089_776_004_1).abs() < 1e-9);
        assert_eq!(r.outcome, TestOutcome::NoSignificantDifference);

        // scipy.stats.ttest_ind(a, b) with pooled variance.
        let a = [0.80, 0.75, 0.78, 0.82, 0.77];
        let b = [0.78, 0.76, 0.75, 0.82, 0.79];
        let r = t_test("auc", &a, &b, TTestMode::TwoSample).unwrap();
        assert_eq!(r.degrees_of_freedom, 8);
        assert!((r.t_statistic.unwrap() - 0.232_495_277_487_638_87).abs() < 1e-12);
        assert!((r.p_value.unwrap() - 0.821_990_913_338_832_3).abs() < 1e-9);
    }
}
