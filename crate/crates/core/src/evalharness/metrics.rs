use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazedata::Label;

/// Area under the ROC curve as the Mann-Whitney statistic, computed from
/// mid-ranks so tied scores count one half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape("roc_auc", "scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("roc_auc: NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("roc_auc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled mid-ranks of positives keeps everything integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, doubled mid-rank = i + j + 2
        let pos_in_group = order[i..=j].iter().filter(|&&k| positives[k]).count() as u128;
        rank_sum2 += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// `(TP / (TP + FN), TN / (TN + FP))` with patients as the positive class.
pub fn sensitivity_specificity(predicted: &[Label], truth: &[Label]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("sensitivity_specificity", "length mismatch"));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        match (t.is_positive(), p.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::SingleClass("sensitivity_specificity"));
    }
    Ok((tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64))
}

/// Decision rule shared by every classifier: patient iff `p > 0.5`.
pub fn decide(p_patient: f64) -> Label {
    if p_patient > 0.5 {
        Label::Patient
    } else {
        Label::Control
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn compute(scores: &[f64], truth: &[Label]) -> Result<Self> {
        let positives: Vec<bool> = truth.iter().map(|l| l.is_positive()).collect();
        let predicted: Vec<Label> = scores.iter().map(|&s| decide(s)).collect();
        let auc = roc_auc(scores, &positives)?;
        let (sensitivity, specificity) = sensitivity_specificity(&predicted, truth)?;
        Ok(Metrics {
            auc,
            sensitivity,
            specificity,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Auc => self.auc,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Sensitivity,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auc, Metric::Sensitivity, Metric::Specificity];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], pos: &[bool]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    hits += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.6, 0.4, 0.7, 0.2], &[true, false, false, true]).unwrap(), 0.25);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass(_))));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 19.0).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let fast = roc_auc(&scores, &pos).unwrap();
            prop_assert!((fast - pairwise(&scores, &pos)).abs() < 1e-12);
            // invariant under strictly increasing transforms
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&warped, &pos).unwrap(), fast);
        }
    }

    #[test]
    fn sensitivity_specificity_examples() {
        use Label::{Control as C, Patient as P};
        let (sens, _) = sensitivity_specificity(&[P, P, P, C, C], &[P, P, P, P, C]).unwrap();
        assert_eq!(sens, 0.75);
        assert_eq!(sensitivity_specificity(&[P, P, P], &[P, C, C]).unwrap(), (1.0, 0.0));
        assert_eq!(sensitivity_specificity(&[P, C], &[P, C]).unwrap(), (1.0, 1.0));
        assert!(sensitivity_specificity(&[P, C], &[C, C]).is_err());
    }

    #[test]
    fn tie_predicts_control() {
        assert_eq!(decide(0.5), Label::Control);
        assert_eq!(decide(0.5000001), Label::Patient);
    }
}
