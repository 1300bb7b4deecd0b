use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gazedata::Label;

/// Per-fold class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FoldCounts {
    pub patients: usize,
    pub controls: usize,
}

/// A partition of users into `k` test folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted user ids of each test fold.
    pub folds: Vec<Vec<String>>,
    pub counts: Vec<FoldCounts>,
}

impl FoldPlan {
    pub fn test_users(&self, fold: usize) -> BTreeSet<&str> {
        self.folds[fold].iter().map(String::as_str).collect()
    }

    pub fn fold_of(&self, user: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.binary_search_by(|u| u.as_str().cmp(user)).is_ok())
    }
}

/// Users are shuffled within class, then dealt round-robin: patients
/// first, controls continuing from the fold after the last patient.
pub fn stratified_group_kfold(users: &[(String, Label)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut by_user: BTreeMap<&str, Label> = BTreeMap::new();
    for (u, l) in users {
        if let Some(prev) = by_user.insert(u.as_str(), *l) {
            if prev != *l {
                return Err(Error::InvalidArgument(format!("user `{u}` has conflicting labels")));
            }
        }
    }
    if k > by_user.len() {
        return Err(Error::TooManyFolds {
            k,
            users: by_user.len(),
        });
    }
    let mut patients: Vec<&str> = by_user.iter().filter(|(_, l)| **l == Label::Patient).map(|(u, _)| *u).collect();
    let mut controls: Vec<&str> = by_user.iter().filter(|(_, l)| **l == Label::Control).map(|(u, _)| *u).collect();
    if patients.is_empty() || controls.is_empty() {
        return Err(Error::SingleClass("stratified_group_kfold"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    controls.shuffle(&mut rng);

    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut counts = vec![FoldCounts { patients: 0, controls: 0 }; k];
    for (i, u) in patients.iter().enumerate() {
        folds[i % k].push(u.to_string());
        counts[i % k].patients += 1;
    }
    let offset = patients.len() % k;
    for (i, u) in controls.iter().enumerate() {
        let f = (offset + i) % k;
        folds[f].push(u.to_string());
        counts[f].controls += 1;
    }
    folds.iter_mut().for_each(|f| f.sort());
    Ok(FoldPlan { k, seed, folds, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(p: usize, c: usize) -> Vec<(String, Label)> {
        (0..p)
            .map(|i| (format!("P{i:03}"), Label::Patient))
            .chain((0..c).map(|i| (format!("C{i:03}"), Label::Control)))
            .collect()
    }

    #[test]
    fn exact_divisibility() {
        let plan = stratified_group_kfold(&cohort(5, 5), 5, 1).unwrap();
        assert!(plan.counts.iter().all(|c| c.patients == 1 && c.controls == 1));
    }

    #[test]
    fn paper_cohort_shape() {
        let plan = stratified_group_kfold(&cohort(69, 75), 10, 9).unwrap();
        for c in &plan.counts {
            assert!((6..=7).contains(&c.patients), "{c:?}");
            assert!((7..=8).contains(&c.controls), "{c:?}");
        }
        let total: usize = plan.folds.iter().map(Vec::len).sum();
        assert_eq!(total, 144);
        let all: BTreeSet<&String> = plan.folds.iter().flatten().collect();
        assert_eq!(all.len(), 144);
        assert!(plan.fold_of("P000").is_some());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = stratified_group_kfold(&cohort(12, 9), 3, 4).unwrap();
        let b = stratified_group_kfold(&cohort(12, 9), 3, 4).unwrap();
        let c = stratified_group_kfold(&cohort(12, 9), 3, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.folds, c.folds);
    }

    #[test]
    fn argument_errors() {
        assert!(stratified_group_kfold(&cohort(3, 3), 1, 0).is_err());
        assert!(matches!(
            stratified_group_kfold(&cohort(20, 20), 200, 0),
            Err(Error::TooManyFolds { k: 200, users: 40 })
        ));
        assert!(matches!(stratified_group_kfold(&cohort(4, 0), 2, 0), Err(Error::SingleClass(_))));
    }
}
