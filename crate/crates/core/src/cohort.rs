//! Patient-level fold planning and nested stratified subsampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingTable;

/// Fractions used by the label-efficiency results figures.
pub const RESULTS_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];
/// Fractions listed in the label-efficiency dataset description.
pub const METHODS_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("table has no group ids")]
    MissingGroups,
    #[error("table has no labels")]
    MissingLabels,
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("{groups} distinct groups cannot fill {k} folds")]
    TooFewGroups { groups: usize, k: usize },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("fractions must be strictly increasing")]
    FractionsNotIncreasing,
    #[error("class {0} has no rows to sample from")]
    EmptyClass(usize),
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Rows kept at one label fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleMask {
    pub fraction: f64,
    pub selected: Vec<bool>,
    pub seed: u64,
}

impl SubsampleMask {
    pub fn rows(&self) -> Vec<usize> {
        (0..self.selected.len()).filter(|&i| self.selected[i]).collect()
    }
}

/// Splits rows into `k` folds without splitting any group.
///
/// Groups are shuffled with `seed`, stably sorted largest first, and each is
/// placed in the fold with the fewest rows so far (lowest index on ties).
pub fn group_kfold(table: &EmbeddingTable, k: usize, seed: u64) -> Result<FoldPlan, CohortError> {
    let groups = table.groups.as_ref().ok_or(CohortError::MissingGroups)?;
    group_kfold_ids(groups, k, seed)
}

pub fn group_kfold_ids(groups: &[i32], k: usize, seed: u64) -> Result<FoldPlan, CohortError> {
    if k < 2 {
        return Err(CohortError::TooFewFolds(k));
    }
    let mut sizes: BTreeMap<i32, usize> = BTreeMap::new();
    for &g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    if sizes.len() < k {
        return Err(CohortError::TooFewGroups {
            groups: sizes.len(),
            k,
        });
    }
    let mut order: Vec<(i32, usize)> = sizes.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by_key(|&(_, size)| std::cmp::Reverse(size));

    let mut fold_rows = vec![0usize; k];
    let mut fold_of: BTreeMap<i32, usize> = BTreeMap::new();
    for (g, size) in order {
        let target = (0..k).min_by_key(|&f| (fold_rows[f], f)).unwrap();
        fold_rows[target] += size;
        fold_of.insert(g, target);
    }
    Ok(FoldPlan {
        k,
        assignment: groups.iter().map(|g| fold_of[g]).collect(),
        seed,
    })
}

/// `max(1, round_half_up(fraction * count))`, capped at `count`.
pub fn class_quota(fraction: f64, count: usize) -> usize {
    // the epsilon keeps products like 0.1 * 25 = 2.4999.. on the intended side
    let q = (fraction * count as f64 + 0.5 + 1e-9).floor() as usize;
    q.clamp(1, count)
}

fn check_fractions(fractions: &[f64]) -> Result<(), CohortError> {
    if let Some(&f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(CohortError::BadFraction(f));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CohortError::FractionsNotIncreasing);
    }
    Ok(())
}

/// Nested per-class subsamples of the whole table.
pub fn stratified_subsample(
    table: &EmbeddingTable,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<SubsampleMask>, CohortError> {
    let labels = table.labels.as_ref().ok_or(CohortError::MissingLabels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    stratified_subsample_rows(labels, &rows, table.n_classes(), fractions, seed)
}

/// Nested per-class subsamples drawn from `rows` only. Masks span all
/// `labels.len()` rows; rows outside `rows` are never selected.
///
/// Each class's rows are shuffled once and every fraction takes a prefix of
/// that order, so smaller fractions are subsets of larger ones.
pub fn stratified_subsample_rows(
    labels: &[i32],
    rows: &[usize],
    n_classes: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<SubsampleMask>, CohortError> {
    check_fractions(fractions)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for &i in rows {
        let y = labels[i];
        if y >= 0 && (y as usize) < n_classes {
            by_class[y as usize].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(CohortError::EmptyClass(c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    Ok(fractions
        .iter()
        .map(|&fraction| {
            let mut selected = vec![false; labels.len()];
            for members in &by_class {
                for &i in &members[..class_quota(fraction, members.len())] {
                    selected[i] = true;
                }
            }
            SubsampleMask {
                fraction,
                selected,
                seed,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TableMeta;
    use proptest::prelude::*;

    fn table_with(labels: Vec<i32>, groups: Vec<i32>) -> EmbeddingTable {
        let n = labels.len();
        EmbeddingTable::new(
            n,
            1,
            (0..n).map(|i| i as f32).collect(),
            Some(labels),
            Some(groups),
            TableMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn equal_groups_split_evenly() {
        let groups: Vec<i32> = (0..10).flat_map(|g| [g, g, g]).collect();
        let plan = group_kfold_ids(&groups, 5, 3).unwrap();
        for f in 0..5 {
            let mut gs: Vec<i32> = plan.test_rows(f).iter().map(|&i| groups[i]).collect();
            gs.dedup();
            assert_eq!(gs.len(), 2, "fold {f} holds {gs:?}");
        }
    }

    #[test]
    fn greedy_assignment_by_hand() {
        // group sizes 5, 3, 3, 1
        let mut groups = vec![0; 5];
        groups.extend([1; 3]);
        groups.extend([2; 3]);
        groups.push(3);
        for seed in 0..20 {
            let plan = group_kfold_ids(&groups, 2, seed).unwrap();
            let mut sizes = plan.fold_sizes();
            sizes.sort();
            assert_eq!(sizes, vec![6, 6]);
            // the 5-row group always lands with the singleton
            assert_eq!(plan.assignment[0], plan.assignment[11]);
            assert_eq!(plan.assignment[5], plan.assignment[8]);
        }
    }

    #[test]
    fn too_few_groups() {
        assert_eq!(
            group_kfold_ids(&[1, 1, 2], 3, 0),
            Err(CohortError::TooFewGroups { groups: 2, k: 3 })
        );
        assert_eq!(group_kfold_ids(&[1, 2], 1, 0), Err(CohortError::TooFewFolds(1)));
    }

    #[test]
    fn subsample_quota_by_class() {
        let t = table_with(vec![0, 0, 0, 0, 1, 1], vec![0, 1, 2, 3, 4, 5]);
        let masks = stratified_subsample(&t, &[0.5, 1.0], 9).unwrap();
        let labels = t.labels.as_ref().unwrap();
        let count = |m: &SubsampleMask, c| m.rows().iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(&masks[0], 0), count(&masks[0], 1)), (2, 1));
        assert!(masks[1].selected.iter().all(|&s| s));
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(class_quota(0.5, 4), 2);
        assert_eq!(class_quota(0.5, 2), 1);
        assert_eq!(class_quota(0.5, 3), 2);
        assert_eq!(class_quota(0.125, 4), 1);
        assert_eq!(class_quota(0.125, 3), 1);
        assert_eq!(class_quota(0.1, 25), 3);
        assert_eq!(class_quota(1.0, 7), 7);
    }

    #[test]
    fn fraction_checks() {
        let t = table_with(vec![0, 1], vec![0, 1]);
        assert_eq!(
            stratified_subsample(&t, &[0.5, 0.25], 0),
            Err(CohortError::FractionsNotIncreasing)
        );
        assert_eq!(stratified_subsample(&t, &[0.0], 0), Err(CohortError::BadFraction(0.0)));
        assert_eq!(
            stratified_subsample_rows(&[0, 1, 1], &[1, 2], 2, &[1.0], 0),
            Err(CohortError::EmptyClass(0))
        );
    }

    proptest! {
        #[test]
        fn folds_respect_groups(
            groups in prop::collection::vec(0i32..15, 5..80),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let distinct = groups.iter().collect::<std::collections::BTreeSet<_>>().len();
            prop_assume!(distinct >= k);
            let plan = group_kfold_ids(&groups, k, seed).unwrap();
            let mut seen = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                let f = *seen.entry(*g).or_insert(plan.assignment[i]);
                prop_assert_eq!(f, plan.assignment[i]);
            }
            let sizes = plan.fold_sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
            let largest = groups.iter().map(|g| groups.iter().filter(|h| *h == g).count()).max().unwrap();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= largest);
            prop_assert_eq!(plan, group_kfold_ids(&groups, k, seed).unwrap());
        }

        #[test]
        fn masks_nest_and_cover_classes(
            labels in prop::collection::vec(0i32..4, 8..60),
            seed in any::<u64>(),
        ) {
            let c = (*labels.iter().max().unwrap() + 1) as usize;
            let present = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
            prop_assume!(present == c);
            let rows: Vec<usize> = (0..labels.len()).collect();
            let masks = stratified_subsample_rows(&labels, &rows, c, &RESULTS_FRACTIONS, seed).unwrap();
            for w in masks.windows(2) {
                for i in 0..labels.len() {
                    prop_assert!(!w[0].selected[i] || w[1].selected[i]);
                }
            }
            for m in &masks {
                for class in 0..c as i32 {
                    prop_assert!(m.rows().iter().any(|&i| labels[i] == class));
                }
            }
        }
    }
}
