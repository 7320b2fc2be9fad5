use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sample indices grouped by class, in ascending class order.
fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    classes
}

/// Class-stratified hold-out split over sample indices.
///
/// Each class sends `round(n_c * test_fraction)` samples to the test side,
/// clamped to `1..=n_c - 1`. Returns sorted `(train, test)` index lists.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class(labels) {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall { class, count: members.len(), needed: 2 });
        }
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Class-stratified K-fold partition over sample indices.
///
/// Within each class the shuffled members are dealt round-robin over the
/// folds, continuing from where the previous class stopped so fold totals
/// stay balanced too.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0;
    for (class, mut members) in by_class(labels) {
        if members.len() < k {
            return Err(Error::ClassTooSmall { class, count: members.len(), needed: k });
        }
        members.shuffle(&mut rng);
        for m in members {
            assignment[m] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|fold| {
            let (validation, train) = (0..labels.len()).partition(|&i| assignment[i] == fold);
            Fold { train, validation }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes * per).map(|i| i % classes).collect()
    }

    #[test]
    fn exact_split_for_balanced_classes() {
        let labels = balanced(10, 10);
        let (train, test) = stratified_split(&labels, 0.2, 1).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 80);
        for c in 0..10 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(stratified_split(&labels, 0.2, 1).unwrap(), (train, test));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(stratified_split(&[0, 0, 1], 0.2, 0), Err(Error::ClassTooSmall { class: 1, .. })));
        assert!(stratified_split(&[0, 0], 1.0, 0).is_err());
    }

    #[test]
    fn kfold_balanced() {
        let labels = balanced(4, 8);
        let folds = stratified_kfold(&labels, 4, 3).unwrap();
        for fold in &folds {
            for c in 0..4 {
                assert_eq!(fold.validation.iter().filter(|&&i| labels[i] == c).count(), 2);
            }
            assert_eq!(fold.train.len() + fold.validation.len(), 32);
        }
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..32).collect::<Vec<_>>());
        assert!(matches!(stratified_kfold(&[0, 0, 0, 1], 4, 0), Err(Error::ClassTooSmall { .. })));
    }

    proptest! {
        #[test]
        fn split_is_stratified_partition(sizes in prop::collection::vec(2usize..40, 1..8), seed in any::<u64>()) {
            let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let (train, test) = stratified_split(&labels, 0.2, seed).unwrap();
            let mut all = [train.clone(), test.clone()].concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in sizes.iter().enumerate() {
                let got = test.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((got - n as f64 * 0.2).abs() <= 1.0);
            }
        }

        #[test]
        fn kfold_is_stratified_partition(sizes in prop::collection::vec(4usize..30, 1..6), seed in any::<u64>()) {
            let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let folds = stratified_kfold(&labels, 4, seed).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in &folds {
                f.validation.iter().for_each(|&i| seen[i] += 1);
                prop_assert_eq!(f.train.len() + f.validation.len(), labels.len());
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            for c in 0..sizes.len() {
                let counts: Vec<usize> = folds.iter().map(|f| f.validation.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
        }
    }
}
