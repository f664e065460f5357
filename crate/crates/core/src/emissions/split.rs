use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmissionsError, MicroTrip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    /// When false, a plain seeded shuffle split of `round(train_frac · n)`.
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            stratified: true,
            seed: 0,
        }
    }
}

/// Per-class stratified split of binary labels into `(train, test)` index
/// lists, each in ascending order.
///
/// Class `c` with `n_c` members contributes `round(train_frac · n_c)`
/// samples to train, clamped to `[1, n_c − 1]` so both sides see both
/// classes. Which members go to train is a seeded shuffle.
pub fn split_indices(labels: &[u8], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), EmissionsError> {
    if !(spec.train_frac > 0.0 && spec.train_frac < 1.0) {
        return Err(EmissionsError::InvalidFraction(spec.train_frac));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EmissionsError::InvalidLabel(bad));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if !spec.stratified {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        let k = (spec.train_frac * labels.len() as f64).round() as usize;
        let (mut train, mut test) = (all[..k].to_vec(), all[k..].to_vec());
        train.sort_unstable();
        test.sort_unstable();
        return Ok((train, test));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(EmissionsError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        let n = members.len();
        let k = ((spec.train_frac * n as f64).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// [`split_indices`] applied to micro-trips; both halves keep input order.
pub fn stratified_split(
    trips: &[MicroTrip],
    spec: &SplitSpec,
) -> Result<(Vec<MicroTrip>, Vec<MicroTrip>), EmissionsError> {
    let labels: Vec<u8> = trips.iter().map(|t| t.label).collect();
    let (train, test) = split_indices(&labels, spec)?;
    Ok((
        train.iter().map(|&i| trips[i].clone()).collect(),
        test.iter().map(|&i| trips[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, pos: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < pos)).collect()
    }

    fn count_pos(l: &[u8], idx: &[usize]) -> usize {
        idx.iter().filter(|&&i| l[i] == 1).count()
    }

    #[test]
    fn hundred_with_ten_positives() {
        let l = labels(100, 10);
        let (tr, te) = split_indices(&l, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 20);
        assert_eq!(count_pos(&l, &tr), 8);
        assert_eq!(count_pos(&l, &te), 2);
    }

    #[test]
    fn imbalanced_ten_thousand() {
        let l = labels(10_000, 228);
        let (tr, te) = split_indices(&l, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 8000);
        assert_eq!(count_pos(&l, &tr), 182);
        assert_eq!(count_pos(&l, &te), 46);
    }

    #[test]
    fn tiny_class_is_clamped_or_rejected() {
        let l = labels(50, 2);
        let (tr, te) = split_indices(&l, &SplitSpec { train_frac: 0.9, seed: 1, ..Default::default() }).unwrap();
        assert_eq!(count_pos(&l, &tr), 1);
        assert_eq!(count_pos(&l, &te), 1);
        assert!(matches!(
            split_indices(&labels(50, 1), &SplitSpec::default()),
            Err(EmissionsError::ClassTooSmall { class: 1, count: 1 })
        ));
        assert!(split_indices(&l, &SplitSpec { train_frac: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn same_seed_same_split() {
        let l = labels(300, 40);
        let spec = SplitSpec { seed: 5, ..Default::default() };
        assert_eq!(split_indices(&l, &spec).unwrap(), split_indices(&l, &spec).unwrap());
        let plain = SplitSpec { stratified: false, ..spec };
        let (tr, te) = split_indices(&l, &plain).unwrap();
        assert_eq!((tr.len(), te.len()), (240, 60));
    }

    proptest! {
        #[test]
        fn partition_and_proportions(n in 4usize..400, frac in 0.05f64..0.95, seed: u64, pos_frac in 0.01f64..0.99) {
            let pos = ((n as f64 * pos_frac) as usize).clamp(2, n - 2);
            let l = labels(n, pos);
            let (tr, te) = split_indices(&l, &SplitSpec { train_frac: frac, seed, ..Default::default() }).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let p_tr = count_pos(&l, &tr);
            let expect = ((frac * pos as f64).round() as usize).clamp(1, pos - 1);
            prop_assert_eq!(p_tr, expect);
            prop_assert!((p_tr as f64 - frac * pos as f64).abs() <= 1.0);
            prop_assert!(tr.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
