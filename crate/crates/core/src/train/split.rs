use diffcore::random::rng;
use rand::seq::SliceRandom;

use crate::error::{HsdaError, Result};

/// Held-out test indices and `k` validation folds over the rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Split {
    /// Training indices for fold `f`: every fold except `f`.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    }
}

/// Splits `quota` units across classes in proportion to their sizes using
/// largest remainders; ties go to the lower class index.
fn apportion(sizes: &[usize], quota: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| quota as f64 * s as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = quota - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Seeded stratified split. `round(test_fraction·n)` samples form the test
/// set; the remainder is dealt class by class, round robin, into `k` folds.
pub fn split_and_fold(labels: &[usize], n_classes: usize, k: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if k < 2 {
        return Err(HsdaError::Config("k_folds must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(HsdaError::Config(format!("test_fraction {test_fraction} outside [0, 1)")));
    }
    let mut r = rng(seed, 2);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| HsdaError::Usage(format!("label {l} out of range")))?
            .push(i);
    }
    for members in by_class.iter_mut() {
        members.shuffle(&mut r);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let n_test = (test_fraction * labels.len() as f64).round() as usize;
    let test_alloc = apportion(&sizes, n_test);
    for (c, (&s, &t)) in sizes.iter().zip(&test_alloc).enumerate() {
        if s > 0 && s - t < k {
            return Err(HsdaError::Protocol(format!(
                "class {c} has {} training samples, fewer than {k} folds",
                s - t
            )));
        }
    }
    let mut test = Vec::with_capacity(n_test);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for (members, &t) in by_class.iter().zip(&test_alloc) {
        test.extend_from_slice(&members[..t]);
        for &i in &members[t..] {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    Ok(Split { test, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[17, 17], 7), vec![4, 3]);
        assert_eq!(apportion(&[10, 30], 8), vec![2, 6]);
        assert_eq!(apportion(&[3, 3], 0), vec![0, 0]);
    }
}
