//! k-shot support-set construction and stratified splitting.

use crate::data::{Dataset, SupportSet};
use crate::error::{Error, Result};
use crate::numerics::Rng;

fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.class_count];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    by_class
}

/// Draw exactly k samples per requested class, without replacement,
/// deterministic under the generator.
pub fn build_support_set(
    dataset: &Dataset,
    k: usize,
    classes: &[usize],
    rng: &mut Rng,
) -> Result<SupportSet> {
    for &c in classes {
        if c >= dataset.class_count {
            return Err(Error::Index {
                what: "class",
                index: c,
                bound: dataset.class_count,
            });
        }
    }
    let by_class = indices_by_class(dataset);
    let mut support = SupportSet::new(k, classes.to_vec());
    for &c in classes {
        let pool = &by_class[c];
        if pool.len() < k {
            return Err(Error::Scarcity {
                class: c,
                requested: k,
                available: pool.len(),
            });
        }
        let mut idx = pool.clone();
        rng.shuffle(&mut idx);
        let chosen = support.per_class.get_mut(&c).expect("class pre-inserted");
        for &i in idx.iter().take(k) {
            chosen.push(dataset.samples[i].clone());
        }
    }
    debug_assert!(support.is_balanced());
    Ok(support)
}

/// Stratified split into (train, test). Fractions must sum to 1; every
/// class needs at least two samples.
pub fn split(dataset: &Dataset, fractions: (f64, f64), rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let (f_train, f_test) = fractions;
    if (f_train + f_test - 1.0).abs() > 1e-9 || f_train < 0.0 || f_test < 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative and sum to 1, got ({f_train}, {f_test})"
        )));
    }
    let by_class = indices_by_class(dataset);
    for (c, pool) in by_class.iter().enumerate() {
        if !pool.is_empty() && pool.len() < 2 {
            return Err(Error::Stratification {
                class: c,
                count: pool.len(),
            });
        }
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for pool in &by_class {
        if pool.is_empty() {
            continue;
        }
        let mut idx = pool.clone();
        rng.shuffle(&mut idx);
        let n_train = (f_train * idx.len() as f64).round() as usize;
        let n_train = n_train.min(idx.len());
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize], tag: &str| Dataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        domain_id: format!("{}:{}", dataset.domain_id, tag),
        class_count: dataset.class_count,
        height: dataset.height,
        width: dataset.width,
    };
    Ok((pick(&train_idx, "train"), pick(&test_idx, "test")))
}
