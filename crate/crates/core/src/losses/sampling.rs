use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

/// κ-guided pixel sampling: a `beta` share of the budget goes to the least
/// confident pixels, the rest is drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub beta: f64,
    /// Budget per scale as a fraction of the (valid) pixel count.
    pub fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            beta: 0.7,
            fraction: 0.4,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta", format!("{} outside [0, 1]", self.beta)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(
                "sample fraction",
                format!("{} outside (0, 1]", self.fraction),
            ));
        }
        Ok(())
    }

    /// Pixel budget for `available` candidates, at least one.
    pub fn budget(&self, available: usize) -> usize {
        ((self.fraction * available as f64).round() as usize).clamp(1, available.max(1))
    }
}

/// Picks `count` distinct pixel indices (row-major) from a single-channel κ
/// map: the `floor(beta * count)` lowest-κ pixels, ties broken by index,
/// followed by uniform draws without replacement from the rest. Pixels with
/// `mask[i] == false` are never picked.
pub fn uncertainty_sample(
    kappa: &ImageGrid,
    mask: Option<&[bool]>,
    beta: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if kappa.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "kappa map has {} channels",
            kappa.channels()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} outside [0, 1]")));
    }
    let values = kappa.data();
    let pool: Vec<usize> = match mask {
        Some(m) if m.len() != values.len() => {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for {} pixels",
                m.len(),
                values.len()
            )))
        }
        Some(m) => (0..values.len()).filter(|&i| m[i]).collect(),
        None => (0..values.len()).collect(),
    };
    if count == 0 {
        return Err(Error::invalid("sample count", "must be at least 1"));
    }
    if count > pool.len() {
        return Err(Error::SampleBudget {
            requested: count,
            available: pool.len(),
        });
    }
    let lowest = ((beta * count as f64).floor() as usize).min(count);
    let mut ranked = pool.clone();
    ranked.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    ranked.truncate(lowest);
    // the remainder stays in index order so the random draws do not depend
    // on the kappa values outside the lowest set
    let mut taken = vec![false; values.len()];
    for &i in &ranked {
        taken[i] = true;
    }
    let mut rest: Vec<usize> = pool.into_iter().filter(|&i| !taken[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates over the remainder
    let draws = count - lowest;
    for i in 0..draws {
        let j = rng.random_range(i..rest.len());
        rest.swap(i, j);
    }
    ranked.extend_from_slice(&rest[..draws]);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn kappa_map(v: Vec<f64>) -> ImageGrid {
        ImageGrid::from_vec(1, v.len(), 1, v).unwrap()
    }

    #[test]
    fn beta_one_takes_lowest_with_index_ties() {
        let k = kappa_map(vec![3.0, 1.0, 2.0, 1.0, 0.5, 2.0]);
        assert_eq!(uncertainty_sample(&k, None, 1.0, 4, 0).unwrap(), vec![4, 1, 3, 2]);
    }

    #[test]
    fn beta_zero_is_uniform() {
        let k = kappa_map((0..1000).map(|i| i as f64).collect());
        let s = uncertainty_sample(&k, None, 0.0, 100, 5).unwrap();
        // uniform draws are not concentrated on the low-kappa end
        let mean = s.iter().sum::<usize>() as f64 / 100.0;
        assert!((mean - 500.0).abs() < 120.0, "mean index {mean}");
    }

    #[test]
    fn errors() {
        let k = kappa_map(vec![1.0; 4]);
        assert!(matches!(
            uncertainty_sample(&k, None, 0.5, 5, 0),
            Err(Error::SampleBudget { .. })
        ));
        assert!(matches!(
            uncertainty_sample(&k, Some(&[true, false, false, false]), 0.5, 2, 0),
            Err(Error::SampleBudget { .. })
        ));
        assert!(uncertainty_sample(&k, None, 1.5, 2, 0).is_err());
    }

    #[test]
    fn mask_excludes_pixels() {
        let k = kappa_map(vec![0.1, 5.0, 0.2, 6.0, 7.0]);
        let mask = [false, true, true, true, true];
        let s = uncertainty_sample(&k, Some(&mask), 0.5, 4, 1).unwrap();
        assert_eq!(s[..2], [2, 1]);
        assert!(!s.contains(&0));
    }

    proptest! {
        #[test]
        fn size_distinctness_and_determinism(
            vals in proptest::collection::vec(0.0f64..3.0, 1..300),
            beta in 0.0f64..=1.0,
            frac in 0.01f64..=1.0,
            seed in any::<u64>(),
        ) {
            let n = vals.len();
            let count = ((frac * n as f64).ceil() as usize).clamp(1, n);
            let k = kappa_map(vals);
            let s = uncertainty_sample(&k, None, beta, count, seed).unwrap();
            prop_assert_eq!(s.len(), count);
            prop_assert_eq!(s.iter().collect::<HashSet<_>>().len(), count);
            prop_assert!(s.iter().all(|&i| i < n));
            prop_assert_eq!(s, uncertainty_sample(&k, None, beta, count, seed).unwrap());
        }
    }
}
