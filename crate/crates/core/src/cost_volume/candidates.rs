use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSpacing {
    /// Uniform in 1/d.
    #[default]
    InverseDepth,
    /// Uniform in d.
    Linear,
}

impl std::str::FromStr for DepthSpacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" | "inverse_depth" | "inverse-depth" => Ok(Self::InverseDepth),
            "linear" => Ok(Self::Linear),
            other => Err(Error::invalid(
                "depth spacing",
                format!("unknown spacing {other:?}"),
            )),
        }
    }
}

/// Strictly increasing depth hypotheses spanning `[near, far]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCandidates {
    values: Vec<f64>,
}

impl DepthCandidates {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("depth candidates", "need at least two"));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) || values[0] <= 0.0 {
            return Err(Error::invalid(
                "depth candidates",
                "must be positive and strictly increasing",
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Width of the candidate interval containing `depth` (clamped to the ends).
    pub fn local_spacing(&self, depth: f64) -> f64 {
        let v = &self.values;
        let k = v.partition_point(|&d| d <= depth).clamp(1, v.len() - 1);
        v[k] - v[k - 1]
    }

    /// Index of the candidate closest to `depth`.
    pub fn nearest(&self, depth: f64) -> usize {
        let mut best = 0;
        for (k, d) in self.values.iter().enumerate() {
            if (d - depth).abs() < (self.values[best] - depth).abs() {
                best = k;
            }
        }
        best
    }
}

/// `count` depth hypotheses between `near` and `far`, endpoints included.
pub fn make_candidates(near: f64, far: f64, count: usize, spacing: DepthSpacing) -> Result<DepthCandidates> {
    if !(near > 0.0 && near < far && far.is_finite()) {
        return Err(Error::invalid(
            "near/far",
            format!("need 0 < near < far, got {near} / {far}"),
        ));
    }
    if count < 2 {
        return Err(Error::invalid(
            "depth bins",
            format!("need at least 2, got {count}"),
        ));
    }
    let last = (count - 1) as f64;
    let mut values: Vec<f64> = (0..count)
        .map(|k| {
            let t = k as f64 / last;
            match spacing {
                DepthSpacing::Linear => near + t * (far - near),
                DepthSpacing::InverseDepth => 1.0 / (1.0 / near + t * (1.0 / far - 1.0 / near)),
            }
        })
        .collect();
    values[0] = near;
    values[count - 1] = far;
    DepthCandidates::from_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_endpoints() {
        let c = make_candidates(1.0, 100.0, 2, DepthSpacing::Linear).unwrap();
        assert_eq!(c.values(), &[1.0, 100.0]);
    }

    #[test]
    fn inverse_depth_three_bins() {
        let c = make_candidates(1.0, 3.0, 3, DepthSpacing::InverseDepth).unwrap();
        let v = c.values();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 1.5).abs() < 1e-12);
        assert_eq!(v[2], 3.0);
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_candidates(0.0, 1.0, 4, DepthSpacing::Linear).is_err());
        assert!(make_candidates(2.0, 1.0, 4, DepthSpacing::Linear).is_err());
        assert!(make_candidates(1.0, 2.0, 1, DepthSpacing::Linear).is_err());
    }

    #[test]
    fn local_spacing_brackets() {
        let c = DepthCandidates::from_values(vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        assert_eq!(c.local_spacing(1.5), 1.0);
        assert_eq!(c.local_spacing(3.0), 2.0);
        assert_eq!(c.local_spacing(100.0), 4.0);
        assert_eq!(c.local_spacing(0.1), 1.0);
        assert_eq!(c.nearest(3.1), 2);
    }

    proptest! {
        #[test]
        fn strictly_increasing_within_range(near in 0.01..10.0f64, span in 0.01..100.0f64, d in 2usize..300, lin in any::<bool>()) {
            let spacing = if lin { DepthSpacing::Linear } else { DepthSpacing::InverseDepth };
            let c = make_candidates(near, near + span, d, spacing).unwrap();
            prop_assert_eq!(c.len(), d);
            prop_assert!(c.values().windows(2).all(|w| w[1] > w[0]));
            prop_assert!(c.values().iter().all(|&v| v >= near && v <= near + span));
        }
    }
}
