//! Plane-sweep matching between two views: hand-crafted quarter-resolution
//! features, a correlation volume over depth candidates, softmax depth and
//! the per-pixel matching confidence.

mod candidates;
mod features;
mod volume;

pub use candidates::{make_candidates, DepthCandidates, DepthSpacing};
pub use features::{
    extract_features, raw_descriptors, standardized_descriptors, FeatureMap, FEATURE_CHANNELS, FEATURE_STRIDE,
};
pub use volume::{
    aggregate, backproject_depth, backproject_with_pixels, build_cost_volume, confidence_map,
    raw_correlation, softmax_depth, Aggregation, CostVolume, DEFAULT_GAIN, INVALID_LOGIT,
};
