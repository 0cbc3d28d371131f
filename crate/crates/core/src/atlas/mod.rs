//! Healthy-cohort organ interaction atlas: organ features, age strata,
//! covariance differences, correlation networks and body-system trends.

pub mod features;
pub mod stats;
pub mod strata;
pub mod trends;

pub use features::{organ_suv_mean, OrganEmbeddings, OrganFeatureMatrix};
pub use stats::{
    bh_fdr, correlation_network, correlation_p_value, covariance, covariance_difference, covariance_matrix, pearson,
    BhResult, CovarianceDifference, Edge, InteractionNetwork, OrganMatrix, PairDelta, PairTest, MIN_CORRELATION_PAIRS,
};
pub use strata::{stratify, AgeStrata, StrataConfig, Stratum};
pub use trends::{percent_change, system_trends, SystemTrend, SystemTrends};
