//! Poisson multi-Bernoulli mixture (PMBM) filtering and PMB projections.

pub mod assignment;
pub mod density;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod gaussian;
pub mod gospa;
pub mod projection;
mod text;

pub use assignment::{murty_kbest, solve_assignment, Assignment, CostMatrix};
pub use density::{
    bernoulli_kld, compute_phd, estimate_targets, log_sum_exp, prune_and_cap, Bernoulli,
    GlobalHypothesis, PmbDensity, PmbmDensity, PppIntensity, Track, TrackId, WeightedGaussian,
    DIVERGENCE_CAP,
};
pub use error::{Error, Result};
pub use filter::{predict, step, update, BirthModel, FilterThresholds, SensorModel};
pub use gospa::{gospa, rms_gospa, GospaResult};
pub use projection::{
    bp_pmb_update, gnn_pmb, merge_bernoullis_under_permutations, optimize_permutations, to_pmb,
    vpmb_project, BpReport, PermutationSet, ProjectionReport,
};
pub use gaussian::{
    gaussian_kld, kalman_predict, kalman_update, moment_match, GaussianDensity, KalmanGain,
    LinearGaussianModel,
};
