//! Bias-corrected trans-ancestry genetic correlation from genetic-predicted
//! traits: LD structures, spectral moments, cohort simulation, estimators,
//! shrinkage theory and a replicated experiment harness.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod ld;
pub mod moments;
pub mod seed;
pub mod shrinkage;
pub mod sim;

pub use error::{Error, Result};
pub use estimators::{
    compute_v_params, convert_effect_correlation, correct_marginal, correct_reference,
    estimate_marginal, marginal_summary_stats, naive_correlation, predict_traits, ridge_adjust,
    trait_correlation, variance_corrected, variance_naive, EffectEstimate, EstimateKind,
    EstimationResult, VParams, VarianceInputs,
};
pub use ld::{
    build_ar_blocks, build_ar_covariance, build_block_covariance, estimate_covariance,
    matrix_sqrt, merge_ld_blocks, BlockPartition, CovSource, CovarianceMatrix,
};
pub use moments::{
    blockwise_moments, debias_cross_trace, debias_sample_moments, product_moment, Flagged,
    MomentEstimates, Power, Provenance, Status,
};
pub use shrinkage::{
    emit_shrinkage_curve, shrinkage_derivative, shrinkage_path, theorem1_limit, theorem2_limit,
    CurveRow, ShrinkageParams,
};
pub use sim::{
    sample_effect_pair, sample_genotypes, sample_genotypes_from_root, synthesize_traits, EffectDistribution, EffectModel,
    EffectPair, GenotypeMatrix, TraitVector,
};
pub use harness::{
    reproduce, run_experiment, simulate, ExperimentConfig, Manifest, ReproduceOptions, Scale,
    SummaryTable, Target,
};
