//! Automated data pre-processing: per-feature normalization chosen by a normality
//! test, and hybrid SMOTE + ADASYN oversampling of minority classes.

mod balance;
mod normalize;
mod shapiro;

pub use balance::{
    adasyn_difficulty, adasyn_generate, balance, compute_balance_plan, largest_remainder, smote_generate,
    BalanceOutcome, BalancePlan, BalanceSettings, BalanceWarning, ClassBalanceRecord, Origin, Synthetic,
    DEFAULT_NEIGHBORS, DEFAULT_SMOTE_SHARE,
};
pub use normalize::{
    apply_normalization, fit_normalization, fit_normalization_with_alpha, FeatureNormalization, NormalizationMethod,
    NormalizationPlan, DEFAULT_ALPHA,
};
pub use shapiro::{shapiro_wilk, ShapiroWilk, MAX_SAMPLE};
