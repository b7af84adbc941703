//! Compressive-strength model over composition and curing age.

mod cv;
mod mixture;
mod model;

pub use cv::{cross_validate, mixture_folds, CvPoint, CvReport};
pub use mixture::{IngredientId, Mixture, Provenance, StrengthObservation, NUM_INGREDIENTS};
pub use model::{
    aggregate_replicates, augment_zero_day, check_trainable, data_digest, distinct_mixtures, featurize,
    fit_strength_model, observed_bounds, predict_strength, KernelStructure, Normalization, StrengthModel,
    StrengthModelConfig, StrengthPrediction, TimeTransform, DEFAULT_TAU, FEATURE_DIM,
};
