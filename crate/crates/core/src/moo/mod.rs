//! Pareto filtering, hypervolume, and hypervolume-improvement acquisition.

mod acquisition;
mod boxes;
mod hypervolume;
mod optimize;
mod pareto;
mod region;
mod sampling;

pub use acquisition::{
    qehvi, qlogehvi, Acquisition, AcquisitionConfig, AcquisitionVariant, BatchMode, BatchPosterior, CandidatePosterior,
    NoisyBaseline, ObjectiveModel,
};
pub use boxes::{box_decomposition, log_softplus, logsumexp, BoxSet};
pub use hypervolume::hypervolume;
pub use optimize::{optimize_acquisition, Novelty, OptimizedBatch, RestartOutcome};
pub use pareto::{dominates, pareto_filter, pareto_indices, weakly_dominates, ParetoFrontier};
pub use region::{FeasibleRegion, SamplerKind};
pub use sampling::{psd_sqrt, BaseSamples, MAX_SOBOL_DIM};
