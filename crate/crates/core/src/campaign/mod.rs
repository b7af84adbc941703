//! Lab-in-the-loop campaign workflow.

mod constraints;
mod ingest;
mod state;
mod store;

pub use constraints::{Bound, Constraints, LinearConstraint, Scenario, WB_MAX_LABEL, WB_MIN_LABEL};
pub use ingest::{
    ingest_csv, ingest_json_rows, ingest_path, ingest_records, IngestReport, IngestedRow, RowOutcome, StrengthUnit,
    PSI_PER_MPA,
};
pub use state::{
    validate_id, Batch, BatchSummary, Campaign, CampaignSummary, EmpiricalFrontier, EmpiricalPoint, FrontierSummary,
    InferredConfig, InferredFrontier, InferredPoint, ObservationRecord, Origin, PredictedObjectives, Proposal,
    SnapshotRef,
};
pub use store::{encode_snapshot, Store, STORE_VERSION};
