pub mod engine;
pub mod nucleus;
pub mod prior;
pub mod relation;

pub use engine::{sample, sample_checkpoint, sample_each, sample_sequences, sample_sequences_each, DecodePolicy, SampleOptions, SampleOutput, X0Model};
pub use nucleus::nucleus;
pub use prior::{
    adjust_logits, expected_box, refine_prior, relation_prob_gradient, PriorKind, PriorSpec, PriorTable,
    PriorWarning,
};
pub use relation::{is_violated, relation_loss, relation_term, RelationConstraint, RelationKind, RELATION_TOLERANCE};
