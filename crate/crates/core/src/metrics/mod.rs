//! Similarity-based video metrics and pairwise preference aggregates.

mod http;
mod judgment;
mod oracle;
mod score;
mod toy;

pub use http::{HttpOracle, HttpOracleConfig};
pub use judgment::{sc_aggregate, vr_aggregate, JudgmentRecord};
pub use oracle::{check_embedding, normalize, SimilarityOracle, UNIT_TOLERANCE};
pub use score::{corpus_eval, matrix_csv, rm, sim, CorpusReport, EvalSample, SampleMetrics};
pub use toy::ToyOracle;
