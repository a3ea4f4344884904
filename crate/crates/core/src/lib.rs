//! Deterministic pretraining-corpus curation.
//!
//! The crate covers the path from raw JSONL documents to a training
//! manifest: global document and sentence deduplication, rule plus
//! classifier quality filtering, repository-level code assembly, mixture
//! planning, and the statistics/curve-fitting reports that go with them.
//! Every stage is a pure function of its inputs, configuration and seed.

pub mod artifact;
pub mod code;
pub mod corpus;
pub mod dedup;
pub mod error;
pub mod fingerprint;
pub mod mixture;
pub mod pipeline;
pub mod quality;
pub mod report;
pub mod sentence;
pub mod text;
pub mod unionfind;

pub use corpus::{read_corpus, write_corpus, Corpus, Document, DomainTag, Shard, StageStats};
pub use error::{Error, Result};
pub use text::count_tokens;
