//! Deterministic hierarchical text-categorization pipeline.
//!
//! The crate organizes raw review corpora into a Theme -> Story -> Cluster
//! hierarchy, weights datapoints by a signal-to-noise score, generates
//! weighted and unweighted summary-of-summaries context trees, categorizes
//! datapoints under three context scenarios with K-Means category-clusters,
//! and evaluates context quality with a reference-free QAG/G-Eval harness.
//!
//! All stages run bit-reproducibly against the offline stub backends in
//! [`backends::stub`]; remote OpenAI-compatible endpoints plug in through
//! [`backends::http`].

pub mod backends;
pub mod categorize;
pub mod corpus;
pub mod evalqa;
pub mod hierarchy;
pub mod metrics;
pub mod snr;
pub mod sos;
pub mod text;
