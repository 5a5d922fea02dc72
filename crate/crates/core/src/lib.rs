//! Knowledge-base engine for comparing drug samples with expert analysis
//! rules.

pub mod graph;
pub mod ingest;
pub mod planner;
pub mod reasoner;
pub mod review;
pub mod ruledsl;
pub mod schema;
pub mod synth;
