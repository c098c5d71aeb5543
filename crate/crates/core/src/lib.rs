//! Entity retrieval over RDF data: offline entity clustering and online
//! BM25F retrieval with cluster-based expansion and type-affinity re-ranking.

pub mod affinity;
pub mod clustering;
pub mod config;
pub mod eval;
pub mod features;
pub mod lsh;
pub mod rdf;
pub mod retrieval;
pub mod stages;
pub mod store;
pub mod synth;
pub mod text;
pub mod vocab;
