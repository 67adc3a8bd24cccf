//! Semantics-preserving mutation of assembly-level programs for growing
//! labeled binary corpora.

pub mod analysis;
pub mod asm;
pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod engine;
pub mod interp;
pub mod synth;
pub mod textio;
pub mod transforms;
