//! Grammar-based genetic programming: GE, PGE, SGE and Co-PSGE
//! (co-evolutionary probabilistic structured grammatical evolution), with
//! benchmark problems and rank-based statistics for comparing them.

pub mod cli;
pub mod encoding;
pub mod engine;
pub mod grammar;
pub mod problems;
pub mod stats;
pub mod variation;
