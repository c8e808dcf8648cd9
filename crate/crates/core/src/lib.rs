//! Markov logic networks with a graph-neural-network mean-field posterior,
//! trained by stochastic variational EM.

pub mod datasets;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod kb;
pub mod logic;
pub mod mln;
pub mod nnet;
pub mod oracles;
pub mod trainer;
