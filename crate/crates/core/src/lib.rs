//! Contrastive pretraining, FastDTW similarity graphs, a dual-pathway linear
//! state-space encoder and a KAN-based GIN classifier for transductive
//! multivariate time-series classification.

pub mod data;
pub mod numerics;
pub mod dtw;
pub mod temcl;
pub mod simgraph;
pub mod dpmamba;
pub mod kangin;
pub mod trainer;
