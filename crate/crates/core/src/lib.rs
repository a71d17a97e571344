pub mod cli;
pub mod decoders;
pub mod diffnum;
pub mod evalkit;
pub mod exec;
pub mod hetgraph;
pub mod layer;
pub mod synthetic;
pub mod training;
