pub mod attention;
pub mod embedding;
pub mod extractors;
pub mod fusion;
pub mod graph;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod predictor;
pub mod rally_data;
