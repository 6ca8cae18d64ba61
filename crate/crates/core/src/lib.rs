pub mod cli;
pub mod dataset;
pub mod evaluator;
pub mod exec;
pub mod inference;
pub mod postprocess;
pub mod profiler;
pub mod promptgen;
pub mod replay;
pub mod selector;
pub mod table;
pub mod transport;
pub mod validator;
