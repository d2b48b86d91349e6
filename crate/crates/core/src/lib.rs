pub mod bench;
pub mod bleu;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod reparam;
pub mod trainer;
pub mod vocab;
