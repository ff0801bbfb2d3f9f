pub mod ablate;
pub mod eval;
pub mod routes;
pub mod synth;
pub mod train;
