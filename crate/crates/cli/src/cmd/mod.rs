pub mod eval;
pub mod matching;
pub mod stats;
pub mod synth;
pub mod track;
pub mod train;
