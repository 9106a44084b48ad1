pub mod eval;
pub mod gen_synth;
pub mod gradcheck;
pub mod predict;
pub mod slices;
pub mod train;
