//! Post-training alignment of a masked spectrogram encoder to a frozen text teacher.

pub mod alignment;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod params;
pub mod reports;
pub mod retrieval;
pub mod signal;
pub mod teacher;
