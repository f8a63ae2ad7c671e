pub mod autodiff;
pub mod codec;
pub mod encoder;
pub mod geometry;
pub mod lines;
pub mod matcher;
pub mod ot;
pub mod pose;
pub mod synth;
pub mod vo;
