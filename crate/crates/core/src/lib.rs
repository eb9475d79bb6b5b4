//! Deterministic synthesis of spatio-temporal question-answer datasets from
//! 3D scenes with timestamped egocentric camera poses and action annotations.

pub mod cloud;
pub mod geom;
pub mod posenc;
pub mod qagen;
pub mod register;
pub mod relations;
pub mod select;
pub mod scene;
pub mod synth;
