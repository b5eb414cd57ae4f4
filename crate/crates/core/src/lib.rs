//! Refractive structure-from-motion for underwater cameras behind flat or
//! dome ports.

pub mod alignment;
pub mod camera;
pub mod estimation;
pub mod geometry;
pub mod numerics;
pub mod optim;
pub mod ransac;
pub mod sfm;
pub mod solvers;
