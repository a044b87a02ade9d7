//! Path-following experiments for unmanned surface vehicles: target path
//! families and run plans, a seeded kinematic simulator, geometric and
//! efficiency performance indices, a universal-kriging surrogate, classical
//! and adaptive two-step designs, and the persistence layer that ties them
//! into reproducible experiments.

pub mod adaptive;
pub mod design;
pub mod experiment;
pub mod geometry;
pub mod indices;
pub mod kriging;
pub mod rng;
pub mod sim;
