//! Numerics and combinatorics around the quantum Boltzmann equation: collision
//! operators in several Fourier representations, a splitting solver, ε-scaling
//! experiments on the BBGKY operators, the quasi-free wave-packet construction,
//! the Klainerman–Machedon board game, and the norm-deflation experiment.

pub mod error;
pub mod quad;
pub mod kernel;
pub mod phase;
pub mod density;
pub mod collision;
pub mod solver;
pub mod bbgky;
pub mod quasifree;
pub mod boardgame;
pub mod illposed;

pub use error::{Error, Result};
