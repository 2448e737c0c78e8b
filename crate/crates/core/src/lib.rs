//! Delay-dependent linear-quadratic control of sampled-data systems whose
//! sensor delays follow a continuous-valued higher-order Markov chain.

pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod lmi;
pub mod piecewise;
pub mod pipeline;
pub mod plant;
pub mod quadrature;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
