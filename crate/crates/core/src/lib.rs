pub mod error;
pub mod geometry;
pub mod grid;

pub use error::{Error, Result};
pub mod wavefield;
pub mod linalg;
pub mod observation;
pub mod spectral;
pub mod inversion;
pub mod config;
pub mod io;
pub mod pipeline;
