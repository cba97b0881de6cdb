pub mod autodiff;
pub mod baselines;
pub mod datagen;
pub mod error;
mod fourier;
pub mod linops;
pub mod metrics;
pub mod objective;
pub mod raster;
pub mod unet;
pub mod varsolve;

pub use error::{Error, Result};
