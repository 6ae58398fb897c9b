pub mod error;
mod fft;
pub mod fbm;
pub mod fractal;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod segnet;
pub mod uncertainty;
pub mod wavelet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::Volume;
