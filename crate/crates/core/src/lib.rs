//! Multi-echo T2* mapping from undersampled multi-coil k-space.

pub mod acquisition;
pub mod amp;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod par;
pub mod phantom;
pub mod recon;
pub mod sampling;
pub mod store;
pub mod sweep;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use volume::{ComplexVolume, EchoSeries, RealVolume, Shape, Volume};
