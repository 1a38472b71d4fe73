//! Structure functions for differential dynamic microscopy.
//!
//! Two engines compute the same quantity from a stack of frames:
//!
//! * [`temporal`] transforms each wave vector's time sequence, obtaining all
//!   lags from one zero-padded autocorrelation in O(N log N);
//! * [`pairwise`] averages squared differences of frame spectra in O(N²).
//!
//! [`scheduler`] runs either one under a memory budget, re-streaming frames
//! from disk when the spectra do not fit.

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod pairwise;
pub mod precision;
pub mod scheduler;
pub mod spectrum;
pub mod synth;
pub mod temporal;
pub mod timing;

pub use error::{Error, Result};
pub use precision::Precision;
