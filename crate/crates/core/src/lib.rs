//! Phase-based video magnification of pulsatile motion with a cardiac-cycle
//! template gate that suppresses non-periodic motion such as surgical tools.

pub mod error;
mod fft;
pub mod frame_io;
pub mod magnify;
pub mod metrics;
pub mod pyramid;
pub mod synthetic;
pub mod temporal_filter;
pub mod tmasf;

pub use error::{Error, Result};
