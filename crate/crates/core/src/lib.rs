//! Simulation and analysis toolkit for pulsed single-photon sources.
//!
//! The simulator side turns a parametric quantum-dot emitter into detector
//! time tags behind an HBT or HOM interferometer ([`emitter`], [`optics`]).
//! The analysis side correlates tag streams ([`correlator`]), fits the
//! analytic correlation models ([`models`], [`fitting`]) and derives
//! purity, visibility and efficiency figures ([`analysis`]).

pub mod analysis;
pub mod config;
pub mod correlator;
pub mod emitter;
pub mod error;
pub mod fitting;
pub mod io;
pub mod models;
pub mod optics;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod timetag;

pub use error::{Error, Result};
pub use timetag::{histogram_bin_index, CorrelationHistogram, HistogramSpec, TagStream, TimeTag};
