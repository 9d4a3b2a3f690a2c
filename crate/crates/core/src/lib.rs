//! Frequency-bin qubit link toolkit.
//!
//! The crate is split by physical stage:
//!
//! - [`qstate`]: frequency-bin state algebra and the closed-form beat and
//!   visibility models, including timing-jitter degradation.
//! - [`channel`]: moving-platform effects (Doppler, propagation phase, phase
//!   change rate, reference-window dephasing, compensation fidelity).
//! - [`receiver`]: the unbalanced Mach-Zehnder analyzer in Z (demultiplexing)
//!   and X (beat note) configurations.
//! - [`sim`]: Monte Carlo generation of detector time-tags.
//! - [`tagproc`]: marker referencing, beat-period folding, histogramming,
//!   sinusoid fitting and visibility estimation.
//! - [`tagfile`]: the on-disk tag stream format (CSV + JSON sidecar).

pub mod channel;
pub mod qstate;
pub mod receiver;
pub mod sim;
pub mod tagfile;
pub mod tagproc;

pub use channel::{ChannelConfig, DephasedState, PlatformTrajectory};
pub use qstate::{BinPair, EnvelopeMode, FBinQubit, FrequencyBin, JitterConvention, VisibilityFactors};
pub use receiver::{Basis, MziConfig, PortDistribution};
pub use sim::{DetectorModel, Scenario, StateLabel, StateSchedule, TagRecord, TagStream, TaggerModel};
pub use tagproc::{BeatHistogram, FoldingConfig, VisibilityReport};

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Conversion factor between a Gaussian FWHM and its standard deviation,
/// `2 * sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Channel id reserved for marker pulses in tag streams.
pub const MARKER_CHANNEL: u16 = 0;
/// Channel id of the detector behind analyzer output port 0.
pub const PORT0_CHANNEL: u16 = 1;
/// Channel id of the detector behind analyzer output port 1.
pub const PORT1_CHANNEL: u16 = 2;
