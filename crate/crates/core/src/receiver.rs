//! Unbalanced Mach-Zehnder frequency-bin analyzer.
//!
//! With both arms open the interferometer demultiplexes the two bins onto
//! its output ports (Z basis). With the long arm blocked it passes the
//! input straight to one detector, which then sees the beat note of a
//! superposition (X basis). Field widening is modeled only through the
//! residual visibility factors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{self, check_unit, EnvelopeMode, FBinQubit, StateError, VisibilityFactors};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, PartialEq)]
pub enum ReceiverError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("operation requires the {0:?} basis")]
    WrongBasis(Basis),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Both arms open: frequency demultiplexing.
    Z,
    /// Long arm blocked: direct beat detection.
    X,
}

/// Bin spacing demultiplexed by a path difference, `Δω = πc/ΔL`.
pub fn demux_spacing(delta_l: f64) -> Result<f64, ReceiverError> {
    positive("delta_l", delta_l)?;
    Ok(PI * SPEED_OF_LIGHT / delta_l)
}

/// Path difference needed to demultiplex a given spacing, `ΔL = πc/Δω`.
pub fn required_path_difference(delta_omega: f64) -> Result<f64, ReceiverError> {
    positive("delta_omega", delta_omega)?;
    Ok(PI * SPEED_OF_LIGHT / delta_omega)
}

fn positive(name: &'static str, value: f64) -> Result<(), ReceiverError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ReceiverError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MziConfig {
    /// Path length difference, m.
    pub delta_l: f64,
    pub v_z_eps: f64,
    pub basis: Basis,
    /// Frequency routed constructively to port 0 when `phase_align = 0`.
    pub omega_ref: f64,
    /// Calibration phase offset, rad.
    pub phase_align: f64,
}

impl MziConfig {
    pub fn new(delta_l: f64, v_z_eps: f64, basis: Basis, omega_ref: f64) -> Result<Self, ReceiverError> {
        positive("delta_l", delta_l)?;
        positive("omega_ref", omega_ref)?;
        check_unit("v_z_eps", v_z_eps)?;
        Ok(Self {
            delta_l,
            v_z_eps,
            basis,
            omega_ref,
            phase_align: 0.0,
        })
    }

    /// Interferometer matched to a bin spacing, aligned on `omega0`.
    pub fn matched(omega0: f64, delta_omega: f64, v_z_eps: f64, basis: Basis) -> Result<Self, ReceiverError> {
        Self::new(required_path_difference(delta_omega)?, v_z_eps, basis, omega0)
    }

    pub fn with_v_z_eps(mut self, v_z_eps: f64) -> Result<Self, ReceiverError> {
        check_unit("v_z_eps", v_z_eps)?;
        self.v_z_eps = v_z_eps;
        Ok(self)
    }

    /// Interferometric phase `(ω - ω_ref)·ΔL/c + φ_align`.
    pub fn phase(&self, omega: f64) -> f64 {
        (omega - self.omega_ref) * self.delta_l / SPEED_OF_LIGHT + self.phase_align
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortDistribution {
    pub p_port0: f64,
    pub p_port1: f64,
}

impl PortDistribution {
    /// Index of the more probable port; ties go to port 0.
    pub fn majority_port(&self) -> usize {
        usize::from(self.p_port1 > self.p_port0)
    }

    /// `(p_major - p_minor)/(p_major + p_minor)`.
    pub fn contrast(&self) -> f64 {
        (self.p_port0 - self.p_port1).abs() / (self.p_port0 + self.p_port1)
    }
}

/// Output port probabilities of a monochromatic input in the Z basis.
pub fn z_basis_ports(omega: f64, cfg: &MziConfig) -> Result<PortDistribution, ReceiverError> {
    if cfg.basis != Basis::Z {
        return Err(ReceiverError::WrongBasis(Basis::Z));
    }
    let p0 = 0.5 * (1.0 + cfg.v_z_eps * cfg.phase(omega).cos());
    Ok(PortDistribution {
        p_port0: p0,
        p_port1: 1.0 - p0,
    })
}

/// Port distribution of the blocked-arm X configuration: everything exits
/// on port 0 before loss.
pub fn x_basis_ports() -> PortDistribution {
    PortDistribution {
        p_port0: 1.0,
        p_port1: 0.0,
    }
}

/// Relative intensity at the X-basis detector at time `t`.
pub fn x_basis_rate(q: &FBinQubit, f: &VisibilityFactors, t: f64, mode: EnvelopeMode) -> f64 {
    qstate::beat_signal(q, f, t, mode)
}

/// Z-basis analyzer with possibly different residual visibilities per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demux {
    pub mzi: MziConfig,
    pub v_z_eps_bin0: f64,
    pub v_z_eps_bin1: f64,
}

impl Demux {
    pub fn new(mzi: MziConfig, v_z_eps_bin0: f64, v_z_eps_bin1: f64) -> Result<Self, ReceiverError> {
        check_unit("v_z_eps_bin0", v_z_eps_bin0)?;
        check_unit("v_z_eps_bin1", v_z_eps_bin1)?;
        Ok(Self {
            mzi,
            v_z_eps_bin0,
            v_z_eps_bin1,
        })
    }

    /// Port distribution for a state, summing the bins incoherently (each
    /// bin leaves on its own port, so cross terms do not survive detection).
    pub fn ports_for(&self, q: &FBinQubit) -> Result<PortDistribution, ReceiverError> {
        let pair = q.pair();
        let d0 = z_basis_ports(pair.bin0().omega_center(), &self.mzi.with_v_z_eps(self.v_z_eps_bin0)?)?;
        let d1 = z_basis_ports(pair.bin1().omega_center(), &self.mzi.with_v_z_eps(self.v_z_eps_bin1)?)?;
        let (w0, w1) = q.populations();
        Ok(PortDistribution {
            p_port0: w0 * d0.p_port0 + w1 * d1.p_port0,
            p_port1: w0 * d0.p_port1 + w1 * d1.p_port1,
        })
    }
}
