//! Frequency-bin state algebra and closed-form beat/visibility models.
//!
//! Angular frequencies are in rad/s, times in seconds. Only two-level
//! (qubit) states are implemented; [`BinPair`] is the seam where higher
//! dimensional alphabets would plug in.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FWHM_PER_SIGMA;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("centre frequency must be positive and finite, got {0}")]
    BadCentre(f64),
    #[error("bandwidth must be non-negative and finite, got {0}")]
    BadBandwidth(f64),
    #[error("bin1 centre ({bin1}) must lie above bin0 centre ({bin0})")]
    UnorderedPair { bin0: f64, bin1: f64 },
    #[error("amplitudes must be finite and not both zero")]
    ZeroState,
    #[error("visibility factor {name} = {value} outside [0, 1]")]
    VisibilityRange { name: &'static str, value: f64 },
    #[error("frequency samples must be non-negative, finite and sorted")]
    UnsortedRange,
}

/// One spectral mode with a Gaussian amplitude profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    omega_center: f64,
    sigma: f64,
}

impl FrequencyBin {
    pub fn new(omega_center: f64, sigma: f64) -> Result<Self, StateError> {
        if !(omega_center.is_finite() && omega_center > 0.0) {
            return Err(StateError::BadCentre(omega_center));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(StateError::BadBandwidth(sigma));
        }
        Ok(Self { omega_center, sigma })
    }

    pub fn monochromatic(omega_center: f64) -> Result<Self, StateError> {
        Self::new(omega_center, 0.0)
    }

    pub fn omega_center(&self) -> f64 {
        self.omega_center
    }

    /// Standard deviation of the spectral intensity, rad/s.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Ordered pair of bins encoding logical 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinPair {
    bin0: FrequencyBin,
    bin1: FrequencyBin,
    /// Kept separately: the difference of two optical centres loses digits.
    delta_omega: f64,
}

impl BinPair {
    pub fn new(bin0: FrequencyBin, bin1: FrequencyBin) -> Result<Self, StateError> {
        if bin1.omega_center <= bin0.omega_center {
            return Err(StateError::UnorderedPair {
                bin0: bin0.omega_center,
                bin1: bin1.omega_center,
            });
        }
        Ok(Self {
            bin0,
            bin1,
            delta_omega: bin1.omega_center - bin0.omega_center,
        })
    }

    /// Pair with a common bandwidth, `bin1 = omega0 + delta_omega`.
    pub fn with_spacing(omega0: f64, delta_omega: f64, sigma: f64) -> Result<Self, StateError> {
        if !(delta_omega.is_finite() && delta_omega > 0.0) {
            return Err(StateError::UnorderedPair {
                bin0: omega0,
                bin1: omega0 + delta_omega,
            });
        }
        let mut pair = Self::new(
            FrequencyBin::new(omega0, sigma)?,
            FrequencyBin::new(omega0 + delta_omega, sigma)?,
        )?;
        pair.delta_omega = delta_omega;
        Ok(pair)
    }

    pub fn bin0(&self) -> &FrequencyBin {
        &self.bin0
    }

    pub fn bin1(&self) -> &FrequencyBin {
        &self.bin1
    }

    pub fn delta_omega(&self) -> f64 {
        self.delta_omega
    }

    /// Beat period `2π/Δω`, seconds.
    pub fn beat_period(&self) -> f64 {
        2.0 * PI / self.delta_omega()
    }
}

/// Normalized superposition `a0|ω0⟩ + a1|ω1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FBinQubit {
    pair: BinPair,
    a0: Complex64,
    a1: Complex64,
    norm_factor: f64,
}

impl FBinQubit {
    /// Builds a state from amplitude ratios. The amplitudes are rescaled to
    /// unit norm and the applied factor is kept in [`Self::norm_factor`].
    pub fn new(pair: BinPair, a0: Complex64, a1: Complex64) -> Result<Self, StateError> {
        let norm_sq = a0.norm_sqr() + a1.norm_sqr();
        if !norm_sq.is_finite() || norm_sq == 0.0 {
            return Err(StateError::ZeroState);
        }
        let norm_factor = 1.0 / norm_sq.sqrt();
        Ok(Self {
            pair,
            a0: a0 * norm_factor,
            a1: a1 * norm_factor,
            norm_factor,
        })
    }

    /// `|ω0⟩`, logical 0.
    pub fn zero(pair: BinPair) -> Self {
        Self::new(pair, Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).expect("unit amplitude")
    }

    /// `|ω1⟩`, logical 1.
    pub fn one(pair: BinPair) -> Self {
        Self::new(pair, Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)).expect("unit amplitude")
    }

    /// Balanced equator state `(|ω0⟩ + |ω1⟩)/√2`.
    pub fn plus(pair: BinPair) -> Self {
        Self::new(pair, Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).expect("unit amplitude")
    }

    pub fn pair(&self) -> &BinPair {
        &self.pair
    }

    pub fn a0(&self) -> Complex64 {
        self.a0
    }

    pub fn a1(&self) -> Complex64 {
        self.a1
    }

    /// Factor applied to the caller's amplitudes during construction.
    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    /// Populations `(|a0|², |a1|²)`.
    pub fn populations(&self) -> (f64, f64) {
        (self.a0.norm_sqr(), self.a1.norm_sqr())
    }

    /// Relative phase `arg(a1) - arg(a0)`; zero when either amplitude vanishes.
    pub fn relative_phase(&self) -> f64 {
        if self.a0.norm_sqr() == 0.0 || self.a1.norm_sqr() == 0.0 {
            0.0
        } else {
            (self.a1 * self.a0.conj()).arg()
        }
    }
}

/// Residual visibilities from mode mismatch and alignment, one per basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFactors {
    pub v_x_eps: f64,
    pub v_z_eps: f64,
}

impl VisibilityFactors {
    pub fn new(v_x_eps: f64, v_z_eps: f64) -> Result<Self, StateError> {
        check_unit("v_x_eps", v_x_eps)?;
        check_unit("v_z_eps", v_z_eps)?;
        Ok(Self { v_x_eps, v_z_eps })
    }

    pub fn ideal() -> Self {
        Self {
            v_x_eps: 1.0,
            v_z_eps: 1.0,
        }
    }
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<(), StateError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(StateError::VisibilityRange { name, value })
    }
}

/// How the finite-bandwidth envelope of the beat is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMode {
    /// `√(2σ0σ1)·e^{-t²(σ0²+σ1²)} / (σ0·e^{-2t²σ0²} + σ1·e^{-2t²σ1²})`.
    ///
    /// For equal bandwidths this is `1/√2` at `t = 0`, i.e. it does not
    /// reduce to the monochromatic beat. Kept for comparison.
    AsPrinted,
    /// Numerical evaluation of `⟨Ψ|a_t† a_t|Ψ⟩` over the Gaussian packets.
    #[default]
    Quadrature,
}

/// Reading of a quoted jitter figure when it enters the Gaussian
/// degradation `exp(-(Δω·δT)²/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterConvention {
    /// The FWHM figure is used directly as `δT`.
    #[default]
    Fwhm,
    /// The FWHM figure is converted to a Gaussian standard deviation first.
    StdDev,
}

impl JitterConvention {
    /// Width `δT` (s) entering the Gaussian model for a quoted FWHM (s).
    pub fn width_from_fwhm(self, fwhm: f64) -> f64 {
        match self {
            JitterConvention::Fwhm => fwhm,
            JitterConvention::StdDev => fwhm / FWHM_PER_SIGMA,
        }
    }
}

/// Overlap `⟨ω0|ω1⟩` of two Gaussian bins.
pub fn bin_overlap(pair: &BinPair) -> f64 {
    let (s0, s1) = (pair.bin0.sigma, pair.bin1.sigma);
    let dw = pair.delta_omega();
    let s2 = s0 * s0 + s1 * s1;
    if s2 == 0.0 {
        // delta-function bins
        return if dw == 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * s0 * s1 / s2).sqrt() * (-dw * dw / (4.0 * s2)).exp()
}

/// Same as [`bin_overlap`] for two free-standing bins, allowing equal centres.
pub fn overlap(bin0: &FrequencyBin, bin1: &FrequencyBin) -> f64 {
    let (s0, s1) = (bin0.sigma, bin1.sigma);
    let dw = bin1.omega_center - bin0.omega_center;
    let s2 = s0 * s0 + s1 * s1;
    if s2 == 0.0 {
        return if dw == 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * s0 * s1 / s2).sqrt() * (-dw * dw / (4.0 * s2)).exp()
}

/// Monochromatic beat visibility `2|a0 a1|/(|a0|²+|a1|²)·v_x_eps`.
pub fn beat_visibility_x(q: &FBinQubit, f: &VisibilityFactors) -> f64 {
    let (p0, p1) = q.populations();
    2.0 * (q.a0 * q.a1).norm() / (p0 + p1) * f.v_x_eps
}

/// Ratio `v_X'(t)/v_X` introduced by the finite bin bandwidths.
pub fn beat_envelope(q: &FBinQubit, t: f64, mode: EnvelopeMode) -> f64 {
    let (s0, s1) = (q.pair.bin0.sigma, q.pair.bin1.sigma);
    if s0 == 0.0 && s1 == 0.0 {
        return 1.0;
    }
    match mode {
        EnvelopeMode::AsPrinted => {
            let t2 = t * t;
            let num = (2.0 * s0 * s1).sqrt() * (-t2 * (s0 * s0 + s1 * s1)).exp();
            let den = s0 * (-2.0 * t2 * s0 * s0).exp() + s1 * (-2.0 * t2 * s1 * s1).exp();
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        }
        EnvelopeMode::Quadrature => {
            let (p0, p1) = q.populations();
            let e0 = packet_field_magnitude(s0, t);
            let e1 = packet_field_magnitude(s1, t);
            let cross = 2.0 * (p0 * p1).sqrt() * e0 * e1;
            let incoherent = p0 * e0 * e0 + p1 * e1 * e1;
            let v_mono = 2.0 * (p0 * p1).sqrt() / (p0 + p1);
            if incoherent == 0.0 || v_mono == 0.0 {
                0.0
            } else {
                cross / incoherent / v_mono
            }
        }
    }
}

/// `|∫ φ(ω_c + x) e^{ixt} dx|` for the normalized Gaussian amplitude
/// `φ(μ) = (2πσ²)^{-1/4} exp(-(μ-ω_c)²/(4σ²))`, by trapezoidal quadrature
/// in the scaled variable `u = x/σ`. The trapezoid rule is spectrally
/// accurate for this smooth, rapidly decaying integrand; accuracy degrades
/// once `σ·t` exceeds about 5, where the field itself is below 1e-10.
fn packet_field_magnitude(sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    const HALF_SPAN: f64 = 16.0;
    const STEPS: usize = 3200;
    let h = 2.0 * HALF_SPAN / STEPS as f64;
    let st = sigma * t;
    // integrand is even in u so only the cosine part survives
    let mut acc = 0.0;
    for k in 0..=STEPS {
        let u = -HALF_SPAN + k as f64 * h;
        let w = if k == 0 || k == STEPS { 0.5 } else { 1.0 };
        acc += w * (-u * u / 4.0).exp() * (u * st).cos();
    }
    let prefactor = sigma * (2.0 * PI * sigma * sigma).powf(-0.25);
    (prefactor * acc * h).abs()
}

/// Detected intensity fraction `½(1 + v_X'(t)·cos(Δω t + φ))` of a
/// superposition, where `φ` is the relative amplitude phase.
pub fn beat_signal(q: &FBinQubit, f: &VisibilityFactors, t: f64, mode: EnvelopeMode) -> f64 {
    let v = beat_visibility_x(q, f) * beat_envelope(q, t, mode);
    0.5 * (1.0 + v * (q.pair.delta_omega() * t + q.relative_phase()).cos())
}

/// Z-basis visibility including the bandwidth-induced phase spread.
pub fn visibility_z(pair: &BinPair, f: &VisibilityFactors) -> f64 {
    let (s0, s1) = (pair.bin0.sigma, pair.bin1.sigma);
    let dw = pair.delta_omega();
    f.v_z_eps * (-2.0 * PI.powi(4) * (s0 * s0 + s1 * s1) / (dw * dw)).exp()
}

/// Beat visibility after Gaussian timing jitter of total width `delta_t`
/// (already combined in quadrature).
pub fn jitter_visibility(v0: f64, delta_omega: f64, delta_t: f64) -> f64 {
    let x = delta_omega * delta_t;
    v0 * (-x * x / 2.0).exp()
}

/// [`jitter_visibility`] for a quoted system FWHM under the given convention.
pub fn jitter_visibility_fwhm(v0: f64, delta_omega: f64, fwhm: f64, convention: JitterConvention) -> f64 {
    jitter_visibility(v0, delta_omega, convention.width_from_fwhm(fwhm))
}

/// Samples `(Δω, v)` of the jitter-limited visibility across bin spacings.
pub fn visibility_vs_spacing_curve(v0: f64, delta_t: f64, omegas: &[f64]) -> Result<Vec<(f64, f64)>, StateError> {
    let ok = omegas.iter().all(|w| w.is_finite() && *w >= 0.0) && omegas.windows(2).all(|w| w[0] <= w[1]);
    if !ok {
        return Err(StateError::UnsortedRange);
    }
    Ok(omegas.iter().map(|&w| (w, jitter_visibility(v0, w, delta_t))).collect())
}

/// Samples `(δT, v)` of the jitter-limited visibility at fixed spacing.
pub fn visibility_vs_jitter_curve(v0: f64, delta_omega: f64, widths: &[f64]) -> Vec<(f64, f64)> {
    widths
        .iter()
        .map(|&dt| (dt, jitter_visibility(v0, delta_omega, dt)))
        .collect()
}
