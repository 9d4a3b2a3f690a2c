//! Moving-platform channel effects on frequency-bin qubits.
//!
//! A range `R(t)` between source and receiver imprints the relative phase
//! `Δω·(1 + Ṙ/c)·R/c` on the two bins. Its time derivative is the rate at
//! which a compensation loop has to track the analyzer phase.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{check_unit, BinPair, FBinQubit, StateError, VisibilityFactors};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("|v| = {0} m/s is not below the speed of light")]
    Superluminal(f64),
    #[error("time {t} s lies outside the sampled trajectory [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("range is negative ({range} m) at t = {t} s")]
    NegativeRange { t: f64, range: f64 },
    #[error("trajectory samples invalid: {0}")]
    BadSamples(String),
    #[error("trajectory csv line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("reference window must be finite and non-negative, got {0}")]
    BadWindow(f64),
    #[error("attenuation must be finite and non-negative, got {0} dB")]
    BadAttenuation(f64),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relativistic longitudinal Doppler shift `ω·√((c+v)/(c−v))`.
pub fn doppler_shift(omega: f64, v: f64) -> Result<f64, ChannelError> {
    if v.is_nan() || v.abs() >= SPEED_OF_LIGHT {
        return Err(ChannelError::Superluminal(v));
    }
    Ok(omega * ((SPEED_OF_LIGHT + v) / (SPEED_OF_LIGHT - v)).sqrt())
}

/// Range profile between transmitter and receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlatformTrajectory {
    Static {
        r0: f64,
    },
    /// `R(t) = r0 + v·t`.
    Linear {
        r0: f64,
        v: f64,
    },
    Sampled(SampledTrajectory),
}

/// A derivative estimate, flagged when a one-sided difference was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub value: f64,
    pub one_sided: bool,
}

impl PlatformTrajectory {
    pub fn range(&self, t: f64) -> Result<f64, ChannelError> {
        let r = match self {
            PlatformTrajectory::Static { r0 } => *r0,
            PlatformTrajectory::Linear { r0, v } => r0 + v * t,
            PlatformTrajectory::Sampled(s) => s.range(t)?,
        };
        if r < 0.0 {
            return Err(ChannelError::NegativeRange { t, range: r });
        }
        Ok(r)
    }

    pub fn range_rate(&self, t: f64) -> Result<RateEstimate, ChannelError> {
        match self {
            PlatformTrajectory::Static { .. } => Ok(RateEstimate {
                value: 0.0,
                one_sided: false,
            }),
            PlatformTrajectory::Linear { v, .. } => {
                self.range(t)?;
                Ok(RateEstimate {
                    value: *v,
                    one_sided: false,
                })
            }
            PlatformTrajectory::Sampled(s) => s.range_rate(t),
        }
    }

    /// Time span over which the trajectory is defined.
    pub fn span(&self) -> Option<(f64, f64)> {
        match self {
            PlatformTrajectory::Sampled(s) => Some((s.times[0], *s.times.last().unwrap())),
            _ => None,
        }
    }
}

/// `(t, R)` samples interpolated with a monotone (Fritsch-Carlson) cubic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSamples", into = "RawSamples")]
pub struct SampledTrajectory {
    times: Vec<f64>,
    ranges: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSamples {
    samples: Vec<(f64, f64)>,
}

impl TryFrom<RawSamples> for SampledTrajectory {
    type Error = ChannelError;

    fn try_from(raw: RawSamples) -> Result<Self, Self::Error> {
        SampledTrajectory::new(raw.samples)
    }
}

impl From<SampledTrajectory> for RawSamples {
    fn from(s: SampledTrajectory) -> Self {
        RawSamples {
            samples: s.times.into_iter().zip(s.ranges).collect(),
        }
    }
}

impl SampledTrajectory {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, ChannelError> {
        if samples.len() < 2 {
            return Err(ChannelError::BadSamples("need at least two samples".into()));
        }
        for (i, (t, r)) in samples.iter().enumerate() {
            if !t.is_finite() || !r.is_finite() {
                return Err(ChannelError::BadSamples(format!("sample {i} is not finite")));
            }
            if *r < 0.0 {
                return Err(ChannelError::BadSamples(format!("sample {i} has negative range {r}")));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(ChannelError::BadSamples(format!(
                "time not strictly increasing at sample {}",
                i + 1
            )));
        }
        let (times, ranges): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let slopes = pchip_slopes(&times, &ranges);
        Ok(Self { times, ranges, slopes })
    }

    /// Reads a `t_s,range_m` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ChannelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| ChannelError::Csv {
            line: 1,
            msg: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != ["t_s", "range_m"] {
            return Err(ChannelError::Csv {
                line: 1,
                msg: format!(
                    "expected header `t_s,range_m`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ChannelError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64, ChannelError> {
                rec.get(i)
                    .ok_or_else(|| ChannelError::Csv {
                        line,
                        msg: "missing field".into(),
                    })?
                    .parse::<f64>()
                    .map_err(|e| ChannelError::Csv {
                        line,
                        msg: e.to_string(),
                    })
            };
            samples.push((field(0)?, field(1)?));
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, ChannelError> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn check(&self, t: f64) -> Result<(), ChannelError> {
        let (start, end) = (self.times[0], *self.times.last().unwrap());
        if !(start..=end).contains(&t) {
            return Err(ChannelError::OutOfRange { t, start, end });
        }
        Ok(())
    }

    fn interval(&self, t: f64) -> usize {
        // index k with times[k] <= t < times[k+1], clamped to the last interval
        let k = self.times.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    pub fn range(&self, t: f64) -> Result<f64, ChannelError> {
        self.check(t)?;
        let k = self.interval(t);
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(h00 * self.ranges[k] + h10 * h * self.slopes[k] + h01 * self.ranges[k + 1] + h11 * h * self.slopes[k + 1])
    }

    /// Centered difference with the local sample spacing as step; falls back
    /// to a one-sided difference at the ends.
    pub fn range_rate(&self, t: f64) -> Result<RateEstimate, ChannelError> {
        self.check(t)?;
        let k = self.interval(t);
        let h = self.times[k + 1] - self.times[k];
        central_difference(|x| self.range(x), t, h, self.times[0], *self.times.last().unwrap())
    }
}

fn central_difference<F>(f: F, t: f64, h: f64, start: f64, end: f64) -> Result<RateEstimate, ChannelError>
where
    F: Fn(f64) -> Result<f64, ChannelError>,
{
    let lo_ok = t - h >= start;
    let hi_ok = t + h <= end;
    match (lo_ok, hi_ok) {
        (true, true) => Ok(RateEstimate {
            value: (f(t + h)? - f(t - h)?) / (2.0 * h),
            one_sided: false,
        }),
        (false, true) => Ok(RateEstimate {
            value: (f(t + h)? - f(t)?) / h,
            one_sided: true,
        }),
        (true, false) => Ok(RateEstimate {
            value: (f(t)? - f(t - h)?) / h,
            one_sided: true,
        }),
        (false, false) => Ok(RateEstimate {
            value: (f(end)? - f(start)?) / (end - start),
            one_sided: true,
        }),
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = pchip_end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn pchip_end(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Relative propagation phase between the bins, `Δω·(1 + Ṙ/c)·R/c` (rad).
pub fn phase_of_flight(pair: &BinPair, traj: &PlatformTrajectory, t: f64) -> Result<f64, ChannelError> {
    let r = traj.range(t)?;
    let rdot = traj.range_rate(t)?.value;
    Ok(flight_phase(pair.delta_omega(), r, rdot))
}

fn flight_phase(delta_omega: f64, r: f64, rdot: f64) -> f64 {
    delta_omega * (1.0 + rdot / SPEED_OF_LIGHT) * r / SPEED_OF_LIGHT
}

/// Rate of change of the propagation phase, in Hz.
pub fn phase_change_rate(pair: &BinPair, traj: &PlatformTrajectory, t: f64) -> Result<RateEstimate, ChannelError> {
    let dw = pair.delta_omega();
    match traj {
        PlatformTrajectory::Static { .. } => {
            traj.range(t)?;
            Ok(RateEstimate {
                value: 0.0,
                one_sided: false,
            })
        }
        PlatformTrajectory::Linear { v, .. } => {
            traj.range(t)?;
            // R̈ = 0, so d/dt[Δω(1+v/c)R/c] = Δω(1+v/c)v/c
            let c = SPEED_OF_LIGHT;
            Ok(RateEstimate {
                value: dw * (1.0 + v / c) * v / c / (2.0 * PI),
                one_sided: false,
            })
        }
        PlatformTrajectory::Sampled(s) => {
            s.check(t)?;
            let k = s.interval(t);
            let h = s.times[k + 1] - s.times[k];
            let (start, end) = (s.times[0], *s.times.last().unwrap());
            let est = central_difference(|x| phase_of_flight(pair, traj, x), t, h, start, end)?;
            let inner = s.range_rate(t)?;
            Ok(RateEstimate {
                value: est.value / (2.0 * PI),
                one_sided: est.one_sided || inner.one_sided,
            })
        }
    }
}

/// Aggregate channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub trajectory: PlatformTrajectory,
    /// Loss in dB; affects event rates only.
    pub attenuation_db: f64,
    pub factors: VisibilityFactors,
}

impl ChannelConfig {
    pub fn new(
        trajectory: PlatformTrajectory,
        attenuation_db: f64,
        factors: VisibilityFactors,
    ) -> Result<Self, ChannelError> {
        if !(attenuation_db.is_finite() && attenuation_db >= 0.0) {
            return Err(ChannelError::BadAttenuation(attenuation_db));
        }
        check_unit("v_x_eps", factors.v_x_eps)?;
        check_unit("v_z_eps", factors.v_z_eps)?;
        Ok(Self {
            trajectory,
            attenuation_db,
            factors,
        })
    }

    /// Power transmittance `10^(-dB/10)`.
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.attenuation_db / 10.0)
    }
}

/// Two-level density matrix after averaging over an uncertain time reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasedState {
    pub p0: f64,
    pub p1: f64,
    /// Off-diagonal element `ρ01`.
    pub coherence: Complex64,
}

impl DephasedState {
    pub fn trace(&self) -> f64 {
        self.p0 + self.p1
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Factor multiplying the coherence when the time reference is only known
/// to within a uniform window `[-T_r, T_r]`.
pub fn coherence_factor(delta_omega: f64, t_r: f64) -> f64 {
    sinc(delta_omega * t_r)
}

pub fn dephase_by_reference_window(q: &FBinQubit, t_r: f64) -> Result<DephasedState, ChannelError> {
    if !(t_r.is_finite() && t_r >= 0.0) {
        return Err(ChannelError::BadWindow(t_r));
    }
    let (p0, p1) = q.populations();
    let factor = coherence_factor(q.pair().delta_omega(), t_r);
    Ok(DephasedState {
        p0,
        p1,
        coherence: q.a0() * q.a1().conj() * factor,
    })
}

/// Fidelity `cos²(Δω·δt/2)` between an equator state and its copy
/// compensated with a reference clock off by `timing_error`.
pub fn compensation_fidelity(delta_omega: f64, timing_error: f64) -> f64 {
    (delta_omega * timing_error / 2.0).cos().powi(2)
}

/// Largest timing error keeping [`compensation_fidelity`] at or above `fidelity`.
pub fn timing_budget(delta_omega: f64, fidelity: f64) -> f64 {
    2.0 * fidelity.clamp(0.0, 1.0).sqrt().acos() / delta_omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DW_260: f64 = 2.0 * PI * 260e6;

    fn pair(dw: f64) -> BinPair {
        BinPair::with_spacing(2.0 * PI * 384e12, dw, 0.0).unwrap()
    }

    #[test]
    fn doppler_examples() {
        let w = 2.0 * PI * 384e12;
        assert_eq!(doppler_shift(w, 0.0).unwrap(), w);
        assert_relative_eq!(
            doppler_shift(1.0, 6e3).unwrap() - 1.0,
            2.001_404_599e-5,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            doppler_shift(1.0, -6e3).unwrap() - 1.0,
            -2.001_364_543_891e-5,
            max_relative = 1e-9
        );
        // first-order agreement
        let first = 1.0 + 6e3 / SPEED_OF_LIGHT;
        assert!((doppler_shift(1.0, 6e3).unwrap() - first).abs() < (6e3 / SPEED_OF_LIGHT).powi(2));
        assert!(doppler_shift(1.0, SPEED_OF_LIGHT).is_err());
        assert!(doppler_shift(1.0, -3e8).is_err());
    }

    #[test]
    fn flight_phase_examples() {
        let p = pair(1.634e9);
        let zero = PlatformTrajectory::Linear { r0: 0.0, v: 6e3 };
        assert_eq!(phase_of_flight(&p, &zero, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            phase_of_flight(&p, &zero, 1.0).unwrap(),
            32_703.278_398_5,
            max_relative = 1e-10
        );
        let fixed = PlatformTrajectory::Static { r0: 2.0 };
        let a = phase_of_flight(&p, &fixed, 0.0).unwrap();
        assert_eq!(a, phase_of_flight(&p, &fixed, 123.0).unwrap());
        assert_relative_eq!(a, 1.634e9 * 2.0 / SPEED_OF_LIGHT);
    }

    #[test]
    fn phase_rate_examples() {
        let p = pair(DW_260);
        let leo = PlatformTrajectory::Linear { r0: 0.0, v: 6e3 };
        let rate = phase_change_rate(&p, &leo, 1.0).unwrap();
        assert_relative_eq!(rate.value, 5_203.704_029, max_relative = 1e-9);
        assert!(!rate.one_sided);
        let still = PlatformTrajectory::Linear { r0: 10.0, v: 0.0 };
        assert_eq!(phase_change_rate(&p, &still, 3.0).unwrap().value, 0.0);
        let fast = PlatformTrajectory::Linear { r0: 0.0, v: 12e3 };
        let ratio = phase_change_rate(&p, &fast, 1.0).unwrap().value / rate.value;
        assert!((ratio - 2.0).abs() < 1e-4);
        let late = phase_change_rate(&p, &leo, 10.0).unwrap().value;
        assert!((late - rate.value).abs() <= rate.value * (6e3 / SPEED_OF_LIGHT).powi(2));
    }

    #[test]
    fn negative_range_rejected() {
        let t = PlatformTrajectory::Linear { r0: 1.0, v: -1.0 };
        assert!(matches!(t.range(2.0), Err(ChannelError::NegativeRange { .. })));
    }

    #[test]
    fn sampled_reproduces_linear_motion() {
        let samples: Vec<(f64, f64)> = (0..=20)
            .map(|k| (k as f64 * 0.5, 500e3 + 6e3 * k as f64 * 0.5))
            .collect();
        let traj = PlatformTrajectory::Sampled(SampledTrajectory::new(samples).unwrap());
        let lin = PlatformTrajectory::Linear { r0: 500e3, v: 6e3 };
        let p = pair(DW_260);
        for t in [0.25, 1.0, 3.3, 7.9] {
            assert_relative_eq!(traj.range(t).unwrap(), lin.range(t).unwrap(), max_relative = 1e-12);
            let r = traj.range_rate(t).unwrap();
            assert_eq!(r.one_sided, t < 0.5);
            assert_relative_eq!(r.value, 6e3, max_relative = 1e-9);
            let f = phase_change_rate(&p, &traj, t).unwrap();
            assert_relative_eq!(f.value, 5_203.704_029, max_relative = 1e-6);
        }
        assert!(traj.range_rate(0.0).unwrap().one_sided);
        assert!(traj.range_rate(10.0).unwrap().one_sided);
        assert!(matches!(traj.range(10.5), Err(ChannelError::OutOfRange { .. })));
    }

    #[test]
    fn pchip_does_not_overshoot() {
        let s = SampledTrajectory::new(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 10.0), (3.0, 10.0), (4.0, 10.0)]).unwrap();
        for k in 0..=400 {
            let r = s.range(k as f64 * 0.01).unwrap();
            assert!((-1e-12..=10.0 + 1e-12).contains(&r), "overshoot {r}");
        }
    }

    #[test]
    fn sampled_rejects_bad_input() {
        assert!(SampledTrajectory::new(vec![(0.0, 1.0)]).is_err());
        assert!(SampledTrajectory::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(SampledTrajectory::new(vec![(0.0, 1.0), (1.0, -2.0)]).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let csv = "t_s,range_m\n0,1000\n1,1006\n2,1012\n";
        let s = SampledTrajectory::from_csv(csv.as_bytes()).unwrap();
        assert_relative_eq!(s.range(1.5).unwrap(), 1009.0, max_relative = 1e-12);
        let bad = "t_s,range_m\n0,1000\n1,abc\n";
        match SampledTrajectory::from_csv(bad.as_bytes()) {
            Err(ChannelError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SampledTrajectory::from_csv("time,range\n0,1\n".as_bytes()).is_err());
        let back_in_time = "t_s,range_m\n0,1\n2,1\n1,1\n";
        assert!(SampledTrajectory::from_csv(back_in_time.as_bytes()).is_err());
    }

    #[test]
    fn dephasing_examples() {
        let q = FBinQubit::plus(pair(DW_260));
        let id = dephase_by_reference_window(&q, 0.0).unwrap();
        assert_relative_eq!(id.coherence.re, 0.5, epsilon = 1e-15);
        let zero = dephase_by_reference_window(&q, PI / DW_260).unwrap();
        assert!(zero.coherence.norm() < 1e-15, "{}", zero.coherence.norm());
        assert_relative_eq!(coherence_factor(DW_260, PI / (2.0 * DW_260)), 2.0 / PI, epsilon = 1e-15);
        assert_relative_eq!(id.trace(), 1.0, epsilon = 1e-15);
        assert!(dephase_by_reference_window(&q, -1.0).is_err());
        // long windows approach the fully dephased state
        let long = dephase_by_reference_window(&q, 1e-3).unwrap();
        assert!(long.coherence.norm() < 1e-5);
    }

    /// Window average `(1/2T)∫_{-T}^{T} cos(Δω t) dt` by composite Simpson.
    fn window_average(dw: f64, t_r: f64) -> f64 {
        let n = 4000;
        let h = 2.0 * t_r / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (dw * (-t_r + k as f64 * h)).cos();
        }
        acc * h / 3.0 / (2.0 * t_r)
    }

    #[test]
    fn coherence_factor_matches_window_average() {
        for (dw, t_r) in [(DW_260, 1e-9), (DW_260, 3.3e-9), (1e9, 7e-10)] {
            assert_relative_eq!(coherence_factor(dw, t_r), window_average(dw, t_r), epsilon = 1e-10);
        }
    }

    #[test]
    fn compensation_examples() {
        assert_eq!(compensation_fidelity(1.634e9, 0.0), 1.0);
        assert!(compensation_fidelity(1.634e9, PI / 1.634e9) < 1e-30);
        let budget = timing_budget(1.634e9, 0.999);
        assert_relative_eq!(budget, 38.712_422_8e-12, max_relative = 1e-8);
        assert_relative_eq!(compensation_fidelity(1.634e9, budget), 0.999, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn doppler_round_trip(w in 1e9f64..1e16, v in -2.9e8f64..2.9e8) {
            let back = doppler_shift(doppler_shift(w, v).unwrap(), -v).unwrap();
            prop_assert!(((back - w) / w).abs() < 1e-12);
        }

        #[test]
        fn dephasing_trace_and_bound(a0 in 0.0f64..1.0, ph in -PI..PI, dw in 1e8f64..1e10, t_r in 0.0f64..1e-6) {
            let q = FBinQubit::new(pair(dw), Complex64::new(a0, 0.0), Complex64::from_polar(1.0 - a0 + 1e-6, ph)).unwrap();
            let d = dephase_by_reference_window(&q, t_r).unwrap();
            prop_assert!((d.trace() - 1.0).abs() < 1e-15);
            prop_assert!(d.coherence.norm() <= (d.p0 * d.p1).sqrt() + 1e-15);
            let f = coherence_factor(dw, t_r);
            prop_assert!(f.abs() <= 1.0);
            if t_r > 0.0 && dw * t_r > 1e-6 {
                prop_assert!(f.abs() < 1.0);
            }
        }

        #[test]
        fn fidelity_bounded_and_periodic(dw in 1e8f64..1e10, dt in 0.0f64..1e-8) {
            let f = compensation_fidelity(dw, dt);
            prop_assert!((0.0..=1.0).contains(&f));
            let period = 2.0 * PI / dw;
            prop_assert!((compensation_fidelity(dw, dt + period) - f).abs() < 1e-9);
        }
    }
}
