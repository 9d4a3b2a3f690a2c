//! Time-tag statistics: marker referencing, beat-period folding,
//! histogramming, sinusoid fitting and visibility estimation.
//!
//! Folding is exact. With `N_b` beat cycles per marker period `T_M` (ps),
//! `τ = Δt mod T_b` is carried as the integer `Δt·N_b mod T_M`, i.e. in units
//! of `1/N_b` ps.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::receiver::Basis;
use crate::sim::{ChannelId, StateLabel, StateSchedule, TagRecord};
use crate::{MARKER_CHANNEL, PORT0_CHANNEL, PORT1_CHANNEL};

pub const DEFAULT_MIN_EVENTS: u64 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum TagProcError {
    #[error("tag stream has no marker events on channel {0}")]
    NoMarkers(ChannelId),
    #[error("timestamps decrease at record {index} ({prev} ps then {next} ps)")]
    NonMonotone { index: usize, prev: u64, next: u64 },
    #[error("invalid folding configuration: {0}")]
    Config(String),
    #[error("{found} events, at least {needed} required for a beat fit")]
    TooFewEvents { found: u64, needed: u64 },
    #[error("degenerate fit: offset {0} <= 0")]
    Degenerate(f64),
    #[error("no counts left after background subtraction")]
    EmptyZ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldingConfig {
    pub delta_omega: f64,
    pub marker_period_ps: u64,
    pub marker_channel: ChannelId,
    pub detector_channels: Vec<ChannelId>,
    pub bin_width_fs: u64,
    /// Tagger grid (fs). When set, the fit weights each bin by the grid
    /// points that fold into it instead of by its width.
    #[serde(default)]
    pub grid_resolution_fs: Option<u64>,
    #[serde(default = "default_min_events")]
    pub min_events: u64,
}

fn default_min_events() -> u64 {
    DEFAULT_MIN_EVENTS
}

impl FoldingConfig {
    pub fn new(delta_omega: f64, marker_period_ps: u64, bin_width_fs: u64) -> Result<Self, TagProcError> {
        let cfg = Self {
            delta_omega,
            marker_period_ps,
            marker_channel: MARKER_CHANNEL,
            detector_channels: vec![PORT0_CHANNEL, PORT1_CHANNEL],
            bin_width_fs,
            grid_resolution_fs: None,
            min_events: DEFAULT_MIN_EVENTS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_grid(mut self, resolution_fs: u64) -> Result<Self, TagProcError> {
        self.grid_resolution_fs = Some(resolution_fs);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TagProcError> {
        let n_b = self.n_b()?;
        if self.bin_width_fs == 0 {
            return Err(TagProcError::Config("bin width must be > 0".into()));
        }
        if self.marker_period_ps as u128 * 1000 <= n_b as u128 * self.bin_width_fs as u128 {
            return Err(TagProcError::Config(format!(
                "bin width {} fs is not smaller than the beat period {:.3} ps",
                self.bin_width_fs,
                self.beat_period_ps()
            )));
        }
        if let Some(res) = self.grid_resolution_fs {
            if res == 0 || !(self.marker_period_ps as u128 * 1000).is_multiple_of(res as u128) {
                return Err(TagProcError::Config(format!(
                    "marker period {} ps is not a whole number of {res} fs tagger steps",
                    self.marker_period_ps
                )));
            }
        }
        if self.detector_channels.contains(&self.marker_channel) {
            return Err(TagProcError::Config(
                "marker channel listed as a detector channel".into(),
            ));
        }
        Ok(())
    }

    /// Beat cycles per marker period.
    pub fn n_b(&self) -> Result<u64, TagProcError> {
        if !(self.delta_omega.is_finite() && self.delta_omega > 0.0) || self.marker_period_ps == 0 {
            return Err(TagProcError::Config("delta_omega and marker period must be > 0".into()));
        }
        let cycles = self.delta_omega * self.marker_period_ps as f64 * 1e-12 / (2.0 * PI);
        let n = cycles.round();
        if n < 1.0 || (cycles - n).abs() > 1e-9 * cycles {
            return Err(TagProcError::Config(format!(
                "marker period holds {cycles} beat cycles; an integer number is required"
            )));
        }
        Ok(n as u64)
    }

    pub fn beat_period_ps(&self) -> f64 {
        let n_b = self.n_b().unwrap_or(1);
        self.marker_period_ps as f64 / n_b as f64
    }

    pub fn bin_width_ps(&self) -> f64 {
        self.bin_width_fs as f64 / 1000.0
    }

    /// `K = ceil(T_b / bin_width)`.
    pub fn bin_count(&self) -> usize {
        let n_b = self.n_b().unwrap_or(1) as u128;
        let num = self.marker_period_ps as u128 * 1000;
        let den = n_b * self.bin_width_fs as u128;
        num.div_ceil(den) as usize
    }
}

/// Detections referenced to the latest marker at or before them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Referenced {
    pub delta_ps: Vec<u64>,
    pub channels: Vec<ChannelId>,
    /// Absolute detection time minus the first marker time.
    pub since_start_ps: Vec<u64>,
    /// Detections before the first marker.
    pub dropped: u64,
    pub first_marker_ps: u64,
}

pub fn check_monotone(records: &[TagRecord]) -> Result<(), TagProcError> {
    match records.windows(2).position(|w| w[1].timestamp_ps < w[0].timestamp_ps) {
        Some(i) => Err(TagProcError::NonMonotone {
            index: i + 1,
            prev: records[i].timestamp_ps,
            next: records[i + 1].timestamp_ps,
        }),
        None => Ok(()),
    }
}

/// `Δt_i = t_i - max{t_m | t_m <= t_i}` for every detector record.
pub fn reference_to_marker(records: &[TagRecord], cfg: &FoldingConfig) -> Result<Referenced, TagProcError> {
    check_monotone(records)?;
    let markers: Vec<u64> = records
        .iter()
        .filter(|r| r.channel == cfg.marker_channel)
        .map(|r| r.timestamp_ps)
        .collect();
    let Some(&first) = markers.first() else {
        return Err(TagProcError::NoMarkers(cfg.marker_channel));
    };
    let mut out = Referenced {
        first_marker_ps: first,
        ..Default::default()
    };
    let mut m = 0usize;
    for r in records.iter().filter(|r| cfg.detector_channels.contains(&r.channel)) {
        while m + 1 < markers.len() && markers[m + 1] <= r.timestamp_ps {
            m += 1;
        }
        if markers[m] > r.timestamp_ps {
            out.dropped += 1;
            continue;
        }
        out.delta_ps.push(r.timestamp_ps - markers[m]);
        out.channels.push(r.channel);
        out.since_start_ps.push(r.timestamp_ps - first);
    }
    Ok(out)
}

/// Folded phase times as numerators over `N_b` (ps).
pub fn fold(delta_ps: &[u64], cfg: &FoldingConfig) -> Result<Vec<u64>, TagProcError> {
    let n_b = cfg.n_b()? as u128;
    let t_m = cfg.marker_period_ps as u128;
    Ok(delta_ps
        .par_iter()
        .map(|&dt| ((dt as u128 * n_b) % t_m) as u64)
        .collect())
}

pub fn tau_ps(folded: u64, n_b: u64) -> f64 {
    folded as f64 / n_b as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatHistogram {
    pub counts: Vec<u64>,
    pub bin_width_fs: u64,
    pub beat_period_ps: f64,
    pub total: u64,
    pub channels: Vec<ChannelId>,
}

impl BeatHistogram {
    pub fn empty(cfg: &FoldingConfig, channels: Vec<ChannelId>) -> Self {
        Self {
            counts: vec![0; cfg.bin_count()],
            bin_width_fs: cfg.bin_width_fs,
            beat_period_ps: cfg.beat_period_ps(),
            total: 0,
            channels,
        }
    }

    pub fn bin_width_ps(&self) -> f64 {
        self.bin_width_fs as f64 / 1000.0
    }

    /// Centre of the bin's span inside `[0, T_b)`.
    pub fn bin_center_ps(&self, k: usize) -> f64 {
        let (a, b) = self.bin_span_ps(k);
        0.5 * (a + b)
    }

    pub fn bin_span_ps(&self, k: usize) -> (f64, f64) {
        let w = self.bin_width_ps();
        let a = k as f64 * w;
        (a, ((k + 1) as f64 * w).min(self.beat_period_ps))
    }

    pub fn merge(&mut self, other: &BeatHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        for c in &other.channels {
            if !self.channels.contains(c) {
                self.channels.push(*c);
            }
        }
    }
}

fn bin_of(folded: u64, n_b: u128, bin_width_fs: u128) -> usize {
    (folded as u128 * 1000 / (n_b * bin_width_fs)) as usize
}

/// Bins folded times; `counts[k]` covers `[k·w, (k+1)·w)`.
pub fn histogram(folded: &[u64], cfg: &FoldingConfig, channels: Vec<ChannelId>) -> Result<BeatHistogram, TagProcError> {
    let n_b = cfg.n_b()? as u128;
    let w = cfg.bin_width_fs as u128;
    let k = cfg.bin_count();
    let counts = folded
        .par_chunks(1 << 16)
        .map(|chunk| {
            let mut c = vec![0u64; k];
            for &f in chunk {
                c[bin_of(f, n_b, w)] += 1;
            }
            c
        })
        .reduce(
            || vec![0u64; k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut h = BeatHistogram::empty(cfg, channels);
    h.total = folded.len() as u64;
    h.counts = counts;
    Ok(h)
}

/// Expected-count basis per bin: exposure, ∫cos(Δωτ), ∫sin(Δωτ).
fn fit_basis(h: &BeatHistogram, cfg: &FoldingConfig) -> Result<Vec<[f64; 3]>, TagProcError> {
    let dw = cfg.delta_omega * 1e-12;
    let k = h.counts.len();
    match cfg.grid_resolution_fs {
        None => Ok((0..k)
            .map(|i| {
                let (a, b) = h.bin_span_ps(i);
                [
                    b - a,
                    ((dw * b).sin() - (dw * a).sin()) / dw,
                    ((dw * a).cos() - (dw * b).cos()) / dw,
                ]
            })
            .collect()),
        Some(res) => {
            // Each grid step stands for a quantization cell of true times;
            // average the beat over the cell, placed by where the truncated
            // timestamp folds.
            let n_b = cfg.n_b()? as u128;
            let steps = cfg.marker_period_ps as u128 * 1000 / res as u128;
            let res_ps = res as f64 / 1000.0;
            let cell = crate::channel::sinc(dw * res_ps / 2.0);
            let mut basis = vec![[0.0; 3]; k];
            for m in 0..steps {
                let ts = (m * res as u128 / 1000) as u64;
                let folded = ((ts as u128 * n_b) % cfg.marker_period_ps as u128) as u64;
                let centre = (m as f64 + 0.5) * res_ps;
                let b = &mut basis[bin_of(folded, n_b, cfg.bin_width_fs as u128)];
                b[0] += res_ps;
                b[1] += res_ps * cell * (dw * centre).cos();
                b[2] += res_ps * cell * (dw * centre).sin();
            }
            let scale = 1.0 / cfg.n_b()? as f64;
            Ok(basis
                .into_iter()
                .map(|b| [b[0] * scale, b[1] * scale, b[2] * scale])
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatFit {
    pub visibility: f64,
    pub visibility_err: f64,
    pub phase: f64,
    pub phase_err: f64,
    /// Fitted mean rate, counts per ps of beat phase.
    pub offset: f64,
    /// Unclamped estimate fell outside [0, 1].
    pub clamped: bool,
    pub peak_trough: Option<f64>,
    pub reduced_chi2: f64,
}

/// Poisson-weighted least-squares fit of `a·(1 + v·cos(Δω·τ + φ))`, with
/// `Δω` fixed, integrated over each bin.
pub fn fit_beat(h: &BeatHistogram, cfg: &FoldingConfig) -> Result<BeatFit, TagProcError> {
    if h.total < cfg.min_events {
        return Err(TagProcError::TooFewEvents {
            found: h.total,
            needed: cfg.min_events,
        });
    }
    let basis = fit_basis(h, cfg)?;
    let rows: Vec<(Vector3<f64>, f64)> = basis
        .iter()
        .zip(&h.counts)
        .filter(|(b, _)| b[0] > 0.0)
        .map(|(b, &c)| (Vector3::new(b[0], b[1], b[2]), c as f64))
        .collect();
    let solve = |weights: &dyn Fn(&Vector3<f64>, f64) -> f64| -> Option<(Vector3<f64>, Matrix3<f64>)> {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for (x, y) in &rows {
            let w = weights(x, *y);
            ata += x * x.transpose() * w;
            atb += x * (w * y);
        }
        let inv = ata.try_inverse()?;
        Some((inv * atb, inv))
    };
    let singular = || TagProcError::Degenerate(0.0);
    let (mut theta, mut cov) = solve(&|_, y| 1.0 / y.max(1.0)).ok_or_else(singular)?;
    for _ in 0..4 {
        let t = theta;
        (theta, cov) = solve(&|x, _| 1.0 / x.dot(&t).max(0.5)).ok_or_else(singular)?;
    }
    let (a, c, s) = (theta[0], theta[1], theta[2]);
    if a.is_nan() || a <= 0.0 {
        return Err(TagProcError::Degenerate(a));
    }
    let r = c.hypot(s);
    let v = r / a;
    let (grad_v, grad_phi) = if r > 0.0 {
        (
            Vector3::new(-v / a, c / (a * r), s / (a * r)),
            Vector3::new(0.0, s / (r * r), -c / (r * r)),
        )
    } else {
        (Vector3::new(0.0, 1.0 / a, 0.0), Vector3::zeros())
    };
    let v_err = if r > 0.0 {
        (grad_v.transpose() * cov * grad_v)[0].max(0.0).sqrt()
    } else {
        ((cov[(1, 1)] + cov[(2, 2)]) / 2.0).max(0.0).sqrt() / a
    };
    let phase_err = (grad_phi.transpose() * cov * grad_phi)[0].max(0.0).sqrt();
    let chi2: f64 = rows
        .iter()
        .map(|(x, y)| {
            let p = x.dot(&theta).max(0.5);
            (y - p).powi(2) / p
        })
        .sum();
    let dof = rows.len().saturating_sub(3).max(1) as f64;

    Ok(BeatFit {
        visibility: v.clamp(0.0, 1.0),
        visibility_err: v_err,
        phase: (-s).atan2(c),
        phase_err,
        offset: a,
        clamped: !(0.0..=1.0).contains(&v),
        peak_trough: peak_trough(h, &basis),
        reduced_chi2: chi2 / dof,
    })
}

/// `(max - min)/(max + min)` of exposure-normalized full bins.
fn peak_trough(h: &BeatHistogram, basis: &[[f64; 3]]) -> Option<f64> {
    let full = basis.iter().map(|b| b[0]).fold(0.0, f64::max);
    let rates: Vec<f64> = h
        .counts
        .iter()
        .zip(basis)
        .filter(|(_, b)| b[0] > 0.0 && (b[0] - full).abs() <= 1e-9 * full)
        .map(|(&c, b)| c as f64 / b[0])
        .collect();
    let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    (rates.len() >= 2 && max + min > 0.0).then(|| (max - min) / (max + min))
}

/// Expected background in a segment, from the vacuum floor.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Background {
    pub peak: f64,
    pub peak_var: f64,
    pub leak: f64,
    pub leak_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZVisibility {
    pub value: f64,
    pub err: f64,
    /// Background-subtracted counts used (peak + leak).
    pub weight: f64,
    pub clamped: bool,
}

/// `V = (N_peak - N_leak)/(N_peak + N_leak)` after background subtraction,
/// with Poisson error propagation.
pub fn z_visibility(peak: u64, leak: u64, bg: Background) -> Result<ZVisibility, TagProcError> {
    let mut clamped = false;
    let mut sub = |n: u64, b: f64| {
        let x = n as f64 - b;
        if x < 0.0 {
            clamped = true;
        }
        x.max(0.0)
    };
    let p = sub(peak, bg.peak);
    let l = sub(leak, bg.leak);
    let s = p + l;
    if s <= 0.0 {
        return Err(TagProcError::EmptyZ);
    }
    let var_p = peak as f64 + bg.peak_var;
    let var_l = leak as f64 + bg.leak_var;
    let err = ((2.0 * l / (s * s)).powi(2) * var_p + (2.0 * p / (s * s)).powi(2) * var_l).sqrt();
    Ok(ZVisibility {
        value: (p - l) / s,
        err,
        weight: s,
        clamped,
    })
}

/// Event-weighted mean of per-bin Z visibilities.
pub fn combine_z(parts: &[ZVisibility]) -> Option<ZVisibility> {
    let total: f64 = parts.iter().map(|z| z.weight).sum();
    if parts.is_empty() || total <= 0.0 {
        return None;
    }
    Some(ZVisibility {
        value: parts.iter().map(|z| z.weight * z.value).sum::<f64>() / total,
        err: parts
            .iter()
            .map(|z| (z.weight / total * z.err).powi(2))
            .sum::<f64>()
            .sqrt(),
        weight: total,
        clamped: parts.iter().any(|z| z.clamped),
    })
}

pub fn qber_from_visibility(v: f64) -> f64 {
    (1.0 - v) / 2.0
}

/// Report written as JSON; fields that could not be computed are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityReport {
    pub v_fit: Option<f64>,
    pub v_fit_err: Option<f64>,
    pub phase_rad: Option<f64>,
    pub v_peak_trough: Option<f64>,
    pub v_z_omega0: Option<f64>,
    pub v_z_omega0_err: Option<f64>,
    pub v_z_omega1: Option<f64>,
    pub v_z_omega1_err: Option<f64>,
    pub v_z_combined: Option<f64>,
    pub qber: Option<f64>,
    pub events_total: u64,
    pub events_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub folding: FoldingConfig,
    /// Which quantities to extract: beat fit (X) or demux visibilities (Z).
    pub basis: Basis,
    /// Schedule used to label events; without one every event is fitted.
    #[serde(default)]
    pub schedule: Option<StateSchedule>,
    /// Segments whose events feed the beat fit.
    #[serde(default = "default_fit_labels")]
    pub fit_labels: Vec<StateLabel>,
}

fn default_fit_labels() -> Vec<StateLabel> {
    vec![StateLabel::XPlus]
}

impl AnalysisConfig {
    pub fn new(folding: FoldingConfig, basis: Basis) -> Self {
        Self {
            folding,
            basis,
            schedule: None,
            fit_labels: default_fit_labels(),
        }
    }
}

/// Per-label accounting for one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCounts {
    /// `None` when no schedule was given.
    pub label: Option<StateLabel>,
    pub histogram: BeatHistogram,
    pub port0: u64,
    pub port1: u64,
    pub exposure_ps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: VisibilityReport,
    pub fit: Option<BeatFit>,
    /// Histogram of the fitted events (empty in Z mode).
    pub fit_histogram: BeatHistogram,
    pub per_label: Vec<LabelCounts>,
    pub detector_records: u64,
    /// Statistical failures; the report is still produced.
    pub problems: Vec<String>,
    pub flags: Vec<String>,
}

/// Runs the full pipeline on a tag stream.
pub fn analyze(records: &[TagRecord], cfg: &AnalysisConfig) -> Result<Analysis, TagProcError> {
    let fc = &cfg.folding;
    fc.validate()?;
    let referenced = reference_to_marker(records, fc)?;
    let detector_records = records
        .iter()
        .filter(|r| fc.detector_channels.contains(&r.channel))
        .count() as u64;
    let folded = fold(&referenced.delta_ps, fc)?;

    let label_of = |i: usize| cfg.schedule.as_ref().map(|s| s.label_at(referenced.since_start_ps[i]));
    let run_ps = referenced.since_start_ps.last().copied().unwrap_or(0).max(
        records
            .last()
            .map_or(0, |r| r.timestamp_ps.saturating_sub(referenced.first_marker_ps)),
    );
    let mut groups: Vec<(Option<StateLabel>, Vec<u64>, u64, u64)> = match &cfg.schedule {
        Some(s) => {
            let mut labels: Vec<StateLabel> = s.segments.iter().map(|g| g.label).collect();
            labels.sort();
            labels.dedup();
            labels.into_iter().map(|l| (Some(l), Vec::new(), 0, 0)).collect()
        }
        None => vec![(None, Vec::new(), 0, 0)],
    };
    for (i, f) in folded.iter().enumerate() {
        let label = label_of(i);
        let g = groups.iter_mut().find(|g| g.0 == label).expect("label present");
        g.1.push(*f);
        match referenced.channels[i] {
            PORT0_CHANNEL => g.2 += 1,
            PORT1_CHANNEL => g.3 += 1,
            _ => {}
        }
    }
    let exposure = cfg.schedule.as_ref().map(|s| s.exposure_ps(run_ps + 1));
    let mut per_label = Vec::new();
    for (label, taus, port0, port1) in groups {
        per_label.push(LabelCounts {
            label,
            histogram: histogram(&taus, fc, fc.detector_channels.clone())?,
            port0,
            port1,
            exposure_ps: match (&exposure, label) {
                (Some(e), Some(l)) => e.iter().find(|x| x.0 == l).map_or(0, |x| x.1),
                _ => run_ps,
            },
        });
    }

    let mut problems = Vec::new();
    let mut flags = Vec::new();
    let mut report = VisibilityReport {
        v_fit: None,
        v_fit_err: None,
        phase_rad: None,
        v_peak_trough: None,
        v_z_omega0: None,
        v_z_omega0_err: None,
        v_z_omega1: None,
        v_z_omega1_err: None,
        v_z_combined: None,
        qber: None,
        events_total: referenced.delta_ps.len() as u64,
        events_dropped: referenced.dropped,
    };

    let mut fit_histogram = BeatHistogram::empty(fc, fc.detector_channels.clone());
    let mut fit = None;
    match cfg.basis {
        Basis::X => {
            for lc in &per_label {
                if lc.label.is_none_or(|l| cfg.fit_labels.contains(&l)) {
                    fit_histogram.merge(&lc.histogram);
                }
            }
            match fit_beat(&fit_histogram, fc) {
                Ok(f) => {
                    if f.clamped {
                        flags.push("v_fit clamped to [0, 1]".into());
                    }
                    report.v_fit = Some(f.visibility);
                    report.v_fit_err = Some(f.visibility_err);
                    report.phase_rad = Some(f.phase);
                    report.v_peak_trough = f.peak_trough;
                    report.qber = Some(qber_from_visibility(f.visibility));
                    fit = Some(f);
                }
                Err(e) => problems.push(format!("beat fit: {e}")),
            }
        }
        Basis::Z => {
            if cfg.schedule.is_none() {
                problems.push("Z visibilities need a state schedule".into());
            }
            let vac = per_label
                .iter()
                .find(|l| l.label == Some(StateLabel::Vac) && l.exposure_ps > 0);
            let mut parts = Vec::new();
            for (label, peak_port0) in [(StateLabel::Z0, true), (StateLabel::Z1, false)] {
                let Some(lc) = per_label.iter().find(|l| l.label == Some(label)) else {
                    continue;
                };
                let (peak, leak) = if peak_port0 {
                    (lc.port0, lc.port1)
                } else {
                    (lc.port1, lc.port0)
                };
                let bg = match vac {
                    Some(v) => {
                        let ratio = lc.exposure_ps as f64 / v.exposure_ps as f64;
                        let (vp, vl) = if peak_port0 {
                            (v.port0, v.port1)
                        } else {
                            (v.port1, v.port0)
                        };
                        Background {
                            peak: vp as f64 * ratio,
                            peak_var: vp as f64 * ratio * ratio,
                            leak: vl as f64 * ratio,
                            leak_var: vl as f64 * ratio * ratio,
                        }
                    }
                    None => Background::default(),
                };
                match z_visibility(peak, leak, bg) {
                    Ok(z) => {
                        if z.clamped {
                            flags.push(format!(
                                "{} counts clamped at 0 after background subtraction",
                                label.as_str()
                            ));
                        }
                        if peak_port0 {
                            report.v_z_omega0 = Some(z.value);
                            report.v_z_omega0_err = Some(z.err);
                        } else {
                            report.v_z_omega1 = Some(z.value);
                            report.v_z_omega1_err = Some(z.err);
                        }
                        parts.push(z);
                    }
                    Err(e) => problems.push(format!("{} visibility: {e}", label.as_str())),
                }
            }
            if let Some(c) = combine_z(&parts) {
                report.v_z_combined = Some(c.value);
                report.qber = Some(qber_from_visibility(c.value.clamp(0.0, 1.0)));
            }
        }
    }
    if report.events_total == 0 {
        problems.push("no detector events".into());
    }

    Ok(Analysis {
        report,
        fit,
        fit_histogram,
        per_label,
        detector_records,
        problems,
        flags,
    })
}
