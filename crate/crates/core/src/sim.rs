//! Monte Carlo generation of detector time-tags.
//!
//! Photon detections are drawn per detector as an inhomogeneous Poisson
//! process by thinning, jittered with the combined system resolution,
//! quantized onto the tagger grid and merged with periodic marker pulses.
//!
//! Randomness is keyed to fixed one-millisecond blocks of simulated time:
//! every block owns its RNG substreams, so the output does not depend on how
//! the blocks are grouped into parallel chunks.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{phase_of_flight, ChannelConfig, ChannelError, PlatformTrajectory};
use crate::qstate::{beat_envelope, beat_visibility_x, BinPair, EnvelopeMode, FBinQubit, JitterConvention, StateError};
use crate::receiver::{required_path_difference, Basis, Demux, MziConfig, ReceiverError};
use crate::{MARKER_CHANNEL, PORT0_CHANNEL, PORT1_CHANNEL};

pub type ChannelId = u16;

const BLOCK_PS: u64 = 1_000_000_000;
const PS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("marker period {marker_period_ps} ps holds {cycles} beat cycles; an integer number is required")]
    Incommensurate { marker_period_ps: u64, cycles: f64 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Total system jitter from independent components, combined in quadrature.
pub fn combine_jitter(components: &[f64]) -> f64 {
    components.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub name: String,
    /// Nominal timing jitter, FWHM, s.
    pub jitter_fwhm: f64,
    pub efficiency: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// Dead time after each registered event, s.
    #[serde(default)]
    pub dead_time: f64,
}

impl DetectorModel {
    fn issues(&self, path: &str, out: &mut Vec<String>) {
        if !(self.jitter_fwhm.is_finite() && self.jitter_fwhm >= 0.0) {
            out.push(format!("{path}.jitter_fwhm: must be >= 0, got {}", self.jitter_fwhm));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            out.push(format!(
                "{path}.efficiency: must lie in [0, 1], got {}",
                self.efficiency
            ));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            out.push(format!("{path}.dark_rate: must be >= 0, got {}", self.dark_rate));
        }
        if !(self.dead_time.is_finite() && self.dead_time >= 0.0) {
            out.push(format!("{path}.dead_time: must be >= 0, got {}", self.dead_time));
        }
    }
}

/// Time-tagger quantization and marker configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerModel {
    /// Bin quantum in femtoseconds (78.125 ps = 78125 fs).
    pub resolution_fs: u64,
    pub marker_period_ps: u64,
    pub marker_channel: ChannelId,
}

impl TaggerModel {
    pub fn resolution_ps(&self) -> f64 {
        self.resolution_fs as f64 / 1000.0
    }

    pub fn resolution_s(&self) -> f64 {
        self.resolution_fs as f64 * 1e-15
    }

    /// Floors a time (ps) onto the tagger grid and truncates to whole ps.
    pub fn quantize(&self, t_ps: f64) -> u64 {
        let whole = t_ps.floor();
        let t_fs = whole as u128 * 1000 + ((t_ps - whole) * 1000.0).floor() as u128;
        let res = self.resolution_fs as u128;
        ((t_fs / res) * res / 1000) as u64
    }

    /// Number of beat cycles per marker period, if integral.
    pub fn beat_cycles(&self, delta_omega: f64) -> Result<u64, SimError> {
        let cycles = delta_omega * self.marker_period_ps as f64 * PS / (2.0 * PI);
        let rounded = cycles.round();
        if rounded < 1.0 || (cycles - rounded).abs() > 1e-9 * cycles.max(1.0) {
            return Err(SimError::Incommensurate {
                marker_period_ps: self.marker_period_ps,
                cycles,
            });
        }
        Ok(rounded as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateLabel {
    Z0,
    Z1,
    #[serde(rename = "X+")]
    XPlus,
    #[serde(rename = "vac")]
    Vac,
}

impl StateLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateLabel::Z0 => "Z0",
            StateLabel::Z1 => "Z1",
            StateLabel::XPlus => "X+",
            StateLabel::Vac => "vac",
        }
    }

    pub fn state(&self, pair: BinPair) -> Option<FBinQubit> {
        match self {
            StateLabel::Z0 => Some(FBinQubit::zero(pair)),
            StateLabel::Z1 => Some(FBinQubit::one(pair)),
            StateLabel::XPlus => Some(FBinQubit::plus(pair)),
            StateLabel::Vac => None,
        }
    }
}

impl std::str::FromStr for StateLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Z0" | "0" => Ok(StateLabel::Z0),
            "Z1" | "1" => Ok(StateLabel::Z1),
            "X+" | "+" => Ok(StateLabel::XPlus),
            "vac" => Ok(StateLabel::Vac),
            other => Err(format!("unknown state label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub label: StateLabel,
    /// Mean photon rate arriving at the receiver, counts/s.
    pub rate: f64,
}

/// Cyclically repeated sequence of prepared states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSchedule {
    pub segments: Vec<Segment>,
}

impl StateSchedule {
    pub fn single(label: StateLabel, rate: f64, duration_s: f64) -> Self {
        Self {
            segments: vec![Segment {
                duration_s,
                label,
                rate,
            }],
        }
    }

    fn issues(&self, out: &mut Vec<String>) {
        if self.segments.is_empty() {
            out.push("schedule: at least one segment required".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration_s.is_finite() && s.duration_s > 0.0) || duration_ps(s.duration_s) == 0 {
                out.push(format!("schedule[{i}].duration_s: must be > 0, got {}", s.duration_s));
            }
            if !(s.rate.is_finite() && s.rate >= 0.0) {
                out.push(format!("schedule[{i}].rate: must be >= 0, got {}", s.rate));
            }
        }
    }

    fn durations_ps(&self) -> Vec<u64> {
        self.segments.iter().map(|s| duration_ps(s.duration_s)).collect()
    }

    pub fn cycle_ps(&self) -> u64 {
        self.durations_ps().iter().sum()
    }

    /// Segment index active at `t_ps`, with the schedule repeating.
    pub fn segment_at(&self, t_ps: u64) -> usize {
        let durations = self.durations_ps();
        let cycle: u64 = durations.iter().sum();
        let mut pos = t_ps % cycle;
        for (i, d) in durations.iter().enumerate() {
            if pos < *d {
                return i;
            }
            pos -= d;
        }
        durations.len() - 1
    }

    pub fn label_at(&self, t_ps: u64) -> StateLabel {
        self.segments[self.segment_at(t_ps)].label
    }

    /// Splits `[start, end)` into pieces lying inside single segments.
    pub fn pieces(&self, start: u64, end: u64) -> Vec<(u64, u64, usize)> {
        let durations = self.durations_ps();
        let cycle: u64 = durations.iter().sum();
        let mut out = Vec::new();
        let mut t = start;
        while t < end {
            let base = t - t % cycle;
            let mut seg_start = base;
            for (i, d) in durations.iter().enumerate() {
                let seg_end = seg_start + d;
                if t < seg_end {
                    let piece_end = seg_end.min(end);
                    out.push((t, piece_end, i));
                    t = piece_end;
                    if t >= end {
                        break;
                    }
                }
                seg_start = seg_end;
            }
        }
        out
    }

    /// Total time (ps) each label occupies within `[0, run_ps)`.
    pub fn exposure_ps(&self, run_ps: u64) -> Vec<(StateLabel, u64)> {
        let mut acc: Vec<(StateLabel, u64)> = Vec::new();
        for (a, b, i) in self.pieces(0, run_ps) {
            let label = self.segments[i].label;
            match acc.iter_mut().find(|(l, _)| *l == label) {
                Some((_, v)) => *v += b - a,
                None => acc.push((label, b - a)),
            }
        }
        acc
    }
}

fn duration_ps(seconds: f64) -> u64 {
    (seconds * 1e12).round() as u64
}

/// Source parameters: bin 0 centre, spacing and common linewidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub omega0: f64,
    pub delta_omega: f64,
    /// Spectral standard deviation of each bin, rad/s.
    #[serde(default)]
    pub linewidth: f64,
}

impl Source {
    pub fn pair(&self) -> Result<BinPair, StateError> {
        BinPair::with_spacing(self.omega0, self.delta_omega, self.linewidth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSetup {
    pub basis: Basis,
    pub v_z_eps_bin0: f64,
    pub v_z_eps_bin1: f64,
    /// Path difference; defaults to the value matched to the bin spacing.
    #[serde(default)]
    pub delta_l: Option<f64>,
    #[serde(default)]
    pub phase_align: f64,
}

/// Everything needed to generate a tag stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub source: Source,
    pub channel: ChannelConfig,
    pub receiver: ReceiverSetup,
    /// Detector behind port 0 then port 1.
    pub detectors: Vec<DetectorModel>,
    pub tagger: TaggerModel,
    pub schedule: StateSchedule,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub jitter_convention: JitterConvention,
    #[serde(default)]
    pub envelope: EnvelopeMode,
}

impl Scenario {
    /// Every problem with the scenario, one line per field.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = &self.source;
        if !(s.omega0.is_finite() && s.omega0 > 0.0) {
            out.push(format!("source.omega0: must be > 0, got {}", s.omega0));
        }
        if !(s.delta_omega.is_finite() && s.delta_omega > 0.0) {
            out.push(format!("source.delta_omega: must be > 0, got {}", s.delta_omega));
        }
        if !(s.linewidth.is_finite() && s.linewidth >= 0.0) {
            out.push(format!("source.linewidth: must be >= 0, got {}", s.linewidth));
        }
        let c = &self.channel;
        if !(c.attenuation_db.is_finite() && c.attenuation_db >= 0.0) {
            out.push(format!(
                "channel.attenuation_db: must be >= 0, got {}",
                c.attenuation_db
            ));
        }
        for (name, v) in [("v_x_eps", c.factors.v_x_eps), ("v_z_eps", c.factors.v_z_eps)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("channel.{name}: must lie in [0, 1], got {v}"));
            }
        }
        if let PlatformTrajectory::Linear { r0, .. } | PlatformTrajectory::Static { r0 } = c.trajectory {
            if !(r0.is_finite() && r0 >= 0.0) {
                out.push(format!("channel.trajectory.r0: must be >= 0, got {r0}"));
            }
        }
        let r = &self.receiver;
        for (name, v) in [("v_z_eps_bin0", r.v_z_eps_bin0), ("v_z_eps_bin1", r.v_z_eps_bin1)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("receiver.{name}: must lie in [0, 1], got {v}"));
            }
        }
        if let Some(dl) = r.delta_l {
            if !(dl.is_finite() && dl > 0.0) {
                out.push(format!("receiver.delta_l: must be > 0, got {dl}"));
            }
        }
        if self.detectors.len() != 2 {
            out.push(format!(
                "detectors: exactly two required (port 0, port 1), got {}",
                self.detectors.len()
            ));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            d.issues(&format!("detectors[{i}]"), &mut out);
        }
        let t = &self.tagger;
        if t.resolution_fs == 0 {
            out.push("tagger.resolution: must be > 0".into());
        }
        if t.marker_period_ps == 0 {
            out.push("tagger.marker_period: must be > 0".into());
        }
        if t.marker_channel == PORT0_CHANNEL || t.marker_channel == PORT1_CHANNEL {
            out.push(format!(
                "tagger.marker_channel: {} collides with a detector channel",
                t.marker_channel
            ));
        }
        if t.marker_period_ps > 0 && s.delta_omega.is_finite() && s.delta_omega > 0.0 {
            if let Err(e) = t.beat_cycles(s.delta_omega) {
                out.push(format!("tagger.marker_period: {e}"));
            }
        }
        self.schedule.issues(&mut out);
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            out.push(format!("duration_s: must be >= 0, got {}", self.duration_s));
        }
        out
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn duration_ps(&self) -> u64 {
        duration_ps(self.duration_s)
    }

    pub fn mzi(&self) -> Result<MziConfig, ReceiverError> {
        let dl = match self.receiver.delta_l {
            Some(dl) => dl,
            None => required_path_difference(self.source.delta_omega)?,
        };
        let mut cfg = MziConfig::new(dl, 1.0, self.receiver.basis, self.source.omega0)?;
        cfg.phase_align = self.receiver.phase_align;
        Ok(cfg)
    }

    /// Gaussian width (s) applied to detector `idx` timestamps.
    pub fn jitter_width(&self, idx: usize) -> f64 {
        let fwhm = combine_jitter(&[self.detectors[idx].jitter_fwhm, self.tagger.resolution_s()]);
        self.jitter_convention.width_from_fwhm(fwhm)
    }

    /// Beat visibility of the X+ state at the detector before jitter.
    pub fn x_visibility(&self) -> Result<f64, StateError> {
        let q = FBinQubit::plus(self.source.pair()?);
        Ok(beat_visibility_x(&q, &self.channel.factors) * beat_envelope(&q, 0.0, self.envelope))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagRecord {
    pub timestamp_ps: u64,
    pub channel: ChannelId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub resolution_ps: f64,
    pub marker_period_ps: u64,
    pub delta_omega_rad_per_s: f64,
    pub seed: u64,
    pub scenario_digest: String,
}

/// Time-ordered detector and marker records.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    pub records: Vec<TagRecord>,
    pub meta: StreamMeta,
}

impl TagStream {
    /// Index of the first record whose timestamp decreases, if any.
    pub fn first_disorder(&self) -> Option<usize> {
        self.records
            .windows(2)
            .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
            .map(|i| i + 1)
    }

    pub fn count_channel(&self, channel: ChannelId) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }
}

/// Draws event times (ps) in `[start, end)` from a Poisson process with
/// intensity `rate(t)` (1/s), by thinning a homogeneous process of intensity
/// `rate_max`. `rate` must never exceed `rate_max`.
pub fn sample_thinned<R, F>(rng: &mut R, start_ps: f64, end_ps: f64, rate_max: f64, mut rate: F) -> Vec<f64>
where
    R: Rng,
    F: FnMut(f64) -> f64,
{
    let mut out = Vec::new();
    if rate_max <= 0.0 || end_ps <= start_ps {
        return out;
    }
    let gap = Exp::new(rate_max * PS).expect("positive rate");
    let mut t = start_ps;
    loop {
        t += gap.sample(rng);
        if t >= end_ps {
            return out;
        }
        let accept: f64 = rng.random();
        if accept * rate_max < rate(t) {
            out.push(t);
        }
    }
}

/// Per-port detection-rate model for one segment.
#[derive(Debug, Clone, Copy)]
enum PortRate {
    Zero,
    Constant(f64),
    /// `scale · ½(1 + v·cos(phase))`.
    Beat {
        scale: f64,
        visibility: f64,
    },
}

struct Prepared<'a> {
    scenario: &'a Scenario,
    /// rates[segment][port]
    rates: Vec<[PortRate; 2]>,
    jitter_ps: [f64; 2],
    marker_period_ps: u64,
    delta_omega: f64,
    pair: BinPair,
    static_phase: Option<f64>,
    run_ps: u64,
}

impl<'a> Prepared<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        let issues = scenario.issues();
        if !issues.is_empty() {
            return Err(SimError::Invalid(issues));
        }
        let pair = scenario.source.pair()?;
        let transmittance = scenario.channel.transmittance();
        let eff = [scenario.detectors[0].efficiency, scenario.detectors[1].efficiency];
        let bandwidth = crate::qstate::visibility_z(
            &pair,
            &crate::qstate::VisibilityFactors::new(1.0, scenario.channel.factors.v_z_eps)?,
        );
        let demux = Demux::new(
            scenario.mzi()?,
            scenario.receiver.v_z_eps_bin0 * bandwidth,
            scenario.receiver.v_z_eps_bin1 * bandwidth,
        )?;
        let x_vis = scenario.x_visibility()?;
        let mut rates = Vec::new();
        for seg in &scenario.schedule.segments {
            let base = seg.rate * transmittance;
            let entry = match (seg.label.state(pair), scenario.receiver.basis) {
                (None, _) => [PortRate::Zero, PortRate::Zero],
                (Some(q), Basis::Z) => {
                    let d = demux.ports_for(&q)?;
                    [
                        PortRate::Constant(base * eff[0] * d.p_port0),
                        PortRate::Constant(base * eff[1] * d.p_port1),
                    ]
                }
                (Some(_), Basis::X) => {
                    let visibility = if seg.label == StateLabel::XPlus { x_vis } else { 0.0 };
                    [
                        PortRate::Beat {
                            scale: base * eff[0],
                            visibility,
                        },
                        PortRate::Zero,
                    ]
                }
            };
            rates.push(entry);
        }
        let static_phase = match &scenario.channel.trajectory {
            PlatformTrajectory::Static { .. } => Some(phase_of_flight(&pair, &scenario.channel.trajectory, 0.0)?),
            _ => None,
        };
        let marker_period_ps = scenario.tagger.marker_period_ps;
        scenario.tagger.beat_cycles(scenario.source.delta_omega)?;
        Ok(Self {
            scenario,
            rates,
            jitter_ps: [scenario.jitter_width(0) / PS, scenario.jitter_width(1) / PS],
            marker_period_ps,
            delta_omega: scenario.source.delta_omega,
            pair,
            static_phase,
            run_ps: scenario.duration_ps(),
        })
    }

    fn flight_phase(&self, t_ps: f64) -> Result<f64, ChannelError> {
        match self.static_phase {
            Some(p) => Ok(p),
            None => phase_of_flight(&self.pair, &self.scenario.channel.trajectory, t_ps * PS),
        }
    }

    /// Beat phase `Δω·t - Δφ_flight(t)`, using `Δω·T_M ≡ 0 (mod 2π)`.
    fn beat_phase(&self, t_ps: f64) -> Result<f64, ChannelError> {
        let folded = t_ps.rem_euclid(self.marker_period_ps as f64);
        Ok(self.delta_omega * folded * PS - self.flight_phase(t_ps)?)
    }

    fn block(&self, block: u64) -> Result<Vec<TagRecord>, SimError> {
        let start = block * BLOCK_PS;
        let end = (start + BLOCK_PS).min(self.run_ps);
        let mut out = Vec::new();
        let tagger = &self.scenario.tagger;
        for port in 0..2usize {
            let det = &self.scenario.detectors[port];
            let channel = [PORT0_CHANNEL, PORT1_CHANNEL][port];
            let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
            rng.set_stream(block * 4 + port as u64);
            let mut times = Vec::new();
            for (a, b, seg) in self.scenario.schedule.pieces(start, end) {
                let (a, b) = (a as f64, b as f64);
                match self.rates[seg][port] {
                    PortRate::Zero => {}
                    PortRate::Constant(r) => times.extend(sample_thinned(&mut rng, a, b, r, |_| r)),
                    PortRate::Beat { scale, visibility } => {
                        let mut failure = None;
                        let drawn = sample_thinned(&mut rng, a, b, scale * (1.0 + visibility) / 2.0, |t| {
                            match self.beat_phase(t) {
                                Ok(ph) => scale * 0.5 * (1.0 + visibility * ph.cos()),
                                Err(e) => {
                                    failure.get_or_insert(e);
                                    0.0
                                }
                            }
                        });
                        if let Some(e) = failure {
                            return Err(e.into());
                        }
                        times.extend(drawn);
                    }
                }
            }
            let mut dark_rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
            dark_rng.set_stream(block * 4 + 2 + port as u64);
            let dark = det.dark_rate;
            times.extend(sample_thinned(&mut dark_rng, start as f64, end as f64, dark, |_| dark));
            let width = self.jitter_ps[port];
            for t in times {
                let z: f64 = StandardNormal.sample(&mut rng);
                let jittered = t + width * z;
                if jittered >= 0.0 {
                    out.push(TagRecord {
                        timestamp_ps: tagger.quantize(jittered),
                        channel,
                    });
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Runs the scenario with the default chunking.
pub fn simulate(scenario: &Scenario) -> Result<TagStream, SimError> {
    simulate_chunked(scenario, rayon::current_num_threads().max(1))
}

/// Runs the scenario with the simulated blocks grouped into `chunks`
/// parallel work items. The output is identical for every chunk count.
pub fn simulate_chunked(scenario: &Scenario, chunks: usize) -> Result<TagStream, SimError> {
    let prep = Prepared::new(scenario)?;
    let run_ps = prep.run_ps;
    let n_blocks = run_ps.div_ceil(BLOCK_PS);
    let chunks = (chunks.max(1) as u64).min(n_blocks.max(1));
    let per_chunk = n_blocks.div_ceil(chunks).max(1);

    let parts: Vec<Vec<TagRecord>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * per_chunk;
            let hi = ((c + 1) * per_chunk).min(n_blocks);
            let mut acc = Vec::new();
            for b in lo..hi {
                acc.extend(prep.block(b)?);
            }
            acc.sort_unstable();
            Ok(acc)
        })
        .collect::<Result<_, SimError>>()?;

    let detections = apply_dead_time(kway_merge(parts), scenario);
    let tagger = &scenario.tagger;
    let markers = (0..=run_ps / tagger.marker_period_ps).map(|k| TagRecord {
        timestamp_ps: tagger.quantize((k * tagger.marker_period_ps) as f64),
        channel: tagger.marker_channel,
    });
    let mut records = kway_merge(vec![markers.collect(), detections]);
    records.shrink_to_fit();

    Ok(TagStream {
        records,
        meta: StreamMeta {
            resolution_ps: tagger.resolution_ps(),
            marker_period_ps: tagger.marker_period_ps,
            delta_omega_rad_per_s: scenario.source.delta_omega,
            seed: scenario.seed,
            scenario_digest: scenario.digest(),
        },
    })
}

/// Merges sorted runs; ties keep the order of the input runs.
fn kway_merge(parts: Vec<Vec<TagRecord>>) -> Vec<TagRecord> {
    let total = parts.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut heap = BinaryHeap::new();
    let mut iters: Vec<_> = parts.into_iter().map(|p| p.into_iter()).collect();
    for (i, it) in iters.iter_mut().enumerate() {
        if let Some(r) = it.next() {
            heap.push(Reverse((r, i)));
        }
    }
    while let Some(Reverse((r, i))) = heap.pop() {
        out.push(r);
        if let Some(next) = iters[i].next() {
            heap.push(Reverse((next, i)));
        }
    }
    out
}

fn apply_dead_time(records: Vec<TagRecord>, scenario: &Scenario) -> Vec<TagRecord> {
    let dead: Vec<u64> = scenario
        .detectors
        .iter()
        .map(|d| (d.dead_time * 1e12).round() as u64)
        .collect();
    if dead.iter().all(|d| *d == 0) {
        return records;
    }
    let mut last: [Option<u64>; 2] = [None, None];
    records
        .into_iter()
        .filter(|r| {
            let port = (r.channel - PORT0_CHANNEL) as usize;
            match last[port] {
                Some(prev) if r.timestamp_ps < prev + dead[port] => false,
                _ => {
                    last[port] = Some(r.timestamp_ps);
                    true
                }
            }
        })
        .collect()
}

impl Default for TaggerModel {
    fn default() -> Self {
        Self {
            resolution_fs: 78_125,
            marker_period_ps: 2_000_000,
            marker_channel: MARKER_CHANNEL,
        }
    }
}
