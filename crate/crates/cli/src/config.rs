//! Scenario configuration files.
//!
//! The on-disk form spells every physical unit in its key name; it is
//! converted into core types after validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fbqlink_core::channel::SampledTrajectory;
use fbqlink_core::sim::{ReceiverSetup, Segment, Source};
use fbqlink_core::{
    Basis, ChannelConfig, DetectorModel, EnvelopeMode, JitterConvention, PlatformTrajectory, Scenario, StateLabel,
    StateSchedule, TaggerModel, VisibilityFactors,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("override `{0}`: expected key=value")]
    OverrideSyntax(String),
    #[error("override `{key}`: {msg}")]
    OverridePath { key: String, msg: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub omega0_rad_per_s: f64,
    pub delta_omega_rad_per_s: f64,
    #[serde(default)]
    pub linewidth_rad_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Static {
        range_m: f64,
    },
    Linear {
        range_m: f64,
        velocity_m_per_s: f64,
    },
    /// CSV with header `t_s,range_m`, relative to the config file.
    Sampled {
        csv_path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub attenuation_db: f64,
    pub v_x_eps: f64,
    #[serde(default = "one")]
    pub v_z_eps: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    pub basis: Basis,
    pub v_z_eps_bin0: f64,
    pub v_z_eps_bin1: f64,
    #[serde(default)]
    pub delta_l_m: Option<f64>,
    #[serde(default)]
    pub phase_align_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub name: String,
    pub jitter_fwhm_ps: f64,
    pub efficiency: f64,
    #[serde(default)]
    pub dark_rate_cps: f64,
    #[serde(default)]
    pub dead_time_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerSection {
    pub resolution_ps: f64,
    pub marker_period_ps: u64,
    #[serde(default)]
    pub marker_channel: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub label: StateLabel,
    pub duration_s: f64,
    pub rate_cps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Histogram bin width; defaults to the tagger resolution.
    #[serde(default)]
    pub bin_width_ps: Option<f64>,
    #[serde(default = "default_min_events")]
    pub min_events: u64,
    #[serde(default = "default_fit_labels")]
    pub fit_labels: Vec<StateLabel>,
}

fn default_min_events() -> u64 {
    fbqlink_core::tagproc::DEFAULT_MIN_EVENTS
}

fn default_fit_labels() -> Vec<StateLabel> {
    vec![StateLabel::XPlus]
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bin_width_ps: None,
            min_events: default_min_events(),
            fit_labels: default_fit_labels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub source: SourceConfig,
    pub channel: ChannelSection,
    pub receiver: ReceiverSection,
    pub detectors: Vec<DetectorSection>,
    pub tagger: TaggerSection,
    pub schedule: Vec<SegmentSection>,
    #[serde(default)]
    pub jitter_convention: JitterConvention,
    #[serde(default)]
    pub envelope: EnvelopeMode,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// 2π·260 MHz: the bin spacing used by the simulation defaults. It fits
/// exactly 520 beat cycles into a 2 μs marker period.
pub const DEMO_DELTA_OMEGA: f64 = 2.0 * PI * 260e6;

impl ScenarioConfig {
    /// Four 1 s segments {Z0, X+, Z1, vac}, 500 kHz markers, 78.125 ps tagger.
    pub fn demo(basis: Basis) -> Self {
        let detector = |name: &str| DetectorSection {
            name: name.into(),
            jitter_fwhm_ps: 50.0,
            efficiency: 0.65,
            dark_rate_cps: 100.0,
            dead_time_ns: 0.0,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            duration_s: 4.0,
            source: SourceConfig {
                omega0_rad_per_s: 2.0 * PI * 299_792_458.0 / 780e-9,
                delta_omega_rad_per_s: DEMO_DELTA_OMEGA,
                linewidth_rad_per_s: 2.0 * PI * 300e3,
            },
            channel: ChannelSection {
                trajectory: TrajectoryConfig::Static { range_m: 2.0 },
                attenuation_db: 0.0,
                v_x_eps: 0.95,
                v_z_eps: 1.0,
            },
            receiver: ReceiverSection {
                basis,
                v_z_eps_bin0: 0.889,
                v_z_eps_bin1: 0.821,
                delta_l_m: None,
                phase_align_rad: 0.0,
            },
            detectors: vec![detector("apd0"), detector("apd1")],
            tagger: TaggerSection {
                resolution_ps: 78.125,
                marker_period_ps: 2_000_000,
                marker_channel: 0,
            },
            schedule: [StateLabel::Z0, StateLabel::XPlus, StateLabel::Z1, StateLabel::Vac]
                .into_iter()
                .map(|label| SegmentSection {
                    label,
                    duration_s: 1.0,
                    rate_cps: 2e5,
                })
                .collect(),
            jitter_convention: JitterConvention::Fwhm,
            envelope: EnvelopeMode::Quadrature,
            analysis: AnalysisSection::default(),
        }
    }

    /// SHA-256 of the canonical JSON form (keys sorted, no whitespace).
    pub fn digest(&self) -> String {
        canonical_digest(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Converts to a core scenario, collecting every field problem.
    pub fn to_scenario(&self, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let mut issues = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            issues.push(format!(
                "schema_version: unsupported value {}, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        let resolution_fs = match ps_to_fs(self.tagger.resolution_ps) {
            Some(fs) if fs > 0 => fs,
            _ => {
                issues.push(format!(
                    "tagger.resolution_ps: must be > 0 and a whole number of fs, got {}",
                    self.tagger.resolution_ps
                ));
                1
            }
        };
        let trajectory = match &self.channel.trajectory {
            TrajectoryConfig::Static { range_m } => PlatformTrajectory::Static { r0: *range_m },
            TrajectoryConfig::Linear {
                range_m,
                velocity_m_per_s,
            } => {
                if velocity_m_per_s.is_nan() || velocity_m_per_s.abs() >= fbqlink_core::SPEED_OF_LIGHT {
                    issues.push(format!(
                        "channel.trajectory.velocity_m_per_s: must be below c, got {velocity_m_per_s}"
                    ));
                }
                PlatformTrajectory::Linear {
                    r0: *range_m,
                    v: *velocity_m_per_s,
                }
            }
            TrajectoryConfig::Sampled { csv_path } => {
                let path = base_dir.join(csv_path);
                match SampledTrajectory::from_csv_path(&path) {
                    Ok(s) => PlatformTrajectory::Sampled(s),
                    Err(e) => {
                        issues.push(format!("channel.trajectory.csv_path: {}: {e}", path.display()));
                        PlatformTrajectory::Static { r0: 0.0 }
                    }
                }
            }
        };
        if let Some(w) = self.analysis.bin_width_ps {
            if ps_to_fs(w).is_none_or(|fs| fs == 0) {
                issues.push(format!(
                    "analysis.bin_width_ps: must be > 0 and a whole number of fs, got {w}"
                ));
            }
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
                issues.push(format!("schedule[{i}].duration_s: must be > 0, got {}", s.duration_s));
            }
        }
        let scenario = Scenario {
            source: Source {
                omega0: self.source.omega0_rad_per_s,
                delta_omega: self.source.delta_omega_rad_per_s,
                linewidth: self.source.linewidth_rad_per_s,
            },
            channel: ChannelConfig {
                trajectory,
                attenuation_db: self.channel.attenuation_db,
                factors: VisibilityFactors {
                    v_x_eps: self.channel.v_x_eps,
                    v_z_eps: self.channel.v_z_eps,
                },
            },
            receiver: ReceiverSetup {
                basis: self.receiver.basis,
                v_z_eps_bin0: self.receiver.v_z_eps_bin0,
                v_z_eps_bin1: self.receiver.v_z_eps_bin1,
                delta_l: self.receiver.delta_l_m,
                phase_align: self.receiver.phase_align_rad,
            },
            detectors: self
                .detectors
                .iter()
                .map(|d| DetectorModel {
                    name: d.name.clone(),
                    jitter_fwhm: d.jitter_fwhm_ps * 1e-12,
                    efficiency: d.efficiency,
                    dark_rate: d.dark_rate_cps,
                    dead_time: d.dead_time_ns * 1e-9,
                })
                .collect(),
            tagger: TaggerModel {
                resolution_fs,
                marker_period_ps: self.tagger.marker_period_ps,
                marker_channel: self.tagger.marker_channel,
            },
            schedule: StateSchedule {
                segments: self
                    .schedule
                    .iter()
                    .map(|s| Segment {
                        duration_s: s.duration_s,
                        label: s.label,
                        rate: s.rate_cps,
                    })
                    .collect(),
            },
            seed: self.seed,
            duration_s: self.duration_s,
            jitter_convention: self.jitter_convention,
            envelope: self.envelope,
        };
        for issue in scenario.issues() {
            let issue = rename_fields(&issue);
            if !issues.iter().any(|i| i.split(':').next() == issue.split(':').next()) {
                issues.push(issue);
            }
        }
        if issues.is_empty() {
            Ok(scenario)
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    pub fn schedule(&self) -> StateSchedule {
        StateSchedule {
            segments: self
                .schedule
                .iter()
                .map(|s| Segment {
                    duration_s: s.duration_s,
                    label: s.label,
                    rate: s.rate_cps,
                })
                .collect(),
        }
    }
}

/// Maps core field names in diagnostics onto the config file's keys.
fn rename_fields(issue: &str) -> String {
    const MAP: &[(&str, &str)] = &[
        ("source.omega0:", "source.omega0_rad_per_s:"),
        ("source.delta_omega:", "source.delta_omega_rad_per_s:"),
        ("source.linewidth:", "source.linewidth_rad_per_s:"),
        ("channel.trajectory.r0:", "channel.trajectory.range_m:"),
        ("channel.v_x_eps:", "channel.v_x_eps:"),
        ("receiver.delta_l:", "receiver.delta_l_m:"),
        ("tagger.resolution:", "tagger.resolution_ps:"),
        ("tagger.marker_period:", "tagger.marker_period_ps:"),
        (".jitter_fwhm:", ".jitter_fwhm_ps:"),
        (".dark_rate:", ".dark_rate_cps:"),
        (".dead_time:", ".dead_time_ns:"),
        ("].rate:", "].rate_cps:"),
    ];
    let mut out = issue.to_string();
    for (from, to) in MAP {
        if out.contains(from) {
            out = out.replacen(from, to, 1);
            break;
        }
    }
    out
}

/// Whole femtoseconds in a picosecond figure, if it has no finer part.
pub fn ps_to_fs(ps: f64) -> Option<u64> {
    if !(ps.is_finite() && ps >= 0.0) {
        return None;
    }
    let fs = (ps * 1000.0).round();
    ((ps * 1000.0 - fs).abs() < 1e-6 && fs <= u64::MAX as f64).then_some(fs as u64)
}

pub fn canonical_digest(value: &Value) -> String {
    // serde_json maps are ordered by key, so `to_string` is canonical
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

pub fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
}

/// Applies `a.b.0.c=value` edits. Values are parsed as JSON, falling back
/// to a plain string.
pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::OverrideSyntax(item.clone()))?;
        let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cur = &mut *value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            let err = |msg: &str| ConfigError::OverridePath {
                key: key.to_string(),
                msg: msg.to_string(),
            };
            cur = match cur {
                Value::Object(map) => {
                    if last {
                        map.insert(part.to_string(), new.clone());
                        break;
                    }
                    map.entry(part.to_string())
                        .or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = part.parse().map_err(|_| err("array index expected"))?;
                    let slot = items.get_mut(idx).ok_or_else(|| err("array index out of range"))?;
                    if last {
                        *slot = new.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(err(&format!("`{part}` is not inside an object or array"))),
            };
        }
    }
    Ok(())
}

pub fn parse_config(value: Value) -> Result<ScenarioConfig, ConfigError> {
    serde_json::from_value(value).map_err(|e| ConfigError::Parse(format!("configuration: {e}")))
}

/// Loads a config file (or the demo default) and applies overrides and an
/// optional seed.
pub fn load(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    default_basis: Basis,
) -> Result<(ScenarioConfig, PathBuf), ConfigError> {
    let (mut value, base) = match path {
        Some(p) => (read_json(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (
            serde_json::to_value(ScenarioConfig::demo(default_basis)).expect("demo serializes"),
            PathBuf::from("."),
        ),
    };
    apply_overrides(&mut value, overrides)?;
    let mut cfg = parse_config(value)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_round_trips_and_validates() {
        let cfg = ScenarioConfig::demo(Basis::Z);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let s = cfg.to_scenario(Path::new(".")).unwrap();
        assert_eq!(s.tagger.resolution_fs, 78_125);
        assert_eq!(s.tagger.beat_cycles(s.source.delta_omega).unwrap(), 520);
    }

    #[test]
    fn digest_ignores_key_order_and_whitespace() {
        let cfg = ScenarioConfig::demo(Basis::X);
        let a = serde_json::to_string(&cfg).unwrap();
        let mut v: Value = serde_json::from_str(&a).unwrap();
        // rebuild the top level with keys in reverse order
        let obj = v.as_object().unwrap().clone();
        let mut text = String::from("{\n");
        let entries: Vec<_> = obj.iter().rev().collect();
        for (i, (k, val)) in entries.iter().enumerate() {
            text.push_str(&format!(
                "  \"{k}\" :  {val}{}\n",
                if i + 1 < entries.len() { "," } else { "" }
            ));
        }
        text.push('}');
        let reordered: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(reordered.digest(), cfg.digest());
        v["seed"] = Value::from(2);
        assert_ne!(parse_config(v).unwrap().digest(), cfg.digest());
    }

    #[test]
    fn overrides_edit_nested_values() {
        let mut v = serde_json::to_value(ScenarioConfig::demo(Basis::Z)).unwrap();
        apply_overrides(
            &mut v,
            &[
                "detectors.1.efficiency=0.5".into(),
                "receiver.basis=X".into(),
                "source.delta_omega_rad_per_s=1.634e9".into(),
            ],
        )
        .unwrap();
        let cfg = parse_config(v.clone()).unwrap();
        assert_eq!(cfg.detectors[1].efficiency, 0.5);
        assert_eq!(cfg.receiver.basis, Basis::X);
        assert_eq!(cfg.source.delta_omega_rad_per_s, 1.634e9);
        assert!(matches!(
            apply_overrides(&mut v, &["seed".into()]),
            Err(ConfigError::OverrideSyntax(_))
        ));
        assert!(matches!(
            apply_overrides(&mut v, &["detectors.9.name=x".into()]),
            Err(ConfigError::OverridePath { .. })
        ));
        assert!(matches!(
            apply_overrides(&mut v, &["seed.inner=1".into()]),
            Err(ConfigError::OverridePath { .. })
        ));
    }

    #[test]
    fn every_invalid_field_is_reported() {
        let mut cfg = ScenarioConfig::demo(Basis::Z);
        cfg.source.delta_omega_rad_per_s = 1.634e9;
        cfg.detectors[0].efficiency = 2.0;
        cfg.detectors[1].jitter_fwhm_ps = -1.0;
        cfg.tagger.resolution_ps = 78.1254321;
        cfg.schedule[2].rate_cps = -5.0;
        cfg.channel.v_x_eps = 1.5;
        cfg.schema_version = 9;
        match cfg.to_scenario(Path::new(".")) {
            Err(ConfigError::Invalid(issues)) => {
                let text = issues.join("\n");
                for key in [
                    "schema_version",
                    "tagger.marker_period_ps",
                    "detectors[0].efficiency",
                    "detectors[1].jitter_fwhm_ps",
                    "tagger.resolution_ps",
                    "schedule[2].rate_cps",
                    "channel.v_x_eps",
                ] {
                    assert!(text.contains(key), "missing {key} in\n{text}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ScenarioConfig::demo(Basis::Z)).unwrap();
        v["source"]["delta_omega"] = Value::from(1.0);
        let err = parse_config(v).unwrap_err().to_string();
        assert!(err.contains("delta_omega"), "{err}");
    }

    #[test]
    fn fs_conversion() {
        assert_eq!(ps_to_fs(78.125), Some(78_125));
        assert_eq!(ps_to_fs(23.043), Some(23_043));
        assert_eq!(ps_to_fs(1.0000001), None);
        assert_eq!(ps_to_fs(-1.0), None);
    }
}
