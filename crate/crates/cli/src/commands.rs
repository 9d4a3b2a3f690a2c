//! Subcommand implementations. Each returns the files it wrote; the binary
//! maps failures onto exit codes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fbqlink_core::channel::{phase_change_rate, phase_of_flight, timing_budget, SampledTrajectory};
use fbqlink_core::qstate::{jitter_visibility, visibility_vs_jitter_curve, visibility_vs_spacing_curve};
use fbqlink_core::receiver::required_path_difference;
use fbqlink_core::sim::{simulate, StreamMeta};
use fbqlink_core::tagfile::{read_stream, write_histogram, write_stream};
use fbqlink_core::tagproc::{analyze, Analysis, AnalysisConfig};
use fbqlink_core::{
    Basis, BinPair, FoldingConfig, JitterConvention, PlatformTrajectory, StateLabel, StateSchedule, TagRecord,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{self, apply_overrides, canonical_digest, ps_to_fs, ConfigError, ScenarioConfig, SegmentSection};

#[derive(Debug, Error)]
pub enum CommandError {
    /// Bad input: configuration, flags or file format. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// The pipeline ran but could not produce the requested statistics.
    /// Exit code 2.
    #[error("{0}")]
    Analysis(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Validation(_) => 1,
            CommandError::Analysis(_) => 2,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Validation(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Validation(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn start(command: &str, config_digest: String) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn add(&mut self, out_dir: &Path, path: &Path) -> Result<(), CommandError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(OutputEntry {
            path: rel.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn finish(mut self, out_dir: &Path) -> Result<PathBuf, CommandError> {
        self.finished_unix_s = unix_now();
        let path = out_dir.join("manifest.json");
        write_file(
            &path,
            (serde_json::to_string_pretty(&self).expect("manifest") + "\n").as_bytes(),
        )?;
        Ok(path)
    }
}

/// `start:stop:count`, inclusive of both ends.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>, CommandError> {
    let bad = || CommandError::Validation(format!("sweep `{text}`: expected start:stop:count"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    Ok((0..n)
        .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
        .collect())
}

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub out: PathBuf,
    /// Δω sweep in rad/s.
    pub delta_omega_sweep: Option<String>,
    /// Jitter FWHM sweep in ps.
    pub jitter_sweep: Option<String>,
    pub v0: f64,
    pub fixed_jitter_ps: f64,
    pub fixed_delta_omega: f64,
    pub convention: JitterConvention,
}

impl PredictArgs {
    pub fn new(out: PathBuf) -> Self {
        Self {
            out,
            delta_omega_sweep: None,
            jitter_sweep: None,
            v0: 0.95,
            fixed_jitter_ps: 100.0,
            fixed_delta_omega: config::DEMO_DELTA_OMEGA,
            convention: JitterConvention::Fwhm,
        }
    }
}

/// Visibility curves against bin spacing and against detector jitter.
pub fn predict(args: &PredictArgs) -> Result<Vec<PathBuf>, CommandError> {
    if args.delta_omega_sweep.is_some() && args.jitter_sweep.is_some() {
        return Err(CommandError::Validation(
            "sweep exactly one of --delta-omega-sweep and --jitter-sweep".into(),
        ));
    }
    if !(0.0..=1.0).contains(&args.v0) {
        return Err(CommandError::Validation(format!(
            "--v0 must lie in [0, 1], got {}",
            args.v0
        )));
    }
    let both = args.delta_omega_sweep.is_none() && args.jitter_sweep.is_none();
    ensure_dir(&args.out)?;
    let digest = canonical_digest(&serde_json::json!({
        "v0": args.v0,
        "fixed_jitter_ps": args.fixed_jitter_ps,
        "fixed_delta_omega_rad_per_s": args.fixed_delta_omega,
        "convention": args.convention,
        "delta_omega_sweep": args.delta_omega_sweep,
        "jitter_sweep": args.jitter_sweep,
    }));
    let mut manifest = RunManifest::start("predict", digest);
    let mut written = Vec::new();
    let bad = |e: fbqlink_core::qstate::StateError| CommandError::Validation(e.to_string());

    if both || args.delta_omega_sweep.is_some() {
        let spacings = match &args.delta_omega_sweep {
            Some(s) => parse_sweep(s)?,
            None => (0..=200).map(|i| 2.0 * PI * 2e9 * i as f64 / 200.0).collect(),
        };
        let dt = args.convention.width_from_fwhm(args.fixed_jitter_ps * 1e-12);
        let curve = visibility_vs_spacing_curve(args.v0, dt, &spacings).map_err(bad)?;
        let mut csv = String::from("delta_omega_rad_per_s,delta_f_hz,visibility\n");
        for (dw, v) in curve {
            writeln!(csv, "{dw},{},{v}", dw / (2.0 * PI)).unwrap();
        }
        let path = args.out.join("visibility_vs_spacing.csv");
        write_file(&path, csv.as_bytes())?;
        manifest.add(&args.out, &path)?;
        written.push(path);
    }
    if both || args.jitter_sweep.is_some() {
        let jitters_ps = match &args.jitter_sweep {
            Some(s) => parse_sweep(s)?,
            None => (0..=100).map(|i| i as f64 * 5.0).collect(),
        };
        if jitters_ps.iter().any(|j| *j < 0.0) {
            return Err(CommandError::Validation("jitter sweep values must be >= 0".into()));
        }
        let widths: Vec<f64> = jitters_ps
            .iter()
            .map(|j| args.convention.width_from_fwhm(j * 1e-12))
            .collect();
        let curve = visibility_vs_jitter_curve(args.v0, args.fixed_delta_omega, &widths);
        let mut csv = String::from("jitter_fwhm_ps,visibility\n");
        for (j, (_, v)) in jitters_ps.iter().zip(curve) {
            writeln!(csv, "{j},{v}").unwrap();
        }
        let path = args.out.join("visibility_vs_jitter.csv");
        write_file(&path, csv.as_bytes())?;
        manifest.add(&args.out, &path)?;
        written.push(path);
    }
    written.push(manifest.finish(&args.out)?);
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

/// Runs one scenario and writes `tags.csv`, its sidecar, the resolved config
/// and a manifest into `dir`.
fn simulate_into(cfg: &ScenarioConfig, base: &Path, dir: &Path, command: &str) -> Result<Vec<PathBuf>, CommandError> {
    let scenario = cfg.to_scenario(base)?;
    ensure_dir(dir)?;
    let stream = simulate(&scenario).map_err(|e| CommandError::Validation(e.to_string()))?;
    let mut manifest = RunManifest::start(command, cfg.digest());
    let resolved = dir.join("config.resolved.json");
    write_file(
        &resolved,
        (serde_json::to_string_pretty(cfg).expect("config") + "\n").as_bytes(),
    )?;
    let tags = dir.join("tags.csv");
    let meta = write_stream(&tags, &stream).map_err(|e| CommandError::Validation(e.to_string()))?;
    for p in [&resolved, &tags, &meta] {
        manifest.add(dir, p)?;
    }
    let m = manifest.finish(dir)?;
    Ok(vec![resolved, tags, meta, m])
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<Vec<PathBuf>, CommandError> {
    let (cfg, base) = config::load(args.config.as_deref(), &args.overrides, args.seed, Basis::Z)?;
    simulate_into(&cfg, &base, &args.out, "simulate")
}

/// Everything `analyze` needs; overrides apply to this document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub delta_omega_rad_per_s: f64,
    pub marker_period_ps: u64,
    /// Tagger grid; enables the grid-aware fit basis when the marker period
    /// is a whole number of steps.
    pub resolution_ps: Option<f64>,
    pub bin_width_ps: f64,
    pub marker_channel: u16,
    pub detector_channels: Vec<u16>,
    pub basis: Basis,
    pub schedule: Option<Vec<SegmentSection>>,
    pub fit_labels: Vec<StateLabel>,
    pub min_events: u64,
}

impl AnalysisSettings {
    fn from_sources(meta: Option<&StreamMeta>, cfg: Option<&ScenarioConfig>) -> Result<Self, CommandError> {
        let (dw, tm, res) = match (meta, cfg) {
            (Some(m), _) => (m.delta_omega_rad_per_s, m.marker_period_ps, m.resolution_ps),
            (None, Some(c)) => (
                c.source.delta_omega_rad_per_s,
                c.tagger.marker_period_ps,
                c.tagger.resolution_ps,
            ),
            (None, None) => {
                return Err(CommandError::Validation(
                    "no metadata sidecar next to the tag file; pass --config to describe the run".into(),
                ))
            }
        };
        let analysis = cfg.map(|c| c.analysis.clone()).unwrap_or_default();
        Ok(Self {
            delta_omega_rad_per_s: dw,
            marker_period_ps: tm,
            resolution_ps: Some(res),
            bin_width_ps: analysis.bin_width_ps.unwrap_or(res),
            marker_channel: cfg.map_or(fbqlink_core::MARKER_CHANNEL, |c| c.tagger.marker_channel),
            detector_channels: vec![fbqlink_core::PORT0_CHANNEL, fbqlink_core::PORT1_CHANNEL],
            basis: cfg.map_or(Basis::X, |c| c.receiver.basis),
            schedule: cfg.map(|c| c.schedule.clone()),
            fit_labels: analysis.fit_labels,
            min_events: analysis.min_events,
        })
    }

    pub fn to_config(&self) -> Result<(AnalysisConfig, Vec<String>), CommandError> {
        let mut notes = Vec::new();
        let bin_fs = ps_to_fs(self.bin_width_ps)
            .filter(|f| *f > 0)
            .ok_or_else(|| CommandError::Validation(format!("bin_width_ps: invalid value {}", self.bin_width_ps)))?;
        let mut folding = FoldingConfig {
            delta_omega: self.delta_omega_rad_per_s,
            marker_period_ps: self.marker_period_ps,
            marker_channel: self.marker_channel,
            detector_channels: self.detector_channels.clone(),
            bin_width_fs: bin_fs,
            grid_resolution_fs: None,
            min_events: self.min_events,
        };
        folding
            .validate()
            .map_err(|e| CommandError::Validation(e.to_string()))?;
        if let Some(res) = self.resolution_ps.and_then(ps_to_fs).filter(|r| *r > 0) {
            let mut gridded = folding.clone();
            gridded.grid_resolution_fs = Some(res);
            if gridded.validate().is_ok() {
                folding = gridded;
            } else {
                notes.push(format!(
                    "marker period is not a whole number of {res} fs tagger steps; fitting with bin-width weights"
                ));
            }
        }
        let schedule = self.schedule.as_ref().map(|segs| StateSchedule {
            segments: segs
                .iter()
                .map(|s| fbqlink_core::sim::Segment {
                    duration_s: s.duration_s,
                    label: s.label,
                    rate: s.rate_cps,
                })
                .collect(),
        });
        Ok((
            AnalysisConfig {
                folding,
                basis: self.basis,
                schedule,
                fit_labels: self.fit_labels.clone(),
            },
            notes,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub tags: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Vec<String>,
}

pub struct AnalyzeOutcome {
    pub analysis: Analysis,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn write_analysis(dir: &Path, a: &Analysis, manifest: &mut RunManifest) -> Result<Vec<PathBuf>, CommandError> {
    let report = dir.join("report.json");
    write_file(
        &report,
        (serde_json::to_string_pretty(&a.report).expect("report") + "\n").as_bytes(),
    )?;
    let hist = dir.join("histogram.csv");
    let file = fs::File::create(&hist).map_err(|e| io_err(&hist, e))?;
    write_histogram(file, &a.fit_histogram).map_err(|e| io_err(&hist, e))?;
    manifest.add(dir, &report)?;
    manifest.add(dir, &hist)?;
    Ok(vec![report, hist])
}

fn run_analysis(
    records: &[TagRecord],
    settings: &AnalysisSettings,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(Analysis, Vec<PathBuf>), CommandError> {
    let (cfg, notes) = settings.to_config()?;
    manifest.warnings.extend(notes);
    let analysis = analyze(records, &cfg).map_err(|e| CommandError::Validation(e.to_string()))?;
    manifest.warnings.extend(analysis.flags.iter().cloned());
    let files = write_analysis(dir, &analysis, manifest)?;
    Ok((analysis, files))
}

/// Runs the tag pipeline on a recorded or simulated stream. Statistical
/// failures still write the report and then return an analysis error.
pub fn analyze_cmd(args: &AnalyzeArgs) -> Result<AnalyzeOutcome, CommandError> {
    let (records, meta) =
        read_stream(&args.tags).map_err(|e| CommandError::Validation(format!("{}: {e}", args.tags.display())))?;
    let cfg = match &args.config {
        Some(p) => Some(config::load(Some(p), &[], None, Basis::X)?.0),
        None => None,
    };
    let settings = AnalysisSettings::from_sources(meta.as_ref(), cfg.as_ref())?;
    let mut value = serde_json::to_value(&settings).expect("settings");
    apply_overrides(&mut value, &args.overrides)?;
    let settings: AnalysisSettings = serde_json::from_value(value.clone())
        .map_err(|e| CommandError::Validation(format!("analysis settings: {e}")))?;

    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::start("analyze", canonical_digest(&value));
    if let Some(m) = &meta {
        if m.delta_omega_rad_per_s != settings.delta_omega_rad_per_s {
            manifest.warnings.push(format!(
                "delta_omega_rad_per_s {} differs from the tag metadata value {}",
                settings.delta_omega_rad_per_s, m.delta_omega_rad_per_s
            ));
        }
        if m.marker_period_ps != settings.marker_period_ps {
            manifest.warnings.push(format!(
                "marker_period_ps {} differs from the tag metadata value {}",
                settings.marker_period_ps, m.marker_period_ps
            ));
        }
    }
    let (analysis, mut files) = run_analysis(&records, &settings, &args.out, &mut manifest)?;
    let problems = analysis.problems.clone();
    manifest.warnings.extend(problems.iter().cloned());
    let warnings = manifest.warnings.clone();
    files.push(manifest.finish(&args.out)?);
    if !problems.is_empty() {
        return Err(CommandError::Analysis(problems.join("; ")));
    }
    Ok(AnalyzeOutcome {
        analysis,
        files,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct SatelliteArgs {
    pub out: PathBuf,
    pub trajectory: Option<PathBuf>,
    pub velocity_m_per_s: f64,
    pub range_m: f64,
    pub duration_s: f64,
    pub step_s: f64,
    pub delta_omega: f64,
}

impl SatelliteArgs {
    pub fn new(out: PathBuf) -> Self {
        Self {
            out,
            trajectory: None,
            velocity_m_per_s: 6e3,
            range_m: 500e3,
            duration_s: 10.0,
            step_s: 1.0,
            delta_omega: config::DEMO_DELTA_OMEGA,
        }
    }
}

pub const BUDGET_FIDELITIES: [f64; 3] = [0.99, 0.999, 0.9999];

/// Reported sensitivity of other encodings, for the comparison printout.
pub const REFERENCE_SENSITIVITIES: [(&str, &str, &str); 3] = [
    ("polarization", "<1 Hz", "polarization reference + control"),
    ("time-bin", "<1 Hz", "phase modulation"),
    ("frequency-bin", "~5 kHz", "GPS + fast phase modulation"),
];

pub struct SatelliteOutcome {
    pub files: Vec<PathBuf>,
    /// `(t, R, dR/dt, Δφ, δf)` rows.
    pub profile: Vec<[f64; 5]>,
    pub budget: Vec<(f64, f64)>,
    pub summary: String,
}

/// Phase profile along a trajectory and the timing budget for compensation.
pub fn satellite(args: &SatelliteArgs) -> Result<SatelliteOutcome, CommandError> {
    let invalid = |e: String| CommandError::Validation(e);
    let (traj, times) = match &args.trajectory {
        Some(path) => {
            let s = SampledTrajectory::from_csv_path(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let times = s.times().to_vec();
            (PlatformTrajectory::Sampled(s), times)
        }
        None => {
            if !(args.step_s > 0.0 && args.duration_s >= 0.0) {
                return Err(invalid("--step-s must be > 0 and --duration-s >= 0".into()));
            }
            let n = (args.duration_s / args.step_s).floor() as usize;
            (
                PlatformTrajectory::Linear {
                    r0: args.range_m,
                    v: args.velocity_m_per_s,
                },
                (0..=n).map(|i| i as f64 * args.step_s).collect(),
            )
        }
    };
    let pair = BinPair::with_spacing(1.0, args.delta_omega, 0.0).map_err(|e| invalid(e.to_string()))?;
    let mut profile = Vec::with_capacity(times.len());
    let mut csv = String::from("t_s,range_m,range_rate_m_per_s,phase_rad,phase_rate_hz,one_sided\n");
    let fail = |e: fbqlink_core::channel::ChannelError| CommandError::Analysis(e.to_string());
    for &t in &times {
        let r = traj.range(t).map_err(fail)?;
        let rdot = traj.range_rate(t).map_err(fail)?;
        let phase = phase_of_flight(&pair, &traj, t).map_err(fail)?;
        let rate = phase_change_rate(&pair, &traj, t).map_err(fail)?;
        writeln!(csv, "{t},{r},{},{phase},{},{}", rdot.value, rate.value, rate.one_sided).unwrap();
        profile.push([t, r, rdot.value, phase, rate.value]);
    }
    ensure_dir(&args.out)?;
    let digest = canonical_digest(&serde_json::json!({
        "trajectory": args.trajectory.as_ref().map(|p| p.display().to_string()),
        "velocity_m_per_s": args.velocity_m_per_s,
        "range_m": args.range_m,
        "duration_s": args.duration_s,
        "step_s": args.step_s,
        "delta_omega_rad_per_s": args.delta_omega,
    }));
    let mut manifest = RunManifest::start("satellite", digest);
    let profile_path = args.out.join("phase_profile.csv");
    write_file(&profile_path, csv.as_bytes())?;

    let budget: Vec<(f64, f64)> = BUDGET_FIDELITIES
        .iter()
        .map(|&f| (f, timing_budget(args.delta_omega, f)))
        .collect();
    let mut bcsv = String::from("fidelity,timing_budget_ps\n");
    for (f, b) in &budget {
        writeln!(bcsv, "{f},{}", b * 1e12).unwrap();
    }
    let budget_path = args.out.join("compensation_budget.csv");
    write_file(&budget_path, bcsv.as_bytes())?;
    manifest.add(&args.out, &profile_path)?;
    manifest.add(&args.out, &budget_path)?;

    let max_rate = profile.iter().map(|p| p[4].abs()).fold(0.0, f64::max);
    let mut summary = String::new();
    writeln!(
        summary,
        "phase change rate at Δω = {:.6e} rad/s: max |δf| = {:.2} Hz ({:.3} kHz)",
        args.delta_omega,
        max_rate,
        max_rate / 1e3
    )
    .unwrap();
    writeln!(summary, "timing accuracy needed for compensation:").unwrap();
    for (f, b) in &budget {
        writeln!(summary, "  fidelity {f:<7} -> {:8.3} ps", b * 1e12).unwrap();
    }
    writeln!(summary, "sensitivity by encoding (reported values):").unwrap();
    for (dof, sens, comp) in REFERENCE_SENSITIVITIES {
        writeln!(summary, "  {dof:<14} {sens:<8} {comp}").unwrap();
    }
    writeln!(
        summary,
        "  {:<14} {:.2} kHz (this run)",
        "frequency-bin",
        max_rate / 1e3
    )
    .unwrap();
    let summary_path = args.out.join("summary.txt");
    write_file(&summary_path, summary.as_bytes())?;
    manifest.add(&args.out, &summary_path)?;
    let m = manifest.finish(&args.out)?;

    Ok(SatelliteOutcome {
        files: vec![profile_path, budget_path, summary_path, m],
        profile,
        budget,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct DemoArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

pub struct DemoOutcome {
    pub z: Analysis,
    pub x: Analysis,
    /// X-basis run, fitted on the Z-encoded segments.
    pub x_on_z: Analysis,
    pub summary: String,
}

fn pct(v: Option<f64>, err: Option<f64>) -> String {
    match (v, err) {
        (Some(v), Some(e)) => format!("{:.1} ± {:.1} %", v * 100.0, e * 100.0),
        (Some(v), None) => format!("{:.1} %", v * 100.0),
        _ => "n/a".into(),
    }
}

/// Simulates the state sequence in both receiver bases, analyzes each run
/// and prints a parameter/visibility summary.
pub fn demo(args: &DemoArgs) -> Result<DemoOutcome, CommandError> {
    let (cfg, base) = config::load(args.config.as_deref(), &args.overrides, args.seed, Basis::Z)?;
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::start("demo", cfg.digest());

    let mut runs = Vec::new();
    for basis in [Basis::Z, Basis::X] {
        let mut c = cfg.clone();
        c.receiver.basis = basis;
        let dir = args.out.join(match basis {
            Basis::Z => "z_basis",
            Basis::X => "x_basis",
        });
        let files = simulate_into(&c, &base, &dir, "demo")?;
        for f in &files {
            manifest.add(&args.out, f)?;
        }
        let (records, meta) =
            read_stream(&dir.join("tags.csv")).map_err(|e| CommandError::Validation(e.to_string()))?;
        let settings = AnalysisSettings::from_sources(meta.as_ref(), Some(&c))?;
        let mut sub = RunManifest::start("demo-analysis", c.digest());
        let (analysis, files) = run_analysis(&records, &settings, &dir, &mut sub)?;
        for f in &files {
            manifest.add(&args.out, f)?;
        }
        manifest
            .warnings
            .extend(sub.warnings.into_iter().map(|w| format!("{basis:?} basis: {w}")));
        runs.push((c, records, settings, analysis));
    }
    let (_, x_records, x_settings, _) = &runs[1];
    let mut mismatch = x_settings.clone();
    mismatch.fit_labels = vec![StateLabel::Z0, StateLabel::Z1];
    let (x_on_z, _) = mismatch.to_config().and_then(|(c, _)| {
        analyze(x_records, &c)
            .map(|a| (a, ()))
            .map_err(|e| CommandError::Validation(e.to_string()))
    })?;

    let (x_run, z_run) = (runs.pop().unwrap(), runs.pop().unwrap());
    let scenario = cfg.to_scenario(&base)?;
    let dw = cfg.source.delta_omega_rad_per_s;
    let z = &z_run.3.report;
    let x = &x_run.3.report;
    let system_fwhm =
        fbqlink_core::sim::combine_jitter(&[scenario.detectors[0].jitter_fwhm, scenario.tagger.resolution_s()]);
    let predicted_x = jitter_visibility(
        scenario
            .x_visibility()
            .map_err(|e| CommandError::Validation(e.to_string()))?,
        dw,
        scenario.jitter_width(0),
    );
    let segment_s = cfg.schedule.first().map_or(0.0, |s| s.duration_s);

    let mut s = String::new();
    let row = |s: &mut String, name: &str, sim: String, reference: &str| {
        writeln!(s, "{name:<30} {sim:<22} {reference}").unwrap();
    };
    row(&mut s, "parameter", "simulated".into(), "reference");
    row(&mut s, "Δω", format!("{dw:.4e} rad/s"), "1.634e9 rad/s");
    row(
        &mut s,
        "path difference ΔL",
        format!(
            "{:.4} m",
            required_path_difference(dw).map_err(|e| CommandError::Validation(e.to_string()))?
        ),
        "",
    );
    row(
        &mut s,
        "timing pulse repetition rate",
        format!("{:.0} kHz", 1e9 / cfg.tagger.marker_period_ps as f64),
        "500 kHz",
    );
    row(&mut s, "segment length", format!("{segment_s} s"), "1 Hz shutters");
    row(
        &mut s,
        "system jitter (FWHM)",
        format!("{:.1} ps", system_fwhm * 1e12),
        "93 ps",
    );
    row(
        &mut s,
        "ω0 visibility",
        pct(z.v_z_omega0, z.v_z_omega0_err),
        "88.9 ± 2.8 %",
    );
    row(
        &mut s,
        "ω1 visibility",
        pct(z.v_z_omega1, z.v_z_omega1_err),
        "82.1 ± 3.4 %",
    );
    row(&mut s, "Z-basis visibility", pct(z.v_z_combined, None), "85.5 ± 2.2 %");
    row(&mut s, "X-basis visibility", pct(x.v_fit, x.v_fit_err), "92.4 ± 2.7 %");
    row(&mut s, "X-basis model prediction", pct(Some(predicted_x), None), "");
    row(
        &mut s,
        "X fit on Z-encoded segments",
        pct(x_on_z.report.v_fit, x_on_z.report.v_fit_err),
        "no beat",
    );
    row(
        &mut s,
        "QBER (Z / X)",
        format!("{} / {}", pct(z.qber, None), pct(x.qber, None)),
        "",
    );
    writeln!(
        s,
        "\nevents: Z run {} ({} before first marker), X run {} ({})",
        z.events_total, z.events_dropped, x.events_total, x.events_dropped
    )
    .unwrap();

    let summary_path = args.out.join("summary.txt");
    write_file(&summary_path, s.as_bytes())?;
    manifest.add(&args.out, &summary_path)?;
    let mut problems: Vec<String> = z_run.3.problems.iter().map(|p| format!("Z basis: {p}")).collect();
    problems.extend(x_run.3.problems.iter().map(|p| format!("X basis: {p}")));
    manifest.warnings.extend(problems.iter().cloned());
    manifest.finish(&args.out)?;
    if !problems.is_empty() {
        return Err(CommandError::Analysis(problems.join("; ")));
    }
    Ok(DemoOutcome {
        z: z_run.3,
        x: x_run.3,
        x_on_z,
        summary: s,
    })
}

/// JSON form of the default scenario, for `--print-default-config`.
pub fn default_config_json(basis: Basis) -> Value {
    serde_json::to_value(ScenarioConfig::demo(basis)).expect("demo serializes")
}
