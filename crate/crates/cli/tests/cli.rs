use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fbqlink_cli::commands::RunManifest;
use fbqlink_cli::config::{ScenarioConfig, SegmentSection};
use fbqlink_core::qstate::jitter_visibility_fwhm;
use fbqlink_core::{Basis, JitterConvention, StateLabel};
use serde_json::Value;

fn fbqlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbqlink")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn small_config(dir: &Path, basis: Basis) -> String {
    let mut cfg = ScenarioConfig::demo(basis);
    cfg.duration_s = 0.02;
    cfg.schedule = vec![SegmentSection {
        label: StateLabel::XPlus,
        duration_s: 1.0,
        rate_cps: 1e6,
    }];
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&fbqlink(&["predict", "--nope"])), 1);
    assert_eq!(code(&fbqlink(&["frobnicate"])), 1);
    assert_eq!(code(&fbqlink(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let both = fbqlink(&[
        "predict",
        "--out",
        &out,
        "--delta-omega-sweep",
        "1e9:2e9:3",
        "--jitter-sweep",
        "0:10:3",
    ]);
    assert_eq!(code(&both), 1);
}

#[test]
fn invalid_config_lists_every_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Basis::X);
    let out = dir.path().join("o").display().to_string();
    let res = fbqlink(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        &out,
        "--override",
        "detectors.0.efficiency=1.5",
        "--override",
        "source.delta_omega_rad_per_s=-3",
    ]);
    assert_eq!(code(&res), 1);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("detectors[0].efficiency"), "{err}");
    assert!(err.contains("source.delta_omega_rad_per_s"), "{err}");
}

#[test]
fn malformed_files_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("o").display().to_string();
    assert_eq!(
        code(&fbqlink(&[
            "simulate",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            &out
        ])),
        1
    );

    let tags = dir.path().join("tags.csv");
    fs::write(&tags, "channel,timestamp_ps\n1,abc\n").unwrap();
    let res = fbqlink(&["analyze", tags.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
}

#[test]
fn empty_detector_channels_give_report_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Basis::X);
    let tags = dir.path().join("tags.csv");
    let body: String = (0..10).map(|k| format!("0,{}\n", k * 2_000_000)).collect();
    fs::write(&tags, format!("channel,timestamp_ps\n{body}")).unwrap();
    let out = dir.path().join("o");
    let res = fbqlink(&[
        "analyze",
        tags.to_str().unwrap(),
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["events_total"], 0);
    assert!(report["v_fit"].is_null());
}

#[test]
fn simulate_then_analyze_with_mismatched_spacing_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Basis::X);
    let sim = dir.path().join("sim");
    assert_eq!(
        code(&fbqlink(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            sim.to_str().unwrap()
        ])),
        0
    );
    for f in ["tags.csv", "tags.meta.json", "config.resolved.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let tags = sim.join("tags.csv");
    let an = dir.path().join("an");
    let ok = fbqlink(&["analyze", tags.to_str().unwrap(), "--out", an.to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let m: RunManifest = serde_json::from_value(read_json(&an.join("manifest.json"))).unwrap();
    assert!(m.warnings.iter().all(|w| !w.contains("differs")));

    // 519 beat cycles per marker period instead of 520
    let other = format!("delta_omega_rad_per_s={}", 2.0 * std::f64::consts::PI * 259.5e6);
    let res = fbqlink(&[
        "analyze",
        tags.to_str().unwrap(),
        "--out",
        an.to_str().unwrap(),
        "--override",
        &other,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m: RunManifest = serde_json::from_value(read_json(&an.join("manifest.json"))).unwrap();
    assert!(
        m.warnings.iter().any(|w| w.contains("delta_omega_rad_per_s")),
        "{:?}",
        m.warnings
    );
}

#[test]
fn manifest_digest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Basis::Z);
    let a = dir.path().join("a");
    assert_eq!(
        code(&fbqlink(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            a.to_str().unwrap(),
            "--seed",
            "5"
        ])),
        0
    );
    // rerun from the resolved config the first run recorded
    let resolved = a.join("config.resolved.json");
    let b = dir.path().join("b");
    assert_eq!(
        code(&fbqlink(&[
            "simulate",
            "--config",
            resolved.to_str().unwrap(),
            "--out",
            b.to_str().unwrap()
        ])),
        0
    );
    let ma: RunManifest = serde_json::from_value(read_json(&a.join("manifest.json"))).unwrap();
    let mb: RunManifest = serde_json::from_value(read_json(&b.join("manifest.json"))).unwrap();
    assert_eq!(ma.config_digest, mb.config_digest);
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(
        fs::read(a.join("tags.csv")).unwrap(),
        fs::read(b.join("tags.csv")).unwrap()
    );
}

#[test]
fn fitted_visibility_agrees_with_prediction() {
    for det_ps in [50.0f64, 250.0, 350.0] {
        let fwhm_ps = det_ps.hypot(78.125);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::demo(Basis::X);
        cfg.source.linewidth_rad_per_s = 0.0;
        for d in &mut cfg.detectors {
            d.jitter_fwhm_ps = det_ps;
            d.dark_rate_cps = 0.0;
        }
        cfg.schedule = vec![SegmentSection {
            label: StateLabel::XPlus,
            duration_s: 1.0,
            rate_cps: 4e6,
        }];
        cfg.duration_s = 0.1;
        let path = dir.path().join("c.json");
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let sim = dir.path().join("sim");
        assert_eq!(
            code(&fbqlink(&[
                "simulate",
                "--config",
                path.to_str().unwrap(),
                "--out",
                sim.to_str().unwrap()
            ])),
            0
        );
        let an = dir.path().join("an");
        let tags = sim.join("tags.csv");
        assert_eq!(
            code(&fbqlink(&[
                "analyze",
                tags.to_str().unwrap(),
                "--out",
                an.to_str().unwrap()
            ])),
            0
        );
        let report = read_json(&an.join("report.json"));
        let (v, err) = (report["v_fit"].as_f64().unwrap(), report["v_fit_err"].as_f64().unwrap());

        let pred = dir.path().join("pred");
        let sweep = format!("{fwhm_ps}:{}:2", fwhm_ps + 1.0);
        assert_eq!(
            code(&fbqlink(&[
                "predict",
                "--out",
                pred.to_str().unwrap(),
                "--jitter-sweep",
                &sweep,
                "--delta-omega",
                &cfg.source.delta_omega_rad_per_s.to_string()
            ])),
            0
        );
        let text = fs::read_to_string(pred.join("visibility_vs_jitter.csv")).unwrap();
        let predicted: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        let direct = jitter_visibility_fwhm(
            0.95,
            cfg.source.delta_omega_rad_per_s,
            fwhm_ps * 1e-12,
            JitterConvention::Fwhm,
        );
        assert!((predicted - direct).abs() < 1e-12);
        assert!(
            (v - predicted).abs() < 2.0 * err,
            "{det_ps} ps: {v} ± {err} vs {predicted}"
        );
    }
}

#[test]
fn satellite_from_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("pass.csv");
    let rows: String = (0..=20)
        .map(|i| format!("{},{}\n", i as f64 * 0.5, 500e3 + 6e3 * i as f64 * 0.5))
        .collect();
    fs::write(&traj, format!("t_s,range_m\n{rows}")).unwrap();
    let out = dir.path().join("sat");
    let res = fbqlink(&[
        "satellite",
        "--trajectory",
        traj.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("~5 kHz") && stdout.contains("<1 Hz"));
    let profile = fs::read_to_string(out.join("phase_profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 22);
    let budget = fs::read_to_string(out.join("compensation_budget.csv")).unwrap();
    assert_eq!(budget.lines().count(), 4);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t_s,range_m\n0,1\n0,2\n").unwrap();
    assert_eq!(
        code(&fbqlink(&[
            "satellite",
            "--trajectory",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        1
    );
}
