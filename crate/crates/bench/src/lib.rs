//! Fixtures shared by the benchmarks under `benches/`.

use std::f64::consts::PI;

use fbqlink_core::sim::{ReceiverSetup, Source};
use fbqlink_core::{
    Basis, ChannelConfig, DetectorModel, EnvelopeMode, JitterConvention, PlatformTrajectory, Scenario, StateLabel,
    StateSchedule, TaggerModel, VisibilityFactors,
};

pub const DELTA_OMEGA: f64 = 2.0 * PI * 260e6;

/// X-basis run producing roughly `rate * duration_s / 2` detections.
pub fn x_scenario(rate: f64, duration_s: f64) -> Scenario {
    let detector = DetectorModel {
        name: "spad".into(),
        jitter_fwhm: 50e-12,
        efficiency: 1.0,
        dark_rate: 100.0,
        dead_time: 0.0,
    };
    Scenario {
        source: Source {
            omega0: 2.0 * PI * 384.23e12,
            delta_omega: DELTA_OMEGA,
            linewidth: 0.0,
        },
        channel: ChannelConfig::new(
            PlatformTrajectory::Static { r0: 2.0 },
            0.0,
            VisibilityFactors::new(0.95, 1.0).expect("factors"),
        )
        .expect("channel"),
        receiver: ReceiverSetup {
            basis: Basis::X,
            v_z_eps_bin0: 1.0,
            v_z_eps_bin1: 1.0,
            delta_l: None,
            phase_align: 0.0,
        },
        detectors: vec![detector.clone(), detector],
        tagger: TaggerModel::default(),
        schedule: StateSchedule::single(StateLabel::XPlus, rate, 1.0),
        seed: 1,
        duration_s,
        jitter_convention: JitterConvention::Fwhm,
        envelope: EnvelopeMode::Quadrature,
    }
}
