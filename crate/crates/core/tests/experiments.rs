use std::path::PathBuf;

use maxent_hjb::experiments::*;
use maxent_hjb::lq_maxent::{kleinman_iterate, soft_hjb_residual};
use nalgebra::DMatrix;

fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let small = LqFixture::load(&fixture_dir("lq_n3m2")).unwrap();
    assert_eq!(small, LqFixture::generate(3, 2, 3, 2.0));
    let large = LqFixture::load(&fixture_dir("lq_n10m10")).unwrap();
    assert_eq!(large, LqFixture::generate(10, 10, 10, 0.1));
}

#[test]
fn fixture_save_load_round_trip() {
    let dir = tempdir();
    let fx = LqFixture::generate(4, 3, 99, -0.5);
    fx.save(&dir).unwrap();
    assert_eq!(LqFixture::load(&dir).unwrap(), fx);
    std::fs::write(dir.join("x0.txt"), "2 1\n1\n2\n").unwrap();
    assert!(LqFixture::load(&dir).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

fn tempdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("maxent-hjb-fixture-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn integrator_sweep_matches_closed_form() {
    let rows = ham_sweep(
        SweepModel::Integrator,
        &[0.0],
        &[0.5, 1.0, 2.0],
        &[-3.0, -1.0, -0.1, 0.1, 1.0, 3.0],
        64,
    )
    .unwrap();
    assert_eq!(rows.len(), 18);
    for r in rows {
        let exact = r.h_exact.unwrap();
        assert!((r.h_alpha - exact).abs() <= 1e-8, "{r:?}");
        assert!((r.h_tilde - (r.h_alpha - r.alpha * 2f64.ln())).abs() < 1e-15);
        assert!((r.h_0 - r.p.abs()).abs() < 1e-12);
    }
}

#[test]
fn oscillator_sweep_has_no_closed_form() {
    let rows = ham_sweep(SweepModel::VanDerPol, &[0.5, -0.5], &[1.0, 0.1], &[-1.0, 2.0], 16).unwrap();
    assert!(rows.iter().all(|r| r.h_exact.is_none() && r.h_alpha.is_finite()));
}

#[test]
fn exact_lq_pipeline_agrees_with_library_calls() {
    let fx = LqFixture::load(&fixture_dir("lq_n3m2")).unwrap();
    let res = lq_exact(&fx, 0.1, 1.0, 1e-12).unwrap();
    let prob = fx.problem(0.1, 1.0).unwrap();
    let direct = kleinman_iterate(&prob, &DMatrix::zeros(2, 3), 1e-12).unwrap();
    assert!((&res.riccati.p - &direct.p).amax() <= 1e-8);
    let pol = res.policy.unwrap();
    assert!(soft_hjb_residual(&prob, &pol, &fx.x0).unwrap().abs() <= 1e-8);
    assert!((res.gaps.w2_sq - 2.0).abs() < 1e-14);
    assert!(lq_exact(&fx, 0.0, 1.0, 1e-12).unwrap().policy.is_none());
}

#[test]
fn learners_recover_the_fixture_solution() {
    let fx = LqFixture::load(&fixture_dir("lq_n3m2")).unwrap();
    for mode in [LearningMode::OnPolicy, LearningMode::OffPolicy] {
        let out = lq_learning(&fx, mode, &small_fixture_learner(&fx, 7)).unwrap();
        assert!(out.report.converged, "{mode:?}");
        assert!(out.relative_error <= 5e-2, "{mode:?}: {}", out.relative_error);
        assert!(out.worst_abscissa < 0.0);
    }
}

#[test]
fn sinusoidal_learner_uses_the_baseline_signal() {
    let fx = LqFixture::load(&fixture_dir("lq_n3m2")).unwrap();
    let cfg = sinusoidal_learner(&fx, 3).unwrap();
    match &cfg.exploration {
        maxent_hjb::adaptive_dp::Exploration::Sinusoidal(sig) => {
            assert_eq!(sig.amplitude, 0.5);
            assert_eq!(sig.frequencies.len(), 2);
            assert!(sig.frequencies.iter().all(|f| f.len() == 100 && f.iter().all(|w| w.abs() <= 100.0)));
        }
        _ => panic!("expected sinusoidal exploration"),
    }
}

#[test]
fn receding_horizon_beats_the_free_oscillator() {
    let cfg = VdpControlConfig {
        total_t: 5.0,
        ..VdpControlConfig::default()
    };
    let res = vdp_control(&cfg).unwrap();
    assert_eq!(res.controlled.len(), res.uncontrolled.len());
    assert!(res.controlled_cost < res.uncontrolled_cost);
}

#[test]
fn small_comparison_stays_close() {
    let cfg = HjbCompareConfig {
        grid: maxent_hjb::hjb_godunov::Grid2D::new(-2.0, 2.0, -2.0, 2.0, 21, 21).unwrap(),
        ..HjbCompareConfig::default()
    };
    let res = hjb_compare(&cfg, |_, _| {}).unwrap();
    assert!(res.comparison.rel_pct <= 5.0, "{}", res.comparison.rel_pct);
}
