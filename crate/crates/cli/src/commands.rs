//! One function per command: run the experiment, stage its artifacts and
//! return the headline metrics for `summary.json`.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use maxent_hjb::adaptive_dp::{self, Exploration, LearnerConfig};
use maxent_hjb::experiments::{self, HjbCompareConfig, LearningMode, LqFixture, SweepModel, VdpControlConfig};
use maxent_hjb::hjb_godunov::Grid2D;
use maxent_hjb::hjb_hopf_lax::{Formula, HopfLaxConfig, RecedingHorizonConfig};
use maxent_hjb::matrix_io::format_matrix;
use serde_json::{json, Value};

use crate::artifacts::Staging;
use crate::config::{Command, ExperimentConfig};

/// Formats like the library's CSV writers: 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON cannot carry NaN or infinities; those become `null`.
fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn stage<T>(name: &str, r: maxent_hjb::Result<T>) -> Result<T> {
    r.with_context(|| format!("stage `{name}` failed"))
}

pub fn dispatch(cfg: &ExperimentConfig, out: &mut Staging) -> Result<Value> {
    match cfg.command {
        Command::HamSweep => ham_sweep(cfg, out),
        Command::HjbCompare => hjb_compare(cfg, out),
        Command::VdpControl => vdp_control(cfg, out),
        Command::LqOnpolicy => lq_learn(cfg, LearningMode::OnPolicy, out),
        Command::LqOffpolicy => lq_learn(cfg, LearningMode::OffPolicy, out),
        Command::LqExact => lq_exact(cfg, out),
    }
}

fn ham_sweep(cfg: &ExperimentConfig, out: &mut Staging) -> Result<Value> {
    let (model, dim) = match cfg.text("model") {
        "integrator" => (SweepModel::Integrator, 1),
        _ => (SweepModel::VanDerPol, 2),
    };
    let x = match cfg.list("x") {
        [] => vec![0.0; dim],
        x => x.to_vec(),
    };
    if cfg.list("p").is_empty() {
        bail!("`p` needs at least one costate value");
    }
    let rows = stage(
        "hamiltonian sweep",
        experiments::ham_sweep(model, &x, cfg.list("alphas"), cfg.list("p"), cfg.count("nodes")),
    )?;
    out.write_with("ham_sweep.csv", |w| {
        writeln!(w, "alpha,p,H_alpha,H_tilde,H0,H_exact")?;
        for r in &rows {
            let exact = r.h_exact.map(num).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{exact}", num(r.alpha), num(r.p), num(r.h_alpha), num(r.h_tilde), num(r.h_0))?;
        }
        Ok(())
    })?;
    let worst_exact = rows
        .iter()
        .filter_map(|r| r.h_exact.map(|e| (r.h_alpha - e).abs()))
        .reduce(f64::max);
    let worst_gap = rows.iter().map(|r| (r.h_tilde - r.h_0).abs()).fold(0.0, f64::max);
    Ok(json!({
        "rows": rows.len(),
        "max_abs_error_vs_closed_form": worst_exact.map(finite),
        "max_abs_h_tilde_minus_h0": finite(worst_gap),
    }))
}

fn hjb_compare(cfg: &ExperimentConfig, out: &mut Staging) -> Result<Value> {
    let w = cfg.float("half_width");
    let n = cfg.count("grid_n");
    let grid = Grid2D::new(-w, w, -w, w, n, n).context("stage `grid` failed")?;
    let setup = HjbCompareConfig {
        alpha: cfg.float("alpha"),
        t: cfg.float("t"),
        grid,
        cfl: cfg.float("cfl"),
        nodes_per_panel: cfg.count("nodes"),
        hopf_lax: HopfLaxConfig {
            ode_step: cfg.float("ode_step"),
            n_starts: cfg.count("n_starts"),
            start_radius: cfg.float("start_radius"),
            simplex_iters: cfg.count("simplex_iters"),
            simplex_scale: cfg.float("simplex_scale"),
            simplex_tol: cfg.float("simplex_tol"),
            formula: if cfg.text("formula") == "max" { Formula::MaxForm } else { Formula::MinForm },
            seed: cfg.seed,
            legendre_search: None,
        },
    };
    let total = grid.len();
    let mut last_pct = 0;
    let res = stage(
        "godunov / hopf-lax solve",
        experiments::hjb_compare(&setup, |done, _| {
            let pct = 100 * done / total.max(1);
            if pct >= last_pct + 10 {
                last_pct = pct;
                log::info!("hopf-lax surface {pct}% ({done}/{total})");
            }
        }),
    )?;
    log::info!(
        "godunov {:.1}s, hopf-lax {:.1}s",
        res.godunov_seconds,
        res.hopf_lax_seconds
    );
    out.write_with("godunov.csv", |w| Ok(res.godunov.write_csv(w)?))?;
    out.write_with("hopf_lax.csv", |w| Ok(res.hopf_lax.write_csv(w)?))?;
    let c = &res.comparison;
    Ok(json!({
        "rel_pct": finite(c.rel_pct),
        "interior_rel_pct": finite(c.interior_rel_pct),
        "max_abs_diff": finite(c.max_abs_diff),
        "sup_norm_godunov": finite(c.sup_norm_b),
        "grid_nodes": total,
    }))
}

fn vdp_control(cfg: &ExperimentConfig, out: &mut Staging) -> Result<Value> {
    let base = RecedingHorizonConfig::default();
    let setup = VdpControlConfig {
        alpha: cfg.float("alpha"),
        x0: cfg.list("x0").to_vec(),
        total_t: cfg.float("total_t"),
        window_t: cfg.float("window_t"),
        nodes_per_panel: cfg.count("nodes"),
        receding: RecedingHorizonConfig {
            hopf_lax: HopfLaxConfig {
                ode_step: cfg.float("ode_step"),
                n_starts: cfg.count("n_starts"),
                start_radius: cfg.float("start_radius"),
                simplex_iters: cfg.count("simplex_iters"),
                simplex_tol: cfg.float("simplex_tol"),
                seed: cfg.seed,
                ..base.hopf_lax
            },
            control_dt: cfg.float("control_dt"),
            resynth_interval: cfg.float("resynth_interval"),
            seed: cfg.seed,
        },
    };
    let res = stage("receding-horizon control", experiments::vdp_control(&setup))?;
    out.write_with("controlled.csv", |w| Ok(res.controlled.write_csv(w)?))?;
    out.write_with("uncontrolled.csv", |w| Ok(res.uncontrolled.write_csv(w)?))?;
    let band = cfg.float("settle_band");
    Ok(json!({
        "total_running_cost": finite(res.controlled_cost),
        "uncontrolled_running_cost": finite(res.uncontrolled_cost),
        "settling_time": finite(adaptive_dp::settling_time(&res.controlled, band)),
        "uncontrolled_settling_time": finite(adaptive_dp::settling_time(&res.uncontrolled, band)),
    }))
}

fn load_fixture(cfg: &ExperimentConfig) -> Result<LqFixture> {
    let dir = Path::new(cfg.text("fixture"));
    LqFixture::load(dir).with_context(|| format!("stage `load fixture` failed for {}", dir.display()))
}

fn lq_learn(cfg: &ExperimentConfig, mode: LearningMode, out: &mut Staging) -> Result<Value> {
    let fx = load_fixture(cfg)?;
    let mut learner = LearnerConfig::new(fx.q.clone(), fx.r.clone());
    learner.window = cfg.float("window");
    learner.n_sub = cfg.count("n_sub");
    learner.alpha = cfg.float("alpha");
    learner.lambda = cfg.float("lambda");
    learner.eps_stop = cfg.float("eps_stop");
    learner.max_iters = cfg.count("max_iters");
    learner.seed = cfg.seed;
    learner.rank_tol = cfg.float("rank_tol");
    learner.horizon = cfg.float("horizon");
    learner.window_budget = cfg.count("window_budget");
    learner.settle_band = cfg.float("settle_band");
    learner.record_every = cfg.count("record_every");
    if cfg.text("exploration") == "sinusoidal" {
        learner.exploration = Exploration::Sinusoidal(stage(
            "exploration signal",
            adaptive_dp::sinusoidal_baseline(
                cfg.float("sin_amplitude"),
                cfg.float("sin_omega"),
                cfg.count("sin_terms"),
                fx.control_dim(),
                cfg.seed.wrapping_add(0x5eed),
            ),
        )?);
    }
    let res = stage("learning", experiments::lq_learning(&fx, mode, &learner))?;
    let rep = &res.report;
    out.write_json("report.json", &rep.to_json())?;
    out.write_with("trajectory.csv", |w| Ok(rep.trajectory.write_csv(w)?))?;
    out.write_with("P.txt", |w| Ok(w.write_all(format_matrix(rep.final_p()).as_bytes())?))?;
    out.write_with("K.txt", |w| Ok(w.write_all(format_matrix(rep.final_k()).as_bytes())?))?;
    Ok(json!({
        "converged": rep.converged,
        "iterations": rep.iterates.len(),
        "samples": rep.total_samples,
        "samples_per_iter": rep.samples_per_iter,
        "learning_time": finite(rep.learning_time),
        "settling_time": finite(rep.settling_time),
        "total_running_cost": finite(rep.total_running_cost),
        "relative_error_vs_riccati": finite(res.relative_error),
        "worst_shifted_abscissa": finite(res.worst_abscissa),
    }))
}

fn lq_exact(cfg: &ExperimentConfig, out: &mut Staging) -> Result<Value> {
    let fx = load_fixture(cfg)?;
    let res = stage(
        "exact riccati",
        experiments::lq_exact(&fx, cfg.float("lambda"), cfg.float("alpha"), cfg.float("tol")),
    )?;
    out.write_with("P.txt", |w| Ok(w.write_all(format_matrix(&res.riccati.p).as_bytes())?))?;
    out.write_with("K.txt", |w| Ok(w.write_all(format_matrix(&res.riccati.k).as_bytes())?))?;
    let value_at_x0 = res.policy.as_ref().map(|pol| finite(pol.value(&fx.x0)));
    Ok(json!({
        "iterations": res.riccati.iterations,
        "riccati_residual": finite(res.riccati.residual),
        "value_constant": res.policy.as_ref().map(|pol| finite(pol.value_constant)),
        "value_at_x0": value_at_x0,
        "w2_squared": finite(res.gaps.w2_sq),
        "entropy_per_time": finite(res.gaps.entropy_per_time),
        "pure_cost_overhead": res.gaps.pure_cost_overhead.map(finite),
    }))
}
