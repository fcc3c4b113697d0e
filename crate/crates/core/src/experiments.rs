//! End-to-end pipelines behind the command-line tool and the acceptance suite.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::adaptive_dp::{self, Exploration, LearnerConfig, LearnerReport, LinearPlant};
use crate::dynamics::{simulate_with, CostModel, Trajectory};
use crate::error::{Error, Result};
use crate::hjb_godunov::{compare_solutions, Comparison, GodunovOptions, GodunovSolver, Grid2D, GridFunction};
use crate::hjb_hopf_lax::{self, Formula, HopfLaxConfig, RecedingHorizonConfig, SurfaceSpec};
use crate::linalg;
use crate::lq_maxent::{self, LqProblem, MaxEntLqPolicy, QuantitativeGaps, RiccatiSolution};
use crate::matrix_io;
use crate::models;
use crate::quadrature::QuadratureGrid;
use crate::soft_hamiltonian::HamContext;

/// Two Gauss–Legendre panels split at `u = 0`, where `|u|` has its kink.
pub fn vdp_quadrature(per_panel: usize) -> Result<QuadratureGrid> {
    QuadratureGrid::composite_gauss_legendre(models::van_der_pol_2d().control_box().expect("boxed"), 2, per_panel)
}

#[derive(Clone, Debug)]
pub struct HjbCompareConfig {
    pub alpha: f64,
    pub t: f64,
    pub grid: Grid2D,
    pub cfl: f64,
    pub nodes_per_panel: usize,
    pub hopf_lax: HopfLaxConfig,
}

impl Default for HjbCompareConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t: 0.1,
            grid: Grid2D::benchmark(),
            cfl: 0.5,
            nodes_per_panel: 4,
            hopf_lax: HopfLaxConfig {
                ode_step: 0.025,
                n_starts: 1,
                start_radius: 2.0,
                simplex_iters: 120,
                simplex_scale: 0.25,
                simplex_tol: 1e-6,
                formula: Formula::MinForm,
                seed: 0,
                legendre_search: None,
            },
        }
    }
}

pub struct HjbCompareResult {
    pub godunov: GridFunction,
    pub hopf_lax: GridFunction,
    pub comparison: Comparison,
    pub godunov_seconds: f64,
    pub hopf_lax_seconds: f64,
}

/// Van der Pol benchmark solved on the grid and grid-free, then compared.
pub fn hjb_compare<P: FnMut(usize, usize)>(cfg: &HjbCompareConfig, progress: P) -> Result<HjbCompareResult> {
    let (model, cost) = models::van_der_pol_benchmark(cfg.alpha)?;
    let quad = vdp_quadrature(cfg.nodes_per_panel)?;
    let ctx = HamContext::new(&model, &cost, &quad)?;
    let start = Instant::now();
    let solver = GodunovSolver::new(ctx.clone(), cfg.grid)?;
    let init = GridFunction::from_fn(cfg.grid, 0.0, |x, y| cost.terminal.eval(&[x, y]));
    let godunov = solver.solve(&init, cfg.t, GodunovOptions { cfl: cfg.cfl })?;
    let godunov_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let hopf_lax = hjb_hopf_lax::value_surface(
        &ctx,
        &cost.terminal,
        cfg.t,
        &SurfaceSpec::planar(cfg.grid),
        &cfg.hopf_lax,
        progress,
    )?;
    let hopf_lax_seconds = start.elapsed().as_secs_f64();
    let comparison = compare_solutions(&godunov, |x, y| hopf_lax.interpolate(x, y));
    Ok(HjbCompareResult {
        godunov,
        hopf_lax,
        comparison,
        godunov_seconds,
        hopf_lax_seconds,
    })
}

/// One row of a Hamiltonian sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub p: f64,
    pub h_alpha: f64,
    /// `H_a - a log|U|`
    pub h_tilde: f64,
    pub h_0: f64,
    /// Closed form, where one exists.
    pub h_exact: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepModel {
    /// `f = u`, `r = 0` on `[-1, 1]`.
    Integrator,
    /// The 2-D Van der Pol benchmark, costate `(0, p)`.
    VanDerPol,
}

/// `H_a(x, p)` over a list of temperatures and costates.
pub fn ham_sweep(model: SweepModel, x: &[f64], alphas: &[f64], ps: &[f64], nodes: usize) -> Result<Vec<SweepRow>> {
    let (dyn_model, cost) = match model {
        SweepModel::Integrator => models::integrator_1d(1.0)?,
        SweepModel::VanDerPol => models::van_der_pol_benchmark(1.0)?,
    };
    let quad = QuadratureGrid::composite_gauss_legendre(dyn_model.control_box().expect("boxed"), 2, nodes)?;
    let base = HamContext::new(&dyn_model, &cost, &quad)?;
    let log_u = quad.control_box().volume().ln();
    let mut rows = Vec::with_capacity(alphas.len() * ps.len());
    for &alpha in alphas {
        let ctx = base.with_alpha(alpha)?;
        for &p in ps {
            let pv: Vec<f64> = match model {
                SweepModel::Integrator => vec![p],
                SweepModel::VanDerPol => vec![0.0, p],
            };
            let h_alpha = ctx.value(x, &pv)?;
            rows.push(SweepRow {
                alpha,
                p,
                h_alpha,
                h_tilde: h_alpha - alpha * log_u,
                h_0: ctx.standard_hamiltonian(x, &pv)?,
                h_exact: (model == SweepModel::Integrator).then(|| models::integrator_hamiltonian(p, alpha)),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct VdpControlConfig {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub total_t: f64,
    pub window_t: f64,
    pub nodes_per_panel: usize,
    pub receding: RecedingHorizonConfig,
}

impl Default for VdpControlConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            x0: vec![0.05, 0.25, 0.0, 0.02],
            total_t: 20.0,
            window_t: 2.5,
            nodes_per_panel: 4,
            receding: RecedingHorizonConfig::default(),
        }
    }
}

pub struct VdpControlResult {
    pub controlled: Trajectory,
    pub uncontrolled: Trajectory,
    /// `int r(x, u) dt` along each trajectory.
    pub controlled_cost: f64,
    pub uncontrolled_cost: f64,
}

/// Left-endpoint sum of `r(x_k, u_k) h`, matching the held inputs.
pub fn accumulated_running_cost(cost: &CostModel, traj: &Trajectory) -> f64 {
    (0..traj.len().saturating_sub(1))
        .map(|k| {
            let h = traj.times[k + 1] - traj.times[k];
            h * cost.running.eval(traj.states[k].as_slice(), traj.controls[k].as_slice())
        })
        .sum()
}

/// Receding-horizon max-entropy control of the four-state oscillator.
pub fn vdp_control(cfg: &VdpControlConfig) -> Result<VdpControlResult> {
    let (model, cost) = models::van_der_pol_4d_problem(cfg.alpha, cfg.window_t)?;
    let quad = vdp_quadrature(cfg.nodes_per_panel)?;
    let ctx = HamContext::new(&model, &cost, &quad)?;
    let controlled = hjb_hopf_lax::receding_horizon_control(&ctx, &cfg.x0, cfg.total_t, cfg.window_t, &cfg.receding)?;
    let h = cfg.receding.control_dt * cfg.receding.control_dt;
    let steps = (cfg.total_t / h).round() as usize;
    let uncontrolled = simulate_with(&model, &cfg.x0, h, steps, cfg.receding.seed, |_, _, _, u| {
        u.fill(0.0);
        Ok(())
    })?;
    Ok(VdpControlResult {
        controlled_cost: accumulated_running_cost(&cost, &controlled),
        uncontrolled_cost: accumulated_running_cost(&cost, &uncontrolled),
        controlled,
        uncontrolled,
    })
}

/// A linear plant with its cost weights and initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct LqFixture {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: Vec<f64>,
}

const FIXTURE_FILES: [&str; 5] = ["A.txt", "B.txt", "Q.txt", "R.txt", "x0.txt"];

impl LqFixture {
    /// Random stable `(A, B)` with `Q = 0.01 I`, `R = I` and `x0 = (x0, ..., x0)`.
    pub fn generate(n: usize, m: usize, seed: u64, x0: f64) -> Self {
        let (a, b) = lq_maxent::random_system(n, m, seed);
        Self {
            a,
            b,
            q: DMatrix::identity(n, n) * 0.01,
            r: DMatrix::identity(m, m),
            x0: vec![x0; n],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |f: &str| matrix_io::read_matrix(dir.join(f));
        let x0 = read(FIXTURE_FILES[4])?;
        let fx = Self {
            a: read(FIXTURE_FILES[0])?,
            b: read(FIXTURE_FILES[1])?,
            q: read(FIXTURE_FILES[2])?,
            r: read(FIXTURE_FILES[3])?,
            x0: x0.iter().copied().collect(),
        };
        let n = fx.state_dim();
        if fx.b.nrows() != n || fx.q.shape() != (n, n) || fx.x0.len() != n || !fx.r.is_square() || fx.r.nrows() != fx.control_dim() {
            return Err(Error::Parse(format!("fixture {} has inconsistent shapes", dir.display())));
        }
        Ok(fx)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let x0 = DMatrix::from_column_slice(self.x0.len(), 1, &self.x0);
        for (f, m) in FIXTURE_FILES.iter().zip([&self.a, &self.b, &self.q, &self.r, &x0]) {
            matrix_io::write_matrix(dir.join(f), m)?;
        }
        Ok(())
    }

    pub fn problem(&self, lambda: f64, alpha: f64) -> Result<LqProblem> {
        LqProblem::new(self.a.clone(), self.b.clone(), self.q.clone(), self.r.clone(), lambda, alpha)
    }

    pub fn plant(&self) -> Result<LinearPlant> {
        LinearPlant::new(self.a.clone(), self.b.clone(), &self.x0)
    }
}

pub struct LqExactResult {
    pub riccati: RiccatiSolution,
    pub policy: Option<MaxEntLqPolicy>,
    pub gaps: QuantitativeGaps,
}

/// Model-based Kleinman solution, the optimal Gaussian and its gaps.
pub fn lq_exact(fixture: &LqFixture, lambda: f64, alpha: f64, tol: f64) -> Result<LqExactResult> {
    let prob = fixture.problem(lambda, alpha)?;
    let k0 = DMatrix::zeros(fixture.control_dim(), fixture.state_dim());
    let riccati = lq_maxent::kleinman_iterate(&prob, &k0, tol)?;
    let policy = if lambda > 0.0 {
        Some(lq_maxent::maxent_policy(&prob, &riccati)?)
    } else {
        None
    };
    Ok(LqExactResult {
        gaps: lq_maxent::quantitative_gaps(&prob)?,
        riccati,
        policy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LearningMode {
    OnPolicy,
    OffPolicy,
}

/// Learner report checked against the model-based solution it never saw.
pub struct LearningOutcome {
    pub report: LearnerReport,
    pub oracle: RiccatiSolution,
    /// `||P_final - P*||_F / ||P*||_F`
    pub relative_error: f64,
    /// Largest shifted spectral abscissa of `A - BK` over the gains applied.
    pub worst_abscissa: f64,
}

/// Runs a learner from `K0 = 0` on the fixture and scores it.
pub fn lq_learning(fixture: &LqFixture, mode: LearningMode, cfg: &LearnerConfig) -> Result<LearningOutcome> {
    let prob = fixture.problem(cfg.lambda, cfg.alpha)?;
    let (n, m) = (fixture.state_dim(), fixture.control_dim());
    let k0 = DMatrix::zeros(m, n);
    if prob.shifted_abscissa(&k0) >= 0.0 {
        return Err(Error::NotHurwitz {
            abscissa: prob.shifted_abscissa(&k0),
        });
    }
    let oracle = lq_maxent::kleinman_iterate(&prob, &k0, 1e-12)?;
    let mut plant = fixture.plant()?;
    let report = match mode {
        LearningMode::OnPolicy => adaptive_dp::run_onpolicy(&mut plant, &k0, cfg)?,
        LearningMode::OffPolicy => adaptive_dp::run_offpolicy(&mut plant, &k0, cfg)?,
    };
    let relative_error = (report.final_p() - &oracle.p).norm() / oracle.p.norm();
    let worst_abscissa = std::iter::once(&k0)
        .chain(report.iterates.iter().map(|(_, k)| k))
        .map(|k| prob.shifted_abscissa(k))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LearningOutcome {
        report,
        oracle,
        relative_error,
        worst_abscissa,
    })
}

/// Learner settings for the small fixtures: the reference window and
/// temperature with a stopping threshold scaled to `Q = 0.01 I`.
pub fn small_fixture_learner(fixture: &LqFixture, seed: u64) -> LearnerConfig {
    let mut cfg = LearnerConfig::new(fixture.q.clone(), fixture.r.clone());
    cfg.eps_stop = 5e-3;
    cfg.seed = seed;
    cfg.horizon = 50.0;
    cfg
}

/// The sinusoidal-exploration baseline with `a = 0.5`, `w_bar = 100` and 100 terms.
pub fn sinusoidal_learner(fixture: &LqFixture, seed: u64) -> Result<LearnerConfig> {
    let mut cfg = small_fixture_learner(fixture, seed);
    cfg.exploration = Exploration::Sinusoidal(adaptive_dp::sinusoidal_baseline(
        0.5,
        100.0,
        100,
        fixture.control_dim(),
        seed.wrapping_add(0x5eed),
    )?);
    Ok(cfg)
}

/// Minimum eigenvalue of `P_k - P_{k+1}` over consecutive iterates.
pub fn worst_loewner_step(iterates: &[(DMatrix<f64>, DMatrix<f64>)]) -> f64 {
    iterates
        .windows(2)
        .map(|w| linalg::min_sym_eigenvalue(&(&w[0].0 - &w[1].0)))
        .fold(f64::INFINITY, f64::min)
}
