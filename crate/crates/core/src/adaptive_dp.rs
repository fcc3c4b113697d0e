//! Data-driven policy iteration for max-entropy LQ problems.
//!
//! The learner never sees `(A, B)`. It drives a [`Plant`] with the current
//! Gaussian policy, integrates quadratic functionals of the measured state
//! and input over short windows, and solves the Lyapunov step of Kleinman's
//! iteration as a least-squares problem in `(svec P, vec K)`.
//!
//! Window integrals follow the Euler polyline of the sampled system: on a
//! substep of length `h` the input `u_k` is constant and the state moves
//! linearly from `x_k` to `x_{k+1}`. With that reading
//!
//! ```text
//! x_{k+1}' P x_{k+1} - x_k' P x_k = 2 h f_k' P (x_k + x_{k+1}) / 2
//! ```
//!
//! holds exactly, so the sampled exploration noise excites the regression
//! instead of corrupting it. Terms in `x x'` use the trapezoid rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::dynamics::{rng_from_seed, GaussianPolicy, SimRng, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// A system the learner can only observe and actuate.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn state(&self) -> &[f64];
    /// Holds `u` for a time `h` (explicit Euler).
    fn step(&mut self, u: &[f64], h: f64);
}

/// `x' = Ax + Bu`, with the matrices kept out of the learner's reach.
#[derive(Clone, Debug)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x: Vec<f64>,
    scratch: Vec<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, x0: &[f64]) -> Result<Self> {
        check_dim("rows of B", a.nrows(), b.nrows())?;
        check_dim("initial state", a.nrows(), x0.len())?;
        Ok(Self {
            scratch: vec![0.0; a.nrows()],
            a,
            b,
            x: x0.to_vec(),
        })
    }
}

impl Plant for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn state(&self) -> &[f64] {
        &self.x
    }

    fn step(&mut self, u: &[f64], h: f64) {
        let n = self.x.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[(i, j)] * self.x[j];
            }
            for j in 0..u.len() {
                acc += self.b[(i, j)] * u[j];
            }
            self.scratch[i] = acc;
        }
        for i in 0..n {
            self.x[i] += h * self.scratch[i];
        }
    }
}

/// Samples of one window `[t0, t0 + n_sub h]`: `n_sub + 1` states and the
/// `n_sub` inputs held between them.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSegment {
    pub t0: f64,
    pub h: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl WindowSegment {
    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.states.len() != self.controls.len() + 1 || self.controls.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "window needs n_sub + 1 states for n_sub >= 1 inputs, got {} states and {} inputs",
                self.states.len(),
                self.controls.len()
            )));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidParameter("window substep must be > 0".into()));
        }
        for s in &self.states {
            check_dim("window state", n, s.len())?;
        }
        for u in &self.controls {
            check_dim("window input", m, u.len())?;
        }
        Ok(())
    }

    /// Cuts `n_sub` steps of a uniformly sampled trajectory starting at sample `start`.
    pub fn from_trajectory(traj: &Trajectory, start: usize, n_sub: usize) -> Result<Self> {
        if start + n_sub >= traj.len() || n_sub == 0 {
            return Err(Error::InvalidParameter(format!(
                "window [{start}, {}] exceeds the {} trajectory samples",
                start + n_sub,
                traj.len()
            )));
        }
        let h = traj.times[start + 1] - traj.times[start];
        for k in start..start + n_sub {
            let dk = traj.times[k + 1] - traj.times[k];
            if (dk - h).abs() > 1e-9 * h.abs().max(1e-300) {
                return Err(Error::InvalidParameter(
                    "window samples are not uniformly spaced".into(),
                ));
            }
        }
        Ok(Self {
            t0: traj.times[start],
            h,
            states: traj.states[start..=start + n_sub]
                .iter()
                .map(|s| s.as_slice().to_vec())
                .collect(),
            controls: traj.controls[start..start + n_sub]
                .iter()
                .map(|u| u.as_slice().to_vec())
                .collect(),
        })
    }
}

/// Discounted window integrals shared by both collectors.
struct WindowIntegrals {
    /// `e^{-l t} qr(x)` at the end minus at the start
    endpoint: Vec<f64>,
    /// trapezoid of `e^{-l s} x x'`
    xx: DMatrix<f64>,
    /// per-substep `h e^{-l t_mid} u_k xbar_k'`
    ux: DMatrix<f64>,
}

fn integrate_window(seg: &WindowSegment, lambda: f64) -> WindowIntegrals {
    let n = seg.states[0].len();
    let m = seg.controls[0].len();
    let mut qr_end = vec![0.0; linalg::svec_len(n)];
    let mut qr_start = vec![0.0; linalg::svec_len(n)];
    let last = seg.controls.len();
    let t_end = seg.t0 + last as f64 * seg.h;
    linalg::quad_regressor(&seg.states[last], &mut qr_end);
    linalg::quad_regressor(&seg.states[0], &mut qr_start);
    let (d_end, d_start) = ((-lambda * t_end).exp(), (-lambda * seg.t0).exp());
    let endpoint = qr_end
        .iter()
        .zip(&qr_start)
        .map(|(e, s)| d_end * e - d_start * s)
        .collect();
    let mut xx = DMatrix::zeros(n, n);
    let mut ux = DMatrix::zeros(m, n);
    for k in 0..last {
        let (t_a, t_b) = (seg.t0 + k as f64 * seg.h, seg.t0 + (k + 1) as f64 * seg.h);
        let (xa, xb) = (&seg.states[k], &seg.states[k + 1]);
        let (wa, wb) = (
            0.5 * seg.h * (-lambda * t_a).exp(),
            0.5 * seg.h * (-lambda * t_b).exp(),
        );
        let wm = seg.h * (-lambda * 0.5 * (t_a + t_b)).exp();
        for i in 0..n {
            for j in 0..n {
                xx[(i, j)] += wa * xa[i] * xa[j] + wb * xb[i] * xb[j];
            }
            let xbar = 0.5 * (xa[i] + xb[i]);
            for a in 0..m {
                ux[(a, i)] += wm * seg.controls[k][a] * xbar;
            }
        }
    }
    WindowIntegrals { endpoint, xx, ux }
}

/// `<M, X>` for symmetric `X`.
fn frob_inner(m: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    m.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

/// Regression rows for the on-policy step: unknowns `[svec(P_k); vec(K_{k+1})]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OnPolicyRows {
    n: usize,
    m: usize,
    theta: Vec<Vec<f64>>,
    xi: Vec<f64>,
}

impl OnPolicyRows {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            ..Default::default()
        }
    }

    pub fn unknowns(&self) -> usize {
        linalg::svec_len(self.n) + self.n * self.m
    }

    pub fn windows_used(&self) -> usize {
        self.xi.len()
    }

    pub fn push(&mut self, theta_row: Vec<f64>, xi: f64) -> Result<()> {
        check_dim("theta row", self.unknowns(), theta_row.len())?;
        self.theta.push(theta_row);
        self.xi.push(xi);
        Ok(())
    }

    pub fn theta(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.theta, self.unknowns())
    }

    pub fn xi(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xi)
    }

    pub fn rank(&self, rank_tol: f64) -> usize {
        linalg::equilibrated_rank(&self.theta(), rank_tol)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// One on-policy row for the gain `k` currently applied.
///
/// The exploration residual `u + K x` of each substep multiplies the
/// midpoint state, and `vec` is column-major.
pub fn collect_onpolicy_window(
    seg: &WindowSegment,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lambda: f64,
) -> Result<(Vec<f64>, f64)> {
    let (m, n) = k.shape();
    seg.validate(n, m)?;
    let w = integrate_window(seg, lambda);
    // int e^{-ls} (u + K x) x' ds, with u + K x_k held over each substep
    let mut eps_x = w.ux.clone();
    for kk in 0..seg.controls.len() {
        let (t_a, t_b) = (seg.t0 + kk as f64 * seg.h, seg.t0 + (kk + 1) as f64 * seg.h);
        let wm = seg.h * (-lambda * 0.5 * (t_a + t_b)).exp();
        let xa = DVector::from_column_slice(&seg.states[kk]);
        let kx = k * &xa;
        for i in 0..n {
            let xbar = 0.5 * (seg.states[kk][i] + seg.states[kk + 1][i]);
            for a in 0..m {
                eps_x[(a, i)] += wm * kx[a] * xbar;
            }
        }
    }
    let coeff = (r * eps_x) * -2.0;
    let mut row = w.endpoint;
    row.extend(coeff.iter());
    let cost = q + k.transpose() * r * k;
    Ok((row, -frob_inner(&cost, &w.xx)))
}

/// Least-squares `(P_k, K_{k+1})` from on-policy rows.
pub fn solve_onpolicy(rows: &OnPolicyRows, rank_tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let theta = rows.theta();
    let needed = rows.unknowns();
    let rank = if theta.nrows() == 0 {
        0
    } else {
        linalg::equilibrated_rank(&theta, rank_tol)
    };
    if rank < needed {
        return Err(Error::RankDeficient { rank, needed });
    }
    let sol = linalg::lstsq(&theta, &rows.xi())?;
    Ok(split_solution(sol.as_slice(), rows.n, rows.m))
}

fn split_solution(sol: &[f64], n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let np = linalg::svec_len(n);
    let p = linalg::unsvec(&sol[..np], n);
    let k = DMatrix::from_column_slice(m, n, &sol[np..]);
    (p, k)
}

/// Behaviour-policy data reused across every off-policy iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OffPolicyRows {
    n: usize,
    m: usize,
    delta: Vec<Vec<f64>>,
    i1: Vec<DMatrix<f64>>,
    i2: Vec<DMatrix<f64>>,
}

impl OffPolicyRows {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            ..Default::default()
        }
    }

    pub fn unknowns(&self) -> usize {
        linalg::svec_len(self.n) + self.n * self.m
    }

    pub fn windows_used(&self) -> usize {
        self.delta.len()
    }

    /// `delta` in svec layout (l x n(n+1)/2).
    pub fn delta(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.delta, linalg::svec_len(self.n))
    }

    /// `vec(int e^{-ls} x x')` per row (l x n^2).
    pub fn i1(&self) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self.i1.iter().map(|x| x.iter().copied().collect()).collect();
        rows_to_matrix(&rows, self.n * self.n)
    }

    /// `vec(int e^{-ls} u x')` per row (l x mn), i.e. `int x (x) u`.
    pub fn i2(&self) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self.i2.iter().map(|x| x.iter().copied().collect()).collect();
        rows_to_matrix(&rows, self.n * self.m)
    }

    /// `[I1 in svec coordinates, I2]`, whose rank decides solvability.
    pub fn rank_matrix(&self) -> DMatrix<f64> {
        let np = linalg::svec_len(self.n);
        let mut out = DMatrix::zeros(self.windows_used(), np + self.n * self.m);
        for (row, (x, u)) in self.i1.iter().zip(&self.i2).enumerate() {
            let mut k = 0;
            for i in 0..self.n {
                for j in i..self.n {
                    out[(row, k)] = x[(i, j)];
                    k += 1;
                }
            }
            for (c, v) in u.iter().enumerate() {
                out[(row, np + c)] = *v;
            }
        }
        out
    }

    pub fn rank(&self, rank_tol: f64) -> usize {
        if self.windows_used() == 0 {
            return 0;
        }
        linalg::equilibrated_rank(&self.rank_matrix(), rank_tol)
    }

    pub fn push(&mut self, delta: Vec<f64>, i1: DMatrix<f64>, i2: DMatrix<f64>) -> Result<()> {
        check_dim("delta row", linalg::svec_len(self.n), delta.len())?;
        check_dim("i1 rows", self.n, i1.nrows())?;
        check_dim("i2 rows", self.m, i2.nrows())?;
        self.delta.push(delta);
        self.i1.push(i1);
        self.i2.push(i2);
        Ok(())
    }
}

/// One off-policy row `(delta, I1, I2)`; `I1` is `n x n`, `I2` is `m x n`.
pub fn collect_offpolicy_window(
    seg: &WindowSegment,
    lambda: f64,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = seg.states.first().map_or(0, Vec::len);
    let m = seg.controls.first().map_or(0, Vec::len);
    seg.validate(n, m)?;
    let w = integrate_window(seg, lambda);
    Ok((w.endpoint, w.xx, w.ux))
}

/// Least-squares `(P_k, K_{k+1})` from fixed behaviour data and the current gain.
pub fn solve_offpolicy(
    rows: &OffPolicyRows,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("rows of K", rows.m, k.nrows())?;
    check_dim("columns of K", rows.n, k.ncols())?;
    let needed = rows.unknowns();
    let rank = rows.rank(rank_tol);
    if rank < needed {
        return Err(Error::RankDeficient { rank, needed });
    }
    let np = linalg::svec_len(rows.n);
    let l = rows.windows_used();
    let cost = q + k.transpose() * r * k;
    let mut lhs = DMatrix::zeros(l, needed);
    let mut rhs = DVector::zeros(l);
    for row in 0..l {
        for c in 0..np {
            lhs[(row, c)] = rows.delta[row][c];
        }
        let coeff = r * (k * &rows.i1[row] + &rows.i2[row]) * -2.0;
        for (c, v) in coeff.iter().enumerate() {
            lhs[(row, np + c)] = *v;
        }
        rhs[row] = -frob_inner(&cost, &rows.i1[row]);
    }
    let sol = linalg::lstsq(&lhs, &rhs)?;
    Ok(split_solution(sol.as_slice(), rows.n, rows.m))
}

/// `e(t) = a sum_k sin(w_k t)` per input channel, `w_k ~ U(-w_bar, w_bar)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidalSignal {
    pub amplitude: f64,
    /// `frequencies[channel][term]`
    pub frequencies: Vec<Vec<f64>>,
}

impl SinusoidalSignal {
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        for (o, ws) in out.iter_mut().zip(&self.frequencies) {
            *o = self.amplitude * ws.iter().map(|w| (w * t).sin()).sum::<f64>();
        }
    }
}

pub fn sinusoidal_baseline(
    amplitude: f64,
    omega_bar: f64,
    n_terms: usize,
    channels: usize,
    seed: u64,
) -> Result<SinusoidalSignal> {
    if n_terms == 0 {
        return Err(Error::InvalidParameter("sinusoidal exploration needs n_terms >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let frequencies = (0..channels)
        .map(|_| {
            (0..n_terms)
                .map(|_| omega_bar * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        })
        .collect();
    Ok(SinusoidalSignal {
        amplitude,
        frequencies,
    })
}

/// Earliest sample time after which every coordinate stays within `band`.
pub fn settling_time(traj: &Trajectory, band: f64) -> f64 {
    let mut tracker = SettlingTracker::default();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        tracker.observe(*t, x.as_slice(), band);
    }
    tracker.value()
}

#[derive(Clone, Copy, Debug, Default)]
struct SettlingTracker {
    candidate: Option<f64>,
    started: bool,
}

impl SettlingTracker {
    fn observe(&mut self, t: f64, x: &[f64], band: f64) {
        let inside = x.iter().all(|v| v.abs() <= band);
        if !self.started {
            self.started = true;
            self.candidate = inside.then_some(t);
            return;
        }
        match (inside, self.candidate) {
            (true, None) => self.candidate = Some(t),
            (false, _) => self.candidate = None,
            _ => {}
        }
    }

    fn value(&self) -> f64 {
        self.candidate.unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub enum Exploration {
    /// `u ~ N(-K x, alpha R^{-1})`, redrawn every substep.
    MaxEntropy,
    /// `u = -K x + e(t)`.
    Sinusoidal(SinusoidalSignal),
}

#[derive(Clone, Debug)]
pub struct LearnerConfig {
    /// Window length `dt`.
    pub window: f64,
    /// Substeps per window; the plant is stepped with `window / n_sub`.
    pub n_sub: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub eps_stop: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub rank_tol: f64,
    /// Total simulated time; after learning the state is driven by `-K x`.
    pub horizon: f64,
    /// Windows allowed per rank test before giving up.
    pub window_budget: usize,
    pub settle_band: f64,
    /// Record one trajectory sample every this many substeps.
    pub record_every: usize,
    pub exploration: Exploration,
}

impl LearnerConfig {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self {
            window: 0.01,
            n_sub: 10,
            alpha: 1.0,
            lambda: 1e-10,
            q,
            r,
            eps_stop: 0.5,
            max_iters: 50,
            seed: 0,
            rank_tol: 1e-8,
            horizon: 50.0,
            window_budget: 100_000,
            settle_band: 1.0,
            record_every: 10,
            exploration: Exploration::MaxEntropy,
        }
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        check_dim("rows of Q", n, self.q.nrows())?;
        check_dim("rows of R", m, self.r.nrows())?;
        let checks = [
            (self.window > 0.0, "window > 0"),
            (self.n_sub >= 2, "n_sub >= 2"),
            (self.alpha > 0.0, "alpha > 0"),
            (self.lambda >= 0.0, "lambda >= 0"),
            (self.eps_stop > 0.0, "eps_stop > 0"),
            (self.max_iters >= 1, "max_iters >= 1"),
            (self.horizon > 0.0, "horizon > 0"),
            (self.record_every >= 1, "record_every >= 1"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidParameter(format!("learner config requires {what}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterateSummary {
    pub p_norm: f64,
    pub k_norm: f64,
    pub p_change: Option<f64>,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerReport {
    /// `(P_k, K_{k+1})` per iteration.
    pub iterates: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub samples_per_iter: Vec<usize>,
    pub total_samples: usize,
    pub learning_time: f64,
    pub settling_time: f64,
    /// `int e^{-ls} (x'Qx + u'Ru)` over the whole horizon, entropy excluded.
    pub total_running_cost: f64,
    pub converged: bool,
    pub trajectory: Trajectory,
}

impl LearnerReport {
    pub fn final_p(&self) -> &DMatrix<f64> {
        &self.iterates.last().expect("at least one iterate").0
    }

    pub fn final_k(&self) -> &DMatrix<f64> {
        &self.iterates.last().expect("at least one iterate").1
    }

    pub fn summaries(&self) -> Vec<IterateSummary> {
        self.iterates
            .iter()
            .enumerate()
            .map(|(i, (p, k))| IterateSummary {
                p_norm: p.norm(),
                k_norm: k.norm(),
                p_change: (i > 0).then(|| (p - &self.iterates[i - 1].0).norm()),
                windows: self.samples_per_iter.get(i).copied().unwrap_or(0),
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        serde_json::json!({
            "iterates": self.summaries(),
            "samples_per_iter": self.samples_per_iter,
            "total_samples": self.total_samples,
            "learning_time": self.learning_time,
            "settling_time": finite_or_null(self.settling_time),
            "total_running_cost": self.total_running_cost,
            "converged": self.converged,
            "final_p": mat(self.final_p()),
            "final_k": mat(self.final_k()),
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Runs the plant, recording samples, accumulating the running cost and
/// tracking settling.
struct Driver<'p, P: Plant> {
    plant: &'p mut P,
    h: f64,
    t: f64,
    steps: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda: f64,
    cost: f64,
    settle: SettlingTracker,
    band: f64,
    record_every: usize,
    traj: Trajectory,
}

impl<'p, P: Plant> Driver<'p, P> {
    fn new(plant: &'p mut P, cfg: &LearnerConfig) -> Self {
        let h = cfg.window / cfg.n_sub as f64;
        let mut settle = SettlingTracker::default();
        settle.observe(0.0, plant.state(), cfg.settle_band);
        let traj = Trajectory {
            times: vec![0.0],
            states: vec![DVector::from_column_slice(plant.state())],
            controls: vec![],
            seed: cfg.seed,
        };
        Self {
            plant,
            h,
            t: 0.0,
            steps: 0,
            q: cfg.q.clone(),
            r: cfg.r.clone(),
            lambda: cfg.lambda,
            cost: 0.0,
            settle,
            band: cfg.settle_band,
            record_every: cfg.record_every,
            traj,
        }
    }

    fn stage_cost(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        (-self.lambda * t).exp()
            * (crate::dynamics::quad_form(&self.q, x) + crate::dynamics::quad_form(&self.r, u))
    }

    /// One substep with input `u`; returns the new state.
    fn step(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let x0 = self.plant.state().to_vec();
        let c0 = self.stage_cost(&x0, u, self.t);
        self.plant.step(u, self.h);
        self.steps += 1;
        self.t = self.steps as f64 * self.h;
        let x1 = self.plant.state().to_vec();
        if x1.iter().any(|v| !v.is_finite() || v.abs() > 1e8) {
            return Err(Error::Diverged { time: self.t });
        }
        // input held on the substep, state trapezoid
        self.cost += 0.5 * self.h * (c0 + self.stage_cost(&x1, u, self.t));
        self.settle.observe(self.t, &x1, self.band);
        if self.traj.controls.len() < self.traj.states.len() {
            self.traj.controls.push(DVector::from_column_slice(u));
        }
        if self.steps.is_multiple_of(self.record_every) {
            self.traj.times.push(self.t);
            self.traj.states.push(DVector::from_column_slice(&x1));
        }
        Ok(x1)
    }

    /// Executes one window under `control(t, x, u)`.
    fn window<C: FnMut(f64, &[f64], &mut [f64])>(
        &mut self,
        n_sub: usize,
        m: usize,
        mut control: C,
    ) -> Result<WindowSegment> {
        let mut seg = WindowSegment {
            t0: self.t,
            h: self.h,
            states: vec![self.plant.state().to_vec()],
            controls: Vec::with_capacity(n_sub),
        };
        let mut u = vec![0.0; m];
        for _ in 0..n_sub {
            control(self.t, self.plant.state(), &mut u);
            let x1 = self.step(&u)?;
            seg.controls.push(u.clone());
            seg.states.push(x1);
        }
        Ok(seg)
    }

    /// Deterministic `-K x` until the horizon.
    fn finish(mut self, k: &DMatrix<f64>, horizon: f64) -> Result<(f64, f64, Trajectory)> {
        let m = k.nrows();
        let mut u = vec![0.0; m];
        let total = (horizon / self.h).round() as usize;
        while self.steps < total {
            let x = self.plant.state();
            for a in 0..m {
                u[a] = -(0..x.len()).map(|j| k[(a, j)] * x[j]).sum::<f64>();
            }
            self.step(&u.clone())?;
        }
        if self.traj.controls.len() < self.traj.states.len() {
            self.traj.controls.push(DVector::from_column_slice(&u));
        }
        // every recorded state carries the input applied from it onwards
        self.traj.controls.truncate(self.traj.states.len());
        while self.traj.controls.len() < self.traj.states.len() {
            self.traj.controls.push(DVector::from_column_slice(&u));
        }
        Ok((self.cost, self.settle.value(), self.traj))
    }
}

/// Draws `u ~ N(-K x, Sigma)` or applies `-K x + e(t)`.
fn exploring_control(
    exploration: &Exploration,
    policy: &GaussianPolicy,
    rng: &mut SimRng,
    t: f64,
    x: &[f64],
    u: &mut [f64],
) {
    match exploration {
        Exploration::MaxEntropy => policy.sample_into(x, rng, u),
        Exploration::Sinusoidal(sig) => {
            sig.eval(t, u);
            let mean = policy.mean(x);
            for (ui, mi) in u.iter_mut().zip(mean.iter()) {
                *ui += mi;
            }
        }
    }
}

fn behaviour(cfg: &LearnerConfig, k: &DMatrix<f64>) -> Result<GaussianPolicy> {
    let r_inv = linalg::spd_inverse(&cfg.r, "control weight R")?;
    GaussianPolicy::new(k.clone(), (&r_inv + r_inv.transpose()) * (0.5 * cfg.alpha))
}

/// Sub-sampled control records only cover the recorded instants; keep one
/// control per recorded state.
fn tidy(mut traj: Trajectory, record_every: usize) -> Trajectory {
    if record_every > 1 {
        let controls: Vec<_> = traj.controls.iter().step_by(record_every).cloned().collect();
        traj.controls = controls;
    }
    let last = traj.controls.last().cloned();
    traj.controls.truncate(traj.states.len());
    while traj.controls.len() < traj.states.len() {
        traj.controls.push(last.clone().expect("at least one control"));
    }
    traj
}

/// On-policy learning: fresh data under each new gain.
pub fn run_onpolicy<P: Plant>(plant: &mut P, k0: &DMatrix<f64>, cfg: &LearnerConfig) -> Result<LearnerReport> {
    let (n, m) = (plant.state_dim(), plant.control_dim());
    check_dim("rows of K0", m, k0.nrows())?;
    check_dim("columns of K0", n, k0.ncols())?;
    cfg.validate(n, m)?;
    let mut rng = rng_from_seed(cfg.seed);
    let record_every = cfg.record_every;
    let mut driver = Driver::new(plant, &LearnerConfig { record_every: 1, ..cfg.clone() });
    let mut k = k0.clone();
    let mut iterates: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    let mut samples_per_iter = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let policy = behaviour(cfg, &k)?;
        let mut rows = OnPolicyRows::new(n, m);
        loop {
            let seg = driver.window(cfg.n_sub, m, |t, x, u| {
                exploring_control(&cfg.exploration, &policy, &mut rng, t, x, u)
            })?;
            let (row, xi) = collect_onpolicy_window(&seg, &k, &cfg.q, &cfg.r, cfg.lambda)?;
            rows.push(row, xi)?;
            if rows.windows_used() >= rows.unknowns() && rows.rank(cfg.rank_tol) == rows.unknowns() {
                break;
            }
            if rows.windows_used() >= cfg.window_budget {
                return Err(Error::RankStall {
                    windows: rows.windows_used(),
                });
            }
        }
        let (p, k_next) = solve_onpolicy(&rows, cfg.rank_tol)?;
        samples_per_iter.push(rows.windows_used());
        let change = iterates.last().map(|(pp, _)| (&p - pp).norm());
        iterates.push((p, k_next.clone()));
        k = k_next;
        if change.is_some_and(|c| c < cfg.eps_stop) {
            converged = true;
            break;
        }
    }
    finish_report(driver, iterates, samples_per_iter, converged, &k, cfg, record_every)
}

fn finish_report<P: Plant>(
    driver: Driver<'_, P>,
    iterates: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    samples_per_iter: Vec<usize>,
    converged: bool,
    k: &DMatrix<f64>,
    cfg: &LearnerConfig,
    record_every: usize,
) -> Result<LearnerReport> {
    let learning_time = driver.t;
    let (cost, settling, traj) = driver.finish(k, cfg.horizon.max(learning_time))?;
    let total_samples = samples_per_iter.iter().sum();
    Ok(LearnerReport {
        iterates,
        samples_per_iter,
        total_samples,
        learning_time,
        settling_time: settling,
        total_running_cost: cost,
        converged,
        trajectory: tidy(traj, record_every),
    })
}

/// Off-policy learning: one batch under `N(-K0 x, alpha R^{-1})`, then
/// policy iteration on that batch alone.
pub fn run_offpolicy<P: Plant>(plant: &mut P, k0: &DMatrix<f64>, cfg: &LearnerConfig) -> Result<LearnerReport> {
    let (n, m) = (plant.state_dim(), plant.control_dim());
    check_dim("rows of K0", m, k0.nrows())?;
    check_dim("columns of K0", n, k0.ncols())?;
    cfg.validate(n, m)?;
    let mut rng = rng_from_seed(cfg.seed);
    let record_every = cfg.record_every;
    let mut driver = Driver::new(plant, &LearnerConfig { record_every: 1, ..cfg.clone() });
    let policy = behaviour(cfg, k0)?;
    let mut rows = OffPolicyRows::new(n, m);
    loop {
        let seg = driver.window(cfg.n_sub, m, |t, x, u| {
            exploring_control(&cfg.exploration, &policy, &mut rng, t, x, u)
        })?;
        let (d, i1, i2) = collect_offpolicy_window(&seg, cfg.lambda)?;
        rows.push(d, i1, i2)?;
        if rows.windows_used() >= rows.unknowns() && rows.rank(cfg.rank_tol) == rows.unknowns() {
            break;
        }
        if rows.windows_used() >= cfg.window_budget {
            return Err(Error::RankStall {
                windows: rows.windows_used(),
            });
        }
    }
    let mut k = k0.clone();
    let mut iterates: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let (p, k_next) = solve_offpolicy(&rows, &k, &cfg.q, &cfg.r, cfg.rank_tol)?;
        let change = iterates.last().map(|(pp, _)| (&p - pp).norm());
        iterates.push((p, k_next.clone()));
        k = k_next;
        if change.is_some_and(|c| c < cfg.eps_stop) {
            converged = true;
            break;
        }
    }
    let samples = vec![rows.windows_used()];
    finish_report(driver, iterates, samples, converged, &k, cfg, record_every)
}
