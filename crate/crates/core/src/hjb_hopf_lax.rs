//! Grid-free evaluation of `W_t + H_a(x, grad W) = 0`, `W(0) = q`, through
//! the generalized Hopf–Lax representations along bi-characteristics
//!
//! ```text
//! gamma' = grad_p H_a(gamma, p),   gamma(t) = x
//! p'     = -grad_x H_a(gamma, p),  p(t)     = v
//! ```
//!
//! and feedback synthesis from the optimizing costate.
//!
//! Min form: `min_v q(gamma(0)) + int_0^t [p.grad_p H - H] ds`.
//! Max form: `max_v x.v - q*(p(0)) - int_0^t [H - gamma.grad_x H] ds`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{rng_from_seed, simulate_with, TerminalCost, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::hjb_godunov::{Grid2D, GridFunction};
use crate::optimize::nelder_mead;
use crate::soft_hamiltonian::{FrozenState, HamContext};

/// States whose norm exceeds this are treated as blown up.
pub const BLOW_UP_NORM: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formula {
    MinForm,
    MaxForm,
}

/// Box and resolution for a numerical Legendre transform of a generic `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HopfLaxConfig {
    /// Largest RK4 step; at least four steps are always taken.
    pub ode_step: f64,
    pub n_starts: usize,
    pub start_radius: f64,
    pub simplex_iters: usize,
    /// Edge length of each initial simplex.
    pub simplex_scale: f64,
    pub simplex_tol: f64,
    pub formula: Formula,
    pub seed: u64,
    /// Needed by the max form when `q` is generic.
    pub legendre_search: Option<SearchBox>,
}

impl Default for HopfLaxConfig {
    fn default() -> Self {
        Self {
            ode_step: 0.025,
            n_starts: 16,
            start_radius: 5.0,
            simplex_iters: 200,
            simplex_scale: 0.5,
            simplex_tol: 1e-10,
            formula: Formula::MinForm,
            seed: 0,
            legendre_search: None,
        }
    }
}

impl HopfLaxConfig {
    fn validate(&self) -> Result<()> {
        if !(self.ode_step > 0.0) || self.n_starts == 0 || !(self.start_radius > 0.0) || !(self.simplex_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "Hopf-Lax config needs ode_step > 0, n_starts >= 1, start_radius > 0, simplex_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Samples of `(gamma, p)` on `[0, t]`, forward-indexed.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicCurve {
    pub s_grid: Vec<f64>,
    pub gamma: Vec<DVector<f64>>,
    pub costate: Vec<DVector<f64>>,
    /// Time at which the backward integration left the finite region.
    pub blown_up: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub argmin_v: DVector<f64>,
    /// `p(t) = v*`, the proxy for `grad_x W(t, x)`.
    pub costate_at_t: DVector<f64>,
    /// Fraction of starts that never produced a finite objective.
    pub blown_up_fraction: f64,
    pub evaluations: usize,
}

/// Conjugate value and whether it came from a numerical search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub approximate: bool,
}

/// `q*(v) = sup_x x.v - q(x)`.
pub fn legendre_transform(q: &TerminalCost, v: &[f64], search: Option<&SearchBox>) -> Result<Conjugate> {
    let exact = |value| Ok(Conjugate { value, approximate: false });
    match q {
        TerminalCost::L1Norm => exact(if v.iter().all(|c| c.abs() <= 1.0) { 0.0 } else { f64::INFINITY }),
        TerminalCost::Quadratic(m) => {
            check_dim("costate", m.nrows(), v.len())?;
            let chol = m
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite("terminal weight M"))?;
            let y = chol.solve(&DVector::from_column_slice(v));
            exact(0.5 * y.dot(&DVector::from_column_slice(v)))
        }
        TerminalCost::Generic(f) => {
            let b = search.ok_or_else(|| {
                Error::InvalidParameter("the Legendre transform of a generic q needs a search box".into())
            })?;
            check_dim("search box", v.len(), b.lower.len())?;
            check_dim("search box", v.len(), b.upper.len())?;
            let k = b.points_per_dim.max(2);
            let n = v.len();
            let total = k.checked_pow(n as u32).ok_or_else(|| {
                Error::InvalidParameter("Legendre search grid too large".into())
            })?;
            let mut x = vec![0.0; n];
            let mut best = f64::NEG_INFINITY;
            for idx in 0..total {
                let mut rem = idx;
                for d in (0..n).rev() {
                    let c = rem % k;
                    rem /= k;
                    x[d] = b.lower[d] + (b.upper[d] - b.lower[d]) * c as f64 / (k - 1) as f64;
                }
                let val: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - f(&x);
                best = best.max(val);
            }
            Ok(Conjugate {
                value: best,
                approximate: true,
            })
        }
    }
}

/// Right-hand side evaluator with reusable buffers.
struct Flow<'c, 'a> {
    ctx: &'c HamContext<'a>,
    fs: FrozenState,
    shifted: Vec<f64>,
}

/// `H`, `grad_p H`, `grad_x H` at one point.
struct Local {
    h: f64,
    gp: Vec<f64>,
    gx: Vec<f64>,
}

impl<'c, 'a> Flow<'c, 'a> {
    fn new(ctx: &'c HamContext<'a>) -> Self {
        Self {
            ctx,
            fs: FrozenState::default(),
            shifted: vec![0.0; ctx.state_dim()],
        }
    }

    fn eval(&mut self, x: &[f64], p: &[f64]) -> Local {
        let n = x.len();
        let (alpha, w) = (self.ctx.alpha(), self.ctx.weights());
        self.ctx.freeze_into(x, &mut self.fs);
        let mut gp = vec![0.0; n];
        let h = self.fs.value_grad(p, alpha, w, &mut gp);
        let mut gx = vec![0.0; n];
        self.shifted.copy_from_slice(x);
        for k in 0..n {
            let step = 1e-6 * (1.0 + x[k].abs());
            self.shifted[k] = x[k] + step;
            self.ctx.freeze_into(&self.shifted, &mut self.fs);
            let up = self.fs.value(p, alpha, w);
            self.shifted[k] = x[k] - step;
            self.ctx.freeze_into(&self.shifted, &mut self.fs);
            let down = self.fs.value(p, alpha, w);
            self.shifted[k] = x[k];
            gx[k] = (up - down) / (2.0 * step);
        }
        Local { h, gp, gx }
    }
}

/// Curve plus both running integrals, accumulated by the same RK4 stages.
struct Traced {
    curve: CharacteristicCurve,
    /// `int_0^t [p.grad_p H - H] ds`
    int_min: f64,
    /// `int_0^t [H - gamma.grad_x H] ds`
    int_max: f64,
}

fn finite_and_bounded(z: &[f64], n: usize) -> bool {
    z.iter().all(|v| v.is_finite()) && z[..n].iter().map(|v| v * v).sum::<f64>().sqrt() <= BLOW_UP_NORM
}

fn trace(ctx: &HamContext<'_>, x: &[f64], v: &[f64], t: f64, ode_step: f64) -> Traced {
    let n = x.len();
    let steps = ((t / ode_step) - 1e-9).ceil().max(4.0) as usize;
    let h = t / steps as f64;
    let mut flow = Flow::new(ctx);
    // z = (gamma, p), stepped from s = t down to s = 0
    let mut z: Vec<f64> = x.iter().chain(v).copied().collect();
    let mut zs = vec![z.clone()];
    let mut blown_up = None;
    // derivative of (gamma, p) and the two integrands at one stage
    let rhs = |flow: &mut Flow, z: &[f64]| -> (Vec<f64>, f64, f64) {
        let loc = flow.eval(&z[..n], &z[n..]);
        let mut d = loc.gp.clone();
        d.extend(loc.gx.iter().map(|g| -g));
        let p_gp: f64 = z[n..].iter().zip(&loc.gp).map(|(a, b)| a * b).sum();
        let g_gx: f64 = z[..n].iter().zip(&loc.gx).map(|(a, b)| a * b).sum();
        (d, p_gp - loc.h, loc.h - g_gx)
    };
    let axpy = |z: &[f64], a: f64, d: &[f64]| -> Vec<f64> { z.iter().zip(d).map(|(zi, di)| zi + a * di).collect() };
    let (mut int_min, mut int_max) = (0.0, 0.0);
    for k in 0..steps {
        let (k1, a1, b1) = rhs(&mut flow, &z);
        let (k2, a2, b2) = rhs(&mut flow, &axpy(&z, -0.5 * h, &k1));
        let (k3, a3, b3) = rhs(&mut flow, &axpy(&z, -0.5 * h, &k2));
        let (k4, a4, b4) = rhs(&mut flow, &axpy(&z, -h, &k3));
        for i in 0..2 * n {
            z[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        int_min += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        int_max += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        zs.push(z.clone());
        if !finite_and_bounded(&z, n) {
            blown_up = Some(t - (k + 1) as f64 * h);
            break;
        }
    }
    let m = zs.len();
    // zs[k] sits at s = t - k h; store forward
    let mut s_grid: Vec<f64> = (0..m).map(|k| (t - (m - 1 - k) as f64 * h).max(0.0)).collect();
    s_grid[m - 1] = t;
    if blown_up.is_none() {
        s_grid[0] = 0.0;
    }
    let mut gamma = Vec::with_capacity(m);
    let mut costate = Vec::with_capacity(m);
    for zk in zs.iter().rev() {
        gamma.push(DVector::from_column_slice(&zk[..n]));
        costate.push(DVector::from_column_slice(&zk[n..]));
    }
    Traced {
        curve: CharacteristicCurve {
            s_grid,
            gamma,
            costate,
            blown_up,
        },
        int_min,
        int_max,
    }
}

/// Fixed-step RK4 solution of the bi-characteristic system.
pub fn integrate_characteristics(
    ctx: &HamContext<'_>,
    x: &[f64],
    v: &[f64],
    t: f64,
    config: &HopfLaxConfig,
) -> Result<CharacteristicCurve> {
    check_dim("state", ctx.state_dim(), x.len())?;
    check_dim("costate", ctx.state_dim(), v.len())?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("characteristics need t > 0, got {t}")));
    }
    config.validate()?;
    Ok(trace(ctx, x, v, t, config.ode_step).curve)
}

/// Objective for the minimiser: the min-form functional, or minus the max-form one.
/// `None` when the curve blew up; `+inf` when `q*` is infinite.
fn objective(
    ctx: &HamContext<'_>,
    q: &TerminalCost,
    x: &[f64],
    v: &[f64],
    t: f64,
    config: &HopfLaxConfig,
) -> Option<f64> {
    let tr = trace(ctx, x, v, t, config.ode_step);
    if tr.curve.blown_up.is_some() {
        return None;
    }
    let c = &tr.curve;
    match config.formula {
        Formula::MinForm => Some(q.eval(c.gamma[0].as_slice()) + tr.int_min),
        Formula::MaxForm => {
            let conj = legendre_transform(q, c.costate[0].as_slice(), config.legendre_search.as_ref()).ok()?;
            if conj.value.is_infinite() {
                return Some(f64::INFINITY);
            }
            let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            Some(-(xv - conj.value - tr.int_max))
        }
    }
}

/// `W(t, x)` with the configured representation.
pub fn hopf_lax_value(
    ctx: &HamContext<'_>,
    q: &TerminalCost,
    x: &[f64],
    t: f64,
    config: &HopfLaxConfig,
) -> Result<ValueEstimate> {
    hopf_lax_value_with_hints(ctx, q, x, t, config, &[])
}

/// As [`hopf_lax_value`], with extra starting costates tried before the random ones.
pub fn hopf_lax_value_with_hints(
    ctx: &HamContext<'_>,
    q: &TerminalCost,
    x: &[f64],
    t: f64,
    config: &HopfLaxConfig,
    hints: &[Vec<f64>],
) -> Result<ValueEstimate> {
    let n = ctx.state_dim();
    check_dim("state", n, x.len())?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("Hopf-Lax query needs t > 0, got {t}")));
    }
    config.validate()?;
    if config.formula == Formula::MaxForm {
        if let TerminalCost::Generic(_) = q {
            if config.legendre_search.is_none() {
                return Err(Error::InvalidParameter(
                    "the max form with a generic q needs a Legendre search box".into(),
                ));
            }
        }
    }
    for h in hints {
        check_dim("hint costate", n, h.len())?;
    }
    let mut rng = rng_from_seed(config.seed);
    let mut starts: Vec<Vec<f64>> = hints.to_vec();
    for _ in 0..config.n_starts {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
        let radius = config.start_radius * rng.random::<f64>().powf(1.0 / n as f64);
        starts.push(dir.iter().map(|d| d / norm * radius).collect());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let (mut blown, mut evaluations, mut saw_feasible) = (0usize, 0usize, false);
    for start in &starts {
        let mut any_finite = false;
        let res = nelder_mead(
            |v| match objective(ctx, q, x, v, t, config) {
                Some(val) => {
                    any_finite |= val.is_finite();
                    val
                }
                None => f64::INFINITY,
            },
            start,
            config.simplex_scale,
            config.simplex_iters,
            config.simplex_tol,
        );
        evaluations += res.evaluations;
        if !any_finite || !res.value.is_finite() {
            blown += 1;
            continue;
        }
        saw_feasible = true;
        let better = match &best {
            None => true,
            Some((bv, bx)) => {
                res.value < *bv
                    || (res.value == *bv && res.x.partial_cmp(bx) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((res.value, res.x));
        }
    }
    let (val, v) = match best {
        Some(b) => b,
        None if config.formula == Formula::MaxForm && !all_blew_up(ctx, q, x, t, config, &starts) => {
            return Err(Error::InfeasibleTransform)
        }
        None => return Err(Error::AllCharacteristicsBlewUp),
    };
    debug_assert!(saw_feasible);
    let value = match config.formula {
        Formula::MinForm => val,
        Formula::MaxForm => -val,
    };
    let v = DVector::from_vec(v);
    Ok(ValueEstimate {
        value,
        costate_at_t: v.clone(),
        argmin_v: v,
        blown_up_fraction: blown as f64 / starts.len() as f64,
        evaluations,
    })
}

/// Whether every start's curve blew up, as opposed to landing where `q* = +inf`.
fn all_blew_up(
    ctx: &HamContext<'_>,
    q: &TerminalCost,
    x: &[f64],
    t: f64,
    config: &HopfLaxConfig,
    starts: &[Vec<f64>],
) -> bool {
    starts.iter().all(|s| objective(ctx, q, x, s, t, config).is_none())
}

/// Boltzmann density on the quadrature grid, with `v*` standing in for `grad_x W`.
pub fn synthesize_feedback(ctx: &HamContext<'_>, estimate: &ValueEstimate, x: &[f64]) -> Result<Vec<f64>> {
    if estimate.blown_up_fraction >= 1.0 {
        return Err(Error::AllCharacteristicsBlewUp);
    }
    ctx.boltzmann_density(x, estimate.costate_at_t.as_slice())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecedingHorizonConfig {
    pub hopf_lax: HopfLaxConfig,
    /// Sampling interval of the control; the state advances by Euler steps of `control_dt^2`.
    pub control_dt: f64,
    /// How often the value is re-solved; in between, the held costate is
    /// re-used at the current state.
    pub resynth_interval: f64,
    pub seed: u64,
}

impl Default for RecedingHorizonConfig {
    fn default() -> Self {
        Self {
            hopf_lax: HopfLaxConfig {
                ode_step: 0.1,
                n_starts: 4,
                start_radius: 1.0,
                simplex_iters: 80,
                simplex_tol: 1e-6,
                ..HopfLaxConfig::default()
            },
            control_dt: 0.1,
            resynth_interval: 0.25,
            seed: 0,
        }
    }
}

/// Successive finite-horizon problems of length `window_t` covering `total_t`.
pub fn receding_horizon_control(
    ctx: &HamContext<'_>,
    x0: &[f64],
    total_t: f64,
    window_t: f64,
    config: &RecedingHorizonConfig,
) -> Result<Trajectory> {
    check_dim("initial state", ctx.state_dim(), x0.len())?;
    if !(window_t > 0.0 && total_t > 0.0) {
        return Err(Error::InvalidParameter("horizons must be > 0".into()));
    }
    let windows = (total_t / window_t).round();
    if (windows * window_t - total_t).abs() > 1e-9 || windows < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "window {window_t} does not divide the horizon {total_t}"
        )));
    }
    if !(config.control_dt > 0.0 && config.resynth_interval > 0.0) {
        return Err(Error::InvalidParameter("control_dt and resynth_interval must be > 0".into()));
    }
    let h = config.control_dt * config.control_dt;
    let steps = (total_t / h).round() as usize;
    let per_window = (window_t / h).round() as usize;
    let per_resynth = ((config.resynth_interval / h).round() as usize).max(1);
    let q = &ctx.cost().terminal;
    let mut costate: Vec<f64> = vec![0.0; ctx.state_dim()];
    let mut query = 0u64;
    simulate_with(ctx.model(), x0, h, steps, config.seed, |_, x, rng, u| {
        // the step index is recovered from the number of controls drawn so far
        let k = query_step(&mut query);
        let in_window = k % per_window;
        if in_window.is_multiple_of(per_resynth) {
            let remaining = (per_window - in_window) as f64 * h;
            let mut hl = config.hopf_lax.clone();
            hl.seed = config.hopf_lax.seed.wrapping_add(k as u64);
            let est = hopf_lax_value_with_hints(ctx, q, x, remaining, &hl, &[costate.clone()])?;
            costate = est.costate_at_t.as_slice().to_vec();
        }
        let sample = ctx.sample_boltzmann(x, &costate, rng)?;
        u.copy_from_slice(&sample);
        Ok(())
    })
}

fn query_step(counter: &mut u64) -> usize {
    let k = *counter as usize;
    *counter += 1;
    k
}

/// Where a value surface is evaluated: a 2-D slice through `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSpec {
    pub grid: Grid2D,
    pub base: Vec<f64>,
    pub axes: (usize, usize),
}

impl SurfaceSpec {
    pub fn planar(grid: Grid2D) -> Self {
        Self {
            grid,
            base: vec![0.0, 0.0],
            axes: (0, 1),
        }
    }
}

/// `W(t, .)` on a grid, swept in serpentine order so each query is warm
/// started from its neighbour's optimal costate.
pub fn value_surface<P: FnMut(usize, usize)>(
    ctx: &HamContext<'_>,
    q: &TerminalCost,
    t: f64,
    spec: &SurfaceSpec,
    config: &HopfLaxConfig,
    mut progress: P,
) -> Result<GridFunction> {
    let n = ctx.state_dim();
    check_dim("surface base point", n, spec.base.len())?;
    if spec.axes.0 >= n || spec.axes.1 >= n || spec.axes.0 == spec.axes.1 {
        return Err(Error::InvalidParameter("surface axes must be two distinct state indices".into()));
    }
    let g = spec.grid;
    let mut values = vec![0.0; g.len()];
    let mut row_start: Option<Vec<f64>> = None;
    let mut last: Option<Vec<f64>> = None;
    let mut x = spec.base.clone();
    for j in 0..g.ny {
        let cols: Vec<usize> = if j % 2 == 0 {
            (0..g.nx).collect()
        } else {
            (0..g.nx).rev().collect()
        };
        for (c, &i) in cols.iter().enumerate() {
            x[spec.axes.0] = g.x(i);
            x[spec.axes.1] = g.y(j);
            let hints: Vec<Vec<f64>> = last.iter().chain(row_start.iter().filter(|_| c == 0)).cloned().collect();
            let est = hopf_lax_value_with_hints(ctx, q, &x, t, config, &hints)?;
            values[g.index(i, j)] = est.value;
            last = Some(est.argmin_v.as_slice().to_vec());
            if c == 0 {
                row_start = last.clone();
            }
        }
        progress(j + 1, g.ny);
    }
    Ok(GridFunction {
        grid: g,
        values,
        time: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlBox, CostModel, DynamicsModel, Horizon, RunningCost};
    use crate::models;
    use crate::quadrature::QuadratureGrid;
    use nalgebra::DMatrix;

    fn integrator(alpha: f64) -> (DynamicsModel, CostModel, QuadratureGrid) {
        let (m, c) = models::integrator_1d(alpha).unwrap();
        let g = QuadratureGrid::composite_gauss_legendre(m.control_box().unwrap(), 64, 8).unwrap();
        (m, c, g)
    }

    /// `f = u`, `r = u^2 / 2` on `[-1, 1]`, `q = |x|^2 / 2`: smooth and state independent.
    fn smooth_family() -> (DynamicsModel, CostModel, QuadratureGrid) {
        let m = DynamicsModel::generic(1, 1, |_, u, out| out[0] = u[0])
            .with_control_box(ControlBox::symmetric(1, 1.0).unwrap())
            .unwrap();
        let c = CostModel::new(
            RunningCost::generic(|_, u| 0.5 * u[0] * u[0]),
            TerminalCost::Quadratic(DMatrix::identity(1, 1)),
            0.5,
            0.0,
            Horizon::Finite(1.0),
        )
        .unwrap();
        let g = QuadratureGrid::gauss_legendre(m.control_box().unwrap(), 24).unwrap();
        (m, c, g)
    }

    #[test]
    fn legendre_examples() {
        let l1 = TerminalCost::L1Norm;
        assert_eq!(legendre_transform(&l1, &[0.5, -0.5], None).unwrap().value, 0.0);
        assert_eq!(legendre_transform(&l1, &[1.5, 0.0], None).unwrap().value, f64::INFINITY);
        let quad = TerminalCost::Quadratic(DMatrix::identity(2, 2));
        let c = legendre_transform(&quad, &[0.3, -2.0], None).unwrap();
        assert!((c.value - 0.5 * (0.09 + 4.0)).abs() < 1e-14 && !c.approximate);
        let gen = TerminalCost::generic(|x| 0.5 * x[0] * x[0]);
        assert!(legendre_transform(&gen, &[0.3], None).is_err());
        let b = SearchBox {
            lower: vec![-2.0],
            upper: vec![2.0],
            points_per_dim: 4001,
        };
        let c = legendre_transform(&gen, &[0.3], Some(&b)).unwrap();
        assert!(c.approximate && (c.value - 0.045).abs() < 1e-6);
    }

    #[test]
    fn state_independent_costate_is_constant() {
        let (m, c, g) = integrator(0.5);
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let curve = integrate_characteristics(&ctx, &[0.3], &[0.8], 1.0, &HopfLaxConfig::default()).unwrap();
        assert!(curve.costate.iter().all(|p| p[0] == 0.8));
        assert_eq!(curve.gamma.last().unwrap()[0], 0.3);
        assert_eq!(curve.s_grid[0], 0.0);
        assert_eq!(*curve.s_grid.last().unwrap(), 1.0);
        // gamma(0) = x - t H'(v)
        let hp = ctx.report(&[0.0], &[0.8], crate::soft_hamiltonian::Derivatives::Gradient).unwrap();
        let expect = 0.3 - hp.gradient_p.unwrap()[0];
        assert!((curve.gamma[0][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_hamiltonian_curves_are_fixed() {
        let m = DynamicsModel::generic(2, 1, |_, _, out| out.fill(0.0))
            .with_control_box(ControlBox::symmetric(1, 1.0).unwrap())
            .unwrap();
        let c = CostModel::new(RunningCost::generic(|_, _| 0.0), TerminalCost::L1Norm, 1.0, 0.0, Horizon::Finite(1.0))
            .unwrap();
        let g = QuadratureGrid::gauss_legendre(m.control_box().unwrap(), 4).unwrap();
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let curve = integrate_characteristics(&ctx, &[1.0, -2.0], &[0.5, 0.1], 0.7, &HopfLaxConfig::default()).unwrap();
        for (gm, p) in curve.gamma.iter().zip(&curve.costate) {
            assert_eq!(gm.as_slice(), &[1.0, -2.0]);
            assert_eq!(p.as_slice(), &[0.5, 0.1]);
        }
    }

    #[test]
    fn eikonal_values() {
        let (m, c, g) = integrator(0.01);
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let cfg = HopfLaxConfig {
            n_starts: 6,
            start_radius: 2.0,
            ..HopfLaxConfig::default()
        };
        let t = 0.5;
        for &x in &[-1.3, -0.7, -0.2, 0.0, 0.4, 0.9, 1.6] {
            let est = hopf_lax_value(&ctx, &TerminalCost::L1Norm, &[x], t, &cfg).unwrap();
            let exact = (x.abs() - t).max(0.0);
            assert!((est.value - exact).abs() < 0.05, "x={x}: {} vs {exact}", est.value);
        }
        let tiny = hopf_lax_value(&ctx, &TerminalCost::L1Norm, &[0.6], 1e-4, &cfg).unwrap();
        assert!((tiny.value - 0.6).abs() < 1e-3);
    }

    #[test]
    fn min_and_max_forms_agree() {
        let (m, c, g) = smooth_family();
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let q = c.terminal.clone();
        let min_cfg = HopfLaxConfig {
            n_starts: 4,
            start_radius: 2.0,
            ..HopfLaxConfig::default()
        };
        let max_cfg = HopfLaxConfig {
            formula: Formula::MaxForm,
            ..min_cfg.clone()
        };
        for &x in &[-1.5, -0.3, 0.0, 0.8] {
            let a = hopf_lax_value(&ctx, &q, &[x], 0.6, &min_cfg).unwrap();
            let b = hopf_lax_value(&ctx, &q, &[x], 0.6, &max_cfg).unwrap();
            assert!((a.value - b.value).abs() < 1e-3, "x={x}: {} vs {}", a.value, b.value);
            // classical Hopf formula at the optimum
            let v = b.argmin_v[0];
            let classical = x * v - 0.5 * v * v - 0.6 * ctx.value(&[x], &[v]).unwrap();
            assert!((classical - b.value).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_and_determinism() {
        let (m, c, g) = integrator(0.5);
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let cfg = HopfLaxConfig {
            formula: Formula::MaxForm,
            n_starts: 2,
            start_radius: 50.0,
            simplex_scale: 0.01,
            simplex_iters: 5,
            seed: 1,
            ..HopfLaxConfig::default()
        };
        assert!(matches!(
            hopf_lax_value(&ctx, &TerminalCost::L1Norm, &[0.2], 0.5, &cfg),
            Err(Error::InfeasibleTransform)
        ));
        let cfg = HopfLaxConfig {
            n_starts: 3,
            seed: 9,
            ..HopfLaxConfig::default()
        };
        let a = hopf_lax_value(&ctx, &TerminalCost::L1Norm, &[0.2], 0.5, &cfg).unwrap();
        let b = hopf_lax_value(&ctx, &TerminalCost::L1Norm, &[0.2], 0.5, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feedback_densities() {
        let (m, c, g) = integrator(1.0);
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let est = |p: f64| ValueEstimate {
            value: 0.0,
            argmin_v: DVector::from_element(1, p),
            costate_at_t: DVector::from_element(1, p),
            blown_up_fraction: 0.0,
            evaluations: 0,
        };
        let flat = synthesize_feedback(&ctx, &est(0.0), &[0.0]).unwrap();
        assert!(flat.iter().all(|d| (d - 0.5).abs() < 1e-12));
        let tilted = synthesize_feedback(&ctx, &est(1.0), &[0.0]).unwrap();
        let norm = std::f64::consts::E - 1.0 / std::f64::consts::E;
        for (i, d) in tilted.iter().enumerate() {
            let u = g.node(i)[0];
            assert!((d - (-u).exp() / norm).abs() < 1e-10);
        }
        let mass: f64 = tilted.iter().zip(g.weights()).map(|(d, w)| d * w).sum();
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rk4_step_halving_ratio() {
        let (m, c) = models::van_der_pol_benchmark(1.0).unwrap();
        let g = QuadratureGrid::composite_gauss_legendre(m.control_box().unwrap(), 2, 8).unwrap();
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let x = [0.4, -0.3];
        let v = [0.5, 0.8];
        let val = |step: f64| {
            let cfg = HopfLaxConfig {
                ode_step: step,
                ..HopfLaxConfig::default()
            };
            objective(&ctx, &c.terminal, &x, &v, 0.8, &cfg).unwrap()
        };
        let (a, b, cc) = (val(0.2), val(0.1), val(0.05));
        let ratio = (a - b).abs() / (b - cc).abs();
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn receding_horizon_degenerate_cases() {
        let m = DynamicsModel::generic(2, 1, |_, _, out| out.fill(0.0))
            .with_control_box(ControlBox::symmetric(1, 1.0).unwrap())
            .unwrap();
        let c = CostModel::new(RunningCost::generic(|_, _| 0.0), TerminalCost::zero(), 1.0, 0.0, Horizon::Finite(1.0))
            .unwrap();
        let g = QuadratureGrid::gauss_legendre(m.control_box().unwrap(), 4).unwrap();
        let ctx = HamContext::new(&m, &c, &g).unwrap();
        let cfg = RecedingHorizonConfig {
            control_dt: 0.2,
            resynth_interval: 0.2,
            ..RecedingHorizonConfig::default()
        };
        let tr = receding_horizon_control(&ctx, &[0.3, -0.1], 0.4, 0.2, &cfg).unwrap();
        assert!(tr.states.iter().all(|s| s.as_slice() == [0.3, -0.1]));
        assert!(receding_horizon_control(&ctx, &[0.3, -0.1], 0.5, 0.2, &cfg).is_err());
        let single = receding_horizon_control(&ctx, &[0.3, -0.1], 0.2, 0.2, &cfg).unwrap();
        assert_eq!(single.times, tr.times[..single.times.len()].to_vec());
    }
}
