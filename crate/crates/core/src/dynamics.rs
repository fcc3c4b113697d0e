//! Systems, costs and sampled execution of relaxed (randomised) controls.
//!
//! A relaxed control is a probability density over the control set; the
//! state moves with the control-averaged vector field. It is executed here
//! by the sampled scheme
//!
//! ```text
//! x_{k+1} = x_k + h f(x_k, u_k),   u_k ~ g(t_k, .),   h = dt^2
//! ```
//!
//! which converges to the relaxed trajectory almost surely as `dt -> 0`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::quadrature::QuadratureGrid;

/// Seedable, counter-based generator used by every stochastic routine.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Axis-aligned compact control set `U = [lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("control box upper bound", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidParameter("control box must have dimension >= 1".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "control box requires lower[{i}] < upper[{i}], got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-half_width, half_width]^m`.
    pub fn symmetric(m: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; m], vec![half_width; m])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Lebesgue volume `|U|`.
    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (v, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// `f(x, u)` written into the output slice.
pub type VectorField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// State-only drift `f1(x)`.
pub type StateField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Input matrix `f2(x)` (n x m), written in place.
pub type InputMatrixField = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;

/// Structural family of a vector field.
#[derive(Clone)]
pub enum Family {
    Generic(VectorField),
    /// `f(x, u) = f1(x) + f2(x) u`
    ControlAffine {
        drift: StateField,
        input: InputMatrixField,
    },
    /// `f(x, u) = A x + B u`
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Generic(_) => "generic",
            Family::ControlAffine { .. } => "control-affine",
            Family::Linear { .. } => "linear",
        }
    }
}

/// Deterministic vector field `x' = f(x, u)`.
#[derive(Clone)]
pub struct DynamicsModel {
    state_dim: usize,
    control_dim: usize,
    family: Family,
    one_sided_lipschitz: Option<f64>,
    control_box: Option<ControlBox>,
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsModel")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("family", &self.family.name())
            .field("one_sided_lipschitz", &self.one_sided_lipschitz)
            .field("control_box", &self.control_box)
            .finish()
    }
}

impl DynamicsModel {
    pub fn generic<F>(state_dim: usize, control_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            state_dim,
            control_dim,
            family: Family::Generic(Arc::new(f)),
            one_sided_lipschitz: None,
            control_box: None,
        }
    }

    pub fn control_affine<D, G>(state_dim: usize, control_dim: usize, drift: D, input: G) -> Self
    where
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
    {
        Self {
            state_dim,
            control_dim,
            family: Family::ControlAffine {
                drift: Arc::new(drift),
                input: Arc::new(input),
            },
            one_sided_lipschitz: None,
            control_box: None,
        }
    }

    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidParameter("A must be square".into()));
        }
        check_dim("rows of B", a.nrows(), b.nrows())?;
        Ok(Self {
            state_dim: a.nrows(),
            control_dim: b.ncols(),
            family: Family::Linear { a, b },
            one_sided_lipschitz: None,
            control_box: None,
        })
    }

    pub fn with_control_box(mut self, control_box: ControlBox) -> Result<Self> {
        check_dim("control box", self.control_dim, control_box.dim())?;
        self.control_box = Some(control_box);
        Ok(self)
    }

    pub fn with_one_sided_lipschitz(mut self, l: f64) -> Self {
        self.one_sided_lipschitz = Some(l);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn one_sided_lipschitz(&self) -> Option<f64> {
        self.one_sided_lipschitz
    }

    pub fn control_box(&self) -> Option<&ControlBox> {
        self.control_box.as_ref()
    }

    /// Unchecked evaluation into `out`; callers guarantee the dimensions.
    #[inline]
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Generic(f) => f(x, u, out),
            Family::ControlAffine { drift, input } => {
                drift(x, out);
                let mut g = DMatrix::zeros(self.state_dim, self.control_dim);
                input(x, &mut g);
                for i in 0..self.state_dim {
                    for j in 0..self.control_dim {
                        out[i] += g[(i, j)] * u[j];
                    }
                }
            }
            Family::Linear { a, b } => {
                for i in 0..self.state_dim {
                    let mut acc = 0.0;
                    for j in 0..self.state_dim {
                        acc += a[(i, j)] * x[j];
                    }
                    for j in 0..self.control_dim {
                        acc += b[(i, j)] * u[j];
                    }
                    out[i] = acc;
                }
            }
        }
    }
}

/// `f(x, u)` with dimension checks.
pub fn eval_dynamics(model: &DynamicsModel, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim, x.len())?;
    check_dim("control", model.control_dim, u.len())?;
    let mut out = DVector::zeros(model.state_dim);
    model.eval_into(x, u, out.as_mut_slice());
    Ok(out)
}

pub type RunningFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Running cost `r(x, u)`.
#[derive(Clone)]
pub enum RunningCost {
    Generic(RunningFn),
    /// `1/2 x^T Q x + 1/2 u^T R u`
    Quadratic { q: DMatrix<f64>, r: DMatrix<f64> },
}

impl RunningCost {
    pub fn generic<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        RunningCost::Generic(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            RunningCost::Generic(f) => f(x, u),
            RunningCost::Quadratic { q, r } => 0.5 * quad_form(q, x) + 0.5 * quad_form(r, u),
        }
    }
}

/// Terminal cost `q(x)`.
#[derive(Clone)]
pub enum TerminalCost {
    Generic(TerminalFn),
    /// `||x||_1`
    L1Norm,
    /// `1/2 x^T M x`
    Quadratic(DMatrix<f64>),
}

impl TerminalCost {
    pub fn generic<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TerminalCost::Generic(Arc::new(f))
    }

    pub fn zero() -> Self {
        TerminalCost::generic(|_| 0.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TerminalCost::Generic(f) => f(x),
            TerminalCost::L1Norm => x.iter().map(|v| v.abs()).sum(),
            TerminalCost::Quadratic(m) => 0.5 * quad_form(m, x),
        }
    }
}

#[inline]
pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

/// Running and terminal cost together with temperature `alpha` and discount `lambda`.
#[derive(Clone)]
pub struct CostModel {
    pub running: RunningCost,
    pub terminal: TerminalCost,
    temperature: f64,
    discount: f64,
    pub horizon: Horizon,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("temperature", &self.temperature)
            .field("discount", &self.discount)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl CostModel {
    pub fn new(
        running: RunningCost,
        terminal: TerminalCost,
        temperature: f64,
        discount: f64,
        horizon: Horizon,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature alpha must satisfy alpha > 0, got {temperature}"
            )));
        }
        if !(discount >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "discount lambda must satisfy lambda >= 0, got {discount}"
            )));
        }
        if let Horizon::Finite(t) = horizon {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("horizon must be > 0, got {t}")));
            }
        }
        if let RunningCost::Quadratic { q, r } = &running {
            if !q.is_square() || !r.is_square() {
                return Err(Error::InvalidParameter("Q and R must be square".into()));
            }
            if linalg::asymmetry(r) > 1e-12 || r.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite("control weight R"));
            }
        }
        Ok(Self {
            running,
            terminal,
            temperature,
            discount,
            horizon,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Same costs with a different temperature.
    pub fn with_temperature(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.running.clone(),
            self.terminal.clone(),
            alpha,
            self.discount,
            self.horizon,
        )
    }
}

/// Feedback law `u ~ N(-K x, Sigma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianPolicy {
    pub fn new(gain: DMatrix<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = gain.nrows();
        check_dim("covariance rows", m, covariance.nrows())?;
        check_dim("covariance cols", m, covariance.ncols())?;
        let scale = covariance.abs().max();
        if (covariance.clone() - covariance.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite("policy covariance is not symmetric"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("policy covariance"))?
            .l();
        Ok(Self {
            gain,
            covariance,
            chol,
        })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn control_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    /// `-K x`
    pub fn mean(&self, x: &[f64]) -> DVector<f64> {
        -(&self.gain * DVector::from_column_slice(x))
    }

    pub fn sample_into(&self, x: &[f64], rng: &mut SimRng, out: &mut [f64]) {
        let m = self.control_dim();
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..m {
            let mut v = 0.0;
            for j in 0..self.state_dim() {
                v -= self.gain[(i, j)] * x[j];
            }
            for j in 0..=i {
                v += self.chol[(i, j)] * z[j];
            }
            out[i] = v;
        }
    }
}

/// Sampled states and the control held on each step.
///
/// `controls[k]` is the control applied on `[times[k], times[k+1])`; the last
/// entry is the control drawn at the final state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Appends `other`, dropping its first sample (which duplicates our last state).
    pub fn extend_with(&mut self, other: Trajectory) {
        let skip = usize::from(!self.is_empty());
        if skip == 1 {
            // the control actually applied from the junction is the one from `other`
            if let (Some(last), Some(first)) = (self.controls.last_mut(), other.controls.first()) {
                *last = first.clone();
            }
        }
        self.times.extend(other.times.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        self.controls.extend(other.controls.into_iter().skip(skip));
    }

    /// CSV with header `t,x_0..x_{n-1},u_0..u_{m-1}` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.controls[k].iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Reads the CSV produced by [`Trajectory::write_csv`]; the seed is not stored.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory CSV".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Parse("trajectory CSV must start with column `t`".into()));
        }
        let n = cols.iter().filter(|c| c.starts_with("x_")).count();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let mut traj = Trajectory {
            times: vec![],
            states: vec![],
            controls: vec![],
            seed: 0,
        };
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != 1 + n + m {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 2,
                    1 + n + m,
                    vals.len()
                )));
            }
            traj.times.push(vals[0]);
            traj.states.push(DVector::from_column_slice(&vals[1..1 + n]));
            traj.controls.push(DVector::from_column_slice(&vals[1 + n..]));
        }
        Ok(traj)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sampled-control simulation with an arbitrary control law.
///
/// `control(t, x, rng, u)` writes the control held on the next step of length
/// `h`; states are advanced by explicit Euler.
pub fn simulate_with<C>(
    model: &DynamicsModel,
    x0: &[f64],
    h: f64,
    steps: usize,
    seed: u64,
    mut control: C,
) -> Result<Trajectory>
where
    C: FnMut(f64, &[f64], &mut SimRng, &mut [f64]) -> Result<()>,
{
    check_dim("initial state", model.state_dim(), x0.len())?;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be > 0, got {h}")));
    }
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut rng = rng_from_seed(seed);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        seed,
    };
    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut fx = vec![0.0; n];
    for k in 0..=steps {
        let t = k as f64 * h;
        control(t, &x, &mut rng, &mut u)?;
        traj.times.push(t);
        traj.states.push(DVector::from_column_slice(&x));
        traj.controls.push(DVector::from_column_slice(&u));
        if k == steps {
            break;
        }
        model.eval_into(&x, &u, &mut fx);
        for i in 0..n {
            x[i] += h * fx[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedTrajectory { step: k + 1 });
        }
    }
    Ok(traj)
}

/// Executes `N(-K x, Sigma)` with the sampled scheme at substep `dt^2`.
pub fn simulate_sampled(
    model: &DynamicsModel,
    policy: &GaussianPolicy,
    x0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_dim("policy gain rows", model.control_dim(), policy.control_dim())?;
    check_dim("policy gain cols", model.state_dim(), policy.state_dim())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    simulate_with(model, x0, dt * dt, steps, seed, |_, x, rng, u| {
        policy.sample_into(x, rng, u);
        Ok(())
    })
}

/// Mean drift of the relaxed system under a Gaussian policy.
///
/// For control-affine and linear systems the drift only sees the policy mean.
pub fn relaxed_drift(
    model: &DynamicsModel,
    x: &[f64],
    policy: &GaussianPolicy,
) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    if let Family::Generic(_) = model.family() {
        return Err(Error::UnsupportedFamily("generic"));
    }
    let mean = policy.mean(x);
    eval_dynamics(model, x, mean.as_slice())
}

/// Differential entropy `1/2 log det(2 pi e Sigma)` of a Gaussian.
pub fn gaussian_entropy(covariance: &DMatrix<f64>) -> Result<f64> {
    if !covariance.is_square() {
        return Err(Error::InvalidParameter("covariance must be square".into()));
    }
    let m = covariance.nrows() as f64;
    let log_det = linalg::spd_log_det(covariance, "covariance")?;
    Ok(0.5 * (m * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det))
}

/// KL divergence from the uniform density on `U`, given the entropy `H`.
pub fn kl_from_uniform(entropy: f64, control_box: &ControlBox) -> f64 {
    control_box.volume().ln() - entropy
}

#[derive(Clone, Copy, Debug)]
pub struct CostEvalOptions<'a> {
    /// Sampling interval; the simulator substep is `dt^2`.
    pub dt: f64,
    /// Target for the truncated tail of an infinite-horizon integral.
    pub tail_tol: f64,
    /// Needed when the running cost has no closed-form Gaussian expectation.
    pub grid: Option<&'a QuadratureGrid>,
}

impl Default for CostEvalOptions<'_> {
    fn default() -> Self {
        Self {
            dt: 0.05,
            tail_tol: 1e-6,
            grid: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    /// Integration horizon actually used.
    pub horizon: f64,
    /// Bound on the discarded tail (zero for finite horizons).
    pub tail_bound: f64,
    pub entropy: f64,
}

/// Expected running cost of the policy at `x`, excluding the entropy term.
fn expected_running_cost(
    cost: &CostModel,
    policy: &GaussianPolicy,
    x: &[f64],
    grid: Option<&QuadratureGrid>,
) -> Result<f64> {
    match &cost.running {
        RunningCost::Quadratic { q, r } => {
            let kx = policy.gain() * DVector::from_column_slice(x);
            let tr = (r * policy.covariance()).trace();
            Ok(0.5 * quad_form(q, x) + 0.5 * tr + 0.5 * quad_form(r, kx.as_slice()))
        }
        RunningCost::Generic(rfn) => {
            let grid = grid.ok_or(Error::MissingGrid(
                "generic running cost under a Gaussian policy",
            ))?;
            let mean = policy.mean(x);
            let prec = linalg::spd_inverse(policy.covariance(), "policy covariance")?;
            let m = policy.control_dim();
            let (mut num, mut den) = (0.0, 0.0);
            let mut d = vec![0.0; m];
            for (u, w) in grid.iter() {
                for i in 0..m {
                    d[i] = u[i] - mean[i];
                }
                let dens = (-0.5 * quad_form(&prec, &d)).exp();
                num += w * dens * rfn(x, u);
                den += w * dens;
            }
            if den == 0.0 {
                return Err(Error::InvalidParameter(
                    "Gaussian policy has no mass on the quadrature grid".into(),
                ));
            }
            Ok(num / den)
        }
    }
}

/// Sampled-trajectory estimate of the entropy-regularised cost of `policy`.
///
/// The entropy of a Gaussian is state independent, so the integrand is
/// `E_g[r(x, .)] - alpha H(g)` evaluated along one sampled trajectory and
/// integrated with the trapezoid rule, discounted by `exp(-lambda s)`.
pub fn evaluate_cost(
    model: &DynamicsModel,
    cost: &CostModel,
    policy: &GaussianPolicy,
    x0: &[f64],
    seed: u64,
    opts: &CostEvalOptions<'_>,
) -> Result<CostEstimate> {
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", opts.dt)));
    }
    let entropy = gaussian_entropy(policy.covariance())?;
    let alpha = cost.temperature();
    let lambda = cost.discount();
    let h = opts.dt * opts.dt;
    let (horizon, tail_bound, finite) = match cost.horizon {
        Horizon::Finite(t) => (t, 0.0, true),
        Horizon::Infinite => {
            if lambda <= 0.0 {
                return Err(Error::InvalidParameter(
                    "infinite-horizon cost requires discount lambda > 0".into(),
                ));
            }
            let state_part = expected_running_cost(cost, policy, x0, opts.grid)?;
            let bound = 2.0 * (state_part.abs() + alpha * entropy.abs()).max(1e-300);
            let t = ((bound / (lambda * opts.tail_tol)).ln() / lambda).max(h);
            (t, bound * (-lambda * t).exp() / lambda, false)
        }
    };
    let steps = ((horizon / h).round() as usize).max(1);
    let traj = simulate_sampled(model, policy, x0, opts.dt, steps, seed)?;
    let mut integral = 0.0;
    let mut prev: Option<f64> = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let val = (-lambda * t).exp()
            * (expected_running_cost(cost, policy, x.as_slice(), opts.grid)? - alpha * entropy);
        if let Some(p) = prev {
            integral += 0.5 * h * (p + val);
        }
        prev = Some(val);
    }
    if finite {
        integral += cost.terminal.eval(traj.final_state().as_slice());
    }
    Ok(CostEstimate {
        value: integral,
        horizon: steps as f64 * h,
        tail_bound,
        entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn lin(a: &[f64], b: &[f64], n: usize, m: usize) -> DynamicsModel {
        DynamicsModel::linear(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_row_slice(n, m, b),
        )
        .unwrap()
    }

    #[test]
    fn linear_zero_drift_identity_input() {
        let model = lin(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        let out = eval_dynamics(&model, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = lin(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(matches!(
            eval_dynamics(&model, &[1.0], &[3.0, 4.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn van_der_pol_field() {
        let model = models::van_der_pol_2d();
        let out = eval_dynamics(&model, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);

        // hand substitution at x = (1, 1), u = 0.5
        let u: f64 = 0.5;
        let expected2 = -2.0 * (1.0 - 1.0) * 1.0 - 1.0
            + (2.0 + 1.0f64.sin()) * (u + u.powi(3) / 3.0 + u.sin());
        let out = eval_dynamics(&model, &[1.0, 1.0], &[u]).unwrap();
        assert_eq!(out[0], 1.0);
        assert!((out[1] - expected2).abs() < 1e-15);
        assert!((out[1] - 1.901_f64).abs() < 1e-3);
    }

    #[test]
    fn relaxed_drift_linear_cases() {
        let a = [0.5, 1.0, -1.0, 0.0];
        let model = lin(&a, &[1.0, 0.0, 0.0, 1.0], 2, 2);
        let zero = GaussianPolicy::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let d = relaxed_drift(&model, &[1.0, 2.0], &zero).unwrap();
        assert_eq!(d.as_slice(), &[0.5 + 2.0, -1.0]);

        let model = lin(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        let k = GaussianPolicy::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let d = relaxed_drift(&model, &[1.0, -1.0], &k).unwrap();
        assert_eq!(d.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn relaxed_drift_rejects_generic() {
        let model = models::van_der_pol_2d();
        let p = GaussianPolicy::new(DMatrix::zeros(1, 2), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(
            relaxed_drift(&model, &[0.1, 0.2], &p),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn relaxed_drift_matches_monte_carlo_mean() {
        // f1 = (x2, -x1), f2 = (0, 2 + sin(x1 x2)): a scalar input channel
        let model = DynamicsModel::control_affine(
            2,
            1,
            |x, out| {
                out[0] = x[1];
                out[1] = -x[0];
            },
            |x, g| {
                g[(0, 0)] = 0.0;
                g[(1, 0)] = 2.0 + (x[0] * x[1]).sin();
            },
        );
        let x = [0.7, -1.3];
        let policy = GaussianPolicy::new(
            DMatrix::from_row_slice(1, 2, &[0.4, -0.9]),
            DMatrix::from_element(1, 1, 0.8),
        )
        .unwrap();
        let exact = relaxed_drift(&model, &x, &policy).unwrap();
        let mut rng = rng_from_seed(99);
        let samples = 100_000;
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut u = [0.0];
        let mut f = [0.0; 2];
        for _ in 0..samples {
            policy.sample_into(&x, &mut rng, &mut u);
            model.eval_into(&x, &u, &mut f);
            for i in 0..2 {
                mean[i] += f[i];
                sq[i] += f[i] * f[i];
            }
        }
        for i in 0..2 {
            let mu = mean[i] / samples as f64;
            let var = sq[i] / samples as f64 - mu * mu;
            let sigma = (var.max(0.0) / samples as f64).sqrt();
            assert!(
                (mu - exact[i]).abs() <= 3.0 * sigma + 1e-9,
                "component {i}: mc {mu} vs exact {}",
                exact[i]
            );
        }
    }

    #[test]
    fn zero_steps_is_the_initial_state() {
        let model = lin(&[-1.0], &[1.0], 1, 1);
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let traj = simulate_sampled(&model, &p, &[2.0], 0.1, 0, 1).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states[0].as_slice(), &[2.0]);
    }

    #[test]
    fn vanishing_covariance_is_deterministic_euler() {
        let a = [-0.3, 1.0, -1.0, -0.2];
        let model = lin(&a, &[0.0, 1.0], 2, 1);
        let k = DMatrix::from_row_slice(1, 2, &[0.5, 0.7]);
        let p = GaussianPolicy::new(k.clone(), DMatrix::from_element(1, 1, 1e-18)).unwrap();
        let dt = 0.05;
        let steps = 800;
        let traj = simulate_sampled(&model, &p, &[1.0, -0.5], dt, steps, 3).unwrap();
        let am = DMatrix::from_row_slice(2, 2, &a);
        let bm = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut x = DVector::from_column_slice(&[1.0, -0.5]);
        for kstep in 0..=steps {
            assert!((&x - &traj.states[kstep]).amax() < 1e-6);
            x = &x + (&am * &x - &bm * (&k * &x)) * (dt * dt);
        }
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let model = lin(&[-1.0], &[1.0], 1, 1);
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1e-18))
            .unwrap();
        for &dt in &[0.1f64, 0.05] {
            let steps = (1.0 / (dt * dt)).ceil() as usize;
            let traj = simulate_sampled(&model, &p, &[1.0], dt, steps, 0).unwrap();
            let t_end = steps as f64 * dt * dt;
            let err = (traj.final_state()[0] - (-t_end).exp()).abs();
            assert!(err < dt * dt, "dt={dt}: err={err}");
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = models::van_der_pol_2d();
        let p = GaussianPolicy::new(
            DMatrix::from_row_slice(1, 2, &[0.3, 0.1]),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let a = simulate_sampled(&model, &p, &[0.5, 0.1], 0.1, 200, 11).unwrap();
        let b = simulate_sampled(&model, &p, &[0.5, 0.1], 0.1, 200, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_sampled(&model, &p, &[0.5, 0.1], 0.1, 200, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_reports_step() {
        let model = DynamicsModel::generic(1, 1, |x, _u, out| out[0] = x[0] * x[0] * 1e300);
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let err = simulate_sampled(&model, &p, &[10.0], 1.0, 10, 0).unwrap_err();
        assert!(matches!(err, Error::DivergedTrajectory { step } if step >= 1));
    }

    #[test]
    fn entropy_values() {
        let h1 = gaussian_entropy(&DMatrix::identity(1, 1)).unwrap();
        assert!((h1 - 1.418939).abs() < 1e-6);
        let h2 = gaussian_entropy(&DMatrix::identity(2, 2)).unwrap();
        assert!((h2 - 2.837877).abs() < 1e-6);
        assert!(gaussian_entropy(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn entropy_scaling() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let base = gaussian_entropy(&s).unwrap();
        for &c in &[0.5, 2.0, 10.0] {
            let scaled = gaussian_entropy(&(s.clone() * c)).unwrap();
            assert!((scaled - base - 1.5 * f64::ln(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_identities() {
        let b = ControlBox::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let log_vol = 6.0f64.ln();
        assert_eq!(kl_from_uniform(log_vol, &b), 0.0);
        assert!((kl_from_uniform(log_vol - 1.0, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn control_box_validation() {
        assert!(ControlBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(ControlBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        let b = ControlBox::symmetric(2, 1.0).unwrap();
        assert_eq!(b.volume(), 4.0);
        assert!(b.contains(&[0.5, -1.0]));
        assert!(!b.contains(&[1.5, 0.0]));
    }

    #[test]
    fn constant_integrand_cost() {
        // r = 0, q = 0, entropy constant: cost = -alpha H T
        let model = lin(&[-1.0], &[1.0], 1, 1);
        let cost = CostModel::new(
            RunningCost::generic(|_, _| 0.0),
            TerminalCost::zero(),
            0.7,
            0.0,
            Horizon::Finite(2.0),
        )
        .unwrap();
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 0.3))
            .unwrap();
        let grid = QuadratureGrid::gauss_legendre(&ControlBox::symmetric(1, 3.0).unwrap(), 32)
            .unwrap();
        let opts = CostEvalOptions {
            dt: 0.1,
            tail_tol: 1e-6,
            grid: Some(&grid),
        };
        let est = evaluate_cost(&model, &cost, &p, &[1.0], 4, &opts).unwrap();
        let c = 0.7 * gaussian_entropy(p.covariance()).unwrap();
        assert!((est.value + c * 2.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn doubling_alpha_is_linear_in_the_entropy_term() {
        let model = lin(&[-0.5, 0.2, 0.0, -1.0], &[0.0, 1.0], 2, 1);
        let running = RunningCost::Quadratic {
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
        };
        let mk = |alpha| {
            CostModel::new(running.clone(), TerminalCost::zero(), alpha, 0.3, Horizon::Finite(3.0))
                .unwrap()
        };
        let p = GaussianPolicy::new(
            DMatrix::from_row_slice(1, 2, &[0.2, 0.4]),
            DMatrix::from_element(1, 1, 0.6),
        )
        .unwrap();
        let opts = CostEvalOptions {
            dt: 0.1,
            ..Default::default()
        };
        let j1 = evaluate_cost(&model, &mk(0.5), &p, &[1.0, 1.0], 8, &opts).unwrap();
        let j2 = evaluate_cost(&model, &mk(1.0), &p, &[1.0, 1.0], 8, &opts).unwrap();
        // -alpha * int e^{-lambda s} H ds
        let h = j1.entropy;
        let steps = (3.0 / 0.01_f64).round() as usize;
        let mut disc = 0.0;
        for k in 0..steps {
            let (a, b) = (k as f64 * 0.01, (k + 1) as f64 * 0.01);
            disc += 0.5 * 0.01 * ((-0.3 * a).exp() + (-0.3 * b).exp());
        }
        assert!(((j2.value - j1.value) - (-0.5 * h * disc)).abs() < 1e-10);
    }

    #[test]
    fn infinite_horizon_requires_discount() {
        let model = lin(&[-1.0], &[1.0], 1, 1);
        let cost = CostModel::new(
            RunningCost::Quadratic {
                q: DMatrix::identity(1, 1),
                r: DMatrix::identity(1, 1),
            },
            TerminalCost::zero(),
            1.0,
            0.0,
            Horizon::Infinite,
        )
        .unwrap();
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(evaluate_cost(&model, &cost, &p, &[1.0], 0, &CostEvalOptions::default()).is_err());
    }

    #[test]
    fn generic_running_cost_needs_grid() {
        let model = lin(&[-1.0], &[1.0], 1, 1);
        let cost = CostModel::new(
            RunningCost::generic(|x, u| x[0].abs() + u[0].abs()),
            TerminalCost::zero(),
            1.0,
            0.0,
            Horizon::Finite(1.0),
        )
        .unwrap();
        let p = GaussianPolicy::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(
            evaluate_cost(&model, &cost, &p, &[1.0], 0, &CostEvalOptions::default()),
            Err(Error::MissingGrid(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let model = lin(&[-1.0, 0.0, 0.0, -1.0], &[1.0, 0.0], 2, 1);
        let p = GaussianPolicy::new(DMatrix::zeros(1, 2), DMatrix::identity(1, 1)).unwrap();
        let traj = simulate_sampled(&model, &p, &[1.0, 0.1], 0.1, 3, 5).unwrap();
        let csv = traj.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x_0,x_1,u_0");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[1], "1.0000000000000000e0");
        let back = Trajectory::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!(back.controls, traj.controls);
    }
}
