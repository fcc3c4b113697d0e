//! Soft Hamiltonian `H_a(x, p) = a log int_U exp(-(p.f(x,u) + r(x,u)) / a) du`,
//! its p-derivatives, the Boltzmann minimiser and the standard Hamiltonian.
//!
//! Every quantity is a weighted sum over one [`QuadratureGrid`]. The
//! exponent is shifted by the smallest node value `L_min`, so
//!
//! ```text
//! H_a = a log sum_i w_i exp(-(L_i - L_min)/a) - L_min
//! ```
//!
//! never overflows, however small `a` is.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{ControlBox, CostModel, DynamicsModel, SimRng};
use crate::error::{check_dim, Error, Result};
use crate::optimize::golden_section_min;
use crate::quadrature::QuadratureGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianReport {
    pub value: f64,
    pub gradient_p: Option<DVector<f64>>,
    pub hessian_p: Option<DMatrix<f64>>,
    /// `log sum_i w_i exp(-(L_i - L_min)/a)`.
    pub log_partition: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Derivatives {
    None,
    Gradient,
    Hessian,
}

/// `f(x, u_i)` and `r(x, u_i)` cached at every node for one state `x`.
///
/// Evaluating the Hamiltonian for many costates at a fixed state only needs
/// these tables, which is what the grid solver relies on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenState {
    n: usize,
    f: Vec<f64>,
    r: Vec<f64>,
}

impl FrozenState {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn field(&self, i: usize) -> &[f64] {
        &self.f[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn cost(&self, i: usize) -> f64 {
        self.r[i]
    }

    #[inline]
    fn exponent(&self, i: usize, p: &[f64]) -> f64 {
        let fi = self.field(i);
        let mut l = self.r[i];
        for k in 0..self.n {
            l += p[k] * fi[k];
        }
        l
    }

    fn min_exponent(&self, p: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        let mut l_min = f64::INFINITY;
        for i in 0..self.r.len() {
            let l = self.exponent(i, p);
            scratch.push(l);
            l_min = l_min.min(l);
        }
        l_min
    }

    /// Value only; the hot path of the solvers.
    pub fn value(&self, p: &[f64], alpha: f64, weights: &[f64]) -> f64 {
        // two passes over the exponents instead of a scratch allocation
        let l_min = (0..self.r.len())
            .map(|i| self.exponent(i, p))
            .fold(f64::INFINITY, f64::min);
        let s: f64 = weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * (-(self.exponent(i, p) - l_min) / alpha).exp())
            .sum();
        alpha * s.ln() - l_min
    }

    /// Value and `grad_p H = -E[f]` written into `grad`.
    pub fn value_grad(&self, p: &[f64], alpha: f64, weights: &[f64], grad: &mut [f64]) -> f64 {
        let l_min = (0..self.r.len())
            .map(|i| self.exponent(i, p))
            .fold(f64::INFINITY, f64::min);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let e = w * (-(self.exponent(i, p) - l_min) / alpha).exp();
            s += e;
            for (g, fk) in grad.iter_mut().zip(self.field(i)) {
                *g -= e * fk;
            }
        }
        grad.iter_mut().for_each(|g| *g /= s);
        alpha * s.ln() - l_min
    }

    pub fn report(
        &self,
        p: &[f64],
        alpha: f64,
        weights: &[f64],
        derivs: Derivatives,
    ) -> HamiltonianReport {
        let n = self.n;
        let mut l = Vec::with_capacity(self.r.len());
        let l_min = self.min_exponent(p, &mut l);
        let unnorm: Vec<f64> = l
            .iter()
            .zip(weights)
            .map(|(li, w)| w * (-(li - l_min) / alpha).exp())
            .collect();
        let s: f64 = unnorm.iter().sum();
        let log_partition = s.ln();
        let value = alpha * log_partition - l_min;
        let (mut gradient_p, mut hessian_p) = (None, None);
        if derivs >= Derivatives::Gradient {
            let mut mean = DVector::zeros(n);
            for (i, e) in unnorm.iter().enumerate() {
                for k in 0..n {
                    mean[k] += e * self.field(i)[k];
                }
            }
            mean /= s;
            if derivs >= Derivatives::Hessian {
                // centred second moment, accumulated directly for accuracy
                let mut cov = DMatrix::zeros(n, n);
                let mut d = vec![0.0; n];
                for (i, e) in unnorm.iter().enumerate() {
                    let pi = e / s;
                    for k in 0..n {
                        d[k] = self.field(i)[k] - mean[k];
                    }
                    for a in 0..n {
                        for b in a..n {
                            cov[(a, b)] += pi * d[a] * d[b];
                        }
                    }
                }
                for a in 0..n {
                    for b in 0..a {
                        cov[(a, b)] = cov[(b, a)];
                    }
                }
                hessian_p = Some(cov / alpha);
            }
            gradient_p = Some(-mean);
        }
        HamiltonianReport {
            value,
            gradient_p,
            hessian_p,
            log_partition,
        }
    }

    /// Boltzmann density at the nodes, normalised so that `sum w_i g_i = 1`,
    /// together with `log g_i` computed without cancellation.
    pub fn density(&self, p: &[f64], alpha: f64, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut l = Vec::with_capacity(self.r.len());
        let l_min = self.min_exponent(p, &mut l);
        let s: f64 = l
            .iter()
            .zip(weights)
            .map(|(li, w)| w * (-(li - l_min) / alpha).exp())
            .sum();
        let log_s = s.ln();
        let log_g: Vec<f64> = l.iter().map(|li| -(li - l_min) / alpha - log_s).collect();
        (log_g.iter().map(|v| v.exp()).collect(), log_g)
    }

    /// `max_i |f(x, u_i)|`, the Lipschitz constant of `H_a(x, .)` on the grid.
    pub fn max_field_norm(&self) -> f64 {
        self.f
            .chunks_exact(self.n.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `max_i ||f(x, u_i)||_1`.
    pub fn max_field_l1(&self) -> f64 {
        self.f
            .chunks_exact(self.n.max(1))
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Model, cost, temperature and grid bundled for repeated evaluation.
#[derive(Clone, Debug)]
pub struct HamContext<'a> {
    model: &'a DynamicsModel,
    cost: &'a CostModel,
    grid: &'a QuadratureGrid,
    alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplacePoint {
    pub alpha: f64,
    pub h_alpha: f64,
    /// `H_a - a log|U|`
    pub h_tilde: f64,
}

impl<'a> HamContext<'a> {
    /// Uses the cost model's temperature.
    pub fn new(
        model: &'a DynamicsModel,
        cost: &'a CostModel,
        grid: &'a QuadratureGrid,
    ) -> Result<Self> {
        check_dim("quadrature grid", model.control_dim(), grid.dim())?;
        if let Some(b) = model.control_box() {
            let covers = grid.iter().all(|(u, _)| b.contains(u));
            if !covers || (grid.control_box().volume() - b.volume()).abs() > 1e-12 * b.volume() {
                return Err(Error::InvalidParameter(
                    "quadrature grid does not match the model's control box".into(),
                ));
            }
        }
        Ok(Self {
            model,
            cost,
            grid,
            alpha: cost.temperature(),
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature alpha must satisfy alpha > 0, got {alpha}"
            )));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn model(&self) -> &'a DynamicsModel {
        self.model
    }

    pub fn cost(&self) -> &'a CostModel {
        self.cost
    }

    pub fn grid(&self) -> &'a QuadratureGrid {
        self.grid
    }

    pub fn control_box(&self) -> &'a ControlBox {
        self.grid.control_box()
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn weights(&self) -> &'a [f64] {
        self.grid.weights()
    }

    pub fn freeze(&self, x: &[f64]) -> Result<FrozenState> {
        check_dim("state", self.model.state_dim(), x.len())?;
        let mut fs = FrozenState::default();
        self.freeze_into(x, &mut fs);
        Ok(fs)
    }

    /// Refills `fs` for state `x`, reusing its buffers; `x` must have length n.
    pub fn freeze_into(&self, x: &[f64], fs: &mut FrozenState) {
        let n = self.model.state_dim();
        let len = self.grid.len();
        fs.n = n;
        fs.f.resize(len * n, 0.0);
        fs.r.resize(len, 0.0);
        for i in 0..len {
            let u = self.grid.node(i);
            self.model.eval_into(x, u, &mut fs.f[i * n..(i + 1) * n]);
            fs.r[i] = self.cost.running.eval(x, u);
        }
    }

    fn check(&self, x: &[f64], p: &[f64]) -> Result<()> {
        check_dim("state", self.model.state_dim(), x.len())?;
        check_dim("costate", self.model.state_dim(), p.len())
    }

    pub fn value(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.check(x, p)?;
        Ok(self.freeze(x)?.value(p, self.alpha, self.weights()))
    }

    pub fn report(&self, x: &[f64], p: &[f64], derivs: Derivatives) -> Result<HamiltonianReport> {
        self.check(x, p)?;
        Ok(self.freeze(x)?.report(p, self.alpha, self.weights(), derivs))
    }

    /// `grad_x H_a` by central differences with step `1e-6 (1 + |x_k|)`.
    pub fn grad_x(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let mut xs = x.to_vec();
        let mut fs = FrozenState::default();
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            xs[k] = x[k] + h;
            self.freeze_into(&xs, &mut fs);
            let up = fs.value(p, self.alpha, self.weights());
            xs[k] = x[k] - h;
            self.freeze_into(&xs, &mut fs);
            let down = fs.value(p, self.alpha, self.weights());
            xs[k] = x[k];
            out[k] = (up - down) / (2.0 * h);
        }
    }

    pub fn boltzmann_density(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.check(x, p)?;
        Ok(self.freeze(x)?.density(p, self.alpha, self.weights()).0)
    }

    /// `-min_u {p.f + r}`: best node, then a local 1-D golden-section search
    /// (m = 1) or coordinate descent (m > 1) over the neighbouring cells.
    pub fn standard_hamiltonian(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.check(x, p)?;
        let n = self.model.state_dim();
        let m = self.grid.dim();
        let mut fbuf = vec![0.0; n];
        let mut objective = |u: &[f64]| {
            self.model.eval_into(x, u, &mut fbuf);
            let mut l = self.cost.running.eval(x, u);
            for k in 0..n {
                l += p[k] * fbuf[k];
            }
            l
        };
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for i in 0..self.grid.len() {
            let l = objective(self.grid.node(i));
            if l < best {
                best = l;
                best_i = i;
            }
        }
        let b = self.control_box();
        let mut u = self.grid.node(best_i).to_vec();
        let sweeps = if m == 1 { 1 } else { 4 };
        for _ in 0..sweeps {
            for d in 0..m {
                let axis = self.grid.axis(d);
                let j = axis.partition_point(|&a| a < u[d]).min(axis.len() - 1);
                let lo = if j == 0 { b.lower()[d] } else { axis[j - 1] };
                let hi = if j + 1 >= axis.len() { b.upper()[d] } else { axis[j + 1] };
                let (lo, hi) = (lo.min(u[d]), hi.max(u[d]));
                let mut trial = u.clone();
                let (ud, ld) = golden_section_min(
                    |s| {
                        trial[d] = s;
                        objective(&trial)
                    },
                    lo,
                    hi,
                    60,
                );
                if ld < best {
                    best = ld;
                    u[d] = ud;
                }
                for s in [lo, hi] {
                    trial.copy_from_slice(&u);
                    trial[d] = s;
                    let v = objective(&trial);
                    if v < best {
                        best = v;
                        u[d] = s;
                    }
                }
            }
        }
        Ok(-best)
    }

    /// `(a, H_a, H_a - a log|U|)` for each temperature in `alphas`.
    pub fn laplace_gap(&self, x: &[f64], p: &[f64], alphas: &[f64]) -> Result<Vec<LaplacePoint>> {
        self.check(x, p)?;
        if alphas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidParameter(
                "temperatures must be strictly decreasing".into(),
            ));
        }
        let fs = self.freeze(x)?;
        let log_vol = self.control_box().volume().ln();
        alphas
            .iter()
            .map(|&a| {
                if !(a > 0.0) {
                    return Err(Error::InvalidParameter(format!("alpha must be > 0, got {a}")));
                }
                let h = fs.value(p, a, self.weights());
                Ok(LaplacePoint {
                    alpha: a,
                    h_alpha: h,
                    h_tilde: h - a * log_vol,
                })
            })
            .collect()
    }

    /// Relative change of `H_a` when the grid is refined once; logs a warning
    /// above `1e-6`.
    pub fn quadrature_self_check(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        let coarse = self.value(x, p)?;
        let fine_grid = self.grid.refined()?;
        let fine = self.freeze(x).map(|_| {
            let mut fs = FrozenState::default();
            let ctx = HamContext {
                grid: &fine_grid,
                ..self.clone()
            };
            ctx.freeze_into(x, &mut fs);
            fs.value(p, self.alpha, fine_grid.weights())
        })?;
        let gap = (coarse - fine).abs() / fine.abs().max(1e-300);
        if gap > 1e-6 {
            log::warn!(
                "soft Hamiltonian quadrature not converged at alpha={}: relative gap {gap:.2e}",
                self.alpha
            );
        }
        Ok(gap)
    }

    /// Draws one control from the Boltzmann density at `(x, p)`.
    ///
    /// One control dimension: exact inverse CDF of the piecewise-constant
    /// density whose cells are bounded by the midpoints between nodes.
    /// Higher dimensions: rejection sampling against the uniform law on `U`
    /// with envelope `e * max_i g_i`.
    pub fn sample_boltzmann(&self, x: &[f64], p: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        self.check(x, p)?;
        let fs = self.freeze(x)?;
        let (g, _) = fs.density(p, self.alpha, self.weights());
        let b = self.control_box();
        if self.grid.dim() == 1 {
            let nodes = self.grid.axis(0);
            let mass: Vec<f64> = g.iter().zip(self.weights()).map(|(gi, w)| gi * w).collect();
            let total: f64 = mass.iter().sum();
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = nodes.len() - 1;
            for (i, mi) in mass.iter().enumerate() {
                acc += mi;
                if target < acc {
                    idx = i;
                    break;
                }
            }
            let lo = if idx == 0 {
                b.lower()[0]
            } else {
                0.5 * (nodes[idx - 1] + nodes[idx])
            };
            let hi = if idx + 1 == nodes.len() {
                b.upper()[0]
            } else {
                0.5 * (nodes[idx] + nodes[idx + 1])
            };
            return Ok(vec![lo + rng.random::<f64>() * (hi - lo)]);
        }
        let n = self.model.state_dim();
        let l_min = (0..self.grid.len())
            .map(|i| fs.exponent(i, p))
            .fold(f64::INFINITY, f64::min);
        let g_max = g.iter().copied().fold(0.0, f64::max);
        // g(u) = exp(-(L(u) - L_min)/a) / S and g_i attains S^-1 at the best node
        let inv_s = g_max;
        let envelope = std::f64::consts::E * g_max;
        let mut fbuf = vec![0.0; n];
        let mut u = vec![0.0; b.dim()];
        for _ in 0..1_000_000 {
            for d in 0..b.dim() {
                u[d] = b.lower()[d] + rng.random::<f64>() * (b.upper()[d] - b.lower()[d]);
            }
            self.model.eval_into(x, &u, &mut fbuf);
            let mut l = self.cost.running.eval(x, &u);
            for k in 0..n {
                l += p[k] * fbuf[k];
            }
            let gu = inv_s * (-(l - l_min) / self.alpha).exp();
            if rng.random::<f64>() * envelope <= gu.min(envelope) {
                return Ok(u);
            }
        }
        Err(Error::NoConvergence {
            iterations: 1_000_000,
            last_change: f64::NAN,
        })
    }
}

/// `H_a(x, p)` with gradient and Hessian as requested.
pub fn soft_hamiltonian(
    model: &DynamicsModel,
    cost: &CostModel,
    x: &[f64],
    p: &[f64],
    alpha: f64,
    grid: &QuadratureGrid,
    derivs: Derivatives,
) -> Result<HamiltonianReport> {
    HamContext::new(model, cost, grid)?
        .with_alpha(alpha)?
        .report(x, p, derivs)
}

/// `sum_i w_i g_i log(g_i |U|)`, the KL divergence of a grid density from uniform.
pub fn kl_on_grid(density: &[f64], grid: &QuadratureGrid) -> f64 {
    let vol = grid.control_box().volume();
    density
        .iter()
        .zip(grid.weights())
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, w)| w * g * (g * vol).ln())
        .sum()
}

/// `-sum_i w_i g_i log g_i`.
pub fn grid_entropy(density: &[f64], grid: &QuadratureGrid) -> f64 {
    -density
        .iter()
        .zip(grid.weights())
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, w)| w * g * g.ln())
        .sum::<f64>()
}
