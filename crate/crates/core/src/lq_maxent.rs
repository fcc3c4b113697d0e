//! Closed-form maximum-entropy LQ control.
//!
//! For `x' = Ax + Bu`, `r = 1/2 x^T Q x + 1/2 u^T R u` and discount `lambda`,
//! the optimal relaxed control is `N(-R^{-1} B^T P x, alpha R^{-1})` where `P`
//! solves the usual discounted Riccati equation: the entropy bonus leaves
//! the gain untouched and only adds a constant to the value,
//!
//! ```text
//! V(x) = 1/2 x^T P x - (alpha / 2 lambda) log((2 pi alpha)^m / det R).
//! ```

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{Family, DynamicsModel, GaussianPolicy, rng_from_seed};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

#[derive(Clone, Debug, PartialEq)]
pub struct LqProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

/// Outcome of the numerical rank tests on `(A - lambda/2 I, B)` and `(A - lambda/2 I, Q^{1/2})`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssumptionReport {
    pub controllable: bool,
    pub observable: bool,
}

impl LqProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        check_dim("columns of A", n, a.ncols())?;
        check_dim("rows of B", n, b.nrows())?;
        check_dim("rows of Q", n, q.nrows())?;
        check_dim("columns of Q", n, q.ncols())?;
        check_dim("rows of R", m, r.nrows())?;
        check_dim("columns of R", m, r.ncols())?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature alpha must satisfy alpha > 0, got {alpha}"
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "discount lambda must satisfy lambda >= 0, got {lambda}"
            )));
        }
        if linalg::asymmetry(&q) > 1e-12 {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        let q_scale = q.norm().max(1.0);
        if n > 0 && linalg::min_sym_eigenvalue(&q) < -1e-12 * q_scale {
            return Err(Error::InvalidParameter("Q must be positive semidefinite".into()));
        }
        if linalg::asymmetry(&r) > 1e-12 || r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("control weight R"));
        }
        let prob = Self {
            a,
            b,
            q,
            r,
            lambda,
            alpha,
        };
        let rep = prob.check_assumptions();
        if !rep.controllable {
            log::warn!("(A - lambda/2 I, B) failed the numerical controllability rank test");
        }
        if !rep.observable {
            log::warn!("(A - lambda/2 I, Q^1/2) failed the numerical observability rank test");
        }
        Ok(prob)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A - (lambda/2) I`
    pub fn shifted_a(&self) -> DMatrix<f64> {
        &self.a - DMatrix::identity(self.state_dim(), self.state_dim()) * (0.5 * self.lambda)
    }

    /// SVD rank tests (tolerance `1e-8 sigma_max`) of the controllability and
    /// observability matrices of the shifted system.
    pub fn check_assumptions(&self) -> AssumptionReport {
        let n = self.state_dim();
        let a = self.shifted_a();
        let m = self.control_dim();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
            blk = &a * blk;
        }
        // Q^{1/2} through the symmetric eigendecomposition
        let eig = self.q.clone().symmetric_eigen();
        let sqrt_q = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
            * eig.eigenvectors.transpose();
        let mut obsv = DMatrix::zeros(n * n, n);
        let mut blk = sqrt_q;
        for k in 0..n {
            obsv.view_mut((k * n, 0), (n, n)).copy_from(&blk);
            blk *= &a;
        }
        AssumptionReport {
            controllable: linalg::numerical_rank(&ctrb, 1e-8) == n,
            observable: linalg::numerical_rank(&obsv, 1e-8) == n,
        }
    }

    /// `A - BK`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * k
    }

    /// Spectral abscissa of `A - lambda/2 I - BK`; negative means the
    /// discounted closed loop is stable.
    pub fn shifted_abscissa(&self, k: &DMatrix<f64>) -> f64 {
        linalg::spectral_abscissa(&self.closed_loop(k)) - 0.5 * self.lambda
    }
}

/// Solves `A_cl^T P + P A_cl - lambda P + M = 0` for symmetric `P`.
///
/// The operator is assembled on the `n(n+1)/2` svec coordinates of `P` and
/// solved by dense LU.
pub fn solve_lyapunov(a_cl: &DMatrix<f64>, lambda: f64, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    check_dim("columns of A_cl", n, a_cl.ncols())?;
    check_dim("rows of M", n, m.nrows())?;
    check_dim("columns of M", n, m.ncols())?;
    let abscissa = linalg::spectral_abscissa(a_cl) - 0.5 * lambda;
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz { abscissa });
    }
    let dim = linalg::svec_len(n);
    let mut op = DMatrix::zeros(dim, dim);
    let mut col = 0;
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let img = a_cl.transpose() * &e + &e * a_cl - e * lambda;
            op.set_column(col, &linalg::svec(&img));
            col += 1;
        }
    }
    let rhs = -linalg::svec(&((m + m.transpose()) * 0.5));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("Lyapunov operator"))?;
    Ok(linalg::unsvec(sol.as_slice(), n))
}

/// Frobenius norm of `A_cl^T P + P A_cl - lambda P + M`.
pub fn lyapunov_residual(a_cl: &DMatrix<f64>, lambda: f64, m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (a_cl.transpose() * p + p * a_cl - p * lambda + m).norm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Frobenius residual of the Riccati equation at `p`.
    pub residual: f64,
    pub iterations: usize,
    /// `(P_k, K_{k+1})` for every iteration.
    pub trace: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// `|| lambda P + P B R^{-1} B^T P - Q - P A - A^T P ||_F`.
pub fn are_residual(prob: &LqProblem, p: &DMatrix<f64>) -> Result<f64> {
    let r_inv = linalg::spd_inverse(&prob.r, "control weight R")?;
    let res = p * prob.lambda + p * &prob.b * r_inv * prob.b.transpose() * p
        - &prob.q
        - p * &prob.a
        - prob.a.transpose() * p;
    Ok(res.norm())
}

pub const KLEINMAN_MAX_ITERS: usize = 500;

/// Kleinman policy iteration from the stabilising gain `k0`.
pub fn kleinman_iterate(prob: &LqProblem, k0: &DMatrix<f64>, tol: f64) -> Result<RiccatiSolution> {
    check_dim("rows of K0", prob.control_dim(), k0.nrows())?;
    check_dim("columns of K0", prob.state_dim(), k0.ncols())?;
    let r_inv = linalg::spd_inverse(&prob.r, "control weight R")?;
    let bt_over_r = &r_inv * prob.b.transpose();
    let mut k = k0.clone();
    let mut prev: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    for it in 1..=KLEINMAN_MAX_ITERS {
        let a_cl = prob.closed_loop(&k);
        let m = &prob.q + k.transpose() * &prob.r * &k;
        let p = solve_lyapunov(&a_cl, prob.lambda, &m)?;
        let p = (&p + p.transpose()) * 0.5;
        k = &bt_over_r * &p;
        trace.push((p.clone(), k.clone()));
        if let Some(pp) = &prev {
            last_change = (&p - pp).norm();
            if last_change < tol {
                let residual = are_residual(prob, &p)?;
                return Ok(RiccatiSolution {
                    p,
                    k,
                    residual,
                    iterations: it,
                    trace,
                });
            }
        }
        prev = Some(p);
    }
    Err(Error::NoConvergence {
        iterations: KLEINMAN_MAX_ITERS,
        last_change,
    })
}

/// The scalar Riccati root `P = [(2a - l) + sqrt((2a - l)^2 + 4 b^2 q / r)] / (2 b^2 / r)`.
pub fn scalar_riccati(a: f64, b: f64, q: f64, r: f64, lambda: f64) -> f64 {
    let c = 2.0 * a - lambda;
    let k = b * b / r;
    (c + (c * c + 4.0 * k * q).sqrt()) / (2.0 * k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxEntLqPolicy {
    pub gain: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub value_quadratic: DMatrix<f64>,
    pub value_constant: f64,
}

impl MaxEntLqPolicy {
    /// `V(x) = 1/2 x^T P x + c`.
    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * crate::dynamics::quad_form(&self.value_quadratic, x) + self.value_constant
    }

    pub fn gaussian(&self) -> Result<GaussianPolicy> {
        GaussianPolicy::new(self.gain.clone(), self.covariance.clone())
    }
}

/// `log((2 pi alpha)^m / det R)`.
fn log_normaliser(alpha: f64, r: &DMatrix<f64>) -> Result<f64> {
    let m = r.nrows() as f64;
    Ok(m * (2.0 * std::f64::consts::PI * alpha).ln() - linalg::spd_log_det(r, "control weight R")?)
}

/// Optimal Gaussian policy and value constants from a Riccati solution.
pub fn maxent_policy(prob: &LqProblem, riccati: &RiccatiSolution) -> Result<MaxEntLqPolicy> {
    if !(prob.lambda > 0.0) {
        return Err(Error::InvalidParameter(
            "the value constant needs lambda > 0; evaluate finite-horizon costs by simulation instead"
                .into(),
        ));
    }
    let r_inv = linalg::spd_inverse(&prob.r, "control weight R")?;
    let covariance = (&r_inv + r_inv.transpose()) * (0.5 * prob.alpha);
    Ok(MaxEntLqPolicy {
        gain: riccati.k.clone(),
        covariance,
        value_quadratic: riccati.p.clone(),
        value_constant: -(prob.alpha / (2.0 * prob.lambda)) * log_normaliser(prob.alpha, &prob.r)?,
    })
}

/// Residual of the discounted soft HJB equation for `V = 1/2 x^T P x + c` at `x`.
pub fn soft_hjb_residual(prob: &LqProblem, policy: &MaxEntLqPolicy, x: &[f64]) -> Result<f64> {
    let xv = DVector::from_column_slice(x);
    let grad = &policy.value_quadratic * &xv;
    let r_inv = linalg::spd_inverse(&prob.r, "control weight R")?;
    let bt_grad = prob.b.transpose() * &grad;
    let quad = 0.5 * (bt_grad.transpose() * &r_inv * &bt_grad)[0];
    let running = 0.5 * (xv.transpose() * &prob.q * &xv)[0];
    let drift = (grad.transpose() * &prob.a * &xv)[0];
    Ok(prob.lambda * policy.value(x) + quad - running - drift
        + 0.5 * prob.alpha * log_normaliser(prob.alpha, &prob.r)?)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct QuantitativeGaps {
    /// Squared 2-Wasserstein distance between the optimal Gaussian and the
    /// deterministic optimal control: `alpha tr(R^{-1})`.
    pub w2_sq: f64,
    /// Entropy of the optimal policy: `1/2 log((2 pi alpha)^m / det R) + m/2`.
    pub entropy_per_time: f64,
    /// Extra pure running cost `m alpha / (2 lambda)`; absent when `lambda = 0`.
    pub pure_cost_overhead: Option<f64>,
}

pub fn quantitative_gaps(prob: &LqProblem) -> Result<QuantitativeGaps> {
    let m = prob.control_dim() as f64;
    let r_inv = linalg::spd_inverse(&prob.r, "control weight R")?;
    Ok(QuantitativeGaps {
        w2_sq: prob.alpha * r_inv.trace(),
        entropy_per_time: 0.5 * log_normaliser(prob.alpha, &prob.r)? + 0.5 * m,
        pure_cost_overhead: (prob.lambda > 0.0).then(|| m * prob.alpha / (2.0 * prob.lambda)),
    })
}

/// Mean and covariance of the optimal policy of a control-affine system at `x`,
/// `N(-R^{-1} f2(x)^T grad V0(x), alpha R^{-1})`.
pub fn control_affine_policy(
    model: &DynamicsModel,
    grad_v0: &[f64],
    r: &DMatrix<f64>,
    alpha: f64,
    x: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dim("state", n, x.len())?;
    check_dim("value gradient", n, grad_v0.len())?;
    check_dim("rows of R", m, r.nrows())?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    let f2 = match model.family() {
        Family::ControlAffine { input, .. } => {
            let mut g = DMatrix::zeros(n, m);
            input(x, &mut g);
            g
        }
        Family::Linear { b, .. } => b.clone(),
        Family::Generic(_) => return Err(Error::UnsupportedFamily("generic")),
    };
    let r_inv = linalg::spd_inverse(r, "control weight R")?;
    let mean = -(&r_inv * f2.transpose() * DVector::from_column_slice(grad_v0));
    Ok((mean, r_inv * alpha))
}

/// Random `(A, B)` with every eigenvalue of `A` at real part `<= -0.01`
/// (attained by the rightmost one) and `B` scaled by `0.1`.
pub fn random_system(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = rng_from_seed(seed);
    let mut draw = |rows, cols| {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    };
    let a0: DMatrix<f64> = draw(n, n);
    let b: DMatrix<f64> = draw(n, m) * 0.1;
    let shift = linalg::spectral_abscissa(&a0) + 0.01;
    let a = a0 - DMatrix::identity(n, n) * shift;
    (a, b)
}
