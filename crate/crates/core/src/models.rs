//! Benchmark systems used by the experiments, tests and examples.

use crate::dynamics::{
    ControlBox, CostModel, DynamicsModel, Horizon, RunningCost, TerminalCost,
};
use crate::error::Result;

/// Input nonlinearity `u + u^3/3 + sin u` of the Van der Pol benchmarks.
#[inline]
pub fn input_shape(u: f64) -> f64 {
    u + u * u * u / 3.0 + u.sin()
}

#[inline]
fn vdp_second(x1: f64, x2: f64, u: f64) -> f64 {
    -2.0 * (x1 * x1 - 1.0) * x2 - x1 + (2.0 + (x1 * x2).sin()) * input_shape(u)
}

/// Two-state Van der Pol oscillator with a nonlinear scalar input on `U = [-1, 1]`.
pub fn van_der_pol_2d() -> DynamicsModel {
    DynamicsModel::generic(2, 1, |x, u, out| {
        out[0] = x[1];
        out[1] = vdp_second(x[0], x[1], u[0]);
    })
    .with_control_box(ControlBox::symmetric(1, 1.0).expect("valid box"))
    .expect("box matches control dimension")
}

/// The 2-D oscillator with `r = |x| + |u|`, `q = ||x||_1` and temperature `alpha`.
pub fn van_der_pol_benchmark(alpha: f64) -> Result<(DynamicsModel, CostModel)> {
    let cost = CostModel::new(
        RunningCost::generic(|x, u| (x[0] * x[0] + x[1] * x[1]).sqrt() + u[0].abs()),
        TerminalCost::L1Norm,
        alpha,
        0.0,
        Horizon::Finite(0.1),
    )?;
    Ok((van_der_pol_2d(), cost))
}

/// Four-state variant: the oscillator drives a damped linear pair.
pub fn van_der_pol_4d() -> DynamicsModel {
    DynamicsModel::generic(4, 1, |x, u, out| {
        out[0] = x[1];
        out[1] = vdp_second(x[0], x[1], u[0]);
        out[2] = x[3];
        out[3] = -x[2] - 0.2 * x[3] + x[0];
    })
    .with_control_box(ControlBox::symmetric(1, 1.0).expect("valid box"))
    .expect("box matches control dimension")
}

/// The 4-D oscillator with `r = ||x||_1 + |u|` and `q = ||x||_1` on horizon `window`.
pub fn van_der_pol_4d_problem(alpha: f64, window: f64) -> Result<(DynamicsModel, CostModel)> {
    let cost = CostModel::new(
        RunningCost::generic(|x, u| x.iter().map(|v| v.abs()).sum::<f64>() + u[0].abs()),
        TerminalCost::L1Norm,
        alpha,
        0.0,
        Horizon::Finite(window),
    )?;
    Ok((van_der_pol_4d(), cost))
}

/// `f(x, u) = u` on `U = [-1, 1]` with `r = 0` and `q = |x|`; the soft
/// Hamiltonian is `a log((2a/p) sinh(p/a))`, state independent.
pub fn integrator_1d(alpha: f64) -> Result<(DynamicsModel, CostModel)> {
    let model = DynamicsModel::generic(1, 1, |_, u, out| out[0] = u[0])
        .with_control_box(ControlBox::symmetric(1, 1.0)?)?;
    let cost = CostModel::new(
        RunningCost::generic(|_, _| 0.0),
        TerminalCost::L1Norm,
        alpha,
        0.0,
        Horizon::Finite(1.0),
    )?;
    Ok((model, cost))
}

/// Closed form of the integrator's soft Hamiltonian.
pub fn integrator_hamiltonian(p: f64, alpha: f64) -> f64 {
    let z = p.abs() / alpha;
    if z < 1e-8 {
        return alpha * 2f64.ln();
    }
    // a log((2a/|p|) sinh(|p|/a)) = |p| + a log((a/|p|)(1 - e^{-2|p|/a}))
    p.abs() + alpha * ((1.0 - (-2.0 * z).exp()) / z).ln()
}
