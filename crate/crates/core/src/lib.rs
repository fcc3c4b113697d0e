//! Maximum-entropy optimal control for continuous-time deterministic systems.
//!
//! The crate evaluates soft Hamiltonians and their Boltzmann policies by
//! quadrature, solves soft HJB equations both grid-free (generalized
//! Hopf–Lax with bi-characteristics) and on a grid (Godunov), gives the
//! closed-form linear-quadratic solution, and learns that solution from
//! trajectory data with on- and off-policy adaptive dynamic programming.
//!
//! ```
//! use maxent_hjb::prelude::*;
//!
//! // f(x, u) = u on U = [-1, 1] with zero running cost
//! let (model, cost) = models::integrator_1d(1.0).unwrap();
//! let grid = QuadratureGrid::gauss_legendre(model.control_box().unwrap(), 64).unwrap();
//! let ctx = HamContext::new(&model, &cost, &grid).unwrap();
//! let h = ctx.value(&[0.0], &[1.0]).unwrap();
//! assert!((h - (1f64.exp() - (-1f64).exp()).ln()).abs() < 1e-12);
//! ```

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive_dp;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod hjb_godunov;
pub mod hjb_hopf_lax;
pub mod linalg;
pub mod lq_maxent;
pub mod matrix_io;
pub mod models;
pub mod optimize;
pub mod quadrature;
pub mod soft_hamiltonian;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod prelude {
    pub use crate::dynamics::{
        ControlBox, CostModel, DynamicsModel, GaussianPolicy, Horizon, RunningCost, TerminalCost,
        Trajectory,
    };
    pub use crate::error::{Error, Result};
    pub use crate::models;
    pub use crate::quadrature::QuadratureGrid;
    pub use crate::soft_hamiltonian::HamContext;
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/soft_hamiltonian.md")]
    mod soft_hamiltonian {}
    #[doc = include_str!("../../../book/src/hopf_lax.md")]
    mod hopf_lax {}
    #[doc = include_str!("../../../book/src/godunov.md")]
    mod godunov {}
    #[doc = include_str!("../../../book/src/lq.md")]
    mod lq {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
