//! Tensorized quadrature over the control box, plus the 1-D trapezoid rule
//! used for time integrals along trajectories.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::dynamics::ControlBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    GaussLegendre,
    /// Gauss–Legendre on `panels` equal sub-intervals per axis.
    CompositeGaussLegendre { panels: usize },
    Trapezoid,
}

/// Nodes and positive weights on `U`; node `i` is `nodes[i*m..(i+1)*m]`.
///
/// Nodes are the tensor product of per-axis rules with the last axis varying
/// fastest, so `axes[d]` (ascending) recovers the 1-D structure.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
    nodes_per_dim: usize,
    rule: Rule,
    control_box: ControlBox,
    axes: Vec<Vec<f64>>,
}

fn gl_reference(n: usize) -> Result<Vec<(f64, f64)>> {
    let n = NonZeroUsize::new(n)
        .ok_or_else(|| Error::InvalidParameter("need at least one quadrature node".into()))?;
    let mut pairs = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

fn gl_axis(lo: f64, hi: f64, panels: usize, per_panel: usize) -> Result<Vec<(f64, f64)>> {
    let reference = gl_reference(per_panel)?;
    let width = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * per_panel);
    for k in 0..panels {
        let a = lo + k as f64 * width;
        for &(x, w) in &reference {
            out.push((a + 0.5 * width * (x + 1.0), 0.5 * width * w));
        }
    }
    Ok(out)
}

fn trapezoid_axis(lo: f64, hi: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(Error::InvalidParameter("trapezoid rule needs >= 2 nodes".into()));
    }
    let h = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let x = if i == n - 1 { hi } else { lo + i as f64 * h };
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            (x, w)
        })
        .collect())
}

impl QuadratureGrid {
    fn tensorize(
        control_box: &ControlBox,
        rule: Rule,
        nodes_per_dim: usize,
        axes: Vec<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let m = control_box.dim();
        let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
        let total = match total {
            Some(t) if t <= 50_000_000 => t,
            _ => return Err(Error::InvalidParameter("quadrature grid is too large".into())),
        };
        let mut nodes = Vec::with_capacity(total * m);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; m];
        for _ in 0..total {
            let mut w = 1.0;
            for d in 0..m {
                let (x, wd) = axes[d][idx[d]];
                nodes.push(x);
                w *= wd;
            }
            weights.push(w);
            for d in (0..m).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            nodes,
            weights,
            dim: m,
            nodes_per_dim,
            rule,
            control_box: control_box.clone(),
            axes: axes
                .into_iter()
                .map(|a| a.into_iter().map(|(x, _)| x).collect())
                .collect(),
        })
    }

    /// Tensor Gauss–Legendre rule with `nodes_per_dim` nodes per axis (m <= 3).
    pub fn gauss_legendre(control_box: &ControlBox, nodes_per_dim: usize) -> Result<Self> {
        Self::composite_gauss_legendre(control_box, 1, nodes_per_dim)
            .map(|g| Self {
                rule: Rule::GaussLegendre,
                ..g
            })
    }

    /// Composite Gauss–Legendre: `panels` sub-intervals per axis, each with
    /// `per_panel` nodes. Useful for small temperatures, where the integrand
    /// concentrates, and for kinks in `u -> r(x, u)`.
    pub fn composite_gauss_legendre(
        control_box: &ControlBox,
        panels: usize,
        per_panel: usize,
    ) -> Result<Self> {
        if control_box.dim() > 3 {
            return Err(Error::InvalidParameter(
                "tensor Gauss-Legendre is limited to m <= 3; use the trapezoid rule".into(),
            ));
        }
        if panels == 0 {
            return Err(Error::InvalidParameter("need at least one panel".into()));
        }
        let axes = (0..control_box.dim())
            .map(|d| gl_axis(control_box.lower()[d], control_box.upper()[d], panels, per_panel))
            .collect::<Result<Vec<_>>>()?;
        Self::tensorize(
            control_box,
            Rule::CompositeGaussLegendre { panels },
            panels * per_panel,
            axes,
        )
    }

    pub fn trapezoid(control_box: &ControlBox, nodes_per_dim: usize) -> Result<Self> {
        let axes = (0..control_box.dim())
            .map(|d| trapezoid_axis(control_box.lower()[d], control_box.upper()[d], nodes_per_dim))
            .collect::<Result<Vec<_>>>()?;
        Self::tensorize(control_box, Rule::Trapezoid, nodes_per_dim, axes)
    }

    /// 64-node Gauss–Legendre up to m = 3, trapezoid with `fallback_nodes` beyond.
    pub fn default_for(control_box: &ControlBox, fallback_nodes: usize) -> Result<Self> {
        if control_box.dim() <= 3 {
            Self::gauss_legendre(control_box, 64)
        } else {
            Self::trapezoid(control_box, fallback_nodes)
        }
    }

    /// The same rule family with twice the nodes per axis.
    pub fn refined(&self) -> Result<Self> {
        match self.rule {
            Rule::GaussLegendre => Self::gauss_legendre(&self.control_box, 2 * self.nodes_per_dim),
            Rule::CompositeGaussLegendre { panels } => Self::composite_gauss_legendre(
                &self.control_box,
                2 * panels,
                self.nodes_per_dim / panels,
            ),
            Rule::Trapezoid => Self::trapezoid(&self.control_box, 2 * self.nodes_per_dim - 1),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Ascending 1-D nodes along axis `d`.
    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// `sum w_i`, which equals `|U|` up to rounding.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Trapezoid rule for samples spaced `h` apart.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Trapezoid rule on an arbitrary increasing abscissa.
pub fn trapezoid(s: &[f64], values: &[f64]) -> f64 {
    s.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}
