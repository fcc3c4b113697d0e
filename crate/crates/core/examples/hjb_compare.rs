//! Times the grid and grid-free solvers on the benchmark.
//!
//! `cargo run --release --example hjb_compare -- [grid_n] [n_starts] [simplex_tol] [nodes_per_panel]`

use maxent_hjb::experiments::{hjb_compare, HjbCompareConfig};
use maxent_hjb::hjb_godunov::Grid2D;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> maxent_hjb::Result<()> {
    let base = HjbCompareConfig::default();
    let n = arg(1, base.grid.nx);
    let mut cfg = HjbCompareConfig {
        grid: Grid2D::new(-2.0, 2.0, -2.0, 2.0, n, n)?,
        nodes_per_panel: arg(4, base.nodes_per_panel),
        ..base
    };
    cfg.hopf_lax.n_starts = arg(2, cfg.hopf_lax.n_starts);
    cfg.hopf_lax.simplex_tol = arg(3, cfg.hopf_lax.simplex_tol);
    let r = hjb_compare(&cfg, |_, _| {})?;
    let c = &r.comparison;
    println!(
        "{n}x{n}: godunov {:.1}s, hopf-lax {:.1}s, max|diff| {:.4}, rel {:.2}%, interior {:.2}%",
        r.godunov_seconds, r.hopf_lax_seconds, c.max_abs_diff, c.rel_pct, c.interior_rel_pct
    );
    Ok(())
}
