use maxent_hjb::dynamics::{
    gaussian_entropy, simulate_sampled, simulate_with, ControlBox, DynamicsModel, GaussianPolicy,
};
use maxent_hjb::quadrature::QuadratureGrid;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x' = -x + 0.5 sin(x) + u` componentwise: one-sided Lipschitz `-0.5`,
/// Lipschitz `1.5`, `f(0, u) = u`.
fn damped_sine(n: usize) -> DynamicsModel {
    DynamicsModel::generic(n, n, |x, u, out| {
        for i in 0..x.len() {
            out[i] = -x[i] + 0.5 * x[i].sin() + u[i];
        }
    })
    .with_control_box(ControlBox::symmetric(n, 1.0).unwrap())
    .unwrap()
    .with_one_sided_lipschitz(-0.5)
}

/// `sup_u |f(0, u)|` over a grid that contains the box corners.
fn sup_at_origin(model: &DynamicsModel) -> f64 {
    let grid = QuadratureGrid::trapezoid(model.control_box().unwrap(), 5).unwrap();
    let zero = vec![0.0; model.state_dim()];
    let mut out = vec![0.0; model.state_dim()];
    grid.iter()
        .map(|(u, _)| {
            model.eval_into(&zero, u, &mut out);
            norm(&out)
        })
        .fold(0.0, f64::max)
}

/// Continuous bound `e^{Lt}|x0| + C (e^{Lt} - 1)/L`, evaluated with the
/// Euler-step constant `L + h Lip^2 / 2` so it is rigorous for the discrete scheme.
fn gronwall(l: f64, c: f64, x0: f64, t: f64) -> f64 {
    let g = (l * t).exp();
    if l.abs() < 1e-12 {
        x0 + c * t
    } else {
        g * x0 + c * (g - 1.0) / l
    }
}

#[test]
fn gronwall_bound_holds_for_random_bounded_controls() {
    let model = damped_sine(2);
    let c = sup_at_origin(&model);
    let h = 1e-3;
    let l_eff = model.one_sided_lipschitz().unwrap() + h * 1.5f64.powi(2) / 2.0;
    let bx = model.control_box().unwrap().clone();
    for seed in 0..100 {
        let x0 = [2.0 - 0.04 * seed as f64, -1.0 + 0.03 * seed as f64];
        let traj = simulate_with(&model, &x0, h, 3000, seed, |_, _, rng, u| {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = bx.lower()[i] + (bx.upper()[i] - bx.lower()[i]) * rng.random::<f64>();
            }
            Ok(())
        })
        .unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let bound = gronwall(l_eff, c, norm(&x0), *t);
            assert!(norm(x.as_slice()) <= bound * (1.0 + 1e-12), "seed {seed} t {t}");
        }
    }
}

#[test]
fn gronwall_bound_for_linear_family() {
    let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, 0.1]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    // symmetric part of A is 0.1 I
    let model = DynamicsModel::linear(a.clone(), b)
        .unwrap()
        .with_control_box(ControlBox::symmetric(1, 2.0).unwrap())
        .unwrap()
        .with_one_sided_lipschitz(0.1);
    let c = sup_at_origin(&model);
    assert!((c - 2.0).abs() < 1e-15);
    let h = 1e-3;
    let lip = a.norm();
    let l_eff = 0.1 + h * lip * lip / 2.0;
    for seed in 0..100 {
        let traj = simulate_with(&model, &[1.0, 0.5], h, 2000, seed, |_, _, rng, u| {
            u[0] = if rng.random::<bool>() { 2.0 } else { -2.0 };
            Ok(())
        })
        .unwrap();
        let last = traj.len() - 1;
        let bound = gronwall(l_eff, c, norm(&[1.0, 0.5]), traj.times[last]);
        assert!(norm(traj.states[last].as_slice()) <= bound);
    }
}

#[test]
fn trajectories_contract_under_common_controls() {
    let model = damped_sine(3);
    let h = 1e-3;
    let l_eff: f64 = -0.5 + h * 1.5f64.powi(2) / 2.0;
    let run = |x0: &[f64], seed| {
        simulate_with(&model, x0, h, 2000, seed, |_, _, rng, u| {
            for ui in u.iter_mut() {
                *ui = rng.random::<f64>() * 2.0 - 1.0;
            }
            Ok(())
        })
        .unwrap()
    };
    for seed in 0..20 {
        let (x0, y0) = ([0.3, -1.0, 2.0], [0.1, -0.8, 1.5]);
        let (tx, ty) = (run(&x0, seed), run(&y0, seed));
        let d0 = norm(&[0.2, -0.2, 0.5]);
        for k in 0..tx.len() {
            let d = norm((&tx.states[k] - &ty.states[k]).as_slice());
            assert!(d <= (l_eff * tx.times[k]).exp() * d0 * (1.0 + 1e-10));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_bit_identical(seed in any::<u64>(), k in -1.0f64..1.0, s in 0.01f64..2.0) {
        let model = DynamicsModel::linear(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -0.2]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        ).unwrap();
        let pol = GaussianPolicy::new(DMatrix::from_row_slice(1, 2, &[k, 0.5]), DMatrix::from_element(1, 1, s)).unwrap();
        let a = simulate_sampled(&model, &pol, &[1.0, -1.0], 0.1, 50, seed).unwrap();
        let b = simulate_sampled(&model, &pol, &[1.0, -1.0], 0.1, 50, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn entropy_scaling_law(c in prop::sample::select(vec![0.5, 2.0, 10.0]), d in 0.1f64..3.0, off in -0.5f64..0.5) {
        let sigma = DMatrix::from_row_slice(2, 2, &[d + 1.0, off, off, 1.5]);
        let h0 = gaussian_entropy(&sigma).unwrap();
        let h1 = gaussian_entropy(&(sigma * c)).unwrap();
        prop_assert!((h1 - h0 - c.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_states_stay_finite_and_times_increase(seed in any::<u64>()) {
        let model = damped_sine(2);
        let pol = GaussianPolicy::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let traj = simulate_sampled(&model, &pol, &[0.5, 0.5], 0.05, 400, seed).unwrap();
        prop_assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(traj.states.len(), traj.times.len());
        prop_assert_eq!(traj.controls.len(), traj.times.len());
        prop_assert!(traj.states.iter().all(|x| x.iter().all(|v| v.is_finite())));
    }
}
