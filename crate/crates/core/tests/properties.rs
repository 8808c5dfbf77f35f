use proptest::prelude::*;

use sdde_core::model::sigmoid_phi;
use sdde_core::path_engine::{bem_step_with, tem_step_with, Increments};
use sdde_core::truncation::{
    truncated_diffusion_with, truncated_drift_with, DominatingFunction, PowerMu, PowerPi,
    StepBudget,
};
use sdde_core::{GridSpec, Model, ModelParams, NoiseStream, Scheme, TruncationRule};

fn table1_rule() -> TruncationRule {
    TruncationRule::with_default_mu(&ModelParams::table1(), 2.0 / 3.0).unwrap()
}

proptest! {
    #[test]
    fn sigmoid_bounds(y in -50.0f64..50.0) {
        let v = sigmoid_phi(y);
        prop_assert!(v <= 0.56);
        if y >= 0.0 {
            prop_assert!(v >= 0.25);
        } else {
            prop_assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn jump_is_homogeneous(x in 0.0f64..1e3, c in 1e-3f64..1e3, a3 in 0.01f64..5.0) {
        let p = ModelParams { alpha_3: a3, ..ModelParams::table1() };
        let lhs = p.jump(c * x);
        let rhs = c * p.jump(x);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        prop_assert_eq!(p.jump(-x - 1e-9), 0.0);
    }

    #[test]
    fn mu_inverse_roundtrip(scale in 0.1f64..100.0, exponent in 1.0f64..6.0, v in 1e-3f64..1e8) {
        let mu = PowerMu::new(scale, exponent).unwrap();
        let r = mu.mu_inv(v);
        prop_assert!((mu.mu(r) - v).abs() <= 1e-10 * v);
    }

    #[test]
    fn pi_decreasing(exponent in 0.01f64..2.0, d in 1e-8f64..0.5) {
        let pi = PowerPi::new(exponent).unwrap();
        prop_assert!(pi.pi(d) > pi.pi(d * 1.5));
    }

    #[test]
    fn truncated_coefficients_respect_budget(x in -1e6f64..1e6, m in 10usize..100_000) {
        let rule = table1_rule();
        let p = ModelParams::table1();
        let delta = 1.0 / m as f64;
        let b = rule.clamp_bounds(delta).unwrap();
        prop_assert!(b.lower * b.upper - 1.0 < 1e-12);
        prop_assert!(b.contains(b.clamp(x)));
        let budget = rule.pi(delta) * (1.0 + 1e-12);
        prop_assert!(truncated_drift_with(&p, &b, x).abs() <= budget);
        prop_assert!(truncated_diffusion_with(&p, &b, x) <= budget);
    }

    #[test]
    fn clamp_widens_as_delta_shrinks(m in 10usize..10_000) {
        let rule = table1_rule();
        let a = rule.clamp_bounds(1.0 / m as f64).unwrap();
        let b = rule.clamp_bounds(0.5 / m as f64).unwrap();
        prop_assert!(b.upper > a.upper && b.lower < a.lower);
    }

    /// Without a jump, one truncated step moves at most `pi D + sigma pi |dB|`.
    #[test]
    fn tem_step_bound(x in 1e-3f64..50.0, z in -6.0f64..6.0, m in 10usize..10_000, phi in 0.0f64..0.5591) {
        let rule = table1_rule();
        let p = ModelParams::table1();
        let delta = 1.0 / m as f64;
        let b = rule.clamp_bounds(delta).unwrap();
        let db = z * delta.sqrt();
        let next = tem_step_with(&p, &b, phi, x, db, 0).unwrap();
        let pi = rule.pi(delta);
        prop_assert!((next - x).abs() <= (pi * delta + phi * pi * db.abs()) * (1.0 + 1e-12) + 1e-15);
    }

    /// The implicit step solves its defining equation.
    #[test]
    fn bem_residual(x in 1e-3f64..20.0, z in -5.0f64..5.0, m in 10usize..100_000, phi in 0.0f64..0.56, dn in 0u32..3) {
        let p = ModelParams::table2();
        let delta = 1.0 / m as f64;
        let db = z * delta.sqrt();
        let y = bem_step_with(&p, delta, phi, x, db, dn).unwrap();
        let rhs = x + (-p.alpha_0 + p.alpha_1 * y - p.alpha_2 * y * y) * delta
            + phi * x.powf(p.theta) * db + p.alpha_3 * x * dn as f64;
        prop_assert!((y - rhs).abs() <= 1e-12 * y.abs().max(1.0));
    }

    #[test]
    fn increments_prefix_and_aggregation(seed in any::<u64>(), index in any::<u64>(), k in 1usize..6) {
        let s = NoiseStream::new(seed, index);
        let n = 1 << k;
        let long = s.increments(1.0 / 64.0, 2.0, 4 * n).unwrap();
        let short = s.increments(1.0 / 64.0, 2.0, n).unwrap();
        prop_assert_eq!(&long.brownian[..n], &short.brownian[..]);
        prop_assert_eq!(&long.jumps[..n], &short.jumps[..]);
        let agg: Increments = long.aggregate(n).unwrap();
        prop_assert_eq!(agg.len(), 4);
        prop_assert_eq!(agg.jumps.iter().sum::<u32>(), long.jumps.iter().sum::<u32>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Paths are a pure function of (seed, index) and the coarse rung sees the
    /// summed fine noise.
    #[test]
    fn paths_reproducible(seed in any::<u64>(), index in 0u64..1_000_000) {
        let model = Model::sigmoid_example(ModelParams::table1(), 2.0 / 3.0, 0.2).unwrap();
        let grid = GridSpec::new(1.0, 40, 2.0).unwrap();
        let noise = NoiseStream::new(seed, index);
        let a = sdde_core::path_engine::simulate_path(&model, &grid, &noise, Scheme::Tem).unwrap();
        let b = sdde_core::path_engine::simulate_path(&model, &grid, &noise, Scheme::Tem).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.states.len(), grid.len());
        prop_assert!(a.states[..=grid.m].iter().all(|&x| x == 0.2));

        let (coarse, fine) = sdde_core::path_engine::coupled_paths(&model, &GridSpec::new(1.0, 80, 2.0).unwrap(), 1, &noise, Scheme::Tem).unwrap();
        prop_assert_eq!(coarse.increments, fine.increments.aggregate(2).unwrap());
    }
}
