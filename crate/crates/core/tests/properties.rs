//! Algebraic invariants checked on random fields.

use std::collections::BTreeMap;

use proptest::prelude::*;

use parc_core::fdops::{self, StencilScheme};
use parc_core::fields::{self, Field, GridSpec, Reduction, Snapshot, Trajectory};
use parc_core::metrics::{self, ResidualOptions};
use parc_core::model::{IntegratorSpec, Model, ModelConfig, Normalization, Scheme, StackConfig};

const EPS: f64 = f64::EPSILON;

prop_compose! {
    fn field_pair()(h in 4usize..10, w in 4usize..10)
        (a in prop::collection::vec(-10.0..10.0f64, h * w), b in prop::collection::vec(-10.0..10.0f64, h * w),
         h in Just(h), w in Just(w), dx in 0.05..2.0f64) -> (Field, Field) {
        let g = GridSpec::new(h, w, dx).unwrap();
        (Field::new(g, a, "").unwrap(), Field::new(g, b, "").unwrap())
    }
}

prop_compose! {
    /// Three snapshots of `(u, v)` on one random square grid.
    fn square_frames()(n in 4usize..10)(v in prop::collection::vec(-2.0..2.0f64, 6 * n * n), n in Just(n)) -> Vec<Field> {
        let g = GridSpec::new(n, n, 0.5).unwrap();
        v.chunks(n * n).map(|c| Field::new(g, c.to_vec(), "").unwrap()).collect()
    }
}

fn scheme() -> impl Strategy<Value = StencilScheme> {
    prop_oneof![Just(StencilScheme::METRIC), Just(StencilScheme::NETWORK)]
}

proptest! {
    #[test]
    fn add_commutes_and_self_difference_vanishes((a, b) in field_pair()) {
        prop_assert_eq!(fields::add(&a, &b).unwrap(), fields::add(&b, &a).unwrap());
        prop_assert!(fields::sub(&a, &a).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_commutes_with_scaling((a, _) in field_pair(), c in -5.0..5.0f64) {
        let lhs = fields::reduce(Reduction::Mean, &fields::scale(&a, c).unwrap());
        let rhs = c * fields::reduce(Reduction::Mean, &a);
        // ulps of the mean magnitude of the scaled cells
        let unit = EPS * c.abs() * a.values().iter().map(|v| v.abs()).sum::<f64>() / a.values().len() as f64;
        prop_assert!((lhs - rhs).abs() <= 4.0 * unit, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn gradient_is_linear((f, g) in field_pair(), a in -3.0..3.0f64, b in -3.0..3.0f64, s in scheme()) {
        let combo = fields::add(&fields::scale(&f, a).unwrap(), &fields::scale(&g, b).unwrap()).unwrap();
        let (cx, cy) = fdops::gradient(&combo, s).unwrap();
        let (fx, fy) = fdops::gradient(&f, s).unwrap();
        let (gx, gy) = fdops::gradient(&g, s).unwrap();
        // One ulp of the largest stencil input, times the one-sided weight sum 4/dx.
        let unit = EPS * 4.0 / f.grid().dx * (a.abs() * f.max_abs() + b.abs() * g.max_abs());
        for (c, (p, q)) in [(&cx, (&fx, &gx)), (&cy, (&fy, &gy))] {
            for i in 0..c.values().len() {
                let (x, y) = (a * p.values()[i], b * q.values()[i]);
                prop_assert!((c.values()[i] - (x + y)).abs() <= 8.0 * unit, "cell {}: {} vs {}", i, c.values()[i], x + y);
            }
        }
    }

    #[test]
    fn advection_is_velocity_dot_gradient((u, v) in field_pair(), s in scheme()) {
        let f = fields::mul(&u, &v).unwrap();
        let adv = fdops::advect((&u, &v), &f, s).unwrap();
        let (gx, gy) = fdops::gradient(&f, s).unwrap();
        for i in 0..f.values().len() {
            prop_assert_eq!(adv.values()[i], u.values()[i] * gx.values()[i] + v.values()[i] * gy.values()[i]);
        }
    }

    #[test]
    fn gradient_is_exact_on_affine_fields(n in 4usize..12, a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, s in scheme()) {
        let g = GridSpec::centered_square(n, 3.0).unwrap();
        let f = Field::from_fn(g, |x, y| a * x + b * y + c).unwrap();
        let (gx, gy) = fdops::gradient(&f, s).unwrap();
        prop_assert!(gx.values().iter().all(|v| (v - a).abs() <= 1e-12));
        prop_assert!(gy.values().iter().all(|v| (v - b).abs() <= 1e-12));
    }

    #[test]
    fn rmse_is_zero_on_identity_and_symmetric((a, b) in field_pair()) {
        prop_assert_eq!(metrics::rmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(metrics::rmse(&a, &b).unwrap(), metrics::rmse(&b, &a).unwrap());
        let sa = Snapshot::velocity_only(0.0, a.clone(), b.clone()).unwrap();
        let sb = Snapshot::velocity_only(0.0, b, a).unwrap();
        prop_assert_eq!(metrics::rmse_speed(&sa, &sa).unwrap(), 0.0);
        prop_assert_eq!(metrics::rmse_speed(&sa, &sb).unwrap(), metrics::rmse_speed(&sb, &sa).unwrap());
    }

    #[test]
    fn hotspot_temperature_ignores_cell_positions(v in prop::collection::vec(700.0..1000.0f64, 36), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let g = GridSpec::new(6, 6, 0.1).unwrap();
        let mut shuffled = v.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = metrics::hotspot_series(&[Field::new(g, v, "K").unwrap()], &[0.0], 875.0).unwrap();
        let b = metrics::hotspot_series(&[Field::new(g, shuffled, "K").unwrap()], &[0.0], 875.0).unwrap();
        prop_assert_eq!(a.area[0], b.area[0]);
        let unit = EPS * a.temperature[0].max(1.0);
        prop_assert!((a.temperature[0] - b.temperature[0]).abs() <= 64.0 * unit);
        prop_assert!(a.area[0] <= g.cell_area() * g.len() as f64);
    }

    /// The swap maps (u, v)(x, y) to (v, u)(y, x); the equations are
    /// invariant under it, so the residual is too, symmetric or not.
    #[test]
    fn burgers_residual_respects_the_diagonal_swap(frames in square_frames(), r in 10.0..1e4f64) {
        let snaps: Vec<Snapshot> = frames
            .chunks(2)
            .enumerate()
            .map(|(k, uv)| Snapshot::velocity_only(0.1 * k as f64, uv[0].clone(), uv[1].clone()).unwrap())
            .collect();
        let swapped: Vec<Snapshot> = snaps
            .iter()
            .map(|s| Snapshot::velocity_only(s.t, s.velocity()[1].transposed().unwrap(), s.velocity()[0].transposed().unwrap()).unwrap())
            .collect();
        let symmetric: Vec<Snapshot> = snaps
            .iter()
            .map(|s| Snapshot::velocity_only(s.t, s.velocity()[0].clone(), s.velocity()[0].transposed().unwrap()).unwrap())
            .collect();
        let res = |s: Vec<Snapshot>| metrics::burgers_residual(&Trajectory::new(s, 0.1).unwrap(), r, &ResidualOptions::default()).unwrap();
        let sym_swapped = symmetric
            .iter()
            .map(|s| Snapshot::velocity_only(s.t, s.velocity()[1].transposed().unwrap(), s.velocity()[0].transposed().unwrap()).unwrap())
            .collect();
        let (a, b) = (res(snaps), res(swapped));
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
        let (c, d) = (res(symmetric), res(sym_swapped));
        prop_assert!((c - d).abs() <= 1e-8 * c.max(1.0));
    }
}

fn tiny_model(seed: u64) -> Model {
    let small = StackConfig {
        layers: 2,
        hidden: 4,
        ..StackConfig::reaction_default()
    };
    let cfg = ModelConfig {
        reaction: small,
        correction: small,
        ..ModelConfig::default()
    };
    Model::init(cfg, Normalization::identity(2, 1), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rollouts_are_deterministic(seed in any::<u64>(), amp in 0.1..1.0f64, correction in any::<bool>(), rk4 in any::<bool>()) {
        let m = tiny_model(seed);
        let g = GridSpec::centered_square(6, 3.0).unwrap();
        let s = Snapshot::velocity_only(0.0, Field::from_fn(g, |x, y| amp * (-(x * x + y * y)).exp()).unwrap(), Field::zeros(g)).unwrap();
        let constants = BTreeMap::from([("R".to_string(), 1000.0)]);
        let spec = IntegratorSpec::new(if rk4 { Scheme::Rk4 } else { Scheme::Heun }, 0.05, correction).unwrap();
        let a = m.rollout(&s, &constants, 4, &spec).unwrap();
        let b = tiny_model(seed).rollout(&s, &constants, 4, &spec).unwrap();
        prop_assert_eq!(a, b);
    }
}
