mod common;

use common::{hstack, kron};
use proptest::prelude::*;
use waxkit::{
    admits_wax, apply_processing, build_system, expand_combiner, plan_dimensions, sample_gaussian,
    stack_unknowns, t_opt, wax_decompose, wax_decompose_panels, wax_decompose_with, AntennaLimit,
    BlockDiag, CMatrix, Dims, InfeasibleReason, NullSpaceRoute, PlanQuery, RngSpec, WaxError,
    WaxOptions,
};

fn gaussian(seed: u64, stream: u64, r: usize, c: usize) -> CMatrix {
    sample_gaussian(RngSpec::new(seed, stream), r, c).unwrap()
}

fn random_blocks(seed: u64, p: usize, l: usize) -> BlockDiag {
    BlockDiag::new(
        (0..p)
            .map(|i| gaussian(seed, 100 + i as u64, l, l))
            .collect(),
    )
    .unwrap()
}

/// Layouts `(M, K, L)` with `L | M` and `L ≤ K`.
fn layout() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=4, 1usize..=4, 1usize..=4)
        .prop_filter_map("L <= K", |(p, k, l)| (l <= k).then_some((p * l, k, l)))
}

/// Layouts with `L < K` and enough panels that `T_opt − 1 ≥ K`.
fn lossy_layout() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..=5)
        .prop_flat_map(|k| (Just(k), 1..k))
        .prop_flat_map(|(k, l)| {
            let p_min = (k * k).div_ceil(l * (k - l));
            (Just(k), Just(l), p_min..p_min + 3)
        })
        .prop_map(|(k, l, p)| (p * l, k, l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn system_matches_kronecker_form((m, k, l) in layout(), t in 1usize..5, seed in any::<u64>()) {
        let dims = Dims::square(m, k, l, t).unwrap();
        let h = gaussian(seed, 0, m, k);
        let a = gaussian(seed, 1, m, t);
        let sys = build_system(&h, &a, &dims).unwrap();
        let b1 = kron(&CMatrix::identity(k), &a);
        let p_sel = sys.selection_matrix();
        let b2 = (&kron(&h.transpose(), &CMatrix::identity(m)) * &p_sel).scale((-1.0).into());
        prop_assert_eq!(sys.b.shape(), (m * k, t * k + m * l));
        prop_assert!(sys.b.relative_error(&hstack(&b1, &b2)) < 1e-15);
    }

    #[test]
    fn system_applies_the_residual_map((m, k, l) in layout(), t in 1usize..5, seed in any::<u64>()) {
        let dims = Dims::square(m, k, l, t).unwrap();
        let h = gaussian(seed, 0, m, k);
        let a = gaussian(seed, 1, m, t);
        let x = gaussian(seed, 2, t, k);
        let w_hat = random_blocks(seed, m / l, l);
        let u = stack_unknowns(&x, &w_hat);
        let bu = &build_system(&h, &a, &dims).unwrap().b * &CMatrix::from_col_major(u.len(), 1, &u).unwrap();
        let direct = &(&a * &x) - &(&w_hat.to_dense() * &h);
        let expected = CMatrix::from_col_major(m * k, 1, &direct.vec()).unwrap();
        prop_assert!(bu.relative_error(&expected) < 1e-12);
    }

    #[test]
    fn generic_instances_decompose_at_t_opt((m, k, l) in layout(), seed in any::<u64>()) {
        let t = t_opt(m, k, l);
        let dims = Dims::square(m, k, l, t).unwrap();
        let h = gaussian(seed, 0, m, k);
        let a = gaussian(seed, 1, m, t);
        let f = wax_decompose(&h, &a, &dims, RngSpec::new(seed, 2), 10).unwrap();
        prop_assert!(f.residual <= 1e-8);
        let dense = &(&f.w.to_dense() * &a) * &f.x;
        prop_assert!(dense.relative_error(&h) <= 1e-8);
        prop_assert_eq!(f.nullspace_dim, t * k + m * l - m * k);
    }

    #[test]
    fn both_null_space_routes_agree((m, k, l) in layout(), extra in 0usize..3, seed in any::<u64>()) {
        let t = t_opt(m, k, l) + extra;
        let dims = Dims::square(m, k, l, t).unwrap();
        let h = gaussian(seed, 0, m, k);
        let a = gaussian(seed, 1, m, t);
        let reduced = wax_decompose(&h, &a, &dims, RngSpec::new(seed, 2), 10).unwrap();
        let opts = WaxOptions { route: NullSpaceRoute::FullSystem, ..WaxOptions::default() };
        let full = wax_decompose_with(&h, &a, &dims, RngSpec::new(seed, 2), &opts).unwrap();
        prop_assert_eq!(reduced.nullspace_dim, full.nullspace_dim);
        prop_assert!(full.residual <= 1e-8);
    }

    #[test]
    fn below_the_bound_is_infeasible((m, k, l) in lossy_layout(), seed in any::<u64>()) {
        let t = t_opt(m, k, l) - 1;
        prop_assert!(t >= k);
        let dims = Dims::square(m, k, l, t).unwrap();
        let h = gaussian(seed, 0, m, k);
        let a = gaussian(seed, 1, m, t);
        match wax_decompose(&h, &a, &dims, RngSpec::new(seed, 2), 10) {
            Err(WaxError::Infeasible(rep)) => prop_assert_eq!(rep.reason, InfeasibleReason::EmptyNullSpace),
            other => prop_assert!(false, "expected infeasible, got {:?}", other.map(|f| f.residual)),
        }
    }

    #[test]
    fn expanded_layout_decomposes(groups in 1usize..4, k in 2usize..5, n in 1usize..3, copies in 1usize..3, seed in any::<u64>()) {
        let l = n * copies;
        prop_assume!(l <= k);
        let m = groups * l;
        let t = t_opt(m, k, l);
        let dims = Dims::new(m, k, l, n, t).unwrap();
        let a_tilde = gaussian(seed, 1, m, t);
        let expanded = expand_combiner(&a_tilde, &dims).unwrap();
        prop_assert_eq!(expanded.shape(), (m * l / n, t));
        let h = gaussian(seed, 0, m, k);
        let f = wax_decompose_panels(&h, &a_tilde, &dims, RngSpec::new(seed, 2), 10).unwrap();
        prop_assert_eq!(f.w.block_shape(), (n, l));
        prop_assert_eq!(f.w.len(), m / n);
        let dense = &(&f.w.to_dense() * &expanded) * &f.x;
        prop_assert!(dense.relative_error(&h) <= 1e-8);
    }

    #[test]
    fn processing_chain_matches_dense_product((m, k, l) in layout(), t in 1usize..5, seed in any::<u64>()) {
        let w = random_blocks(seed, m / l, l);
        let a = gaussian(seed, 1, m, t);
        let x = gaussian(seed, 2, t, k);
        let y = gaussian(seed, 3, m, 1);
        let z = apply_processing(&y, &w, &a, &x).unwrap();
        let dense = &(&(&x.adjoint() * &a.adjoint()) * &w.to_dense().adjoint()) * &y;
        prop_assert!(z.relative_error(&dense) < 1e-12);
    }

    #[test]
    fn t_opt_is_the_smallest_admissible_t(m in 1usize..120, k in 1usize..12, l in 1usize..12) {
        prop_assume!(l <= k);
        let t = t_opt(m, k, l);
        prop_assert!(admits_wax(m, k, l, t));
        prop_assert!(t == 1 || !admits_wax(m, k, l, t - 1));
    }

    #[test]
    fn m_max_is_the_largest_admissible_m(k in 1usize..12, l in 1usize..12, t in 1usize..80) {
        prop_assume!(l < k && t >= k);
        let plan = plan_dimensions(&PlanQuery { m: None, k, l: Some(l), t: Some(t) }).unwrap();
        let Some(AntennaLimit::Finite(m)) = plan.m_max else { panic!("finite limit expected") };
        prop_assert!(admits_wax(m, k, l, t));
        prop_assert!(!admits_wax(m + 1, k, l, t));
    }

    #[test]
    fn matrix_json_round_trips(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let m = gaussian(seed, 0, r, c);
        prop_assert_eq!(CMatrix::from_json(&m.to_json()).unwrap(), m);
    }
}

fn small_integer_instance() -> (CMatrix, CMatrix) {
    let a = CMatrix::from_real_rows(&[
        [1., 0., 0., 0., 0.],
        [0., 1., 0., 0., 0.],
        [0., 0., 1., 0., 0.],
        [0., 0., 0., 1., 0.],
        [0., 0., 0., 0., 1.],
        [1., 0., 0., 1., 1.],
        [0., 1., 0., 1., 1.],
        [0., 0., 1., 1., 1.],
    ]);
    let h = CMatrix::from_real_rows(&[
        [-3., 1., 0., 1., 0.],
        [-2., -4., -3., 5., 6.],
        [1., 1., -2., -2., -2.],
        [0., -2., 0., 1., 0.],
        [-2., -2., 5., 4., -4.],
        [2., -2., 3., 0., -4.],
        [1., -2., 2., 3., 4.],
        [4., -2., 2., 0., -8.],
    ]);
    (h, a)
}

#[test]
fn integer_instance_has_a_one_dimensional_null_space() {
    let (h, a) = small_integer_instance();
    let dims = Dims::square(8, 5, 2, 5).unwrap();
    for route in [NullSpaceRoute::Reduced, NullSpaceRoute::FullSystem] {
        let opts = WaxOptions {
            route,
            ..WaxOptions::default()
        };
        let f = wax_decompose_with(&h, &a, &dims, RngSpec::new(0, 0), &opts).unwrap();
        assert_eq!(f.nullspace_dim, 1);
        assert!(f.residual < 1e-10, "{route:?}: {}", f.residual);
    }
}

#[test]
fn infeasible_report_serializes() {
    let dims = Dims::square(24, 5, 3, 9).unwrap();
    let h = gaussian(3, 0, 24, 5);
    let a = gaussian(3, 1, 24, 9);
    let Err(WaxError::Infeasible(rep)) = wax_decompose(&h, &a, &dims, RngSpec::new(0, 0), 10)
    else {
        panic!("expected infeasible");
    };
    let json = serde_json::to_value(&rep).unwrap();
    assert_eq!(json["reason"], "empty-null-space");
    assert_eq!(json["nullspace_dim"], 0);
}

#[test]
fn singular_blocks_are_reported() {
    // A zero panel in A forces Ŵ_p = 0 for that panel on every attempt.
    let dims = Dims::square(4, 2, 1, 4).unwrap();
    let h = gaussian(4, 0, 4, 2);
    let mut a = gaussian(4, 1, 4, 4);
    for j in 0..4 {
        a.set(0, j, 0.0.into());
    }
    match wax_decompose(&h, &a, &dims, RngSpec::new(0, 0), 3) {
        Err(WaxError::Infeasible(rep)) => {
            assert_eq!(rep.reason, InfeasibleReason::SingularBlocks);
            assert_eq!(rep.attempts, 3);
        }
        other => panic!("unexpected {:?}", other.map(|f| f.residual)),
    }
}

#[test]
fn non_finite_input_is_rejected() {
    let dims = Dims::square(4, 2, 2, 2).unwrap();
    let mut h = gaussian(5, 0, 4, 2);
    h.set(0, 0, f64::NAN.into());
    let a = gaussian(5, 1, 4, 2);
    assert!(matches!(
        wax_decompose(&h, &a, &dims, RngSpec::new(0, 0), 10),
        Err(WaxError::InvalidInput(_))
    ));
}

#[test]
fn decomposition_is_deterministic() {
    let dims = Dims::square(12, 4, 2, 7).unwrap();
    let h = gaussian(6, 0, 12, 4);
    let a = gaussian(6, 1, 12, 7);
    let f1 = wax_decompose(&h, &a, &dims, RngSpec::new(9, 0), 10).unwrap();
    let f2 = wax_decompose(&h, &a, &dims, RngSpec::new(9, 0), 10).unwrap();
    assert_eq!(
        serde_json::to_string(&f1).unwrap(),
        serde_json::to_string(&f2).unwrap()
    );
}
