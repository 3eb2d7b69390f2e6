use approx::assert_abs_diff_eq;
use nalgebra::{Matrix2, Vector3};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use optwit::distill::{distill_iterate, erasing_filter, DistillOptions};
use optwit::oracle::{qst_reconstruct, wootters_concurrence};
use optwit::photonsim::{sixteen_settings, Bench, Counting, DetectorSetting, RngStream};
use optwit::qstate::{
    dop, partial_trace, random_density, random_unitary2, stokes_tensor, Arm, DensityMatrix, StateSpec,
};
use optwit::slocc::{
    apply_slocc, filter_kraus, polar_decomposition, singular_values, so3_to_su2, su2_to_so3, CompositeArmOperator,
};
use optwit::witness::{expectation, lambda_svd, materialize_witness, witness_value};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn id2() -> Matrix2<C64> {
    Matrix2::identity()
}

fn unit_vector(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_ignores_unitaries_on_the_discarded_arm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let u = random_unitary2(&mut r);
        let rotated = apply_slocc(&rho, &id2(), &u).unwrap();
        let a = partial_trace(&rho, Arm::One).unwrap();
        let b = partial_trace(&rotated, Arm::One).unwrap();
        assert_abs_diff_eq!(a.max_abs_diff(&b), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dop_is_unitarily_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let u = random_unitary2(&mut r);
        let rotated = apply_slocc(&rho, &u, &id2()).unwrap();
        let before = dop(&partial_trace(&rho, Arm::One).unwrap()).unwrap();
        let after = dop(&partial_trace(&rotated, Arm::One).unwrap()).unwrap();
        assert_abs_diff_eq!(before, after, epsilon = 1e-12);
    }

    #[test]
    fn filter_determinant_is_sqrt_p(theta in 0.0..std::f64::consts::PI, phi in 0.0..6.28, p in 1e-6..=1.0f64) {
        let f = nalgebra::Vector2::new(C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phi));
        let k = filter_kraus(&f, p).unwrap();
        assert_abs_diff_eq!(k.determinant().re, p.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(k.determinant().im, 0.0, epsilon = 1e-12);
        let (smax, smin) = singular_values(&k);
        assert_abs_diff_eq!(smax, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(smin, p.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn filter_products_close_under_polar_decomposition(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let f1 = erasing_filter(&partial_trace(&rho, Arm::One).unwrap(), 1).unwrap();
        let u = random_unitary2(&mut r);
        let k2 = u * filter_kraus(&f1.f, 0.5).unwrap() * u.adjoint();
        let comp = CompositeArmOperator::identity(1).then(&f1.kraus()).unwrap().then(&k2).unwrap();
        let (w, pos) = polar_decomposition(&comp.a);
        assert_abs_diff_eq!((w * pos - comp.a).norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!((w.adjoint() * w - id2()).norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!((pos - pos.adjoint()).norm(), 0.0, epsilon = 1e-10);
        let (_, smin) = singular_values(&pos);
        prop_assert!(smin >= 0.0);
        let (smax, _) = singular_values(&comp.a);
        assert_abs_diff_eq!(smax, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn filtering_never_increases_the_trace(seed in any::<u64>(), p1 in 1e-4..=1.0f64, p2 in 1e-4..=1.0f64) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let f = nalgebra::Vector2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let u1 = random_unitary2(&mut r);
        let u2 = random_unitary2(&mut r);
        let a1 = u1 * filter_kraus(&f, p1).unwrap();
        let a2 = u2 * filter_kraus(&f, p2).unwrap();
        let out = apply_slocc(&rho, &a1, &a2).unwrap();
        prop_assert!(out.trace() <= rho.trace() + 1e-12);
        prop_assert!(out.min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn lambdas_are_local_unitary_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let rotated = apply_slocc(&rho, &random_unitary2(&mut r), &random_unitary2(&mut r)).unwrap();
        let a = lambda_svd(&stokes_tensor(&rho).unwrap().t());
        let b = lambda_svd(&stokes_tensor(&rotated).unwrap().t());
        for i in 0..3 {
            assert_abs_diff_eq!(a.lambda[i], b.lambda[i], epsilon = 1e-10);
        }
        prop_assert_eq!(a.q, b.q);
        assert_abs_diff_eq!(wootters_concurrence(&rho).unwrap(), wootters_concurrence(&rotated).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn rotations_lift_and_project_back(seed in any::<u64>()) {
        let mut r = rng(seed);
        let o = su2_to_so3(&random_unitary2(&mut r));
        assert_abs_diff_eq!(o.determinant(), 1.0, epsilon = 1e-12);
        let back = su2_to_so3(&so3_to_su2(&o).unwrap());
        assert_abs_diff_eq!((back - o).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_frames_diagonalize_the_correlations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = stokes_tensor(&random_density(2, &mut r)).unwrap().t();
        let l = lambda_svd(&t);
        let (o1, o2) = l.rotations;
        assert_abs_diff_eq!(o1.determinant(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o2.determinant(), 1.0, epsilon = 1e-12);
        let d = o1.transpose() * t * o2;
        let want = nalgebra::Matrix3::from_diagonal(&Vector3::new(l.lambda[0], l.lambda[1], l.q as f64 * l.lambda[2]));
        assert_abs_diff_eq!((d - want).abs().max(), 0.0, epsilon = 1e-10);
        prop_assert!(l.lambda[0] >= l.lambda[1] && l.lambda[1] >= l.lambda[2] && l.lambda[2] >= 0.0);
    }

    #[test]
    fn materialized_witness_matches_the_closed_form(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(2, &mut r);
        let res = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        prop_assume!(res.converged);
        let s0 = res.s0();
        let composite = &res.composite;
        let dis = optwit::slocc::apply_composites(&rho, composite).unwrap().normalize().unwrap();
        let lambdas = lambda_svd(&stokes_tensor(&dis).unwrap().t());
        let report = witness_value(&lambdas, s0, true).unwrap();
        let w = materialize_witness(&lambdas, composite, s0).unwrap();
        assert_abs_diff_eq!(expectation(&w.w_rho, &rho), report.tr_w, epsilon = 1e-9);
        assert_abs_diff_eq!(expectation(&w.w_dis, &dis), report.tr_w_dis, epsilon = 1e-9);
    }

    #[test]
    fn sampled_counts_are_consistent(seed in any::<u64>(), theta in 0.0..3.14f64, phi in 0.0..6.28f64, m in 1u64..20_000) {
        let mut r = rng(seed);
        let bench = Bench::new(random_density(2, &mut r)).unwrap();
        let comp = vec![CompositeArmOperator::identity(1), CompositeArmOperator::identity(2)];
        let setting = DetectorSetting::new(unit_vector(theta, phi), unit_vector(phi / 2.0, theta * 2.0)).unwrap();
        let rec = bench.measure_setting(&comp, &setting, 0, m, Counting::Sampled(RngStream::new(seed))).unwrap();
        prop_assert!(rec.is_consistent());
        prop_assert_eq!(rec.m, m as f64);
        for v in [rec.n, rec.n1, rec.n2, rec.n12] {
            prop_assert_eq!(v, v.round());
        }
    }

    #[test]
    fn tomography_always_returns_a_state(seed in any::<u64>()) {
        let mut r = rng(seed);
        let bench = Bench::new(random_density(2, &mut r)).unwrap();
        let comp = vec![CompositeArmOperator::identity(1), CompositeArmOperator::identity(2)];
        let records: Vec<_> = sixteen_settings()
            .iter()
            .enumerate()
            .map(|(i, s)| bench.measure_setting(&comp, s, i, 200, Counting::Sampled(RngStream::new(seed).child(i as u64))).unwrap())
            .collect();
        let rec = qst_reconstruct(&records).unwrap();
        rec.validate().unwrap();
        prop_assert!(rec.min_eigenvalue() >= -1e-12);
        assert_abs_diff_eq!(rec.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn state_literals_round_trip(w in -1.0/3.0..=1.0f64, alpha in 0.0..1.57f64, gamma in 0.0..=1.0f64, eps in 0.0..=1.0f64) {
        for state in [StateSpec::Werner(w), StateSpec::Pure(alpha), StateSpec::Decohered { alpha, gamma, eps }] {
            let back: StateSpec = state.to_string().parse().unwrap();
            prop_assert_eq!(&back, &state);
        }
    }
}

#[test]
fn every_distillation_step_is_a_valid_state() {
    let mut r = rng(77);
    for _ in 0..40 {
        let rho = random_density(2, &mut r);
        let res = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        for step in &res.trace.steps {
            let out: DensityMatrix = optwit::slocc::apply_composites(&rho, &step.composite).unwrap();
            out.validate().unwrap();
            assert!(out.trace() <= 1.0 + 1e-12);
        }
    }
}
