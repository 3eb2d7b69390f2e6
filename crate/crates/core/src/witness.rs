//! Witness construction from the correlation extrema.
//!
//! After distillation the correlation matrix `T` is reduced by a signed SVD to
//! `lambda_1 >= lambda_2 >= lambda_3 >= 0` and the sign `q = sign(det T)`. The
//! witness obtained from the singlet witness by the distilling filters and the
//! aligning local unitaries then has expectation
//! `s0 (1 - lambda_1 - lambda_2 + q lambda_3) / 4`, and `max(0, -2 Tr(W rho))`
//! bounds the concurrence from below (with equality at the normal form).

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::Serialize;

use crate::distill::{normal_form, DistillOptions, DistillationResult};
use crate::error::{Error, Result};
use crate::qstate::{bloch_vector, kron_all, pauli, reduced_qubit, stokes_tensor, DensityMatrix, C64};
use crate::slocc::{so3_to_su2, CompositeArmOperator};

/// `|det T|` below which `q` defaults to -1.
pub const DET_ZERO: f64 = 1e-12;
/// Marginal DOP below which an exact state counts as fully distilled.
pub const OPTIMAL_DOP_TOL: f64 = 1e-8;

/// Signed singular values of the correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaTriple {
    pub lambda: [f64; 3],
    pub q: i8,
    /// Proper rotations with `O1^T T O2 = diag(l1, l2, q l3)`.
    pub rotations: (Matrix3<f64>, Matrix3<f64>),
}

impl LambdaTriple {
    /// `diag(l1, l2, q l3)`.
    pub fn signed_diagonal(&self) -> Vector3<f64> {
        Vector3::new(self.lambda[0], self.lambda[1], f64::from(self.q) * self.lambda[2])
    }
}

/// Signed SVD of the correlation block.
pub fn lambda_svd(t: &Matrix3<f64>) -> LambdaTriple {
    let svd = t.svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let sv = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut o1 = Matrix3::zeros();
    let mut o2 = Matrix3::zeros();
    let mut lam = [0.0; 3];
    for (dst, &src) in idx.iter().enumerate() {
        o1.set_column(dst, &u.column(src));
        o2.set_column(dst, &v.column(src));
        lam[dst] = sv[src];
    }
    let mut third_sign = 1.0;
    if o1.determinant() < 0.0 {
        o1.column_mut(2).neg_mut();
        third_sign = -third_sign;
    }
    if o2.determinant() < 0.0 {
        o2.column_mut(2).neg_mut();
        third_sign = -third_sign;
    }
    let det = t.determinant();
    let q: i8 = if det.abs() < DET_ZERO || det < 0.0 { -1 } else { 1 };
    if (third_sign < 0.0) != (q < 0) && det.abs() >= DET_ZERO {
        // Rounding disagreement between det T and det U det V; trust det T.
        o2.column_mut(2).neg_mut();
        o1.column_mut(2).neg_mut();
    }
    LambdaTriple { lambda: lam, q, rotations: (o1, o2) }
}

/// Witness expectation values and the concurrence bounds they imply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub q: i8,
    pub s0: f64,
    #[serde(rename = "trW")]
    pub tr_w: f64,
    #[serde(rename = "trW_dis")]
    pub tr_w_dis: f64,
    pub c_bound: f64,
    pub c_bound_dis: f64,
    pub optimal: bool,
    #[serde(skip)]
    pub lambdas: LambdaTriple,
}

/// `Tr(W rho) = s0 (1 - l1 - l2 + q l3) / 4` and `C >= max(0, -2 Tr(W rho))`.
pub fn witness_value(lambdas: &LambdaTriple, s0: f64, optimal: bool) -> Result<WitnessReport> {
    if !(s0 > 0.0) {
        return Err(Error::InvalidParameter(format!("s0 must be positive, got {s0}")));
    }
    let [l1, l2, l3] = lambdas.lambda;
    let tr_w_dis = (1.0 - l1 - l2 + f64::from(lambdas.q) * l3) / 4.0;
    let tr_w = s0 * tr_w_dis;
    let c_bound = (-2.0 * tr_w).max(0.0);
    Ok(WitnessReport {
        lambda1: l1,
        lambda2: l2,
        lambda3: l3,
        q: lambdas.q,
        s0,
        tr_w,
        tr_w_dis,
        c_bound,
        c_bound_dis: c_bound / s0,
        optimal,
        lambdas: *lambdas,
    })
}

/// `W_Bell = I/2 - |psi-><psi-| = (I + sum_i s_i (x) s_i) / 4`.
pub fn bell_witness() -> DMatrix<C64> {
    let mut w = kron_all(&[pauli(0), pauli(0)]);
    for i in 1..4 {
        w += kron_all(&[pauli(i), pauli(i)]);
    }
    w.map(|z| z / 4.0)
}

/// Explicit witness operators for the filtered state and the original state.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedWitness {
    pub w_dis: DMatrix<C64>,
    pub w_rho: DMatrix<C64>,
}

/// Builds `W_dis = (U1 x U2)^dag W_Bell (U1 x U2)` with the unitaries that rotate
/// `T` into `-diag(l1, l2, -q l3)`, then
/// `W_rho = (A1 x A2)^dag W_dis (A1 x A2) / sqrt(p1 p2)`.
pub fn materialize_witness(
    lambdas: &LambdaTriple,
    composite: &[CompositeArmOperator],
    s0: f64,
) -> Result<MaterializedWitness> {
    if !(s0 > 0.0) {
        return Err(Error::InvalidParameter(format!("s0 must be positive, got {s0}")));
    }
    let (o1, o2) = lambdas.rotations;
    // A pi rotation about z on arm 1 turns diag(l1, l2, q l3) into the
    // singlet-like diag(-l1, -l2, q l3).
    let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
    let u1 = so3_to_su2(&(flip * o1.transpose()))?;
    let u2 = so3_to_su2(&o2.transpose())?;
    let uu = kron_all(&[u1, u2]);
    let w_dis = uu.adjoint() * bell_witness() * &uu;

    let mut ops = [nalgebra::Matrix2::identity(); 2];
    for op in composite {
        if op.arm == 0 || op.arm > 2 {
            return Err(Error::InvalidArm(op.arm));
        }
        ops[op.arm - 1] = op.a;
    }
    let p_prod: f64 = composite.iter().map(|a| a.p_eff()).product();
    let aa = kron_all(&ops);
    let w_rho = (aa.adjoint() * &w_dis * aa).map(|z| z / p_prod.sqrt());
    Ok(MaterializedWitness { w_dis, w_rho })
}

/// The best witness reachable by local unitaries for a filtered state `rho_k`
/// (normalized) with SLOCC scale `s0_k`. Marked optimal when both marginals of
/// `rho_k` are maximally mixed.
pub fn best_witness_bound(rho_k: &DensityMatrix, s0_k: f64) -> Result<WitnessReport> {
    let rho_k = if rho_k.is_normalized() { rho_k.clone() } else { rho_k.normalize()? };
    let lambdas = lambda_svd(&stokes_tensor(&rho_k)?.t());
    let max_dop = (0..2)
        .map(|q| bloch_vector(&reduced_qubit(&rho_k, q)?).map(|b| b.dop()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    witness_value(&lambdas, s0_k, max_dop <= OPTIMAL_DOP_TOL)
}

/// `Tr(W_GHZ rho)` with `W_GHZ = 3I/4 - |GHZ><GHZ|`.
pub fn ghz_witness_value(rho3: &DensityMatrix) -> Result<f64> {
    if rho3.dim() != 8 {
        return Err(Error::DimensionMismatch { expected: 8, actual: rho3.dim() });
    }
    let e = rho3.entries();
    let overlap = 0.5 * (e[(0, 0)] + e[(0, 7)] + e[(7, 0)] + e[(7, 7)]).re;
    Ok(0.75 * rho3.trace() - overlap)
}

/// `max(0, -2 Tr(W_GHZ rho))`, the lower bound reported for the GHZ branch.
pub fn ghz_bound(value: f64) -> f64 {
    (-2.0 * value).max(0.0)
}

/// Normal-form iteration for two or three qubits.
pub fn nqubit_normal_form(rho: &DensityMatrix, tol: f64, max_steps: usize) -> Result<DistillationResult> {
    let n = rho.num_qubits();
    if !(2..=3).contains(&n) {
        return Err(Error::UnsupportedDimension(rho.dim()));
    }
    normal_form(rho, &DistillOptions { tol_dop: tol, max_steps, filter_phase: 0.0 })
}

/// `Tr(W sigma)` for a (possibly non-Hermitian-rounded) operator.
pub fn expectation(w: &DMatrix<C64>, rho: &DensityMatrix) -> f64 {
    (w * rho.entries()).trace().re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::distill_iterate;
    use crate::oracle::wootters_concurrence;
    use crate::qstate::{ghz, pure_state, random_density, random_pure, singlet, werner};
    use crate::slocc::apply_composites;
    use crate::qstate::c;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let g = Matrix3::from_fn(|_, _| StandardNormal.sample(rng));
        let mut q = g.qr().q();
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        q
    }

    fn check_triple(t: &Matrix3<f64>, l: &LambdaTriple) {
        assert!(l.lambda[0] >= l.lambda[1] && l.lambda[1] >= l.lambda[2] && l.lambda[2] >= 0.0);
        let (o1, o2) = l.rotations;
        assert!((o1.determinant() - 1.0).abs() < 1e-9);
        assert!((o2.determinant() - 1.0).abs() < 1e-9);
        let d = o1.transpose() * t * o2;
        let want = Matrix3::from_diagonal(&l.signed_diagonal());
        assert!((d - want).abs().max() < 1e-9, "{d} vs {want}");
    }

    #[test]
    fn werner_correlations() {
        let t = -Matrix3::identity() * 0.7;
        let l = lambda_svd(&t);
        assert!(l.lambda.iter().all(|x| (x - 0.7).abs() < 1e-12));
        assert_eq!(l.q, -1);
        check_triple(&t, &l);
    }

    #[test]
    fn product_state_uses_det_zero_convention() {
        let t = Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0));
        let l = lambda_svd(&t);
        assert!((l.lambda[0] - 1.0).abs() < 1e-12 && l.lambda[1].abs() < 1e-12 && l.lambda[2].abs() < 1e-12);
        assert_eq!(l.q, -1);
        check_triple(&t, &l);
    }

    #[test]
    fn random_correlations_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rho = random_density(2, &mut rng);
            let t = stokes_tensor(&rho).unwrap().t();
            let l = lambda_svd(&t);
            check_triple(&t, &l);
            let (o1, o2) = l.rotations;
            let back = o1 * Matrix3::from_diagonal(&l.signed_diagonal()) * o2.transpose();
            assert!((back - t).abs().max() < 1e-10);
            assert_eq!(l.q, if t.determinant() < 0.0 { -1 } else { 1 });
        }
    }

    #[test]
    fn lambdas_are_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100 {
            let t = stokes_tensor(&random_density(2, &mut rng)).unwrap().t();
            let r1 = random_rotation(&mut rng);
            let r2 = random_rotation(&mut rng);
            let a = lambda_svd(&t);
            let b = lambda_svd(&(r1.transpose() * t * r2));
            for i in 0..3 {
                assert!((a.lambda[i] - b.lambda[i]).abs() < 1e-10);
            }
            assert_eq!(a.q, b.q);
        }
    }

    #[test]
    fn witness_value_examples() {
        let singlet_l = lambda_svd(&(-Matrix3::identity()));
        let r = witness_value(&singlet_l, 1.0, true).unwrap();
        assert!((r.tr_w + 0.5).abs() < 1e-12);
        assert!((r.c_bound - 1.0).abs() < 1e-12);

        let w = werner(0.8).unwrap();
        let l = lambda_svd(&stokes_tensor(&w).unwrap().t());
        let r = witness_value(&l, 1.0, true).unwrap();
        assert!((r.c_bound - 0.7).abs() < 1e-12);
        assert!((r.c_bound - wootters_concurrence(&w).unwrap()).abs() < 1e-9);

        assert!(witness_value(&l, 0.0, false).is_err());
    }

    #[test]
    fn reported_ratio_fixes_s0() {
        // C(rho) ~ 0.18 with C(rho_dis) ~ 0.33 implies s0 = 0.18 / 0.33.
        let s0 = 0.18 / 0.33;
        let l = LambdaTriple { lambda: [0.8, 0.43, 0.43], q: -1, rotations: (Matrix3::identity(), Matrix3::identity()) };
        let r = witness_value(&l, s0, true).unwrap();
        assert!((r.c_bound_dis - 0.33).abs() < 1e-12);
        assert!((r.c_bound - 0.18).abs() < 1e-12);
        assert!((s0 - 0.545).abs() < 1e-3);
    }

    #[test]
    fn materialized_witness_on_singlet_is_the_bell_witness() {
        let s = singlet();
        let l = lambda_svd(&stokes_tensor(&s).unwrap().t());
        let comp = [CompositeArmOperator::identity(1), CompositeArmOperator::identity(2)];
        let w = materialize_witness(&l, &comp, 1.0).unwrap();
        let diff = (&w.w_rho - bell_witness()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn materialized_witness_matches_formula_for_pure_state() {
        let rho = pure_state(0.1f64.sqrt().asin());
        let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        let dis = r.rho_dis.as_ref().unwrap();
        let l = lambda_svd(&stokes_tensor(dis).unwrap().t());
        let report = witness_value(&l, r.s0(), true).unwrap();
        let w = materialize_witness(&l, &r.composite, r.s0()).unwrap();
        let tr = expectation(&w.w_rho, &rho);
        assert!((tr - report.tr_w).abs() < 1e-8);
        assert!((-2.0 * tr - 0.6).abs() < 1e-8);
        assert!((expectation(&w.w_dis, dis) - report.tr_w_dis).abs() < 1e-8);
    }

    #[test]
    fn materialized_witnesses_are_nonnegative_on_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..5 {
            let rho = random_density(2, &mut rng);
            let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
            let l = lambda_svd(&stokes_tensor(r.rho_dis.as_ref().unwrap()).unwrap().t());
            let w = materialize_witness(&l, &r.composite, r.s0()).unwrap();
            let report = witness_value(&l, r.s0(), true).unwrap();
            assert!((expectation(&w.w_rho, &rho) - report.tr_w).abs() < 1e-8);
            for _ in 0..500 {
                let a = random_pure(1, &mut rng);
                let b = random_pure(1, &mut rng);
                let sigma = DensityMatrix::new_hermitized(a.entries().kronecker(b.entries()), true).unwrap();
                assert!(expectation(&w.w_rho, &sigma) >= -1e-9);
            }
        }
    }

    #[test]
    fn best_witness_is_a_lower_bound_at_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..100 {
            let rho = random_density(2, &mut rng);
            let c = wootters_concurrence(&rho).unwrap();
            let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
            for s in &r.trace.steps {
                let state = apply_composites(&rho, &s.composite).unwrap().normalize().unwrap();
                let rep = best_witness_bound(&state, s.s0).unwrap();
                assert!(rep.c_bound <= c + 1e-9, "bound {} > C {}", rep.c_bound, c);
            }
            let last = r.final_step();
            let rep = best_witness_bound(r.rho_dis.as_ref().unwrap(), last.s0).unwrap();
            assert!(rep.optimal);
            assert!((rep.c_bound - c).abs() < 1e-6);
        }
    }

    #[test]
    fn best_witness_examples() {
        let w = werner(0.6).unwrap();
        let rep = best_witness_bound(&w, 1.0).unwrap();
        assert!(rep.optimal);
        assert!((rep.c_bound - wootters_concurrence(&w).unwrap()).abs() < 1e-12);

        let rho = pure_state(0.1f64.sqrt().asin());
        let rep = best_witness_bound(&rho, 1.0).unwrap();
        assert!(!rep.optimal);
        assert!((rep.lambda1 - 1.0).abs() < 1e-12);
        assert!((rep.lambda2 - 0.6).abs() < 1e-12 && (rep.lambda3 - 0.6).abs() < 1e-12);
        assert_eq!(rep.q, -1);
        assert!((rep.c_bound - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ghz_values() {
        assert_eq!(ghz_witness_value(&ghz(3)).unwrap(), -0.25);
        let zero = DensityMatrix::from_pure(&DVector::from_fn(8, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0))).unwrap();
        assert!((ghz_witness_value(&zero).unwrap() - 0.25).abs() < 1e-15);
        assert!(ghz_witness_value(&singlet()).is_err());
        assert_eq!(ghz_bound(-0.25), 0.5);
    }

    #[test]
    fn asymmetric_ghz_distills_to_ghz() {
        let a = 0.8f64.sqrt();
        let b = 0.2f64.sqrt();
        let psi = DVector::from_fn(8, |i, _| match i {
            0 => c(a, 0.0),
            7 => c(b, 0.0),
            _ => c(0.0, 0.0),
        });
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let r = nqubit_normal_form(&rho, 1e-10, 50).unwrap();
        assert!(r.converged);
        let v = ghz_witness_value(r.rho_dis.as_ref().unwrap()).unwrap();
        assert!((v + 0.25).abs() < 1e-6);

        let g = nqubit_normal_form(&ghz(3), 1e-10, 50).unwrap();
        assert!(g.converged && g.trace.steps.len() == 1);
    }

    #[test]
    fn random_three_qubit_states_reach_normal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(333);
        for _ in 0..10 {
            let rho = random_density(3, &mut rng);
            let r = nqubit_normal_form(&rho, 1e-6, 600).unwrap();
            assert!(r.converged);
            let dis = r.rho_dis.unwrap();
            for q in 0..3 {
                assert!(bloch_vector(&reduced_qubit(&dis, q).unwrap()).unwrap().dop() <= 1e-6);
            }
        }
    }

    #[test]
    fn normal_form_rejects_one_qubit() {
        assert!(nqubit_normal_form(&DensityMatrix::maximally_mixed(1).unwrap(), 1e-8, 10).is_err());
    }
}
