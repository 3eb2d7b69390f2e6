//! Iterative Procrustean distillation.
//!
//! Each step measures the single-photon marginal of one arm, computes the
//! filter that makes it maximally mixed, and folds that filter into the arm's
//! composite operator. Arms are visited in order 1, 2, (3,) 1, 2, ... until
//! every degree of polarization is below tolerance. The fixed point is the
//! normal form: all marginals maximally mixed.
//!
//! The loop only ever sees marginal estimates, so the same driver runs on exact
//! marginals ([`ExactMarginals`]) and on simulated photon counts.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::qstate::{bloch_vector, c, reduced_qubit, BlochVector, DensityMatrix, C64};
use crate::slocc::{apply_composites, CompositeArmOperator, LocalFilter};

/// Marginal eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Minor marginal eigenvalue below which erasure is refused.
pub const NEAR_EXTINCTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillOptions {
    pub tol_dop: f64,
    pub max_steps: usize,
    /// Retardance picked up by the filtered axis of every physical filter.
    pub filter_phase: f64,
}

/// Step budget for exact marginals. Erasure converges linearly and slowly
/// conditioned states need a few hundred steps to reach 1e-8.
pub const NOISELESS_MAX_STEPS: usize = 1000;
/// Step budget for count-driven runs.
pub const SAMPLED_MAX_STEPS: usize = 50;

impl DistillOptions {
    pub fn noiseless() -> Self {
        Self { tol_dop: 1e-8, max_steps: NOISELESS_MAX_STEPS, filter_phase: 0.0 }
    }

    pub fn sampled() -> Self {
        Self { tol_dop: 0.1, max_steps: SAMPLED_MAX_STEPS, filter_phase: 0.0 }
    }
}

/// A single-arm Bloch vector estimate with per-component standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochEstimate {
    pub r: Vector3<f64>,
    pub sigma: Vector3<f64>,
}

impl BlochEstimate {
    pub fn exact(r: Vector3<f64>) -> Self {
        Self { r, sigma: Vector3::zeros() }
    }

    pub fn dop(&self) -> f64 {
        self.r.norm()
    }

    /// Propagated standard error of the DOP.
    pub fn dop_sigma(&self) -> f64 {
        let n = self.r.norm();
        if n > 0.0 {
            (self.r.component_mul(&self.sigma)).norm() / n
        } else {
            self.sigma.norm()
        }
    }
}

/// Marginals of every arm at one filter setting, plus the transmitted fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    pub bloch: Vec<BlochEstimate>,
    pub pass_prob: f64,
    /// Detector settings spent on this estimate (0 for exact marginals).
    pub settings: usize,
}

/// Source of marginal information for the distillation loop.
pub trait MarginalEstimator {
    fn num_arms(&self) -> usize;

    /// Marginals of the state behind `composite`. `step` is the distillation
    /// step index, usable for deterministic random substreams.
    fn estimate(&mut self, step: usize, composite: &[CompositeArmOperator]) -> Result<MarginalEstimate>;
}

/// Infinite-count estimator reading marginals straight off the state.
#[derive(Debug, Clone)]
pub struct ExactMarginals<'a> {
    rho: &'a DensityMatrix,
}

impl<'a> ExactMarginals<'a> {
    pub fn new(rho: &'a DensityMatrix) -> Self {
        Self { rho }
    }
}

impl MarginalEstimator for ExactMarginals<'_> {
    fn num_arms(&self) -> usize {
        self.rho.num_qubits()
    }

    fn estimate(&mut self, _step: usize, composite: &[CompositeArmOperator]) -> Result<MarginalEstimate> {
        let out = apply_composites(self.rho, composite)?;
        let pass_prob = out.trace() / self.rho.trace();
        let bloch = (0..self.num_arms())
            .map(|q| Ok(BlochEstimate::exact(bloch_vector(&reduced_qubit(&out, q)?)?.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalEstimate { bloch, pass_prob, settings: 0 })
    }
}

/// One row of the distillation log. Step 0 is the unfiltered state.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillStep {
    pub k: usize,
    /// Arm adjusted at this step (1-based); `None` at k = 0.
    pub arm: Option<usize>,
    pub filter: LocalFilter,
    pub dops: Vec<f64>,
    pub dop_sigma: Vec<f64>,
    pub pass_prob: f64,
    pub p_eff: Vec<f64>,
    pub s0: f64,
    pub composite: Vec<CompositeArmOperator>,
}

impl DistillStep {
    pub fn max_dop(&self) -> f64 {
        self.dops.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillationTrace {
    pub steps: Vec<DistillStep>,
}

/// A parsed trace CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub arm: usize,
    pub f: [f64; 4],
    pub p: f64,
    pub dops: Vec<f64>,
    pub pass_prob: f64,
    pub p_eff: Vec<f64>,
    pub s0: f64,
}

pub fn trace_csv_header(num_arms: usize) -> String {
    let mut h = String::from("k,arm,f_re0,f_im0,f_re1,f_im1,p");
    for j in 1..=num_arms {
        let _ = write!(h, ",dop{j}");
    }
    h.push_str(",pass_prob");
    for j in 1..=num_arms {
        let _ = write!(h, ",p{j}_eff");
    }
    h.push_str(",s0");
    h
}

impl DistillationTrace {
    pub fn num_arms(&self) -> usize {
        self.steps.first().map_or(2, |s| s.dops.len())
    }

    /// One row per step; for two arms the header is
    /// `k,arm,f_re0,f_im0,f_re1,f_im1,p,dop1,dop2,pass_prob,p1_eff,p2_eff,s0`.
    pub fn to_csv(&self) -> String {
        let mut out = trace_csv_header(self.num_arms());
        out.push('\n');
        for s in &self.steps {
            let f = s.filter.f;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                s.k,
                s.arm.unwrap_or(0),
                f[0].re,
                f[0].im,
                f[1].re,
                f[1].im,
                s.filter.p
            );
            for d in &s.dops {
                let _ = write!(out, ",{d}");
            }
            let _ = write!(out, ",{}", s.pass_prob);
            for p in &s.p_eff {
                let _ = write!(out, ",{p}");
            }
            let _ = writeln!(out, ",{}", s.s0);
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidParameter("empty trace csv".into()))?;
        let cols = header.split(',').count();
        if cols < 9 || (cols - 9) % 2 != 0 {
            return Err(Error::InvalidParameter(format!("bad trace header {header:?}")));
        }
        let n = (cols - 9) / 2;
        if header != trace_csv_header(n) {
            return Err(Error::InvalidParameter(format!("bad trace header {header:?}")));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let v: Vec<&str> = line.split(',').collect();
                if v.len() != cols {
                    return Err(Error::InvalidParameter(format!("bad trace row {line:?}")));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidParameter(format!("{s:?}: {e}")));
                let int = |s: &str| s.parse::<usize>().map_err(|e| Error::InvalidParameter(format!("{s:?}: {e}")));
                Ok(TraceRow {
                    k: int(v[0])?,
                    arm: int(v[1])?,
                    f: [num(v[2])?, num(v[3])?, num(v[4])?, num(v[5])?],
                    p: num(v[6])?,
                    dops: v[7..7 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                    pass_prob: num(v[7 + n])?,
                    p_eff: v[8 + n..8 + 2 * n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                    s0: num(v[8 + 2 * n])?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationResult {
    /// The normalized distilled state. Only known when the driver had the
    /// state itself; `None` for count-driven runs.
    pub rho_dis: Option<DensityMatrix>,
    pub composite: Vec<CompositeArmOperator>,
    pub trace: DistillationTrace,
    pub converged: bool,
    /// Set when some DOP standard error exceeded the tolerance, i.e. the
    /// stopping rule could not resolve the target.
    pub noise_limited: bool,
    pub settings_used: usize,
}

impl DistillationResult {
    pub fn final_step(&self) -> &DistillStep {
        self.trace.steps.last().expect("trace always has step 0")
    }

    pub fn s0(&self) -> f64 {
        self.final_step().s0
    }
}

fn canonical_phase(v: Vector2<C64>) -> Vector2<C64> {
    let lead = if v[0].norm() > 1e-12 { v[0] } else { v[1] };
    let phase = lead / lead.norm();
    let out = v * phase.conj();
    out / c(out.norm(), 0.0)
}

/// The filter that maps the marginal `rho1` to a multiple of the identity:
/// it attenuates the majority eigenvector by `p = mu_min / mu_max`.
///
/// A degenerate marginal yields the identity filter.
pub fn erasing_filter(rho1: &DensityMatrix, arm: usize) -> Result<LocalFilter> {
    if rho1.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, actual: rho1.dim() });
    }
    let tr = rho1.trace();
    if tr <= 0.0 {
        return Err(Error::InvalidTrace(tr));
    }
    let m: DMatrix<C64> = rho1.entries().map(|z| z / tr);
    let eig = SymmetricEigen::new(m);
    let (imax, imin) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (mu_max, mu_min) = (eig.eigenvalues[imax], eig.eigenvalues[imin]);
    if mu_max - mu_min <= DEGENERACY_TOL {
        return Ok(LocalFilter::identity(arm));
    }
    if mu_min < NEAR_EXTINCTION {
        return Err(Error::NearExtinction(mu_min));
    }
    let f = canonical_phase(Vector2::new(eig.eigenvectors[(0, imax)], eig.eigenvectors[(1, imax)]));
    LocalFilter::new(arm, f, mu_min / mu_max)
}

fn s0_of(pass_prob: f64, p_eff: &[f64]) -> f64 {
    pass_prob / p_eff.iter().product::<f64>().sqrt()
}

fn record_step(
    k: usize,
    arm: Option<usize>,
    filter: LocalFilter,
    est: &MarginalEstimate,
    composite: &[CompositeArmOperator],
) -> DistillStep {
    let p_eff: Vec<f64> = composite.iter().map(|a| a.p_eff()).collect();
    DistillStep {
        k,
        arm,
        filter,
        dops: est.bloch.iter().map(|b| b.dop()).collect(),
        dop_sigma: est.bloch.iter().map(|b| b.dop_sigma()).collect(),
        pass_prob: est.pass_prob,
        s0: s0_of(est.pass_prob, &p_eff),
        p_eff,
        composite: composite.to_vec(),
    }
}

/// The distillation loop over any marginal source.
pub fn distill_with<E: MarginalEstimator + ?Sized>(est: &mut E, opts: &DistillOptions) -> Result<DistillationResult> {
    if !(opts.tol_dop > 0.0) {
        return Err(Error::InvalidParameter(format!("tol_dop must be positive, got {}", opts.tol_dop)));
    }
    let n = est.num_arms();
    let mut composite: Vec<CompositeArmOperator> = (1..=n).map(CompositeArmOperator::identity).collect();
    let mut current = est.estimate(0, &composite)?;
    let mut settings_used = current.settings;
    let mut steps = vec![record_step(0, None, LocalFilter::identity(1), &current, &composite)];
    let done = |s: &DistillStep| s.max_dop() <= opts.tol_dop;
    let mut converged = done(&steps[0]);

    let mut k = 0;
    while !converged && k < opts.max_steps {
        k += 1;
        let q = (k - 1) % n;
        let marginal = BlochVector(current.bloch[q].r).to_density();
        let filter = erasing_filter(&marginal, q + 1)?.with_phase(opts.filter_phase);
        if !filter.is_identity() {
            composite[q] = composite[q].then(&filter.kraus())?;
        }
        current = est.estimate(k, &composite)?;
        settings_used += current.settings;
        steps.push(record_step(k, Some(q + 1), filter, &current, &composite));
        converged = done(steps.last().expect("just pushed"));
    }

    let noise_limited = steps.iter().any(|s| s.dop_sigma.iter().any(|&e| e > opts.tol_dop));
    Ok(DistillationResult {
        rho_dis: None,
        composite,
        trace: DistillationTrace { steps },
        converged,
        noise_limited,
        settings_used,
    })
}

/// Distillation of a known state on any number of qubits with exact marginals.
pub fn normal_form(rho: &DensityMatrix, opts: &DistillOptions) -> Result<DistillationResult> {
    let rho = if rho.is_normalized() { rho.clone() } else { rho.normalize()? };
    let mut result = distill_with(&mut ExactMarginals::new(&rho), opts)?;
    result.rho_dis = Some(apply_composites(&rho, &result.composite)?.normalize()?);
    Ok(result)
}

/// Noiseless two-qubit distillation.
pub fn distill_iterate(rho: &DensityMatrix, opts: &DistillOptions) -> Result<DistillationResult> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
    }
    normal_form(rho, opts)
}

/// Distillation driven by estimated marginals (finite counts).
pub fn distill_iterate_sampled<E: MarginalEstimator + ?Sized>(
    estimator: &mut E,
    opts: &DistillOptions,
) -> Result<DistillationResult> {
    distill_with(estimator, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::wootters_concurrence;
    use crate::qstate::{dop, partial_trace, pure_state, random_density, random_unitary2, singlet, stokes_tensor, werner, Arm};
    use nalgebra::{DVector, Matrix3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag1(a: f64, b: f64) -> DensityMatrix {
        DensityMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![c(a, 0.0), c(b, 0.0)])), true).unwrap()
    }

    #[test]
    fn erasing_filter_on_mixed_marginal_is_identity() {
        let f = erasing_filter(&diag1(0.5, 0.5), 1).unwrap();
        assert_eq!(f.p, 1.0);
    }

    #[test]
    fn erasing_filter_diagonal_example() {
        let rho1 = diag1(0.75, 0.25);
        let f = erasing_filter(&rho1, 1).unwrap();
        assert!((f.p - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.f - Vector2::new(c(1.0, 0.0), c(0.0, 0.0))).norm() < 1e-15);
        let k = f.kraus();
        let out = k * nalgebra::Matrix2::new(c(0.75, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.25, 0.0)) * k.adjoint();
        assert!((out - nalgebra::Matrix2::identity() * c(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn erasing_filter_rotated_basis() {
        // eigenbasis |+>, |->, eigenvalues 0.9, 0.1
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DVector::from_vec(vec![c(h, 0.0), c(h, 0.0)]);
        let minus = DVector::from_vec(vec![c(h, 0.0), c(-h, 0.0)]);
        let m = &plus * plus.adjoint() * c(0.9, 0.0) + &minus * minus.adjoint() * c(0.1, 0.0);
        let f = erasing_filter(&DensityMatrix::new_hermitized(m, true).unwrap(), 2).unwrap();
        assert!((f.p - 1.0 / 9.0).abs() < 1e-12);
        assert!((f.f - Vector2::new(c(h, 0.0), c(h, 0.0))).norm() < 1e-12);
        assert_eq!(f.arm, 2);
    }

    #[test]
    fn erasing_filter_whitens_random_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let rho1 = random_density(1, &mut rng);
            let k = erasing_filter(&rho1, 1).unwrap().kraus();
            let m = nalgebra::Matrix2::from_fn(|r, col| rho1.entries()[(r, col)]);
            let out = k * m * k.adjoint();
            let scale = out[(0, 0)];
            assert!((out - nalgebra::Matrix2::identity() * scale).norm() < 1e-10);
        }
    }

    #[test]
    fn erasing_filter_refuses_pure_marginals() {
        assert!(matches!(erasing_filter(&diag1(1.0, 0.0), 1), Err(Error::NearExtinction(_))));
    }

    #[test]
    fn singlet_needs_no_filtering() {
        let r = distill_iterate(&singlet(), &DistillOptions::noiseless()).unwrap();
        assert!(r.converged);
        assert_eq!(r.trace.steps.len(), 1);
        assert_eq!(r.s0(), 1.0);
        assert!(r.rho_dis.unwrap().max_abs_diff(&singlet()) < 1e-15);
    }

    #[test]
    fn asymmetric_pure_state_distills_in_one_step() {
        // sqrt(0.9)|00> + sqrt(0.1)|11>
        let alpha = 0.1f64.sqrt().asin();
        let rho = pure_state(alpha);
        let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        assert!(r.converged);
        assert_eq!(r.trace.steps.len(), 2);
        let step = &r.trace.steps[1];
        assert_eq!(step.arm, Some(1));
        assert!((step.filter.p - 1.0 / 9.0).abs() < 1e-12);
        assert!((step.pass_prob - 0.2).abs() < 1e-12);
        assert!((step.p_eff[0] - 1.0 / 9.0).abs() < 1e-12);
        assert!((step.s0 - 0.6).abs() < 1e-12);
        let c_rho = wootters_concurrence(&rho).unwrap();
        let c_dis = wootters_concurrence(r.rho_dis.as_ref().unwrap()).unwrap();
        assert!((c_rho - 0.6).abs() < 1e-7);
        assert!((c_dis - 1.0).abs() < 1e-7);
    }

    #[test]
    fn random_states_reach_normal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut slow = Vec::new();
        for i in 0..100 {
            let rho = random_density(2, &mut rng);
            let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
            assert!(r.converged, "state {i} did not converge");
            let dis = r.rho_dis.unwrap();
            for arm in [Arm::One, Arm::Two] {
                assert!(dop(&partial_trace(&dis, arm).unwrap()).unwrap() <= 1e-8);
            }
            let t = stokes_tensor(&dis).unwrap().t();
            let sv = t.svd(true, true);
            let aligned = sv.u.unwrap().transpose() * t * sv.v_t.unwrap().transpose();
            let off = (aligned - Matrix3::from_diagonal(&aligned.diagonal())).amax();
            assert!(off <= 1e-6);
            if r.trace.steps.len() > 51 {
                slow.push((i, r.trace.steps.len() - 1));
            }
        }
        // Linear convergence: a sizeable fraction needs more than 50 steps.
        eprintln!("states needing more than 50 steps (index, steps): {slow:?}");
    }

    #[test]
    fn each_step_erases_its_arm_and_scales_concurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..40 {
            let rho = random_density(2, &mut rng);
            let c0 = wootters_concurrence(&rho).unwrap();
            let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
            for s in &r.trace.steps {
                if let Some(arm) = s.arm {
                    assert!(s.dops[arm - 1] <= 1e-10, "step {} arm {arm} dop {}", s.k, s.dops[arm - 1]);
                }
                let expect = s.pass_prob / (s.p_eff[0] * s.p_eff[1]).sqrt();
                assert!((s.s0 - expect).abs() <= 1e-12);
                let state = apply_composites(&rho, &s.composite).unwrap().normalize().unwrap();
                let ck = wootters_concurrence(&state).unwrap();
                assert!((ck - c0 / s.s0).abs() <= 1e-9, "{ck} vs {}", c0 / s.s0);
            }
        }
    }

    #[test]
    fn max_dop_contracts_every_two_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut counterexamples = Vec::new();
        for i in 0..100 {
            let rho = random_density(2, &mut rng);
            let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
            let d: Vec<f64> = r.trace.steps.iter().map(|s| s.max_dop()).collect();
            for k in 0..d.len().saturating_sub(2) {
                if d[k + 2] > d[k] + 1e-12 {
                    counterexamples.push((i, k, d[k], d[k + 2]));
                }
            }
        }
        assert!(counterexamples.is_empty(), "non-contracting steps: {counterexamples:?}");
    }

    #[test]
    fn local_unitaries_do_not_change_the_filtering_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(2, &mut rng);
        let u1 = random_unitary2(&mut rng);
        let u2 = random_unitary2(&mut rng);
        let rotated = crate::slocc::apply_slocc(&rho, &u1, &u2).unwrap().normalize().unwrap();
        let a = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        let b = distill_iterate(&rotated, &DistillOptions::noiseless()).unwrap();
        assert!((a.s0() - b.s0()).abs() < 1e-9);
    }

    #[test]
    fn werner_marginals_are_already_mixed() {
        let r = distill_iterate(&werner(0.8).unwrap(), &DistillOptions::noiseless()).unwrap();
        assert!(r.converged);
        assert_eq!(r.s0(), 1.0);
    }

    #[test]
    fn quasi_distillable_state_reports_extinction() {
        // |00><00| mixed with a little singlet: rank 2, marginal far from pure,
        // but a pure product state is refused immediately.
        let zero = DensityMatrix::from_pure(&DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])).unwrap();
        let err = distill_iterate(&zero, &DistillOptions::noiseless()).unwrap_err();
        assert!(matches!(err, Error::NearExtinction(_)));
    }

    #[test]
    fn step_budget_exhaustion_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho = random_density(2, &mut rng);
        let opts = DistillOptions { tol_dop: 1e-14, max_steps: 3, filter_phase: 0.0 };
        let r = distill_iterate(&rho, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.trace.steps.len(), 4);
    }

    #[test]
    fn filter_phase_leaves_the_identity_intact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rho = random_density(2, &mut rng);
        let opts = DistillOptions { filter_phase: 0.4, ..DistillOptions::noiseless() };
        let r = distill_iterate(&rho, &opts).unwrap();
        assert!(r.converged);
        let c0 = wootters_concurrence(&rho).unwrap();
        let c1 = wootters_concurrence(r.rho_dis.as_ref().unwrap()).unwrap();
        assert!((c1 - c0 / r.s0()).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rho = random_density(2, &mut rng);
        let r = distill_iterate(&rho, &DistillOptions::noiseless()).unwrap();
        let csv = r.trace.to_csv();
        assert!(csv.starts_with("k,arm,f_re0,f_im0,f_re1,f_im1,p,dop1,dop2,pass_prob,p1_eff,p2_eff,s0\n"));
        let rows = DistillationTrace::parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), r.trace.steps.len());
        for (row, step) in rows.iter().zip(&r.trace.steps) {
            assert_eq!(row.k, step.k);
            assert_eq!(row.s0, step.s0);
            assert_eq!(row.dops, step.dops);
        }
    }
}
