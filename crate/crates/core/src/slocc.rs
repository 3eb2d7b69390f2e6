//! Local operations on photon pairs: polarization-dependent loss filters,
//! waveplates, composite per-arm operators, and the SO(3) -> SU(2) lift.

use nalgebra::{DMatrix, Matrix2, Matrix3, Rotation3, UnitQuaternion, Vector2};

use crate::error::{Error, Result};
use crate::qstate::{c, kron_all, pauli, DensityMatrix, C64};

pub const UNIT_TOL: f64 = 1e-12;
/// Below this output trace a filtered state is treated as extinguished.
pub const EXTINCTION_TRACE: f64 = 1e-12;

fn outer(v: &Vector2<C64>) -> Matrix2<C64> {
    v * v.adjoint()
}

/// Singular values of a 2x2 matrix, largest first.
pub fn singular_values(m: &Matrix2<C64>) -> (f64, f64) {
    let sv = m.singular_values();
    (sv[0].max(sv[1]), sv[0].min(sv[1]))
}

pub fn spectral_norm(m: &Matrix2<C64>) -> f64 {
    singular_values(m).0
}

/// `K = I - (1 - sqrt p) |f><f|`: transmits `|f>` with probability `p` and
/// the orthogonal polarization always.
pub fn filter_kraus(f: &Vector2<C64>, p: f64) -> Result<Matrix2<C64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let n = f.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnitVector(n));
    }
    Ok(Matrix2::identity() - outer(f) * c(1.0 - p.sqrt(), 0.0))
}

/// A tunable loss element on one arm.
///
/// `phase` models an unwanted retardance between the filtered and the
/// transmitted polarization components: the filtered axis picks up `e^{i phase}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFilter {
    pub arm: usize,
    pub f: Vector2<C64>,
    pub p: f64,
    pub phase: f64,
}

impl LocalFilter {
    pub fn new(arm: usize, f: Vector2<C64>, p: f64) -> Result<Self> {
        filter_kraus(&f, p)?;
        if arm == 0 {
            return Err(Error::InvalidArm(arm));
        }
        Ok(Self { arm, f, p, phase: 0.0 })
    }

    pub fn identity(arm: usize) -> Self {
        Self { arm, f: Vector2::new(c(1.0, 0.0), c(0.0, 0.0)), p: 1.0, phase: 0.0 }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn is_identity(&self) -> bool {
        self.p == 1.0 && self.phase == 0.0
    }

    pub fn kraus(&self) -> Matrix2<C64> {
        let k = filter_kraus(&self.f, self.p).expect("validated at construction");
        if self.phase == 0.0 {
            k
        } else {
            let retarder = Matrix2::identity() + outer(&self.f) * (C64::from_polar(1.0, self.phase) - c(1.0, 0.0));
            k * retarder
        }
    }
}

fn check_unitary(u: &Matrix2<C64>, tol: f64) -> Result<()> {
    let dev = (u.adjoint() * u - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > tol {
        return Err(Error::InvalidParameter(format!("matrix is not unitary (deviation {dev:.3e})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUnitary {
    pub arm: usize,
    pub u: Matrix2<C64>,
}

impl LocalUnitary {
    pub fn new(arm: usize, u: Matrix2<C64>) -> Result<Self> {
        check_unitary(&u, UNIT_TOL)?;
        Ok(Self { arm, u })
    }
}

/// Everything applied to one arm so far, folded into a single passive
/// operator with largest singular value 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeArmOperator {
    pub arm: usize,
    pub a: Matrix2<C64>,
}

impl CompositeArmOperator {
    pub fn identity(arm: usize) -> Self {
        Self { arm, a: Matrix2::identity() }
    }

    /// Left-multiplies `op` and rescales so the largest singular value is 1.
    pub fn then(&self, op: &Matrix2<C64>) -> Result<Self> {
        let m = op * self.a;
        let (smax, smin) = singular_values(&m);
        if smax <= 0.0 || smin / smax < EXTINCTION_TRACE {
            return Err(Error::Extinction(smin));
        }
        Ok(Self { arm: self.arm, a: m / c(smax, 0.0) })
    }

    /// Effective transmission `(s_min / s_max)^2`.
    pub fn p_eff(&self) -> f64 {
        let (smax, smin) = singular_values(&self.a);
        (smin / smax).powi(2)
    }

    pub fn det_abs(&self) -> f64 {
        self.a.determinant().norm()
    }

    /// `A = U F` with `U` unitary and `F` Hermitian positive semidefinite.
    pub fn polar(&self) -> (Matrix2<C64>, Matrix2<C64>) {
        polar_decomposition(&self.a)
    }
}

/// Polar decomposition `m = U P`.
pub fn polar_decomposition(m: &Matrix2<C64>) -> (Matrix2<C64>, Matrix2<C64>) {
    let svd = m.svd(true, true);
    let w = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let sigma = Matrix2::from_diagonal(&svd.singular_values.map(|s| c(s, 0.0)));
    (w * vt, vt.adjoint() * sigma * vt)
}

/// `(A_1 (x) A_2 (x) ...) rho (...)^dagger`, left unnormalized: the output
/// trace is the probability that every filter transmits.
pub fn apply_local(rho: &DensityMatrix, ops: &[Matrix2<C64>]) -> Result<DensityMatrix> {
    if ops.len() != rho.num_qubits() {
        return Err(Error::DimensionMismatch { expected: rho.num_qubits(), actual: ops.len() });
    }
    for op in ops {
        let norm = spectral_norm(op);
        if norm > 1.0 + UNIT_TOL {
            return Err(Error::Amplifying(norm));
        }
    }
    let big: DMatrix<C64> = kron_all(ops);
    let out = &big * rho.entries() * big.adjoint();
    let tr = out.trace().re;
    if tr < EXTINCTION_TRACE {
        return Err(Error::Extinction(tr));
    }
    DensityMatrix::new_hermitized(out, false)
}

pub fn apply_slocc(rho: &DensityMatrix, a1: &Matrix2<C64>, a2: &Matrix2<C64>) -> Result<DensityMatrix> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
    }
    apply_local(rho, &[*a1, *a2])
}

/// Applies a set of composite arm operators (one per qubit, any order).
pub fn apply_composites(rho: &DensityMatrix, composite: &[CompositeArmOperator]) -> Result<DensityMatrix> {
    let mut ops = vec![Matrix2::identity(); rho.num_qubits()];
    for op in composite {
        if op.arm == 0 || op.arm > ops.len() {
            return Err(Error::InvalidArm(op.arm));
        }
        ops[op.arm - 1] = op.a;
    }
    apply_local(rho, &ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveplate {
    Quarter,
    Half,
}

fn rotation(theta: f64) -> Matrix2<C64> {
    let (s, co) = theta.sin_cos();
    Matrix2::new(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0))
}

/// Jones matrix of a waveplate with its fast axis at `theta` from horizontal.
pub fn waveplate(kind: Waveplate, theta: f64) -> Matrix2<C64> {
    let retard = match kind {
        Waveplate::Quarter => c(0.0, 1.0),
        Waveplate::Half => c(-1.0, 0.0),
    };
    let d = Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), retard);
    rotation(theta) * d * rotation(-theta)
}

/// `O_ij = (1/2) Tr(sigma_i U sigma_j U^dagger)`: the Bloch-sphere rotation
/// induced by `U`.
pub fn su2_to_so3(u: &Matrix2<C64>) -> Matrix3<f64> {
    let ud = u.adjoint();
    Matrix3::from_fn(|i, j| 0.5 * (pauli(i + 1) * u * pauli(j + 1) * ud).trace().re)
}

/// Lifts a proper rotation to a unitary with `su2_to_so3(U) = O`.
///
/// The global sign is fixed so that the first entry with nonzero modulus has
/// a nonnegative real part (nonnegative imaginary part if purely imaginary).
pub fn so3_to_su2(o: &Matrix3<f64>) -> Result<Matrix2<C64>> {
    let orth = (o.transpose() * o - Matrix3::identity()).abs().max();
    if orth > 1e-9 {
        return Err(Error::ImproperRotation(format!("not orthogonal (deviation {orth:.3e})")));
    }
    let det = o.determinant();
    if (det - 1.0).abs() > 1e-9 {
        return Err(Error::ImproperRotation(format!("determinant {det}")));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*o));
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let mut u = pauli(0) * c(w, 0.0) - (pauli(1) * c(x, 0.0) + pauli(2) * c(y, 0.0) + pauli(3) * c(z, 0.0)) * c(0.0, 1.0);
    if let Some(first) = u.iter().find(|z| z.norm() > 1e-12) {
        let flip = if first.re.abs() > 1e-12 { first.re < 0.0 } else { first.im < 0.0 };
        if flip {
            u = -u;
        }
    }
    Ok(u)
}
