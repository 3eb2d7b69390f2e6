//! Density matrices, Pauli/Stokes decompositions, partial traces and Bloch
//! vectors.
//!
//! Qubit encoding: `|0> = |H>`, `|1> = |V>`, so `sigma_z |H> = +|H>`. Multi-qubit
//! matrices use the Kronecker ordering `arm 1 (x) arm 2 (x) ...`, i.e. arm 1 is
//! the most significant index bit.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-12;

/// Parameters of the calibrated demo source: a dephased, pump-asymmetric
/// `cos a |HH> + sin a |VV>` state with a small white-noise admixture.
/// Wootters concurrence ~0.180, initial single-photon DOPs ~0.83.
pub const DEMO_ALPHA: f64 = 0.28;
pub const DEMO_GAMMA: f64 = 0.365;
pub const DEMO_EPS: f64 = 0.02;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pauli matrix `sigma_i`, with `sigma_0 = I`.
pub fn pauli(i: usize) -> Matrix2<C64> {
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    let j = c(0.0, 1.0);
    match i {
        0 => Matrix2::new(l, o, o, l),
        1 => Matrix2::new(o, l, l, o),
        2 => Matrix2::new(o, -j, j, o),
        3 => Matrix2::new(l, o, o, -l),
        _ => panic!("pauli index {i} out of range"),
    }
}

pub(crate) fn to_dyn(m: &Matrix2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |r, c| m[(r, c)])
}

/// Kronecker product of single-qubit operators, arm 1 first.
pub fn kron_all(ops: &[Matrix2<C64>]) -> DMatrix<C64> {
    let mut out = DMatrix::from_element(1, 1, c(1.0, 0.0));
    for op in ops {
        out = out.kronecker(&to_dyn(op));
    }
    out
}

/// Which photon of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    /// Zero-based qubit index.
    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
        }
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            other => Err(Error::InvalidArm(other)),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

/// A validated density matrix on 1, 2 or 3 qubits.
///
/// When `normalized` is false the trace is a success probability in `(0, 1]`
/// (the state after a filtering operation that has not been renormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<C64>,
    normalized: bool,
}

impl DensityMatrix {
    pub fn new(entries: DMatrix<C64>, normalized: bool) -> Result<Self> {
        let rho = Self { entries, normalized };
        rho.validate()?;
        Ok(rho)
    }

    /// Forces exact Hermiticity by taking the Hermitian part before validating.
    /// Used after products like `A rho A^dagger`, whose rounding is not symmetric.
    pub fn new_hermitized(entries: DMatrix<C64>, normalized: bool) -> Result<Self> {
        let h = (&entries + entries.adjoint()).map(|z| z * 0.5);
        Self::new(h, normalized)
    }

    pub fn from_pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidTrace(0.0));
        }
        let v = psi / c(norm, 0.0);
        Self::new_hermitized(&v * v.adjoint(), true)
    }

    pub fn maximally_mixed(num_qubits: usize) -> Result<Self> {
        let d = 1usize << num_qubits;
        Self::new(DMatrix::identity(d, d).map(|z: C64| z / d as f64), true)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.entries.nrows();
        if !matches!(d, 2 | 4 | 8) {
            return Err(Error::UnsupportedDimension(d));
        }
        if self.entries.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: self.entries.ncols() });
        }
        let dev = (&self.entries - self.entries.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let tr = self.trace();
        if self.normalized {
            if (tr - 1.0).abs() > TRACE_TOL {
                return Err(Error::InvalidTrace(tr));
            }
        } else if tr <= 0.0 || tr > 1.0 + TRACE_TOL {
            return Err(Error::InvalidTrace(tr));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOL {
            return Err(Error::NotPositive(min_eig));
        }
        Ok(())
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Renormalizes to unit trace.
    pub fn normalize(&self) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::InvalidTrace(tr));
        }
        Self::new(self.entries.map(|z| z / tr), true)
    }

    /// `Re Tr(op rho)`.
    pub fn expectation(&self, op: &DMatrix<C64>) -> f64 {
        (op * &self.entries).trace().re
    }

    /// `Tr(rho (s_i (x) s_j (x) ...))` for a string of Pauli indices.
    pub fn pauli_expectation(&self, indices: &[usize]) -> f64 {
        let ops: Vec<_> = indices.iter().map(|&i| pauli(i)).collect();
        self.expectation(&kron_all(&ops))
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.entries - &other.entries).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Reduced state of a single qubit (zero-based `qubit`) of an N-qubit state.
pub fn reduced_qubit(rho: &DensityMatrix, qubit: usize) -> Result<DensityMatrix> {
    let n = rho.num_qubits();
    if qubit >= n {
        return Err(Error::InvalidArm(qubit + 1));
    }
    let d = rho.dim();
    let shift = n - 1 - qubit;
    let mut out = DMatrix::from_element(2, 2, c(0.0, 0.0));
    for row in 0..d {
        for col in 0..d {
            // Only pairs that agree on every traced-out bit contribute.
            let mask = !(1usize << shift);
            if row & mask != col & mask {
                continue;
            }
            let a = (row >> shift) & 1;
            let b = (col >> shift) & 1;
            out[(a, b)] += rho.entries[(row, col)];
        }
    }
    DensityMatrix::new_hermitized(out, rho.is_normalized())
}

/// Two-qubit partial trace keeping `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: Arm) -> Result<DensityMatrix> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
    }
    reduced_qubit(rho, keep.index())
}

/// Single-photon Bloch (Stokes) vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector(pub Vector3<f64>);

impl BlochVector {
    /// Degree of polarization.
    pub fn dop(&self) -> f64 {
        self.0.norm()
    }

    /// The normalized single-qubit state `(I + r.sigma)/2`.
    pub fn to_density(&self) -> DensityMatrix {
        let r = self.0;
        let m = (pauli(0) + pauli(1) * c(r.x, 0.0) + pauli(2) * c(r.y, 0.0) + pauli(3) * c(r.z, 0.0))
            .map(|z| z * 0.5);
        DensityMatrix { entries: to_dyn(&m), normalized: true }
    }
}

/// `r_i = Tr(rho sigma_i) / Tr(rho)`.
pub fn bloch_vector(rho1: &DensityMatrix) -> Result<BlochVector> {
    if rho1.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, actual: rho1.dim() });
    }
    let tr = rho1.trace();
    if tr <= 0.0 {
        return Err(Error::InvalidTrace(tr));
    }
    let r = Vector3::new(
        rho1.pauli_expectation(&[1]) / tr,
        rho1.pauli_expectation(&[2]) / tr,
        rho1.pauli_expectation(&[3]) / tr,
    );
    Ok(BlochVector(r))
}

pub fn dop(rho1: &DensityMatrix) -> Result<f64> {
    bloch_vector(rho1).map(|b| b.dop())
}

/// Two-photon Stokes parameters `S_{mu nu} = Tr(rho sigma_mu (x) sigma_nu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesTensor {
    pub s: Matrix4<f64>,
}

impl StokesTensor {
    /// The 3x3 correlation block `T_ij`, i, j in {x, y, z}.
    pub fn t(&self) -> Matrix3<f64> {
        self.s.fixed_view::<3, 3>(1, 1).into_owned()
    }

    pub fn local(&self, arm: Arm) -> Vector3<f64> {
        match arm {
            Arm::One => Vector3::new(self.s[(1, 0)], self.s[(2, 0)], self.s[(3, 0)]),
            Arm::Two => Vector3::new(self.s[(0, 1)], self.s[(0, 2)], self.s[(0, 3)]),
        }
    }

    /// `(1/4) sum S_{mu nu} sigma_mu (x) sigma_nu`, without any positivity
    /// repair. Noisy tensors may give non-PSD matrices.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let mut out = DMatrix::from_element(4, 4, c(0.0, 0.0));
        for mu in 0..4 {
            for nu in 0..4 {
                let w = self.s[(mu, nu)] / 4.0;
                if w != 0.0 {
                    out += kron_all(&[pauli(mu), pauli(nu)]).map(|z| z * w);
                }
            }
        }
        out
    }
}

pub fn stokes_tensor(rho: &DensityMatrix) -> Result<StokesTensor> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
    }
    let s = Matrix4::from_fn(|mu, nu| rho.pauli_expectation(&[mu, nu]));
    Ok(StokesTensor { s })
}

/// Inverse of [`stokes_tensor`]. Fails with [`Error::NotPositive`] when the
/// tensor does not describe a physical state.
pub fn from_stokes(s: &StokesTensor) -> Result<DensityMatrix> {
    let normalized = (s.s[(0, 0)] - 1.0).abs() <= TRACE_TOL;
    DensityMatrix::new_hermitized(s.to_matrix(), normalized)
}

fn ket(amps: &[(usize, C64)], dim: usize) -> DVector<C64> {
    let mut v = DVector::from_element(dim, c(0.0, 0.0));
    for &(i, a) in amps {
        v[i] = a;
    }
    v
}

/// `(|01> - |10>)/sqrt 2`.
pub fn singlet() -> DensityMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    DensityMatrix::from_pure(&ket(&[(1, c(h, 0.0)), (2, c(-h, 0.0))], 4)).expect("singlet is valid")
}

/// `w |psi-><psi-| + (1 - w) I/4`, valid for `w` in `[-1/3, 1]`.
pub fn werner(w: f64) -> Result<DensityMatrix> {
    if !(-1.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&w) {
        return Err(Error::InvalidParameter(format!("werner weight {w} outside [-1/3, 1]")));
    }
    let s = singlet();
    let m = s.entries.map(|z| z * w) + DMatrix::<C64>::identity(4, 4).map(|z| z * ((1.0 - w) / 4.0));
    DensityMatrix::new_hermitized(m, true)
}

/// `cos a |00> + sin a |11>`.
pub fn pure_state(alpha: f64) -> DensityMatrix {
    DensityMatrix::from_pure(&ket(&[(0, c(alpha.cos(), 0.0)), (3, c(alpha.sin(), 0.0))], 4))
        .expect("pure state is valid")
}

/// Dephased asymmetric source: start from `cos a |HH> + sin a |VV>`, scale the
/// `HH/VV` coherence by `gamma`, then mix with white noise of weight `eps`.
pub fn decohered(alpha: f64, gamma: f64, eps: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("eps {eps} outside [0, 1]")));
    }
    let mut m = pure_state(alpha).entries;
    m[(0, 3)] *= gamma;
    m[(3, 0)] *= gamma;
    let m = m.map(|z| z * (1.0 - eps)) + DMatrix::<C64>::identity(4, 4).map(|z| z * (eps / 4.0));
    DensityMatrix::new_hermitized(m, true)
}

/// `(|0...0> + |1...1>)/sqrt 2` on `n` qubits.
pub fn ghz(n: usize) -> DensityMatrix {
    let d = 1 << n;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    DensityMatrix::from_pure(&ket(&[(0, c(h, 0.0)), (d - 1, c(h, 0.0))], d)).expect("ghz is valid")
}

fn random_complex_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<C64> {
    DVector::from_fn(dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Haar-random pure state on `n` qubits.
pub fn random_pure<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> DensityMatrix {
    let v = random_complex_vector(1 << num_qubits, rng);
    DensityMatrix::from_pure(&v).expect("random vector is nonzero")
}

/// Full-rank random state `G G^dagger / Tr` with complex Ginibre `G`.
pub fn random_density<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> DensityMatrix {
    let d = 1 << num_qubits;
    let g = DMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new_hermitized(m.map(|z| z / tr), true).expect("Ginibre state is valid")
}

/// Haar-random single-qubit unitary.
pub fn random_unitary2<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<C64> {
    let v = random_complex_vector(2, rng);
    let q = v.map(|z| z / v.norm());
    // Unit quaternion (a, b) -> [[a, -b*], [b, a*]].
    Matrix2::new(q[0], -q[1].conj(), q[1], q[0].conj())
}

/// Source-state literal used by configuration files and the command line.
///
/// Forms: `singlet`, `werner:W`, `pure:ALPHA`, `decohered:ALPHA,GAMMA,EPS`,
/// `decohered-demo`, and `raw:` followed by 32 whitespace-separated reals
/// (row-major 4x4, real and imaginary parts interleaved).
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    Singlet,
    Werner(f64),
    Pure(f64),
    Decohered { alpha: f64, gamma: f64, eps: f64 },
    DecoheredDemo,
    Raw(Vec<f64>),
}

impl StateSpec {
    pub fn build(&self) -> Result<DensityMatrix> {
        match self {
            StateSpec::Singlet => Ok(singlet()),
            StateSpec::Werner(w) => werner(*w),
            StateSpec::Pure(a) => Ok(pure_state(*a)),
            StateSpec::Decohered { alpha, gamma, eps } => decohered(*alpha, *gamma, *eps),
            StateSpec::DecoheredDemo => decohered(DEMO_ALPHA, DEMO_GAMMA, DEMO_EPS),
            StateSpec::Raw(vals) => {
                if vals.len() != 32 {
                    return Err(Error::StateParse(format!("raw state needs 32 reals, got {}", vals.len())));
                }
                let m = DMatrix::from_fn(4, 4, |r, col| {
                    let k = 2 * (4 * r + col);
                    c(vals[k], vals[k + 1])
                });
                DensityMatrix::new(m, true)
            }
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::StateParse(format!("{s:?}: {e}")))
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("singlet", None) => Ok(StateSpec::Singlet),
            ("decohered-demo", None) => Ok(StateSpec::DecoheredDemo),
            ("werner", Some(a)) => Ok(StateSpec::Werner(parse_f64(a)?)),
            ("pure", Some(a)) => Ok(StateSpec::Pure(parse_f64(a)?)),
            ("decohered", Some(a)) => {
                let v = a.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
                match v.as_slice() {
                    [alpha, gamma, eps] => Ok(StateSpec::Decohered { alpha: *alpha, gamma: *gamma, eps: *eps }),
                    _ => Err(Error::StateParse(format!("decohered needs 3 parameters, got {}", v.len()))),
                }
            }
            ("raw", Some(a)) => {
                let v = a.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
                if v.len() != 32 {
                    return Err(Error::StateParse(format!("raw state needs 32 reals, got {}", v.len())));
                }
                Ok(StateSpec::Raw(v))
            }
            _ => Err(Error::StateParse(format!("unknown state literal {s:?}"))),
        }
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Singlet => write!(f, "singlet"),
            StateSpec::Werner(w) => write!(f, "werner:{w}"),
            StateSpec::Pure(a) => write!(f, "pure:{a}"),
            StateSpec::Decohered { alpha, gamma, eps } => write!(f, "decohered:{alpha},{gamma},{eps}"),
            StateSpec::DecoheredDemo => write!(f, "decohered-demo"),
            StateSpec::Raw(v) => {
                write!(f, "raw:")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}
