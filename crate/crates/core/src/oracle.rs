//! Ground truth and the tomography baseline: Wootters concurrence, fidelity,
//! linear-inversion state reconstruction with positivity projection, and the
//! witness-versus-tomography efficiency comparison.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::photonsim::{stokes_from_records, Counting, CountRecord, ExperimentConfig};
use crate::pipeline::{self, PipelineOptions};
use crate::qstate::{c, kron_all, pauli, DensityMatrix, C64, PSD_TOL};

fn hermitian_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| c(x.max(0.0).sqrt(), 0.0)));
    v * d * v.adjoint()
}

/// `C = max(0, s1 - s2 - s3 - s4)` where `s_i` are the descending square roots
/// of the eigenvalues of `rho (sy x sy) rho* (sy x sy)`.
///
/// Evaluated through the Hermitian form `sqrt(rho) rho~ sqrt(rho)`, which has
/// the same spectrum. Unnormalized inputs are renormalized first.
pub fn wootters_concurrence(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, actual: rho.dim() });
    }
    let rho = if rho.is_normalized() { rho.clone() } else { rho.normalize()? };
    let min = rho.min_eigenvalue();
    if min < -PSD_TOL {
        return Err(Error::NotPositive(min));
    }
    let yy = kron_all(&[pauli(2), pauli(2)]);
    let flipped = &yy * rho.entries().conjugate() * &yy;
    let root = hermitian_sqrt(rho.entries());
    let m = &root * flipped * &root;
    let m = (&m + m.adjoint()).map(|z| z * 0.5);
    let mut s: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().map(|x| x.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok((s[0] - s[1] - s[2] - s[3]).max(0.0))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let root = hermitian_sqrt(rho.entries());
    let m = &root * sigma.entries() * &root;
    let m = (&m + m.adjoint()).map(|z| z * 0.5);
    let t: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|x| x.max(0.0).sqrt()).sum();
    t * t
}

/// Nearest-spectrum repair of a Hermitian matrix: clip negative eigenvalues
/// to zero and renormalize the trace to one.
pub fn psd_project(m: &DMatrix<C64>) -> Result<DensityMatrix> {
    let h = (m + m.adjoint()).map(|z| z * 0.5);
    let eig = SymmetricEigen::new(h);
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    let total: f64 = clipped.sum();
    if total <= 0.0 {
        return Err(Error::InvalidTrace(total));
    }
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&clipped.map(|x| c(x / total, 0.0)));
    DensityMatrix::new_hermitized(v * d * v.adjoint(), true)
}

/// Linear-inversion tomography from a 16-setting record set, followed by
/// positivity projection.
pub fn qst_reconstruct(records: &[CountRecord]) -> Result<DensityMatrix> {
    let s = stokes_from_records(records)?;
    psd_project(&s.to_matrix())
}

/// Matched-budget comparison of the witness scheme against tomography.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    /// Which quantity both schemes estimate.
    pub target: String,
    /// Note on the tomography baseline used.
    pub baseline: String,
    pub trials: usize,
    pub budget: u64,
    /// Mean total pairs per trial consumed by each scheme.
    pub shots_witness: f64,
    pub shots_qst: f64,
    /// Standard deviation of `estimate - oracle` over trials.
    pub std_witness: f64,
    pub std_qst: f64,
    pub mean_witness: f64,
    pub mean_qst: f64,
    pub mean_oracle: f64,
    /// `std_qst / std_witness` (infinite when the witness spread is zero).
    pub ratio: f64,
    pub witness_more_precise: bool,
}

/// One trial of [`efficiency_compare`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialEstimate {
    pub trial: usize,
    pub c_witness: f64,
    pub c_qst: f64,
    pub c_oracle: f64,
    pub shots: u64,
}

/// Settings assumed when splitting the budget across the witness scheme:
/// five marginal estimates of 3 settings (k = 0..4), 16 for the setting
/// search and 12 for the extrema.
pub const NOMINAL_WITNESS_SETTINGS: u64 = 5 * 3 + 16 + 12;

pub const MIN_BUDGET: u64 = 16_000;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs both schemes `trials` times and compares the spread of their
/// estimates of the distilled-state concurrence.
///
/// Each trial distills with the witness scheme at
/// `budget / NOMINAL_WITNESS_SETTINGS` pairs per setting. Tomography is then
/// run on the state behind the same filters with exactly the pairs the
/// witness scheme consumed, spread over its 16 settings.
pub fn efficiency_compare(
    config: &ExperimentConfig,
    budget: u64,
    trials: usize,
) -> Result<(EfficiencyReport, Vec<TrialEstimate>)> {
    if budget < MIN_BUDGET {
        return Err(Error::InvalidParameter(format!("budget {budget} below minimum {MIN_BUDGET}")));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let pps = (budget / NOMINAL_WITNESS_SETTINGS).max(1);
    let rows: Vec<TrialEstimate> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialEstimate> {
            let mut cfg = config.clone();
            cfg.pairs_per_setting = pps;
            let root = cfg.root_counting().child(0xEFF1C1E7).child(trial as u64);
            let run = pipeline::run_with_counting(&cfg, root, &PipelineOptions { witness_every_step: false })?;
            let last = run.steps.last().expect("at least one step");
            let shots = run.settings_used * pps;

            let qst_pps = (shots / 16).max(1);
            let qst_counting = match root {
                Counting::Exact => Counting::Exact,
                sampled => sampled.child(0x0057),
            };
            let bench = pipeline::bench(&cfg)?;
            let stokes = bench.full_stokes_16(&run.composite, qst_pps, qst_counting)?;
            let c_qst = wootters_concurrence(&qst_reconstruct(&stokes.records)?)?;

            Ok(TrialEstimate {
                trial,
                c_witness: last.report.c_bound_dis,
                c_qst,
                c_oracle: last.oracle_c_dis,
                shots,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let err_w: Vec<f64> = rows.iter().map(|r| r.c_witness - r.c_oracle).collect();
    let err_q: Vec<f64> = rows.iter().map(|r| r.c_qst - r.c_oracle).collect();
    let (_, std_witness) = mean_std(&err_w);
    let (_, std_qst) = mean_std(&err_q);
    let mean = |f: fn(&TrialEstimate) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let shots = mean(|r| r.shots as f64);
    let report = EfficiencyReport {
        target: "C(rho_dis)".into(),
        baseline: "linear inversion with eigenvalue clipping (not maximum likelihood)".into(),
        trials,
        budget,
        shots_witness: shots,
        shots_qst: shots,
        std_witness,
        std_qst,
        mean_witness: mean(|r| r.c_witness),
        mean_qst: mean(|r| r.c_qst),
        mean_oracle: mean(|r| r.c_oracle),
        ratio: if std_witness > 0.0 { std_qst / std_witness } else { f64::INFINITY },
        witness_more_precise: std_witness < std_qst,
    };
    Ok((report, rows))
}
