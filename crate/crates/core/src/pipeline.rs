//! End-to-end experiment: count-driven distillation, 16-setting tomography
//! and 12-setting extrema on the filtered state, witness evaluation, and the
//! Wootters oracle alongside for comparison.

use serde::Serialize;

use crate::distill::{distill_iterate_sampled, DistillOptions, DistillationResult};
use crate::error::Result;
use crate::oracle::wootters_concurrence;
use crate::photonsim::{streams, Bench, Counting, ExperimentConfig, LambdaMeasurement, StokesEstimate};
use crate::qstate::DensityMatrix;
use crate::slocc::{apply_composites, CompositeArmOperator};
use crate::witness::{witness_value, WitnessReport};

/// Settings spent on one witness evaluation (tomography plus extrema).
pub const WITNESS_SETTINGS: usize = 16 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineOptions {
    /// Evaluate the witness behind the filters of every step, not only the last.
    pub witness_every_step: bool,
}

/// Witness evaluated behind the filters of step `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepWitness {
    pub k: usize,
    #[serde(flatten)]
    pub report: WitnessReport,
    /// Wootters concurrence of the source state.
    pub oracle_c_rho: f64,
    /// Wootters concurrence of the normalized state behind the step-k filters.
    pub oracle_c_dis: f64,
    #[serde(skip)]
    pub stokes: StokesEstimate,
    #[serde(skip)]
    pub lambdas: LambdaMeasurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub state: DensityMatrix,
    pub distillation: DistillationResult,
    pub steps: Vec<StepWitness>,
    pub composite: Vec<CompositeArmOperator>,
    pub converged: bool,
    /// Detector settings spent across distillation and witness stages.
    pub settings_used: u64,
    pub oracle_c_rho: f64,
}

impl ExperimentRun {
    pub fn final_witness(&self) -> &StepWitness {
        self.steps.last().expect("at least one witness evaluation")
    }
}

pub fn bench(cfg: &ExperimentConfig) -> Result<Bench> {
    Bench::from_config(cfg)
}

pub fn distill_options(cfg: &ExperimentConfig) -> DistillOptions {
    DistillOptions {
        tol_dop: cfg.effective_tol_dop(),
        max_steps: cfg.effective_max_steps(),
        filter_phase: cfg.filter_phase_imperfection,
    }
}

/// [`run_with_counting`] with the config's own counting mode and every step
/// evaluated.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run_with_counting(cfg, cfg.root_counting(), &PipelineOptions { witness_every_step: true })
}

pub fn run_with_counting(cfg: &ExperimentConfig, root: Counting, opts: &PipelineOptions) -> Result<ExperimentRun> {
    let bench = bench(cfg)?;
    let m = cfg.pairs_per_setting;
    let mut est = bench.marginals(m, root.child(streams::DISTILL));
    let distillation = distill_iterate_sampled(&mut est, &distill_options(cfg))?;
    let oracle_c_rho = wootters_concurrence(bench.state())?;

    let stages: Vec<usize> = if opts.witness_every_step {
        (0..distillation.trace.steps.len()).collect()
    } else {
        vec![distillation.trace.steps.len() - 1]
    };
    let mut steps = Vec::with_capacity(stages.len());
    for k in stages {
        let step = &distillation.trace.steps[k];
        let composite = &step.composite;
        let stokes = bench.full_stokes_16(composite, m, root.child(streams::STOKES).child(k as u64))?;
        let lambdas = bench.lambda_12(composite, &stokes.s, m, root.child(streams::LAMBDA).child(k as u64), 0.0)?;
        let optimal = k + 1 == distillation.trace.steps.len() && distillation.converged;
        let report = witness_value(&lambdas.triple, step.s0, optimal)?;
        let filtered = apply_composites(bench.state(), composite)?;
        steps.push(StepWitness {
            k,
            report,
            oracle_c_rho,
            oracle_c_dis: wootters_concurrence(&filtered)?,
            stokes,
            lambdas,
        });
    }

    let settings_used = (distillation.settings_used + steps.len() * WITNESS_SETTINGS) as u64;
    Ok(ExperimentRun {
        state: bench.state().clone(),
        composite: distillation.composite.clone(),
        converged: distillation.converged,
        distillation,
        steps,
        settings_used,
        oracle_c_rho,
    })
}
