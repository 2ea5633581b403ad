//! Measurement-driven evolution along `H_s`: the measure-only baseline
//! (level 0) and fixed-point search between measurements (level >= 1).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::fpqs::{apply_sequence, build_sequence, query_count, QuerySequence, RotationProvider, MAX_LEVEL};
use crate::interpolation::{spectrum_at, InterpolationProblem};
use crate::qcore::{measure_spectral, rng_from_seed, Operator, SimRng, SpectralData, State};
use crate::selective::{
    boosted_cost, estimate_anchor, make_oracle, pea_sample, AncillaConfig, Boost, CostCounter,
    CountingOp, MarkedSet, OracleMode, PeaContext, PeaOperator, PeaSetup,
};

pub const DEFAULT_FIDELITY_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_ANCHOR_REPEATS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    ExactProjector,
    PeaMarked,
}

/// What happens when a step fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum FailurePolicy {
    /// The run ends unsuccessfully.
    #[default]
    Strict,
    /// The whole run starts again from `s = 0`, at most `max` times.
    Restart { max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub m: usize,
    pub fpqs_level: u32,
    pub oracle_mode: OracleMode,
    pub boost: Option<Boost>,
    pub measurement_mode: MeasurementMode,
    pub seed: u64,
    pub ancilla: Option<AncillaConfig>,
    #[serde(default = "default_repeats")]
    pub anchor_repeats: usize,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default = "default_threshold")]
    pub fidelity_threshold: f64,
}

fn default_repeats() -> usize {
    DEFAULT_ANCHOR_REPEATS
}

fn default_threshold() -> f64 {
    DEFAULT_FIDELITY_THRESHOLD
}

impl EvolutionConfig {
    /// Exact oracle, exact projective measurements.
    pub fn exact(m: usize, fpqs_level: u32, seed: u64) -> Self {
        Self {
            m,
            fpqs_level,
            oracle_mode: OracleMode::Exact,
            boost: None,
            measurement_mode: MeasurementMode::ExactProjector,
            seed,
            ancilla: None,
            anchor_repeats: DEFAULT_ANCHOR_REPEATS,
            failure_policy: FailurePolicy::Strict,
            fidelity_threshold: DEFAULT_FIDELITY_THRESHOLD,
        }
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// True when any part of the run uses phase estimation.
    pub fn uses_pea(&self) -> bool {
        (self.fpqs_level > 0 && self.oracle_mode != OracleMode::Exact)
            || self.measurement_mode == MeasurementMode::PeaMarked
    }

    /// Checks every precondition against the problem before simulating.
    pub fn validate(&self, problem: &InterpolationProblem) -> Result<()> {
        if self.m == 0 {
            return Err(out_of_range("M", 0.0, "M >= 1"));
        }
        if self.fpqs_level > MAX_LEVEL {
            return Err(out_of_range("fpqs_level", self.fpqs_level as f64, "fpqs_level <= 8"));
        }
        if !(self.fidelity_threshold >= 0.0 && self.fidelity_threshold < 1.0) {
            return Err(out_of_range("fidelity_threshold", self.fidelity_threshold, "0 <= threshold < 1"));
        }
        if self.oracle_mode == OracleMode::PeaBoosted {
            self.boost
                .ok_or_else(|| Error::Precondition("pea_boosted mode needs boost (q, q')".into()))?
                .validate()?;
        }
        if !self.uses_pea() {
            return Ok(());
        }
        let cfg = self
            .ancilla
            .ok_or_else(|| Error::Precondition("PEA modes need an ancilla configuration".into()))?;
        let (gamma, g) = (problem.gamma(), problem.min_gap());
        cfg.validate(gamma, g)?;
        let limit = g / (2.0 * gamma);
        if self.delta() > limit {
            return Err(Error::Precondition(format!(
                "step condition Delta <= g/(2 Gamma) violated: Delta = 1/{} = {:.6} > {:.6}",
                self.m,
                self.delta(),
                limit
            )));
        }
        if self.anchor_repeats == 0 {
            return Err(Error::AnchorEstimation("anchor_repeats must be at least 1".into()));
        }
        let sep = cfg.separation(g);
        MarkedSet::for_anchor(0, 2 + drift_slack(cfg, self.delta(), gamma), sep, cfg.l)?;
        Ok(())
    }
}

/// `ceil(2^l t delta Gamma)`: bound on the ground-peak drift over one step.
pub fn drift_slack(cfg: AncillaConfig, delta: f64, gamma: f64) -> u64 {
    (cfg.dim() as f64 * cfg.t * delta * gamma - 1e-9).ceil().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    /// Applications of `U_s` (controlled powers inside phase estimation).
    pub u_applications: u64,
    /// Selective transformations (elements of the rotation set) used.
    pub oracle_queries: u64,
    pub measurements: u64,
    /// Applications of a phase-estimation operator or its adjoint.
    pub pea_runs: u64,
    /// Of `pea_runs`, those spent inside selective transformations.
    pub selective_pea_runs: u64,
    pub restarts: u64,
}

impl CostLedger {
    pub fn merge(&mut self, other: &CostLedger) {
        self.u_applications += other.u_applications;
        self.oracle_queries += other.oracle_queries;
        self.measurements += other.measurements;
        self.pea_runs += other.pea_runs;
        self.selective_pea_runs += other.selective_pea_runs;
        self.restarts += other.restarts;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFailure {
    PostSelection,
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub s: f64,
    pub success: bool,
    pub failure: Option<StepFailure>,
    pub queries: u64,
    pub anchor: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: EvolutionConfig,
    pub gamma: f64,
    pub min_gap: f64,
    pub success: bool,
    pub completed: bool,
    pub final_fidelity: f64,
    pub per_step: Vec<StepRecord>,
    pub ledger: CostLedger,
}

impl RunResult {
    pub fn per_step_success(&self) -> Vec<bool> {
        self.per_step.iter().map(|r| r.success).collect()
    }

    /// Anchors recorded at successive steps of the final attempt.
    pub fn anchors(&self) -> Vec<i64> {
        self.per_step.iter().filter_map(|r| r.anchor).collect()
    }
}

/// A problem/config pair with every per-step spectrum and phase-estimation
/// operator precomputed, ready for many seeded runs.
pub struct Evolver {
    problem: InterpolationProblem,
    config: EvolutionConfig,
    spectra: Vec<SpectralData>,
    peas: Vec<Arc<PeaOperator>>,
    seq: QuerySequence,
    setup: Option<PeaSetup>,
    drift: u64,
}

impl Evolver {
    pub fn new(problem: &InterpolationProblem, config: &EvolutionConfig) -> Result<Self> {
        config.validate(problem)?;
        let m = config.m;
        let spectra = (0..=m)
            .into_par_iter()
            .map(|r| spectrum_at(problem, r as f64 / m as f64))
            .collect::<Result<Vec<_>>>()?;
        let (setup, peas, drift) = if config.uses_pea() {
            let cfg = config.ancilla.expect("validated");
            let setup = PeaSetup {
                cfg,
                shift: problem.gamma(),
                gap: problem.min_gap(),
                boost: config.boost,
            };
            let peas = spectra
                .par_iter()
                .map(|sp| PeaOperator::from_spectrum(sp, cfg, setup.shift).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            let drift = drift_slack(cfg, config.delta(), problem.gamma());
            (Some(setup), peas, drift)
        } else {
            (None, Vec::new(), 0)
        };
        Ok(Self {
            problem: problem.clone(),
            config: config.clone(),
            spectra,
            peas,
            seq: build_sequence(config.fpqs_level)?,
            setup,
            drift,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn spectra(&self) -> &[SpectralData] {
        &self.spectra
    }

    /// One run driven by `rng`, honouring the failure policy.
    pub fn run(&self, rng: &mut SimRng) -> Result<RunResult> {
        let max_restarts = match self.config.failure_policy {
            FailurePolicy::Strict => 0,
            FailurePolicy::Restart { max } => max,
        };
        let mut ledger = CostLedger::default();
        let mut attempt = 0;
        loop {
            let out = self.attempt(rng)?;
            ledger.merge(&out.ledger);
            let failed = out.per_step.iter().any(|r| !r.success);
            if !failed || attempt >= max_restarts {
                return Ok(RunResult { ledger, ..out });
            }
            attempt += 1;
            ledger.restarts += 1;
        }
    }

    /// Convenience: run seeded from `seed`.
    pub fn run_seeded(&self, seed: u64) -> Result<RunResult> {
        let mut rng = rng_from_seed(seed);
        let mut r = self.run(&mut rng)?;
        r.config.seed = seed;
        Ok(r)
    }

    fn attempt(&self, rng: &mut SimRng) -> Result<RunResult> {
        let cfg = &self.config;
        let m = cfg.m;
        let counter = CostCounter::new();
        let selective_counter = CostCounter::new();
        let mut ledger = CostLedger::default();
        let mut state = self.spectra[0].ground_state().clone();
        let mut per_step = Vec::with_capacity(m);
        let mut completed = true;
        let mut aborted = false;

        for r in 0..m {
            let s_next = (r + 1) as f64 / m as f64;
            let (alpha, beta) = (&self.spectra[r], &self.spectra[r + 1]);
            let (ctx, anchor) = match &self.setup {
                Some(setup) => {
                    let op = CountingOp::new(self.peas[r].clone(), counter.clone());
                    let est = estimate_anchor(&mut state, &op, cfg.anchor_repeats, rng)?;
                    let ctx = PeaContext::from_anchor(
                        *setup,
                        self.peas[r].clone(),
                        self.peas[r + 1].clone(),
                        est.anchor,
                        self.drift,
                    )?;
                    (Some(ctx), Some(est.anchor))
                }
                None => (None, None),
            };

            let mut queries = 0;
            let mut failure = None;
            if cfg.fpqs_level > 0 {
                let mut oracle = make_oracle(cfg.oracle_mode, alpha, beta, ctx.as_ref(), &selective_counter, rng)?;
                let (out, used) = apply_sequence(&self.seq, &state, &mut oracle)?;
                queries = used;
                if oracle.failed() {
                    failure = Some(StepFailure::PostSelection);
                } else {
                    state = out;
                }
            }
            ledger.oracle_queries += queries;

            if failure.is_none() {
                let in_ground = match cfg.measurement_mode {
                    MeasurementMode::ExactProjector => {
                        let meas = measure_spectral(&state, beta, rng)?;
                        state = meas.state;
                        meas.outcome == 0
                    }
                    MeasurementMode::PeaMarked => {
                        let ctx = ctx.as_ref().expect("PEA context present in PEA measurement mode");
                        let op = CountingOp::new(ctx.beta_op.clone(), counter.clone());
                        let (ok, collapsed) = pea_measurement(&state, &op, &ctx.beta_marked, rng)?;
                        state = collapsed;
                        ok
                    }
                };
                ledger.measurements += 1;
                if !in_ground {
                    failure = Some(StepFailure::Measurement);
                }
            }

            let success = failure.is_none();
            if failure == Some(StepFailure::PostSelection) {
                completed = false;
            }
            per_step.push(StepRecord {
                step: r,
                s: s_next,
                success,
                failure,
                queries,
                anchor,
            });
            if !success {
                aborted = true;
                break;
            }
        }

        ledger.selective_pea_runs = selective_counter.get();
        ledger.pea_runs = counter.get() + ledger.selective_pea_runs;
        ledger.u_applications = ledger.pea_runs * cfg.ancilla.map_or(0, |a| a.dim() as u64);

        let target = self.spectra[m].ground_state();
        let final_fidelity = state.fidelity(target)?;
        let success = if aborted {
            false
        } else if self.config.uses_pea() {
            // Final verification by an exact projective measurement on H_1.
            measure_spectral(&state, &self.spectra[m], rng)?.outcome == 0
        } else {
            final_fidelity >= 1.0 - cfg.fidelity_threshold
        };
        Ok(RunResult {
            config: cfg.clone(),
            gamma: self.problem.gamma(),
            min_gap: self.problem.min_gap(),
            success,
            completed,
            final_fidelity,
            per_step,
            ledger,
        })
    }
}

/// Approximate ground/excited measurement by phase estimation: run PEA,
/// read the ancilla in the computational basis, report whether the
/// outcome lies in the marked window and keep the system on that branch.
/// One PEA run.
pub fn pea_measurement(
    state: &State,
    pea: &dyn Operator,
    marked: &MarkedSet,
    rng: &mut SimRng,
) -> Result<(bool, State)> {
    let mut s = state.clone();
    let z = pea_sample(&mut s, pea, rng)?;
    Ok((marked.contains(z), s))
}

/// Any-level run seeded from `config.seed`.
pub fn run(problem: &InterpolationProblem, config: &EvolutionConfig) -> Result<RunResult> {
    Evolver::new(problem, config)?.run_seeded(config.seed)
}

/// Measure-only baseline: `M` projective measurements of `H_Delta, ..., H_1`.
pub fn childs_run(problem: &InterpolationProblem, config: &EvolutionConfig, rng: &mut SimRng) -> Result<RunResult> {
    if config.fpqs_level != 0 {
        return Err(Error::Precondition("baseline runs need fpqs_level = 0".into()));
    }
    Evolver::new(problem, config)?.run(rng)
}

/// Fixed-point search between measurements.
pub fn fpqs_run(problem: &InterpolationProblem, config: &EvolutionConfig, rng: &mut SimRng) -> Result<RunResult> {
    if config.fpqs_level == 0 {
        return Err(Error::Precondition("fixed-point runs need fpqs_level >= 1".into()));
    }
    Evolver::new(problem, config)?.run(rng)
}

/// Lower bound on the final success probability:
/// `(1 - (Gamma/(M g))^{2(q_n + 1)})^M`.
pub fn success_bound(ratio: f64, m: usize, level: u32) -> f64 {
    let eps = (ratio / m as f64).powi(2);
    let per_step = (1.0 - eps.powf((query_count(level) + 1) as f64)).max(0.0);
    per_step.powf(m as f64)
}

/// Per-step failure bound `(Gamma/(M g))^{2(q_n + 1)}`.
pub fn step_failure_bound(ratio: f64, m: usize, level: u32) -> f64 {
    (ratio / m as f64).powf(2.0 * (query_count(level) + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterChoice {
    pub ratio: f64,
    pub m: usize,
    pub n: u32,
    pub q: u64,
    pub boost_q: u64,
    pub boost_q_prime: u64,
    /// `q * M`.
    pub predicted_queries: u64,
    /// Success lower bound at `m`.
    pub predicted_success: f64,
    /// Smallest `M >= m` whose success lower bound reaches the target.
    pub m_for_target: usize,
}

/// Admissible value `3^n - 1` (n >= 1) nearest to `v` on a log scale;
/// values at or below 2 give 2, ties go to the smaller value.
pub fn nearest_admissible(v: f64) -> (u32, u64) {
    if !(v > 2.0) {
        return (1, 2);
    }
    let mut best = (1, 2u64);
    for n in 1..=MAX_LEVEL {
        let q = query_count(n);
        let d = ((q as f64).ln() - v.ln()).abs();
        let bd = ((best.1 as f64).ln() - v.ln()).abs();
        if d < bd - 1e-12 {
            best = (n, q);
        }
    }
    best
}

/// `q_n` nearest `ln(x)/2`, `M = ceil(x^{1 + 1/(2 q_n)})`, boost levels
/// nearest `ln x`. Natural logarithms throughout.
pub fn choose_parameters(ratio: f64, target_success: f64) -> Result<ParameterChoice> {
    if !(ratio > 1.0 && ratio.is_finite()) {
        return Err(out_of_range("Gamma/g", ratio, "Gamma/g > 1"));
    }
    if !(target_success > 0.0 && target_success < 1.0) {
        return Err(out_of_range("target_success", target_success, "0 < target < 1"));
    }
    let (n, q) = nearest_admissible(ratio.ln() / 2.0);
    let (_, bq) = nearest_admissible(ratio.ln());
    let m = ratio.powf(1.0 + 1.0 / (2.0 * q as f64)).ceil() as usize;
    let mut m_for_target = m;
    while success_bound(ratio, m_for_target, n) < target_success {
        m_for_target += 1;
    }
    Ok(ParameterChoice {
        ratio,
        m,
        n,
        q,
        boost_q: bq,
        boost_q_prime: bq,
        predicted_queries: q * m as u64,
        predicted_success: success_bound(ratio, m, n),
        m_for_target,
    })
}

/// Ledger decomposed into selective transformations, PEA runs per
/// transformation and `U_s` applications per PEA run, compared against the
/// reference scale `x^2 ln^4 x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeReport {
    pub ratio: f64,
    pub selective_transformations: u64,
    pub pea_runs: u64,
    pub pea_runs_per_transformation: f64,
    pub discriminator_applications_per_b: u64,
    pub u_per_pea_run: u64,
    pub u_applications: u64,
    pub reference_scale: f64,
    pub u_over_reference: f64,
    pub ledger: CostLedger,
}

pub fn run_time_accounting(result: &RunResult) -> TimeReport {
    let ratio = result.gamma / result.min_gap;
    let l = &result.ledger;
    let u_per = result.config.ancilla.map_or(0, |a| a.dim() as u64);
    let per_b = match (result.config.oracle_mode, result.config.boost) {
        (OracleMode::PeaBoosted, Some(b)) => boosted_cost(b.q, b.q_prime),
        (OracleMode::Pea, _) => 1,
        _ => 0,
    };
    let reference = ratio * ratio * ratio.ln().powi(4);
    TimeReport {
        ratio,
        selective_transformations: l.oracle_queries,
        pea_runs: l.pea_runs,
        pea_runs_per_transformation: if l.oracle_queries > 0 {
            l.selective_pea_runs as f64 / l.oracle_queries as f64
        } else {
            0.0
        },
        discriminator_applications_per_b: per_b,
        u_per_pea_run: u_per,
        u_applications: l.u_applications,
        reference_scale: reference,
        u_over_reference: if reference > 0.0 { l.u_applications as f64 / reference } else { 0.0 },
        ledger: *l,
    }
}
