//! Random hyperparameter search, validation-based model selection,
//! repetitions and the environment-count / spurious-dimension sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::algorithms::{train_on, HParams, Method, Objective, TrainOutput};
use crate::error::{config, Result};
use crate::math::RngStream;
use crate::problems::{instantiate_problem, EnvironmentData, ProblemSpec};

/// Search distributions shared by every method. Ranges are exponents of ten
/// for the log-uniform parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub lr_log10: (f64, f64),
    pub weight_decay_log10: (f64, f64),
    pub lambda_log10: (f64, f64),
    pub tau: (f64, f64),
    pub n_trials: usize,
    pub steps: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr_log10: (-4.0, -2.0),
            weight_decay_log10: (-6.0, -2.0),
            lambda_log10: (0.0, 4.0),
            tau: (0.5, 1.0),
            n_trials: 20,
            steps: 10_000,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lr", self.lr_log10),
            ("weight_decay", self.weight_decay_log10),
            ("lambda", self.lambda_log10),
            ("tau", self.tau),
        ] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return config(format!("empty {name} range ({lo}, {hi})"));
            }
        }
        if self.tau.0 < 0.0 || self.tau.1 > 1.0 {
            return config("tau range must lie in [0, 1]");
        }
        if self.n_trials == 0 {
            return config("n_trials must be at least 1");
        }
        Ok(())
    }
}

/// Draws one trial's hyperparameters. All four values are always drawn, in
/// a fixed order, and the ones the method ignores are then zeroed.
pub fn sample_hparams(method: Method, space: &SearchSpace, stream: &mut RngStream) -> HParams {
    let lr = 10f64.powf(stream.uniform_range(space.lr_log10.0, space.lr_log10.1));
    let wd =
        10f64.powf(stream.uniform_range(space.weight_decay_log10.0, space.weight_decay_log10.1));
    let lambda = 10f64.powf(stream.uniform_range(space.lambda_log10.0, space.lambda_log10.1));
    let tau = stream.uniform_range(space.tau.0, space.tau.1);
    HParams {
        method,
        lr,
        weight_decay: wd,
        lambda: if method.uses_lambda() { lambda } else { 0.0 },
        tau: if method.uses_tau() { tau } else { 0.0 },
        steps: space.steps,
    }
}

/// One (repetition, problem, algorithm, environment) measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub problem: String,
    pub algorithm: Method,
    pub env: usize,
    pub repetition: usize,
    pub test_error: f64,
    pub valid_error: f64,
    pub hparams: HParams,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
struct Trial {
    hparams: HParams,
    output: TrainOutput,
    /// Per-environment validation errors; `None` when the trial diverged.
    valid: Option<Vec<f64>>,
}

/// Index of the trial with the smallest validation error, skipping trials
/// without one. Ties keep the earliest trial.
pub fn select_trial(valid_errors: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in valid_errors.iter().enumerate() {
        let Some(v) = v.filter(|v| v.is_finite()) else {
            continue;
        };
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn pooled(errors: &[f64], sizes: &[usize]) -> f64 {
    let total: usize = sizes.iter().sum();
    errors
        .iter()
        .zip(sizes)
        .map(|(e, &n)| e * n as f64)
        .sum::<f64>()
        / total as f64
}

fn run_trial(
    objective: &Objective<'_>,
    envs: &[EnvironmentData],
    hparams: HParams,
) -> Result<Trial> {
    let output = train_on(objective, &hparams)?;
    let valid = if output.diverged {
        None
    } else {
        let errs = envs
            .iter()
            .map(|e| output.model.error(&e.valid))
            .collect::<Result<Vec<f64>>>()?;
        errs.iter().all(|v| v.is_finite()).then_some(errs)
    };
    Ok(Trial {
        hparams,
        output,
        valid,
    })
}

fn hparam_stream(rep_stream: &RngStream, method: Method, trial: usize) -> RngStream {
    rep_stream
        .split(method.stream_label())
        .split(trial as u64)
        .split(0)
}

/// One full repetition: sample an instance and its data, search each
/// method's hyperparameters, select on pooled validation error and report
/// the selected model's test error per environment.
pub fn run_repetition(
    spec: &ProblemSpec,
    methods: &[Method],
    space: &SearchSpace,
    rep_stream: &RngStream,
    repetition: usize,
) -> Result<Vec<RunRecord>> {
    space.validate()?;
    let instance = instantiate_problem(spec, &rep_stream.split(0))?;
    let data_stream = rep_stream.split(1);
    let plain = instance.build_environments(false, &data_stream)?;
    let oracle = if methods.iter().any(|m| m.is_oracle()) {
        Some(instance.build_environments(true, &data_stream)?)
    } else {
        None
    };
    let problem = spec.name();

    let mut records = Vec::new();
    for &method in methods {
        let envs = if method.is_oracle() {
            oracle.as_ref().expect("built above")
        } else {
            &plain
        };
        let objective = Objective::new(envs.iter().map(|e| &e.train))?;
        let sizes: Vec<usize> = envs.iter().map(|e| e.valid.len()).collect();
        let trials = (0..space.n_trials)
            .into_par_iter()
            .map(|t| {
                let hp = sample_hparams(method, space, &mut hparam_stream(rep_stream, method, t));
                run_trial(&objective, envs, hp)
            })
            .collect::<Result<Vec<Trial>>>()?;
        let pooled_valid: Vec<Option<f64>> = trials
            .iter()
            .map(|t| t.valid.as_ref().map(|v| pooled(v, &sizes)))
            .collect();

        match select_trial(&pooled_valid) {
            Some(best) => {
                let trial = &trials[best];
                let valid = trial.valid.as_ref().expect("selected trials have errors");
                for (env, v) in envs.iter().zip(valid) {
                    records.push(RunRecord {
                        problem: problem.clone(),
                        algorithm: method,
                        env: env.env_index(),
                        repetition,
                        test_error: trial.output.model.error(&env.test)?,
                        valid_error: *v,
                        hparams: trial.hparams.clone(),
                        diverged: false,
                    });
                }
            }
            None => {
                log::warn!(
                    "{problem}/{method} repetition {repetition}: all {} trials diverged",
                    trials.len()
                );
                for env in envs {
                    records.push(RunRecord {
                        problem: problem.clone(),
                        algorithm: method,
                        env: env.env_index(),
                        repetition,
                        test_error: f64::NAN,
                        valid_error: f64::NAN,
                        hparams: trials[0].hparams.clone(),
                        diverged: true,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Repetitions `0..n_repetitions`, repetition `r` drawing from
/// `master.split(r)`. The output order is canonical whatever the schedule.
pub fn run_benchmark(
    spec: &ProblemSpec,
    methods: &[Method],
    space: &SearchSpace,
    n_repetitions: usize,
    master: &RngStream,
) -> Result<Vec<RunRecord>> {
    if n_repetitions == 0 {
        return config("n_repetitions must be at least 1");
    }
    let per_rep = (0..n_repetitions)
        .into_par_iter()
        .map(|r| run_repetition(spec, methods, space, &master.split(r as u64), r))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Stream for one problem of a multi-problem benchmark. Plain and scrambled
/// variants share it, so they see the same latent data.
pub fn problem_stream(root: &RngStream, spec: &ProblemSpec) -> RngStream {
    root.split(spec.kind.stream_label())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub spread: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let spread = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, spread, n })
}

pub type CellKey = (String, Method, usize);

/// Mean and spread of test error per (problem, algorithm, environment),
/// over repetitions. Diverged records are skipped.
pub fn aggregate(records: &[RunRecord]) -> BTreeMap<CellKey, Summary> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let vals = groups
            .entry((r.problem.clone(), r.algorithm, r.env))
            .or_default();
        if !r.diverged {
            vals.push(r.test_error);
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| {
            let s = summarize(&v);
            if s.is_none() {
                log::warn!("no usable records for {}/{} E{}", k.0, k.1, k.2);
            }
            s.map(|s| (k, s))
        })
        .collect()
}

/// Test error averaged across environments within each repetition, then
/// summarized over repetitions. Repetitions with any diverged environment
/// are skipped.
pub fn aggregate_env_averaged(records: &[RunRecord]) -> BTreeMap<(String, Method), Summary> {
    let mut per_rep: BTreeMap<(String, Method, usize), Option<Vec<f64>>> = BTreeMap::new();
    for r in records {
        let slot = per_rep
            .entry((r.problem.clone(), r.algorithm, r.repetition))
            .or_insert_with(|| Some(Vec::new()));
        match (slot.as_mut(), r.diverged) {
            (Some(v), false) => v.push(r.test_error),
            _ => *slot = None,
        }
    }
    let mut groups: BTreeMap<(String, Method), Vec<f64>> = BTreeMap::new();
    for ((problem, method, _), errs) in per_rep {
        let vals = groups.entry((problem, method)).or_default();
        if let Some(e) = errs.filter(|e| !e.is_empty()) {
            vals.push(e.iter().sum::<f64>() / e.len() as f64);
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| {
            let s = summarize(&v);
            if s.is_none() {
                log::warn!("no usable repetitions for {}/{}", k.0, k.1);
            }
            s.map(|s| (k, s))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    /// Vary `n_env` at fixed `(d_inv, d_spu)`; axis value `n_env / d_spu`.
    DeltaEnv,
    /// Vary `d_spu` at fixed `(d_inv, n_env)`; axis value `d_spu / d_inv`.
    DeltaSpu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// `n_env` values for [`SweepAxis::DeltaEnv`], `d_spu` values otherwise.
    pub values: Vec<usize>,
    pub d_inv: usize,
    /// `d_spu` for the environment sweep, `n_env` for the spurious sweep.
    pub fixed: usize,
    pub n_per_env: usize,
}

impl SweepConfig {
    pub fn delta_env() -> Self {
        Self {
            axis: SweepAxis::DeltaEnv,
            values: (2..=10).collect(),
            d_inv: 5,
            fixed: 5,
            n_per_env: 10_000,
        }
    }

    pub fn delta_spu() -> Self {
        Self {
            axis: SweepAxis::DeltaSpu,
            values: vec![0, 1, 2, 3, 4, 5, 7, 10],
            d_inv: 5,
            fixed: 3,
            n_per_env: 10_000,
        }
    }

    pub fn spec_for(&self, problem: &ProblemSpec, value: usize) -> ProblemSpec {
        let (d_spu, n_env) = match self.axis {
            SweepAxis::DeltaEnv => (self.fixed, value),
            SweepAxis::DeltaSpu => (value, self.fixed),
        };
        problem
            .clone()
            .with_dims(self.d_inv, d_spu, n_env)
            .with_n_per_env(self.n_per_env)
    }

    pub fn axis_value(&self, value: usize) -> f64 {
        match self.axis {
            SweepAxis::DeltaEnv => value as f64 / self.fixed as f64,
            SweepAxis::DeltaSpu => value as f64 / self.d_inv as f64,
        }
    }

    fn stream_label(&self) -> u64 {
        match self.axis {
            SweepAxis::DeltaEnv => 100,
            SweepAxis::DeltaSpu => 101,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return config("sweep has no values");
        }
        if self.axis == SweepAxis::DeltaEnv && self.fixed == 0 {
            return config("environment sweep needs d_spu >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub axis_value: f64,
    pub record: RunRecord,
}

/// Runs [`run_benchmark`] for every (axis value, problem).
pub fn run_sweep(
    config: &SweepConfig,
    problems: &[ProblemSpec],
    methods: &[Method],
    space: &SearchSpace,
    n_repetitions: usize,
    master: &RngStream,
) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let axis_stream = master.split(config.stream_label());
    let mut out = Vec::new();
    for &value in &config.values {
        for problem in problems {
            let spec = config.spec_for(problem, value);
            let stream = problem_stream(&axis_stream.split(value as u64), &spec);
            let records = run_benchmark(&spec, methods, space, n_repetitions, &stream)?;
            let axis_value = config.axis_value(value);
            out.extend(
                records
                    .into_iter()
                    .map(|record| SweepRecord { axis_value, record }),
            );
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub problem: String,
    pub algorithm: Method,
    pub summary: Summary,
}

/// Environment-averaged summaries per (axis value, problem, algorithm),
/// sorted by problem, algorithm, then axis value.
pub fn summarize_sweep(records: &[SweepRecord]) -> Vec<SweepPoint> {
    let mut by_value: Vec<(f64, Vec<RunRecord>)> = Vec::new();
    for r in records {
        match by_value.iter_mut().find(|(v, _)| *v == r.axis_value) {
            Some((_, rs)) => rs.push(r.record.clone()),
            None => by_value.push((r.axis_value, vec![r.record.clone()])),
        }
    }
    let mut points: Vec<SweepPoint> = by_value
        .into_iter()
        .flat_map(|(axis_value, rs)| {
            aggregate_env_averaged(&rs)
                .into_iter()
                .map(move |((problem, algorithm), summary)| SweepPoint {
                    axis_value,
                    problem,
                    algorithm,
                    summary,
                })
        })
        .collect();
    points.sort_by(|a, b| {
        (&a.problem, a.algorithm)
            .cmp(&(&b.problem, b.algorithm))
            .then(a.axis_value.total_cmp(&b.axis_value))
    });
    points
}
