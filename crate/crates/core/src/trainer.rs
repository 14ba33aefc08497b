//! The optimization loop.
//!
//! One step generates `x̂_n = G(z_n, c_n)` for the frozen prior, perturbs every
//! datum `R` times, asks both paired questions about each perturbation pair in
//! a single batch, assembles `∂L_S/∂x̂_n` and `∂L_C/∂x̂_n`, and ascends
//!
//! ```text
//! θ ← θ + α · Σ_n (∂L_S/∂x̂_n + λ ∂L_C/∂x̂_n)ᵀ ∂x̂_n/∂θ
//! ```
//!
//! With `λ = 0` no class questions are issued and the step is the
//! single-evaluator update.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{AbsoluteEvaluator, Answer, EvalError, PairedEvaluator};
use crate::generator::{ClassLabel, GeneratedDatum, GeneratorArch, GeneratorError, GeneratorParams, LatentSample};
use crate::nes::{assemble_gradient, build_queries, sample_perturbations, NesError, QueryKind, Question};
use crate::rundir::{Checkpoint, PauseReason, PendingStep, RunDir, RunDirError};
use crate::seed::{self, derive_seed, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Nes(#[from] NesError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error("step {iteration}: non-finite gradient ({detail})")]
    NonFinite { iteration: usize, detail: String },
    #[error("no acceptable initialization in {attempts} attempts; best candidate: {best}")]
    InitExhausted { attempts: usize, best: Box<InitReport> },
    #[error("run directory {dir} was created with a different configuration")]
    ConfigMismatch { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub n_data: usize,
    pub n_perturb: usize,
    pub sigma: f64,
    pub iterations: usize,
    pub seed: u64,
    pub resample_noise: bool,
    /// Data per class; `None` splits `n_data` equally.
    pub class_split: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 2.0,
            alpha: 0.0005,
            n_data: 50,
            n_perturb: 5,
            sigma: 2.0,
            iterations: 4,
            seed: 0,
            resample_noise: false,
            class_split: None,
        }
    }
}

impl TrainConfig {
    /// Per-class counts, validated against `n_data`.
    pub fn class_counts(&self, num_classes: usize) -> Result<Vec<usize>, TrainError> {
        let split = match &self.class_split {
            Some(s) => s.clone(),
            None => {
                if num_classes == 0 || !self.n_data.is_multiple_of(num_classes) {
                    return Err(TrainError::Config(format!(
                        "{} data cannot be split equally over {num_classes} classes",
                        self.n_data
                    )));
                }
                vec![self.n_data / num_classes; num_classes]
            }
        };
        if split.len() != num_classes || split.iter().sum::<usize>() != self.n_data {
            return Err(TrainError::Config(format!("class split {split:?} inconsistent with {} data", self.n_data)));
        }
        Ok(split)
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), TrainError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("lambda {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TrainError::Config(format!("alpha {}", self.alpha)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(TrainError::Config(format!("sigma {}", self.sigma)));
        }
        if self.n_perturb == 0 {
            return Err(TrainError::Config("n_perturb must be at least 1".into()));
        }
        self.class_counts(num_classes).map(|_| ())
    }
}

/// The frozen generator inputs `(z_n, c_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub z: Vec<LatentSample>,
    pub labels: Vec<ClassLabel>,
}

impl Prior {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn generate(&self, params: &GeneratorParams) -> Result<Vec<GeneratedDatum>, GeneratorError> {
        self.z.iter().zip(&self.labels).map(|(z, &c)| params.forward(z, c)).collect()
    }
}

/// `z ~ U(0,1)^dim` i.i.d.; labels assigned in blocks following `class_counts`.
pub fn sample_prior(class_counts: &[usize], dim: usize, seed: u64) -> Prior {
    let mut rng = seed::rng(seed);
    let n: usize = class_counts.iter().sum();
    let z = (0..n)
        .map(|_| LatentSample::new((0..dim).map(|_| rng.random::<f64>()).collect()).expect("unit interval"))
        .collect();
    let labels = class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &count)| std::iter::repeat_n(ClassLabel(c), count))
        .collect();
    Prior { z, labels }
}

/// Prior used by step `iteration` (zero-based) of a run.
pub fn training_prior(cfg: &TrainConfig, arch: &GeneratorArch, iteration: usize) -> Result<Prior, TrainError> {
    let counts = cfg.class_counts(arch.num_classes)?;
    let it = if cfg.resample_noise { iteration as u64 } else { 0 };
    Ok(sample_prior(&counts, arch.input_dim, derive_seed(cfg.seed, it, Stream::Prior)))
}

/// Fresh prior noise never seen during training, with the same class split.
pub fn open_prior(cfg: &TrainConfig, arch: &GeneratorArch) -> Result<Prior, TrainError> {
    let counts = cfg.class_counts(arch.num_classes)?;
    Ok(sample_prior(&counts, arch.input_dim, derive_seed(cfg.seed, 0, Stream::OpenPrior)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// `Σ_n D_S(x̂_n)`.
    pub l_s: f64,
    /// `Σ_n D_C(x̂_n, c_n)`.
    pub l_c: f64,
}

impl Objectives {
    pub fn combined(&self, lambda: f64) -> f64 {
        self.l_s + lambda * self.l_c
    }
}

pub fn estimate_objectives(
    params: &GeneratorParams,
    prior: &Prior,
    evaluator: &dyn AbsoluteEvaluator,
) -> Result<Objectives, TrainError> {
    let data = prior.generate(params)?;
    let mut obj = Objectives { l_s: 0.0, l_c: 0.0 };
    for (x, &c) in data.iter().zip(&prior.labels) {
        obj.l_s += evaluator.rate(x, Question::Naturalness)?;
        obj.l_c += evaluator.rate(x, Question::ClassAcceptability(c))?;
    }
    Ok(obj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitCriteria {
    pub min_mean_naturalness: f64,
    pub min_mean_class_acceptability: f64,
    pub min_cross_leak_fraction: f64,
    pub max_attempts: usize,
}

impl Default for InitCriteria {
    fn default() -> Self {
        InitCriteria {
            min_mean_naturalness: 0.5,
            min_mean_class_acceptability: 0.4,
            min_cross_leak_fraction: 0.1,
            max_attempts: 1000,
        }
    }
}

/// Posterior of another class's acceptability above which a datum counts as leaked.
pub const LEAK_THRESHOLD: f64 = 0.5;

/// Statistics of one initialization candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub attempts: usize,
    pub mean_naturalness: f64,
    /// Mean acceptability of class `c` data as class `c`.
    pub mean_class_acceptability: Vec<f64>,
    /// Fraction of class `c` data acceptable as some other class.
    pub leak_fraction: Vec<f64>,
}

impl std::fmt::Display for InitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "naturalness {:.3}, class acceptability {:?}, leak {:?}",
            self.mean_naturalness, self.mean_class_acceptability, self.leak_fraction
        )
    }
}

impl InitReport {
    fn slack(&self, criteria: &InitCriteria) -> f64 {
        let mut slack = self.mean_naturalness - criteria.min_mean_naturalness;
        for m in &self.mean_class_acceptability {
            slack = slack.min(m - criteria.min_mean_class_acceptability);
        }
        for l in &self.leak_fraction {
            slack = slack.min(l - criteria.min_cross_leak_fraction);
        }
        slack
    }
}

pub fn inspect_init(
    params: &GeneratorParams,
    prior: &Prior,
    evaluator: &dyn AbsoluteEvaluator,
) -> Result<InitReport, TrainError> {
    let k = params.arch().num_classes;
    let data = prior.generate(params)?;
    let mut nat = 0.0;
    let mut acc = vec![0.0; k];
    let mut leaked = vec![0usize; k];
    let mut count = vec![0usize; k];
    for (x, &c) in data.iter().zip(&prior.labels) {
        nat += evaluator.rate(x, Question::Naturalness)?;
        acc[c.index()] += evaluator.rate(x, Question::ClassAcceptability(c))?;
        count[c.index()] += 1;
        let mut leak = false;
        for other in (0..k).filter(|&o| o != c.index()) {
            leak |= evaluator.rate(x, Question::ClassAcceptability(ClassLabel(other)))? >= LEAK_THRESHOLD;
        }
        leaked[c.index()] += usize::from(leak);
    }
    let per = |v: &[f64]| v.iter().zip(&count).map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect();
    let leaked: Vec<f64> = leaked.iter().map(|&l| l as f64).collect();
    Ok(InitReport {
        attempts: 0,
        mean_naturalness: if data.is_empty() { 0.0 } else { nat / data.len() as f64 },
        mean_class_acceptability: per(&acc),
        leak_fraction: if k > 1 { per(&leaked) } else { vec![] },
    })
}

/// Draws random generators until the generated data satisfy `criteria`.
pub fn initialize_until_valid(
    arch: &GeneratorArch,
    criteria: &InitCriteria,
    evaluator: &dyn AbsoluteEvaluator,
    prior: &Prior,
    seed: u64,
    scale: f64,
) -> Result<(GeneratorParams, InitReport), TrainError> {
    let mut best: Option<InitReport> = None;
    for attempt in 0..criteria.max_attempts {
        let params = GeneratorParams::init_random(arch, derive_seed(seed, attempt as u64, Stream::Init), scale)?;
        let mut report = inspect_init(&params, prior, evaluator)?;
        report.attempts = attempt + 1;
        if report.slack(criteria) >= 0.0 {
            return Ok((params, report));
        }
        if best.as_ref().is_none_or(|b| report.slack(criteria) > b.slack(criteria)) {
            best = Some(report);
        }
    }
    let mut best = best.unwrap_or(InitReport {
        attempts: 0,
        mean_naturalness: 0.0,
        mean_class_acceptability: vec![],
        leak_fraction: vec![],
    });
    best.attempts = criteria.max_attempts;
    Err(TrainError::InitExhausted { attempts: criteria.max_attempts, best: Box::new(best) })
}

/// Diagnostics of one completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Number of completed steps after this one.
    pub iteration: usize,
    /// Generated data at which the gradient was estimated.
    pub x_hat: Vec<Vec<f64>>,
    pub queries: usize,
    pub mean_grad_norm_naturalness: f64,
    pub mean_grad_norm_class: f64,
    pub theta_grad_norm: f64,
    pub objectives_before: Option<Objectives>,
    pub objectives_after: Option<Objectives>,
    pub elapsed_ms: u64,
}

impl StepRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &StepRecord) -> bool {
        StepRecord { elapsed_ms: 0, ..self.clone() } == StepRecord { elapsed_ms: 0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_trajectory(b))
    }
}

/// Everything a step computes before the update.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub x_hat: Vec<GeneratedDatum>,
    pub naturalness: Vec<Vec<f64>>,
    /// Empty when `λ = 0`.
    pub class: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub queries: usize,
}

pub enum StepOutcome {
    Done { params: GeneratorParams, record: StepRecord },
    Pending { reason: PauseReason, queries: Vec<crate::nes::PairedQuery> },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_norm(vs: &[Vec<f64>]) -> f64 {
    if vs.is_empty() {
        0.0
    } else {
        vs.iter().map(|v| norm(v)).sum::<f64>() / vs.len() as f64
    }
}

/// Builds step `iteration`'s query batch and, if the evaluator has answered,
/// the resulting gradients. Returns the batch either way.
pub fn step_gradients(
    params: &GeneratorParams,
    prior: &Prior,
    evaluator: &mut dyn PairedEvaluator,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(Vec<crate::nes::PairedQuery>, Result<StepGradients, PauseReason>), TrainError> {
    let it = iteration as u64;
    let x_hat = prior.generate(params)?;
    let perts = sample_perturbations(
        prior.len(),
        cfg.n_perturb,
        params.arch().output_dim,
        cfg.sigma,
        derive_seed(cfg.seed, it, Stream::Perturb),
    )?;
    let mut batch = build_queries(
        &x_hat,
        &prior.labels,
        &perts,
        QueryKind::Naturalness,
        derive_seed(cfg.seed, it, Stream::FlipNaturalness),
    )?;
    let with_class = cfg.lambda != 0.0;
    if with_class {
        batch.extend(build_queries(
            &x_hat,
            &prior.labels,
            &perts,
            QueryKind::ClassAcceptability,
            derive_seed(cfg.seed, it, Stream::FlipClass),
        )?);
    }

    let responses = match evaluator.answer(&batch) {
        Ok(Answer::Ready(r)) => r,
        Ok(Answer::Pending { batch_id, complete_fraction }) => {
            return Ok((batch, Err(PauseReason::AwaitingRatings { batch_id, complete_fraction })))
        }
        Err(EvalError::Unreachable(detail)) => return Ok((batch, Err(PauseReason::Unreachable { detail }))),
        Err(e) => return Err(e.into()),
    };

    let naturalness = assemble_gradient(QueryKind::Naturalness, &responses, &perts, cfg.sigma)?;
    let class = if with_class {
        assemble_gradient(QueryKind::ClassAcceptability, &responses, &perts, cfg.sigma)?
    } else {
        Vec::new()
    };

    let mut theta = vec![0.0; params.num_params()];
    for (n, (z, &c)) in prior.z.iter().zip(&prior.labels).enumerate() {
        let g: Vec<f64> = if with_class {
            naturalness[n].iter().zip(&class[n]).map(|(s, k)| s + cfg.lambda * k).collect()
        } else {
            naturalness[n].clone()
        };
        let jac = params.jacobian_params(z, c)?;
        for (t, v) in theta.iter_mut().zip(jac.vjp(&g)) {
            *t += v;
        }
    }
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite { iteration, detail: format!("θ-gradient entry {i} = {}", theta[i]) });
    }
    let queries = batch.len();
    Ok((batch, Ok(StepGradients { x_hat, naturalness, class, theta, queries })))
}

/// One ascent step. Objectives in the record are left empty.
pub fn train_step(
    params: &GeneratorParams,
    prior: &Prior,
    evaluator: &mut dyn PairedEvaluator,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<StepOutcome, TrainError> {
    let started = Instant::now();
    let (queries, grads) = step_gradients(params, prior, evaluator, cfg, iteration)?;
    let grads = match grads {
        Ok(g) => g,
        Err(reason) => return Ok(StepOutcome::Pending { reason, queries }),
    };
    let updated = params.apply_update(&grads.theta, cfg.alpha).map_err(|e| match e {
        GeneratorError::NonFinite { index } => {
            TrainError::NonFinite { iteration, detail: format!("updated parameter {index}") }
        }
        other => other.into(),
    })?;
    let record = StepRecord {
        iteration: iteration + 1,
        x_hat: grads.x_hat.into_iter().map(|x| x.0).collect(),
        queries: grads.queries,
        mean_grad_norm_naturalness: mean_norm(&grads.naturalness),
        mean_grad_norm_class: mean_norm(&grads.class),
        theta_grad_norm: norm(&grads.theta),
        objectives_before: None,
        objectives_after: None,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    Ok(StepOutcome::Done { params: updated, record })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigSnapshot {
    train: TrainConfig,
    arch: GeneratorArch,
}

#[derive(Debug)]
pub enum RunOutcome {
    Completed { history: TrainHistory, params: GeneratorParams },
    Paused { history: TrainHistory, params: GeneratorParams, iteration: usize, reason: PauseReason },
}

impl RunOutcome {
    pub fn history(&self) -> &TrainHistory {
        match self {
            RunOutcome::Completed { history, .. } | RunOutcome::Paused { history, .. } => history,
        }
    }

    pub fn params(&self) -> &GeneratorParams {
        match self {
            RunOutcome::Completed { params, .. } | RunOutcome::Paused { params, .. } => params,
        }
    }
}

/// Runs (or resumes) `cfg.iterations` steps, persisting after each one.
///
/// If `out_dir` already holds checkpoints the run continues from the latest
/// one and `initial` is ignored. `monitor`, when given, fills the objective
/// fields of each record.
pub fn run(
    cfg: &TrainConfig,
    initial: &GeneratorParams,
    evaluator: &mut dyn PairedEvaluator,
    monitor: Option<&dyn AbsoluteEvaluator>,
    out_dir: &Path,
) -> Result<RunOutcome, TrainError> {
    let arch = initial.arch().clone();
    cfg.validate(arch.num_classes)?;
    let dir = RunDir::create(out_dir)?;
    let snapshot = ConfigSnapshot { train: cfg.clone(), arch: arch.clone() };

    let (mut params, start, mut records) = match dir.latest_checkpoint()? {
        Some(ck) => {
            let stored: ConfigSnapshot = crate::rundir::read_json(&dir.config_path())?;
            let comparable = |s: &ConfigSnapshot| ConfigSnapshot {
                train: TrainConfig { iterations: 0, ..s.train.clone() },
                arch: s.arch.clone(),
            };
            if comparable(&stored) != comparable(&snapshot) || ck.seed != cfg.seed {
                return Err(TrainError::ConfigMismatch { dir: out_dir.to_path_buf() });
            }
            let mut records = dir.read_history()?;
            records.retain(|r| r.iteration <= ck.iteration);
            dir.write_history(&records)?;
            (ck.params()?, ck.iteration, records)
        }
        None => {
            crate::rundir::write_json(&dir.config_path(), &snapshot)?;
            dir.save_checkpoint(&Checkpoint::new(initial, cfg.seed, 0))?;
            dir.write_history(&[])?;
            (initial.clone(), 0, Vec::new())
        }
    };

    for iteration in start..cfg.iterations {
        let prior = training_prior(cfg, &arch, iteration)?;
        match train_step(&params, &prior, evaluator, cfg, iteration)? {
            StepOutcome::Pending { reason, queries } => {
                dir.write_pending(&PendingStep { iteration, reason: reason.clone(), queries })?;
                return Ok(RunOutcome::Paused {
                    history: TrainHistory { records },
                    params,
                    iteration,
                    reason,
                });
            }
            StepOutcome::Done { params: next, mut record } => {
                if let Some(m) = monitor {
                    record.objectives_before = Some(estimate_objectives(&params, &prior, m)?);
                    record.objectives_after = Some(estimate_objectives(&next, &prior, m)?);
                }
                records.push(record);
                dir.write_history(&records)?;
                dir.save_checkpoint(&Checkpoint::new(&next, cfg.seed, iteration + 1))?;
                dir.clear_pending()?;
                params = next;
            }
        }
    }
    Ok(RunOutcome::Completed { history: TrainHistory { records }, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleConfig, ResponseMode, SimulatedOracle};

    #[test]
    fn defaults() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.lambda, cfg.alpha, cfg.n_data, cfg.n_perturb, cfg.sigma, cfg.iterations), (2.0, 0.0005, 50, 5, 2.0, 4));
        assert_eq!(cfg.class_counts(2).unwrap(), vec![25, 25]);
        assert!(TrainConfig { n_data: 51, ..cfg.clone() }.class_counts(2).is_err());
        assert!(TrainConfig { class_split: Some(vec![20, 20]), ..cfg.clone() }.class_counts(2).is_err());
        assert_eq!(TrainConfig { class_split: Some(vec![20, 30]), ..cfg }.class_counts(2).unwrap(), vec![20, 30]);
    }

    #[test]
    fn prior_split_and_determinism() {
        let p = sample_prior(&[25, 25], 2, 3);
        assert_eq!(p.labels.iter().filter(|c| c.index() == 0).count(), 25);
        assert_eq!(p.labels.iter().filter(|c| c.index() == 1).count(), 25);
        assert_eq!(p, sample_prior(&[25, 25], 2, 3));
        assert_ne!(p, sample_prior(&[25, 25], 2, 4));
    }

    #[test]
    fn prior_mean_is_one_half() {
        let p = sample_prior(&[100_000], 2, 8);
        for d in 0..2 {
            let mean = p.z.iter().map(|z| z.as_slice()[d]).sum::<f64>() / p.len() as f64;
            assert!((mean - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn objectives_on_constant_fields() {
        let arch = GeneratorArch::default();
        let params = GeneratorParams::init_random(&arch, 1, 1.0).unwrap();
        let prior = sample_prior(&[25, 25], 2, 1);
        let zero = SimulatedOracle::new(OracleConfig::constant(0.0, 2, ResponseMode::FiveLevel)).unwrap();
        let one = SimulatedOracle::new(OracleConfig::constant(1.0, 2, ResponseMode::FiveLevel)).unwrap();
        assert_eq!(estimate_objectives(&params, &prior, &zero).unwrap(), Objectives { l_s: 0.0, l_c: 0.0 });
        assert_eq!(estimate_objectives(&params, &prior, &one).unwrap(), Objectives { l_s: 50.0, l_c: 50.0 });
    }

    #[test]
    fn vacuous_criteria_accept_first_candidate() {
        let arch = GeneratorArch::default();
        let prior = sample_prior(&[5, 5], 2, 1);
        let oracle = SimulatedOracle::reference();
        let criteria = InitCriteria {
            min_mean_naturalness: 0.0,
            min_mean_class_acceptability: 0.0,
            min_cross_leak_fraction: 0.0,
            max_attempts: 10,
        };
        let (params, report) = initialize_until_valid(&arch, &criteria, &oracle, &prior, 5, 2.0).unwrap();
        assert_eq!(report.attempts, 1);
        let first = GeneratorParams::init_random(&arch, derive_seed(5, 0, Stream::Init), 2.0).unwrap();
        assert_eq!(params, first);
    }

    #[test]
    fn infeasible_criteria_exhaust() {
        let arch = GeneratorArch::default();
        let prior = sample_prior(&[5, 5], 2, 1);
        let oracle = SimulatedOracle::reference();
        let criteria = InitCriteria { min_mean_naturalness: 1.0, max_attempts: 20, ..InitCriteria::default() };
        match initialize_until_valid(&arch, &criteria, &oracle, &prior, 5, 2.0) {
            Err(TrainError::InitExhausted { attempts, best }) => {
                assert_eq!(attempts, 20);
                assert!(best.mean_naturalness < 1.0);
            }
            other => panic!("expected exhaustion, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn zero_responses_leave_params_unchanged() {
        let arch = GeneratorArch::default();
        let params = GeneratorParams::init_random(&arch, 2, 1.0).unwrap();
        let prior = sample_prior(&[3, 3], 2, 2);
        let mut flat = SimulatedOracle::new(OracleConfig::constant(0.4, 2, ResponseMode::Continuous)).unwrap();
        let cfg = TrainConfig { n_data: 6, ..TrainConfig::default() };
        match train_step(&params, &prior, &mut flat, &cfg, 0).unwrap() {
            StepOutcome::Done { params: next, record } => {
                assert_eq!(next, params);
                assert_eq!(record.queries, 6 * 5 * 2);
            }
            StepOutcome::Pending { .. } => panic!("oracle never pends"),
        }
    }

    #[test]
    fn zero_lambda_skips_class_queries() {
        let arch = GeneratorArch::default();
        let params = GeneratorParams::init_random(&arch, 2, 1.0).unwrap();
        let prior = sample_prior(&[3, 3], 2, 2);
        let mut oracle = SimulatedOracle::reference();
        let cfg = TrainConfig { n_data: 6, lambda: 0.0, ..TrainConfig::default() };
        let (batch, grads) = step_gradients(&params, &prior, &mut oracle, &cfg, 0).unwrap();
        assert_eq!(batch.len(), 30);
        assert!(batch.iter().all(|q| q.kind == QueryKind::Naturalness));
        assert!(grads.unwrap().class.is_empty());
    }
}
