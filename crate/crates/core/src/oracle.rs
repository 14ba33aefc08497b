//! Simulated evaluator over analytic posterior landscapes.
//!
//! Each question (naturalness, or acceptability as class `c`) is backed by a
//! [`PosteriorField`]: a floor plus a sum of Gaussian bumps, clamped to
//! `[0, 1]`. The oracle answers both rating protocols the way a rater would,
//! optionally quantized to the five-point scales and perturbed by rater noise.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{AbsoluteEvaluator, Answer, EvalError, PairedEvaluator};
use crate::generator::ClassLabel;
use crate::nes::{NesError, PairedQuery, Question, RatingResponse};
use crate::protocol::{quantize_absolute, quantize_paired};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("expected {expected} class fields, got {got}")]
    ClassCount { expected: usize, got: usize },
    #[error("no field for class {0}")]
    UnknownClass(usize),
    #[error("stimulus has dimension {got}, field expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Query(#[from] NesError),
    #[error("reading oracle config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing oracle config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    /// Symmetric positive definite.
    pub covariance: Vec<Vec<f64>>,
    pub height: f64,
}

/// `D(x) = clamp(floor + Σ height_i · exp(-½ (x-c_i)ᵀ Σ_i⁻¹ (x-c_i)), 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PosteriorField {
    pub floor: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
}

#[derive(Debug, Clone)]
struct CompiledBump {
    center: DVector<f64>,
    precision: DMatrix<f64>,
    height: f64,
}

/// A validated field with precomputed precision matrices.
#[derive(Debug, Clone)]
pub struct CompiledField {
    floor: f64,
    bumps: Vec<CompiledBump>,
}

impl PosteriorField {
    pub fn constant(value: f64) -> Self {
        PosteriorField { floor: value, bumps: Vec::new() }
    }

    pub fn compile(&self) -> Result<CompiledField, OracleError> {
        if !(0.0..1.0).contains(&self.floor) && !(self.bumps.is_empty() && self.floor == 1.0) {
            return Err(OracleError::InvalidField(format!("floor {} outside [0, 1)", self.floor)));
        }
        let bumps = self
            .bumps
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let d = b.center.len();
                if !(b.height > 0.0 && b.height <= 1.0) {
                    return Err(OracleError::InvalidField(format!("bump {i}: height {} outside (0, 1]", b.height)));
                }
                if d == 0 || b.covariance.len() != d || b.covariance.iter().any(|row| row.len() != d) {
                    return Err(OracleError::InvalidField(format!("bump {i}: covariance is not {d}×{d}")));
                }
                let cov = DMatrix::from_fn(d, d, |r, c| b.covariance[r][c]);
                if (&cov - cov.transpose()).abs().max() > 1e-12 {
                    return Err(OracleError::InvalidField(format!("bump {i}: covariance not symmetric")));
                }
                let chol = cov
                    .cholesky()
                    .ok_or_else(|| OracleError::InvalidField(format!("bump {i}: covariance not positive definite")))?;
                Ok(CompiledBump { center: DVector::from_vec(b.center.clone()), precision: chol.inverse(), height: b.height })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(d) = bumps.first().map(|b| b.center.len()) {
            if bumps.iter().any(|b| b.center.len() != d) {
                return Err(OracleError::InvalidField("bumps of differing dimension".into()));
            }
        }
        Ok(CompiledField { floor: self.floor, bumps })
    }

    /// Convenience evaluation; compiles the field on every call.
    pub fn posterior(&self, x: &[f64]) -> Result<f64, OracleError> {
        self.compile()?.value(x)
    }
}

impl CompiledField {
    fn check_dim(&self, x: &[f64]) -> Result<(), OracleError> {
        match self.bumps.first() {
            Some(b) if b.center.len() != x.len() => {
                Err(OracleError::Dimension { expected: b.center.len(), got: x.len() })
            }
            _ => Ok(()),
        }
    }

    fn raw(&self, x: &DVector<f64>) -> f64 {
        self.floor
            + self
                .bumps
                .iter()
                .map(|b| {
                    let d = x - &b.center;
                    b.height * (-0.5 * d.dot(&(&b.precision * &d))).exp()
                })
                .sum::<f64>()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        self.check_dim(x)?;
        Ok(self.raw(&DVector::from_column_slice(x)).clamp(0.0, 1.0))
    }

    /// Analytic gradient; zero wherever the clamp is active.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.check_dim(x)?;
        let xv = DVector::from_column_slice(x);
        let raw = self.raw(&xv);
        if !(0.0..=1.0).contains(&raw) {
            return Ok(vec![0.0; x.len()]);
        }
        let mut g = DVector::zeros(x.len());
        for b in &self.bumps {
            let d = &xv - &b.center;
            let pd = &b.precision * &d;
            let e = b.height * (-0.5 * d.dot(&pd)).exp();
            g -= pd * e;
        }
        Ok(g.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Continuous,
    #[default]
    FiveLevel,
}

/// Serialized description of a simulated evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub naturalness_field: PosteriorField,
    pub class_fields: Vec<PosteriorField>,
    #[serde(default)]
    pub response_mode: ResponseMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_sd: f64,
}

const REFERENCE_LANDSCAPE: &str = include_str!("../data/reference_landscape.json");

impl OracleConfig {
    /// The bundled two-class landscape.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_LANDSCAPE).expect("bundled landscape parses")
    }

    /// Loads a JSON (or, by `.toml` extension, TOML) config file.
    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| OracleError::Parse(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| OracleError::Parse(e.to_string()))
        }
    }

    /// A config whose every field is the constant `value`.
    pub fn constant(value: f64, num_classes: usize, mode: ResponseMode) -> Self {
        OracleConfig {
            naturalness_field: PosteriorField::constant(value),
            class_fields: vec![PosteriorField::constant(value); num_classes],
            response_mode: mode,
            seed: 0,
            noise_sd: 0.0,
        }
    }

    pub fn with_mode(mut self, mode: ResponseMode) -> Self {
        self.response_mode = mode;
        self
    }

    pub fn field(&self, question: Question) -> Option<&PosteriorField> {
        match question {
            Question::Naturalness => Some(&self.naturalness_field),
            Question::ClassAcceptability(c) => self.class_fields.get(c.index()),
        }
    }
}

/// The in-process stand-in for a human rater.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    config: OracleConfig,
    naturalness: CompiledField,
    classes: Vec<CompiledField>,
}

fn hash_floats(mut h: u64, xs: &[f64]) -> u64 {
    for x in xs {
        h = seed::derive_seed(h, x.to_bits(), Stream::OracleNoise);
    }
    h
}

impl SimulatedOracle {
    pub fn new(config: OracleConfig) -> Result<Self, OracleError> {
        if !(config.noise_sd >= 0.0 && config.noise_sd.is_finite()) {
            return Err(OracleError::InvalidField(format!("noise_sd {}", config.noise_sd)));
        }
        let naturalness = config.naturalness_field.compile()?;
        let classes = config.class_fields.iter().map(PosteriorField::compile).collect::<Result<_, _>>()?;
        Ok(SimulatedOracle { config, naturalness, classes })
    }

    /// Requires exactly `num_classes` class fields.
    pub fn for_classes(config: OracleConfig, num_classes: usize) -> Result<Self, OracleError> {
        if config.class_fields.len() != num_classes {
            return Err(OracleError::ClassCount { expected: num_classes, got: config.class_fields.len() });
        }
        Self::new(config)
    }

    pub fn reference() -> Self {
        Self::new(OracleConfig::reference()).expect("bundled landscape is valid")
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn field(&self, question: Question) -> Result<&CompiledField, OracleError> {
        match question {
            Question::Naturalness => Ok(&self.naturalness),
            Question::ClassAcceptability(ClassLabel(c)) => self.classes.get(c).ok_or(OracleError::UnknownClass(c)),
        }
    }

    /// Noise-free continuous posterior.
    pub fn posterior(&self, x: &[f64], question: Question) -> Result<f64, OracleError> {
        self.field(question)?.value(x)
    }

    fn noise(&self, key: u64) -> f64 {
        if self.config.noise_sd == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, self.config.noise_sd).expect("validated noise_sd");
        normal.sample(&mut seed::rng(seed::derive_seed(self.config.seed, key, Stream::OracleNoise)))
    }

    fn question_key(question: Question) -> u64 {
        match question {
            Question::Naturalness => 0,
            Question::ClassAcceptability(c) => 1 + c.index() as u64,
        }
    }

    /// Absolute rating: the posterior, plus rater noise, clamped, and rounded to
    /// the five-point scale in five-level mode.
    pub fn rate_absolute(&self, x: &[f64], question: Question) -> Result<f64, OracleError> {
        let p = self.posterior(x, question)?;
        let key = hash_floats(Self::question_key(question), x);
        let noisy = (p + self.noise(key)).clamp(0.0, 1.0);
        Ok(match self.config.response_mode {
            ResponseMode::Continuous => noisy,
            ResponseMode::FiveLevel => quantize_absolute(noisy),
        })
    }

    /// Paired rating `D(first) - D(second)` for stimuli in display order.
    pub fn rate_paired(&self, first: &[f64], second: &[f64], question: Question) -> Result<f64, OracleError> {
        let field = self.field(question)?;
        let diff = field.value(first)? - field.value(second)?;
        let key = hash_floats(hash_floats(Self::question_key(question) ^ 0xA5A5, first), second);
        let noisy = (diff + self.noise(key)).clamp(-1.0, 1.0);
        Ok(match self.config.response_mode {
            ResponseMode::Continuous => noisy,
            ResponseMode::FiveLevel => quantize_paired(noisy),
        })
    }

    /// Answers each query as displayed, i.e. honoring its presentation flip.
    pub fn answer_batch(&self, queries: &[PairedQuery]) -> Result<Vec<RatingResponse>, OracleError> {
        queries
            .iter()
            .map(|q| {
                let question = q.question()?;
                let (first, second) = q.displayed();
                Ok(RatingResponse { query_id: q.query_id, delta_d: self.rate_paired(first, second, question)? })
            })
            .collect()
    }
}

impl PairedEvaluator for SimulatedOracle {
    fn answer(&mut self, queries: &[PairedQuery]) -> Result<Answer, EvalError> {
        self.answer_batch(queries).map(Answer::Ready).map_err(|e| EvalError::Rejected(e.to_string()))
    }
}

impl AbsoluteEvaluator for SimulatedOracle {
    fn rate(&self, x: &[f64], question: Question) -> Result<f64, EvalError> {
        self.rate_absolute(x, question).map_err(|e| EvalError::Rejected(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nes::{build_queries, sample_perturbations, QueryKind};
    use crate::generator::GeneratedDatum;

    fn single_bump(floor: f64, height: f64) -> PosteriorField {
        PosteriorField {
            floor,
            bumps: vec![Bump { center: vec![0.5, -0.5], covariance: vec![vec![1.0, 0.2], vec![0.2, 0.5]], height }],
        }
    }

    fn oracle_with(field: PosteriorField, mode: ResponseMode) -> SimulatedOracle {
        SimulatedOracle::new(OracleConfig {
            naturalness_field: field.clone(),
            class_fields: vec![field.clone(), field],
            response_mode: mode,
            seed: 0,
            noise_sd: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn empty_field_is_zero() {
        let f = PosteriorField::constant(0.0);
        for x in [[0.0, 0.0], [5.0, -3.0]] {
            assert_eq!(f.posterior(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn peak_value() {
        assert_eq!(single_bump(0.1, 0.7).posterior(&[0.5, -0.5]).unwrap(), 0.1 + 0.7);
        assert_eq!(single_bump(0.5, 0.9).posterior(&[0.5, -0.5]).unwrap(), 1.0);
    }

    #[test]
    fn direct_formula_agrees() {
        // Independent closed form for the 2×2 inverse.
        let f = single_bump(0.05, 0.8);
        let (a, b, d): (f64, f64, f64) = (1.0, 0.2, 0.5);
        let det = a * d - b * b;
        for &(x0, x1) in &[(0.0, 0.0), (1.3, -2.0), (-0.7, 0.4), (0.5, -0.5)] {
            let (u, v) = (x0 - 0.5, x1 + 0.5);
            let q = (d * u * u - 2.0 * b * u * v + a * v * v) / det;
            let expected = (0.05 + 0.8 * (-0.5 * q).exp()).clamp(0.0, 1.0);
            assert!((f.posterior(&[x0, x1]).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_difference() {
        let f = single_bump(0.05, 0.8).compile().unwrap();
        let x = [0.9, -0.1];
        let g = f.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut f = single_bump(0.0, 0.5);
        f.bumps[0].covariance = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(f.compile().is_err());
        assert!(single_bump(0.0, 1.5).compile().is_err());
        assert!(single_bump(1.2, 0.5).compile().is_err());
        assert!(PosteriorField::constant(1.0).compile().is_ok());
    }

    #[test]
    fn absolute_rating_levels() {
        let o = oracle_with(PosteriorField::constant(1.0), ResponseMode::FiveLevel);
        assert_eq!(o.rate_absolute(&[0.0, 0.0], Question::Naturalness).unwrap(), 1.0);
        let o = oracle_with(PosteriorField::constant(0.30), ResponseMode::FiveLevel);
        assert_eq!(o.rate_absolute(&[0.0, 0.0], Question::Naturalness).unwrap(), 0.25);
        let o = oracle_with(PosteriorField::constant(0.125), ResponseMode::FiveLevel);
        assert_eq!(o.rate_absolute(&[0.0, 0.0], Question::ClassAcceptability(ClassLabel(1))).unwrap(), 0.25);
        assert!(matches!(
            o.rate_absolute(&[0.0, 0.0], Question::ClassAcceptability(ClassLabel(5))),
            Err(OracleError::UnknownClass(5))
        ));
    }

    #[test]
    fn paired_rating() {
        // Two bumps placed so D(a) = 0.9 and D(b) = 0.2 exactly.
        let narrow = |c: f64, h: f64| Bump { center: vec![c, 0.0], covariance: vec![vec![1e-4, 0.0], vec![0.0, 1e-4]], height: h };
        let field = PosteriorField { floor: 0.0, bumps: vec![narrow(0.0, 0.9), narrow(10.0, 0.2)] };
        let cont = oracle_with(field.clone(), ResponseMode::Continuous);
        let five = oracle_with(field, ResponseMode::FiveLevel);
        let (a, b) = ([0.0, 0.0], [10.0, 0.0]);
        assert!((cont.rate_paired(&a, &b, Question::Naturalness).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(five.rate_paired(&a, &b, Question::Naturalness).unwrap(), 0.5);
        for o in [&cont, &five] {
            assert_eq!(o.rate_paired(&a, &a, Question::Naturalness).unwrap(), 0.0);
        }
        assert_eq!(
            cont.rate_paired(&a, &b, Question::Naturalness).unwrap(),
            -cont.rate_paired(&b, &a, Question::Naturalness).unwrap()
        );
    }

    #[test]
    fn batch_answers_match_ids() {
        let o = SimulatedOracle::reference();
        assert!(o.answer_batch(&[]).unwrap().is_empty());
        let x = vec![GeneratedDatum(vec![0.2, 0.1]), GeneratedDatum(vec![-1.0, 0.5])];
        let perts = sample_perturbations(2, 4, 2, 2.0, 3).unwrap();
        let qs = build_queries(&x, &[ClassLabel(0), ClassLabel(1)], &perts, QueryKind::ClassAcceptability, 4).unwrap();
        let rs = o.answer_batch(&qs).unwrap();
        assert_eq!(rs.len(), qs.len());
        assert!(rs.iter().zip(&qs).all(|(r, q)| r.query_id == q.query_id));
        assert_eq!(rs, o.answer_batch(&qs).unwrap());
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let mut cfg = OracleConfig::reference().with_mode(ResponseMode::Continuous);
        cfg.noise_sd = 0.3;
        let o = SimulatedOracle::new(cfg).unwrap();
        let a = o.rate_absolute(&[0.1, 0.2], Question::Naturalness).unwrap();
        assert_eq!(a, o.rate_absolute(&[0.1, 0.2], Question::Naturalness).unwrap());
        assert!((0.0..=1.0).contains(&a));
        let d = o.rate_paired(&[0.1, 0.2], &[3.0, 3.0], Question::Naturalness).unwrap();
        assert!((-1.0..=1.0).contains(&d));
    }

    #[test]
    fn reference_landscape_shape() {
        let o = SimulatedOracle::reference();
        assert_eq!(o.num_classes(), 2);
        assert_eq!(o.config().response_mode, ResponseMode::FiveLevel);
    }
}
