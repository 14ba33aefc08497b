//! Paired-perturbation gradient estimation.
//!
//! For a datum `x̂_n` and Gaussian perturbations `Δx_n^(r) ~ N(0, σ²I)`, an
//! evaluator answers `ΔD = D(x̂_n + Δx) - D(x̂_n - Δx)` and the gradient of the
//! objective with respect to `x̂_n` is estimated as
//!
//! ```text
//! ∂L/∂x̂_n ≈ 1/(2σ²R) · Σ_r ΔD(x̂_n^(r)) · Δx_n^(r)
//! ```
//!
//! The same estimator serves the naturalness question and the class
//! acceptability question; only the evaluator's question differs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{ClassLabel, GeneratedDatum};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum NesError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("perturbation count must be at least 1")]
    NoPerturbations,
    #[error("missing responses for {0:?}")]
    MissingResponses(Vec<String>),
    #[error("duplicate responses for {0:?}")]
    DuplicateResponses(Vec<String>),
    #[error("response {id} has delta {delta} outside [-1, 1]")]
    OutOfRange { id: String, delta: f64 },
    #[error("malformed query id {0:?}")]
    BadQueryId(String),
    #[error("class acceptability query {0} lacks a class label")]
    MissingClassLabel(String),
    #[error("naturalness query {0} carries a class label")]
    UnexpectedClassLabel(String),
}

/// One perturbation `Δx_n^(r)`; `index` runs over `1..=R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub index: usize,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Naturalness,
    ClassAcceptability,
}

impl QueryKind {
    fn tag(self) -> &'static str {
        match self {
            QueryKind::Naturalness => "nat",
            QueryKind::ClassAcceptability => "cls",
        }
    }
}

/// What the evaluator is asked about a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Naturalness,
    ClassAcceptability(ClassLabel),
}

impl Question {
    pub fn kind(self) -> QueryKind {
        match self {
            Question::Naturalness => QueryKind::Naturalness,
            Question::ClassAcceptability(_) => QueryKind::ClassAcceptability,
        }
    }

    pub fn class_label(self) -> Option<ClassLabel> {
        match self {
            Question::Naturalness => None,
            Question::ClassAcceptability(c) => Some(c),
        }
    }

    /// Validates the wire pair `(kind, class_label)`.
    pub fn from_parts(kind: QueryKind, label: Option<ClassLabel>, id: &str) -> Result<Self, NesError> {
        match (kind, label) {
            (QueryKind::Naturalness, None) => Ok(Question::Naturalness),
            (QueryKind::Naturalness, Some(_)) => Err(NesError::UnexpectedClassLabel(id.to_string())),
            (QueryKind::ClassAcceptability, Some(c)) => Ok(Question::ClassAcceptability(c)),
            (QueryKind::ClassAcceptability, None) => Err(NesError::MissingClassLabel(id.to_string())),
        }
    }
}

/// Identifier of a paired query, rendered as `kind.n.r.flip`
/// (e.g. `cls.12.3.1`). The datum, perturbation and display order of a
/// response are recovered from it alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryId {
    pub kind: QueryKind,
    pub datum: usize,
    pub perturbation: usize,
    pub flipped: bool,
}

impl QueryId {
    fn slot(&self) -> String {
        format!("{}.{}.{}", self.kind.tag(), self.datum, self.perturbation)
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.slot(), u8::from(self.flipped))
    }
}

impl FromStr for QueryId {
    type Err = NesError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NesError::BadQueryId(s.to_string());
        let parts: Vec<&str> = s.split('.').collect();
        let [kind, n, r, flip] = parts.as_slice() else {
            return Err(bad());
        };
        let kind = match *kind {
            "nat" => QueryKind::Naturalness,
            "cls" => QueryKind::ClassAcceptability,
            _ => return Err(bad()),
        };
        let flipped = match *flip {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        Ok(QueryId {
            kind,
            datum: n.parse().map_err(|_| bad())?,
            perturbation: r.parse().map_err(|_| bad())?,
            flipped,
        })
    }
}

impl Serialize for QueryId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QueryId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A question about the pair `{x̂_n + Δx, x̂_n - Δx}`.
///
/// When `presentation_flip` is set the rater sees `x_minus` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedQuery {
    pub query_id: QueryId,
    pub datum_index: usize,
    pub perturbation_index: usize,
    pub x_plus: Vec<f64>,
    pub x_minus: Vec<f64>,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
    pub presentation_flip: bool,
}

impl PairedQuery {
    pub fn question(&self) -> Result<Question, NesError> {
        let id = self.query_id.to_string();
        if self.query_id.kind != self.kind
            || self.query_id.datum != self.datum_index
            || self.query_id.perturbation != self.perturbation_index
            || self.query_id.flipped != self.presentation_flip
        {
            return Err(NesError::BadQueryId(id));
        }
        Question::from_parts(self.kind, self.class_label, &id)
    }

    /// Stimuli in the order shown to the rater.
    pub fn displayed(&self) -> (&[f64], &[f64]) {
        if self.presentation_flip {
            (&self.x_minus, &self.x_plus)
        } else {
            (&self.x_plus, &self.x_minus)
        }
    }
}

/// An answer `ΔD ∈ [-1, 1]`, expressed in display order
/// (`D(first) - D(second)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingResponse {
    pub query_id: QueryId,
    pub delta_d: f64,
}

/// `n_data × r` i.i.d. draws from `N(0, σ²I)` in `dim` dimensions.
pub fn sample_perturbations(
    n_data: usize,
    r: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Vec<Perturbation>>, NesError> {
    if r == 0 {
        return Err(NesError::NoPerturbations);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(NesError::InvalidSigma(sigma));
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| NesError::InvalidSigma(sigma))?;
    let mut rng = seed::rng(seed);
    Ok((0..n_data)
        .map(|_| {
            (1..=r)
                .map(|index| Perturbation { index, delta: (0..dim).map(|_| normal.sample(&mut rng)).collect() })
                .collect()
        })
        .collect())
}

fn check_perturbation_shape(perts: &[Vec<Perturbation>]) -> Result<usize, NesError> {
    let r = perts.first().map_or(0, Vec::len);
    if perts.iter().any(|row| row.len() != r) {
        return Err(NesError::Shape("ragged perturbation rows".into()));
    }
    for row in perts {
        for (i, p) in row.iter().enumerate() {
            if p.index != i + 1 {
                return Err(NesError::Shape(format!("perturbation index {} at position {}", p.index, i + 1)));
            }
        }
    }
    Ok(r)
}

/// One query per `(n, r)` for `kind`, with random display order and shuffled
/// presentation sequence.
pub fn build_queries(
    x_hat: &[GeneratedDatum],
    labels: &[ClassLabel],
    perts: &[Vec<Perturbation>],
    kind: QueryKind,
    flip_seed: u64,
) -> Result<Vec<PairedQuery>, NesError> {
    if x_hat.len() != labels.len() || x_hat.len() != perts.len() {
        return Err(NesError::Shape(format!(
            "{} data, {} labels, {} perturbation rows",
            x_hat.len(),
            labels.len(),
            perts.len()
        )));
    }
    check_perturbation_shape(perts)?;
    let mut rng = seed::rng(flip_seed);
    let mut queries = Vec::with_capacity(perts.len() * perts.first().map_or(0, Vec::len));
    for (n, ((x, &label), row)) in x_hat.iter().zip(labels).zip(perts).enumerate() {
        for p in row {
            if p.delta.len() != x.len() {
                return Err(NesError::Shape(format!("perturbation dim {} vs datum dim {}", p.delta.len(), x.len())));
            }
            let flipped: bool = rng.random();
            let x_plus = x.iter().zip(&p.delta).map(|(a, d)| a + d).collect();
            let x_minus = x.iter().zip(&p.delta).map(|(a, d)| a - d).collect();
            queries.push(PairedQuery {
                query_id: QueryId { kind, datum: n, perturbation: p.index, flipped },
                datum_index: n,
                perturbation_index: p.index,
                x_plus,
                x_minus,
                kind,
                class_label: (kind == QueryKind::ClassAcceptability).then_some(label),
                presentation_flip: flipped,
            });
        }
    }
    queries.shuffle(&mut rng);
    Ok(queries)
}

/// Per-datum gradient estimates for `kind` from a complete response set.
///
/// Responses of other kinds are ignored. Each response is flip-corrected
/// back to `D(x_plus) - D(x_minus)` before summation, and terms are summed in
/// perturbation order so the result does not depend on arrival order.
pub fn assemble_gradient(
    kind: QueryKind,
    responses: &[RatingResponse],
    perts: &[Vec<Perturbation>],
    sigma: f64,
) -> Result<Vec<Vec<f64>>, NesError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(NesError::InvalidSigma(sigma));
    }
    let r = check_perturbation_shape(perts)?;
    if r == 0 && !perts.is_empty() {
        return Err(NesError::NoPerturbations);
    }

    let mut by_slot: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut duplicates = BTreeSet::new();
    for resp in responses.iter().filter(|resp| resp.query_id.kind == kind) {
        let id = resp.query_id;
        if !(-1.0..=1.0).contains(&resp.delta_d) {
            return Err(NesError::OutOfRange { id: id.to_string(), delta: resp.delta_d });
        }
        if id.datum >= perts.len() || id.perturbation == 0 || id.perturbation > r {
            return Err(NesError::BadQueryId(id.to_string()));
        }
        let corrected = if id.flipped { -resp.delta_d } else { resp.delta_d };
        if by_slot.insert((id.datum, id.perturbation), corrected).is_some() {
            duplicates.insert(id.slot());
        }
    }
    if !duplicates.is_empty() {
        return Err(NesError::DuplicateResponses(duplicates.into_iter().collect()));
    }

    let mut missing = Vec::new();
    let scale = 1.0 / (2.0 * sigma * sigma * r as f64);
    let mut grads = Vec::with_capacity(perts.len());
    for (n, row) in perts.iter().enumerate() {
        let dim = row.first().map_or(0, |p| p.delta.len());
        let mut g = vec![0.0; dim];
        for p in row {
            match by_slot.get(&(n, p.index)) {
                Some(&dd) => {
                    for (gi, di) in g.iter_mut().zip(&p.delta) {
                        *gi += dd * di;
                    }
                }
                None => missing.push(QueryId { kind, datum: n, perturbation: p.index, flipped: false }.slot()),
            }
        }
        grads.push(g.into_iter().map(|v| v * scale).collect());
    }
    if !missing.is_empty() {
        return Err(NesError::MissingResponses(missing));
    }
    Ok(grads)
}
