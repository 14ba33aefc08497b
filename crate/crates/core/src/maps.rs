//! Posterior maps over grids and gradient fields over generated data.

use serde::{Deserialize, Serialize};

use crate::data::Grid;
use crate::eval::{AbsoluteEvaluator, Answer, EvalError, PairedEvaluator};
use crate::generator::{ClassLabel, GeneratorParams};
use crate::nes::{assemble_gradient, build_queries, sample_perturbations, PairedQuery, QueryKind, Question};
use crate::oracle::SimulatedOracle;
use crate::rundir::PauseReason;
use crate::seed::{derive_seed, Stream};
use crate::trainer::{Prior, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub x: Vec<f64>,
    pub question: Question,
    /// Rated posterior (quantized in five-level mode).
    pub posterior: f64,
    /// Noise-free posterior, when the evaluator is simulated.
    pub continuous: Option<f64>,
}

/// Rates every grid point with `evaluator`.
pub fn posterior_map(
    grid: &Grid,
    question: Question,
    evaluator: &dyn AbsoluteEvaluator,
    truth: Option<&SimulatedOracle>,
) -> Result<Vec<MapRow>, EvalError> {
    grid.points()
        .into_iter()
        .map(|x| {
            let posterior = evaluator.rate(&x, question)?;
            let continuous = truth
                .map(|o| o.posterior(&x, question))
                .transpose()
                .map_err(|e| EvalError::Rejected(e.to_string()))?;
            Ok(MapRow { x, question, posterior, continuous })
        })
        .collect()
}

/// Both gradient estimates at one generated datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub x: Vec<f64>,
    pub class: ClassLabel,
    pub naturalness: Vec<f64>,
    pub class_acceptability: Vec<f64>,
}

/// The batch that was asked, and the arrows once it has been answered.
pub type GradientBatch = (Vec<PairedQuery>, Result<Vec<GradientRow>, PauseReason>);

/// Estimates `∂D_S/∂x̂_n` and `∂D_C/∂x̂_n` at every generated datum with `r`
/// perturbations each, asking both questions in one batch.
pub fn gradient_field(
    params: &GeneratorParams,
    prior: &Prior,
    evaluator: &mut dyn PairedEvaluator,
    r: usize,
    sigma: f64,
    seed: u64,
) -> Result<GradientBatch, TrainError> {
    let x_hat = prior.generate(params)?;
    let perts =
        sample_perturbations(prior.len(), r, params.arch().output_dim, sigma, derive_seed(seed, 0, Stream::Perturb))?;
    let mut batch = build_queries(
        &x_hat,
        &prior.labels,
        &perts,
        QueryKind::Naturalness,
        derive_seed(seed, 0, Stream::FlipNaturalness),
    )?;
    batch.extend(build_queries(
        &x_hat,
        &prior.labels,
        &perts,
        QueryKind::ClassAcceptability,
        derive_seed(seed, 0, Stream::FlipClass),
    )?);
    let responses = match evaluator.answer(&batch) {
        Ok(Answer::Ready(r)) => r,
        Ok(Answer::Pending { batch_id, complete_fraction }) => {
            return Ok((batch, Err(PauseReason::AwaitingRatings { batch_id, complete_fraction })))
        }
        Err(EvalError::Unreachable(detail)) => return Ok((batch, Err(PauseReason::Unreachable { detail }))),
        Err(e) => return Err(e.into()),
    };
    let nat = assemble_gradient(QueryKind::Naturalness, &responses, &perts, sigma)?;
    let cls = assemble_gradient(QueryKind::ClassAcceptability, &responses, &perts, sigma)?;
    let rows = x_hat
        .into_iter()
        .zip(&prior.labels)
        .zip(nat.into_iter().zip(cls))
        .map(|((x, &class), (naturalness, class_acceptability))| GradientRow {
            x: x.0,
            class,
            naturalness,
            class_acceptability,
        })
        .collect();
    Ok((batch, Ok(rows)))
}
