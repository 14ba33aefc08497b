//! Evaluator interfaces shared by the simulated oracle and the human queue.

use thiserror::Error;

use crate::nes::{PairedQuery, Question, RatingResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluator unreachable: {0}")]
    Unreachable(String),
    #[error("evaluator rejected the request: {0}")]
    Rejected(String),
}

/// Outcome of submitting a batch of paired queries.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    /// One response per query, in query order.
    Ready(Vec<RatingResponse>),
    /// Ratings are still being collected.
    Pending { batch_id: String, complete_fraction: f64 },
}

/// Answers paired questions `D(first) - D(second)` in display order.
pub trait PairedEvaluator {
    fn answer(&mut self, queries: &[PairedQuery]) -> Result<Answer, EvalError>;
}

/// Rates a single stimulus on the absolute posterior scale.
pub trait AbsoluteEvaluator {
    fn rate(&self, x: &[f64], question: Question) -> Result<f64, EvalError>;
}

impl<T: PairedEvaluator + ?Sized> PairedEvaluator for &mut T {
    fn answer(&mut self, queries: &[PairedQuery]) -> Result<Answer, EvalError> {
        (**self).answer(queries)
    }
}

impl<T: AbsoluteEvaluator + ?Sized> AbsoluteEvaluator for &T {
    fn rate(&self, x: &[f64], question: Question) -> Result<f64, EvalError> {
        (**self).rate(x, question)
    }
}
