//! The service as a paired evaluator for the trainer.

use std::thread;
use std::time::{Duration, Instant};

use hitl_gan::eval::{Answer, EvalError, PairedEvaluator};
use hitl_gan::nes::{PairedQuery, QueryId, RatingResponse};
use hitl_gan::queue::{AggregationPolicy, BatchStatus, TaskSpec};

use crate::client::{ClientError, ServiceClient};

/// How long [`ServiceEvaluator`] keeps polling before reporting a pending batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitPolicy {
    pub interval: Duration,
    /// `None` waits indefinitely.
    pub timeout: Option<Duration>,
}

/// Submits each step's batch (idempotently) and returns the aggregated
/// answers once every task is complete.
#[derive(Debug, Clone)]
pub struct ServiceEvaluator {
    client: ServiceClient,
    policy: AggregationPolicy,
    wait: Option<WaitPolicy>,
}

fn eval_error(e: ClientError) -> EvalError {
    match e {
        ClientError::Unreachable(d) => EvalError::Unreachable(d),
        other => EvalError::Rejected(other.to_string()),
    }
}

/// Converts a finished batch into trainer responses.
pub fn paired_responses(status: &BatchStatus) -> Result<Option<Vec<RatingResponse>>, EvalError> {
    let Some(responses) = &status.responses else { return Ok(None) };
    responses
        .iter()
        .map(|r| {
            let query_id: QueryId =
                r.query_id.parse().map_err(|e| EvalError::Rejected(format!("task {}: {e}", r.task_id)))?;
            Ok(RatingResponse { query_id, delta_d: r.value })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

impl ServiceEvaluator {
    pub fn new(client: ServiceClient, min_raters: usize) -> Self {
        ServiceEvaluator { client, policy: AggregationPolicy { min_raters, ..AggregationPolicy::default() }, wait: None }
    }

    pub fn with_wait(mut self, wait: WaitPolicy) -> Self {
        self.wait = Some(wait);
        self
    }

    pub fn client(&self) -> &ServiceClient {
        &self.client
    }
}

impl PairedEvaluator for ServiceEvaluator {
    fn answer(&mut self, queries: &[PairedQuery]) -> Result<Answer, EvalError> {
        let specs: Vec<TaskSpec> = queries.iter().cloned().map(TaskSpec::from).collect();
        let batch_id = self.client.enqueue(&specs, Some(&self.policy)).map_err(eval_error)?.batch_id;
        let started = Instant::now();
        loop {
            let status = self.client.poll(&batch_id).map_err(eval_error)?;
            if let Some(responses) = paired_responses(&status)? {
                return Ok(Answer::Ready(responses));
            }
            match self.wait {
                Some(w) if w.timeout.is_none_or(|t| started.elapsed() < t) => thread::sleep(w.interval),
                _ => return Ok(Answer::Pending { batch_id, complete_fraction: status.complete_fraction }),
            }
        }
    }
}
