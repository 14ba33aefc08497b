//! A scripted rater answering service tasks with the simulated oracle.

use hitl_gan::nes::Question;
use hitl_gan::oracle::SimulatedOracle;
use hitl_gan::protocol::Level;
use hitl_gan::queue::TaskView;

use crate::client::{ClientError, ServiceClient};

/// The level the simulated oracle would give for `view`.
pub fn oracle_level(oracle: &SimulatedOracle, view: &TaskView) -> Result<Level, String> {
    let question = Question::from_parts(view.kind, view.class_label, &view.task_id).map_err(|e| e.to_string())?;
    match (view.protocol.as_str(), view.stimuli.as_slice()) {
        ("paired", [first, second]) => {
            oracle.rate_paired(first, second, question).map(Level::from_delta).map_err(|e| e.to_string())
        }
        ("absolute", [x]) => oracle.rate_absolute(x, question).map(Level::from_posterior).map_err(|e| e.to_string()),
        (p, s) => Err(format!("task {}: {p} task with {} stimuli", view.task_id, s.len())),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RaterError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Task(String),
}

/// Pulls and answers tasks as `rater_id` until none are left (or `max` are done).
pub fn drain(
    client: &ServiceClient,
    rater_id: &str,
    oracle: &SimulatedOracle,
    max: Option<usize>,
) -> Result<usize, RaterError> {
    let mut done = 0;
    while max.is_none_or(|m| done < m) {
        let Some(view) = client.next_task(rater_id)? else { break };
        let level = oracle_level(oracle, &view).map_err(RaterError::Task)?;
        client.submit(&view.task_id, rater_id, i64::from(level.get()))?;
        done += 1;
    }
    Ok(done)
}
