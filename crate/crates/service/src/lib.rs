//! Evaluation-queue service for human raters.
//!
//! [`server`] exposes a [`hitl_gan::queue::Queue`] over HTTP + JSON,
//! [`client::ServiceClient`] talks to it, [`evaluator::ServiceEvaluator`]
//! plugs it into the trainer and [`rater`] answers tasks with the simulated
//! oracle for tests and demos.
//!
//! Storage is `events.jsonl` inside the data directory: one JSON event per
//! line, either `{"event":"batch", batch_id, policy, tasks}` or
//! `{"event":"rating", task_id, rater_id, level, timestamp_ms}`. The file is
//! append-only and replayed on start.

pub mod client;
pub mod evaluator;
pub mod rater;
pub mod server;

pub use client::{ClientError, ServiceClient};
pub use evaluator::{ServiceEvaluator, WaitPolicy};
pub use server::{spawn, system_clock, RunningService, ServiceConfig};
