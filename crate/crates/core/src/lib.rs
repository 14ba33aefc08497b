//! Training a conditional generator from paired perceptual judgments.
//!
//! A small conditional network `x̂ = G(z, c; θ)` is trained to maximize
//! `L_S + λ·L_C`, where `L_S` sums a naturalness posterior and `L_C` sums a
//! class-acceptability posterior over the generated data. Neither posterior is
//! differentiable (they come from raters), so `∂L/∂x̂` is estimated from
//! answers to paired questions about Gaussian-perturbed data and chained
//! through the analytic Jacobian `∂x̂/∂θ`.
//!
//! Module map:
//!
//! * [`generator`]: the network, its Jacobian and the ascent update;
//! * [`nes`]: perturbations, paired queries and gradient assembly;
//! * [`oracle`] / [`protocol`]: the simulated rater and the five-point scales;
//! * [`trainer`] / [`rundir`]: the optimization loop and its on-disk state;
//! * [`data`]: PCA standardization of real data and evaluation grids;
//! * [`maps`]: posterior maps and gradient fields;
//! * [`experiment`]: the configuration file shared by all commands;
//! * [`queue`]: the durable multi-rater task queue behind the HTTP service.

pub mod data;
pub mod eval;
pub mod experiment;
pub mod generator;
pub mod maps;
pub mod nes;
pub mod oracle;
pub mod protocol;
pub mod queue;
pub mod rundir;
pub mod seed;
pub mod trainer;

pub use experiment::ExperimentConfig;
pub use eval::{AbsoluteEvaluator, Answer, EvalError, PairedEvaluator};
pub use generator::{ClassLabel, GeneratedDatum, GeneratorArch, GeneratorParams, LatentSample};
pub use nes::{PairedQuery, QueryId, QueryKind, Question, RatingResponse};
pub use oracle::{OracleConfig, PosteriorField, ResponseMode, SimulatedOracle};
pub use trainer::{TrainConfig, TrainHistory};
