//! # airrag
//!
//! Monte Carlo Tree Search over five retrieval-augmented reasoning actions
//! (system analysis, direct answer, retrieval-answer, query transformation,
//! summary-answer), with self-consistency sampling, an input-token budget,
//! duplicate pruning and several answer-verification methods.
//!
//! The crate is organised as:
//!
//! - [`tree`]: the search engine (UCT selection, expansion, backpropagation,
//!   rollouts, pruning, trace export).
//! - [`actions`]: the action space, legality rules, prompt templates and
//!   per-action sampling policies.
//! - [`clients`]: chat-completion, retrieval and embedding backends, each with
//!   an HTTP implementation and a deterministic in-process implementation.
//! - [`verify`]: consensus scoring, answer selection, leaf rewards and
//!   reward-data export.
//! - [`eval`]: QA metrics, token counting, budgets, datasets and reports.
//! - [`simenv`]: a synthetic multi-hop world with a scripted model, used as an
//!   end-to-end oracle.
//! - [`exec`]: batch execution, parallel when the `parallel` feature is on.
//!
//! ## Example
//! ```
//! use airrag::{simenv, tree::{self, SearchConfig}, verify::Verifier};
//!
//! let world = simenv::generate_world(7, 10, 2);
//! let clients = simenv::scripted_clients(&world, 7);
//! let question = &world.questions[0].sample;
//! let mut config = SearchConfig::default();
//! config.rollouts = 2;
//! config.actions.docs_per_retrieval = world.docs.len();
//! let outcome = tree::search(&question.question, &config, &clients, &Verifier::default()).unwrap();
//! assert!(!outcome.trajectories.is_empty());
//! ```

pub mod actions;
pub mod clients;
pub mod eval;
pub mod exec;
pub mod simenv;
pub mod text;
pub mod tree;
pub mod verify;

pub use actions::{ActionConfig, ActionKind, Mode, SamplingPolicy};
pub use clients::{Clients, ClientError, RetrievedDoc};
pub use eval::{Budget, BudgetExhausted, EvalReport, QASample};
pub use tree::{SearchConfig, SearchOutcome, SearchTree, Trajectory};
pub use verify::{CandidateAnswer, VerificationMethod};
