//! Datasets, the synthetic corpus, metrics, run configuration and training.

pub mod config;
pub mod data;
pub mod metrics;
pub mod synthetic;
pub mod train;

pub use config::{ResolverChoice, RunConfig};
pub use data::{load_dataset, parse_dataset, QaExample, SquadFile};
pub use metrics::{evaluate_predictions, question_scores, MetricsReport};
pub use synthetic::{generate_split, generate_synthetic, SyntheticConfig};
pub use train::{train, train_on, TrainOutcome};
