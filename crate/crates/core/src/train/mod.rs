pub mod audit;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use metrics::{cosine_similarity, exact_accuracy, threshold, weighted_bce, EvalReport};
pub use optim::{Adam, AdamConfig};
pub use trainer::{evaluate, train, train_model, MetricsRecord, TrainOptions, TrainOutcome};
