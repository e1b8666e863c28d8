//! Reproduction surface: data ingestion, metrics, method dispatch and the
//! replicated experiment runner.

pub mod experiment;
pub mod ingest;
pub mod methods;
pub mod metrics;

pub use experiment::{run_experiment, run_experiment_with_workers, write_results, ExperimentSpec, ResultRow};
pub use ingest::{load_csv, write_dataset_csv, Encoder, RawTable, Schema};
pub use methods::{fit_method, Method, ModelSettings};
pub use metrics::{auc, mse, one_minus_auc};
