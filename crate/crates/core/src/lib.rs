//! Federated learning simulation built around an on-server
//! matching-gradient aggregator.
//!
//! Clients report pseudo-gradients `θ_before − θ_after`; the server combines
//! them with simplex weights chosen so the applied direction stays inside a
//! ball around a reference aggregate while maximizing its worst-case inner
//! product with every client.

pub mod aggregator;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod simplex;
pub mod vector;

pub use aggregator::{AggregationConfig, AggregationReport, AggregatorKind, ReferenceKind};
pub use data::{DirichletPartition, DomainDataset, Rect4Config, Split};
pub use error::{Error, Result};
pub use federation::{ExperimentConfig, ExperimentRun, RoundReport};
pub use metrics::{ExportFormat, MetricsRecord};
pub use models::{Batch, ModelKind, ModelSpec};
pub use simplex::{InnerOptConfig, SimplexWeights};
pub use vector::{GradientSet, ParamVector};
