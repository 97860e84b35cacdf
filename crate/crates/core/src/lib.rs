//! Counterfactual risk minimization for continuous-action policies learned from logged
//! bandit feedback.

pub mod data;
pub mod embeddings;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod optim;
pub mod policies;
pub mod protocol;
pub mod quadrature;
pub mod stats;
pub mod train;

pub use data::{DataSplit, LoggedDataset};
pub use embeddings::{AnchorStrategy, ContextMap, ContextMapKind, JointEmbedding, NystromEmbedding};
pub use envs::{Environment, OnlineRisk, PotentialEnv, PotentialKind, Scenario, WarfarinSim};
pub use error::{CrmError, Result};
pub use estimators::{CostPredictor, CrmObjective, EstimatorKind, WeightStats};
pub use optim::{LbfgsConfig, ProxConfig, SolverStatus, TrainResult};
pub use policies::{BucketPolicy, Family, LoggingDescription, MeanKind, MeanModel, PolicyModel, StochasticPolicy};
pub use protocol::{ProtocolConfig, ProtocolReport, ValidationSummary};
pub use train::{CcpSpec, PolicySpec, TrainConfig};
