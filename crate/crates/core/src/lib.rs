//! Physics-informed networks whose hidden layers are stored in
//! tensor-train format, trained on a 2-D Helmholtz problem.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
mod gemm;
pub mod jet;
mod kernels;
mod smallmm;
pub mod network;
pub mod optim;
pub mod params;
pub mod problem;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod tt;

pub use check::{cmd_check, CheckConfig, CheckReport};
pub use checkpoint::{Checkpoint, Model};
pub use config::{ExperimentConfig, ModelKind, Overrides, Ranks, SweepConfig};
pub use error::{Error, Result};
pub use jet::Jet2;
pub use network::{apply_hard_bc, bc_mask, HiddenKind, MlpSpec, Pinn};
pub use optim::{AdamConfig, AdamState, StepDecay};
pub use params::{Gradients, ParamId, ParamStore};
pub use problem::{
    evaluate, loss, loss_and_grad, metrics, residual, sample, sample_collocation, ExactSolution, HelmholtzProblem,
    LossBreakdown, Metrics, PdeOperator, Samples, SamplingConfig, Surrogate,
};
pub use tape::{JetBatch, NodeId, Tape, Value};
pub use tensor::DenseTensor;
pub use tt::{plan_ranks, tt_init, tt_param_count, RankPlan, TtLinear, TtShape};
pub use train::{cmd_export_fields, cmd_sweep, cmd_train, RunRecord, TableRow, Trainer};
