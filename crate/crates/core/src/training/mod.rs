//! Loss, optimizer, schedule, metric, training loop and gradient checks.

pub mod ablation;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use ablation::{ablation_grid, ablation_table, run_ablation, AblationRow};
pub use gradcheck::{finite_diff_gradcheck, BlockId, GradcheckReport};
pub use loss::{composite_loss, LossWeights};
pub use metrics::{dice_score, Metrics};
pub use optim::{sgd_update, Sgd};
pub use schedule::{lr_on_validation, DecayPolicy, TrainConfig, TrainState};
pub use trainer::{evaluate, train_loop, EpochRecord, Target, TrainOutcome};
