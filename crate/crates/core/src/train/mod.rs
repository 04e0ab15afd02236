//! Prediction-guided cyclic point prompting: worst-object selection, prompt
//! cycles and the outer training loop.

mod cycle;
mod select;
mod trainer;

pub use cycle::{run_cycle, sample_inside, CycleKind, CycleState, StepRecord};
pub use select::{match_quality, select_worst, MatchQuality, Selection, SelectionPolicy};
pub use trainer::{train, train_with_model, LossRecord, TrainConfig, TrainReport, SCHEDULE_1X_EPOCHS};
