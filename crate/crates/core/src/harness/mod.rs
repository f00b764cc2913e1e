//! Training, evaluation, ablation and the command line.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod evaluate;
pub mod optim;
pub mod train;

pub use ablate::{ablate, ablate_run, train_to_end, AblationRow, ABLATION_FILE};
pub use config::{AblationFlags, DataConfig, LogConfig, LossConfig, OptimConfig, RunConfig, Seeds};
pub use evaluate::{
    evaluate_checkpoint, evaluate_ground_truth, evaluate_model, EvalOptions,
    GROUND_TRUTH_FINGERPRINT,
};
pub use optim::{clip_grad_norm, grad_norm, learning_rate, Adam};
pub use train::{
    frame_loss, infer_frame, load_model, load_sequences, prepare_sequence, run_sequence, train_run,
    FrameOutcome, PreparedFrame, PreparedSequence, StepRecord, TrainSummary, Trainer,
    WindowGradients, CHECKPOINT_FILE, METRICS_FILE,
};
