//! Long-tailed incremental benchmark: task construction, the end-to-end
//! pipeline with its ablation switches, metrics and report files.

mod experiment;
mod metrics;
mod report;
mod tasks;

pub use experiment::{
    evaluate, run_experiment, run_on_tasks, snr_sweep, train_sequence, SweepReport, SweepRow, TaskClassifier,
    TrainedSequence,
};
pub use metrics::{angular_distance, bwt, metrics, AccuracyMatrix};
pub use report::{ablation_csv, acc_matrix_csv, summary_csv, sweep_csv, AblationRow, EvalReport, TaskSummary};
pub use tasks::{
    build_tasks, class_counts, render_all, render_sample, thread_count, ClassCount, SampleSpec, Task, TaskClass,
    TaskSequence, THREADS_ENV,
};
