//! Synthetic data, persistence, metrics, and experiment sweeps.

pub mod checkpoint;
pub mod dataset;
pub mod experiments;
pub mod metrics;
pub mod models;
pub mod pipeline;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{
    from_model_space, gen_dataset, jitter_edges, render_shape, to_model_space, DatasetConfig, Placement, ShapeItem,
    ShapesCorpus, DEFAULT_CLASSES, MIN_IMAGE_SIZE,
};
pub use experiments::{
    edge_targets, stop_convention, summarize, sweep_beta, sweep_stop_frac, worker_pool, EdgeTarget, Experiment,
    RunResult, DEFAULT_BETAS, DEFAULT_STOPS, THREADS_ENV,
};
pub use metrics::{
    eval_edge_fidelity, mean_std, read_metrics, sign_test_p, write_csv, CurvePoint, MetricsRow, SweepRow,
    CURVE_HEADER, METRICS_HEADER, SWEEP_HEADER,
};
pub use models::{ddpm_checkpoint, ddpm_from_checkpoint, lgp_checkpoint, lgp_from_checkpoint, load_corpus, load_ddpm, load_lgp, save_corpus, save_ddpm, save_lgp};
pub use pipeline::{
    class_filter, heldout_error_curve, lgp_config_for, run_ddpm_job, run_lgp_job, split_corpus, DdpmJob,
    EdgeExamples, LgpJob, HELDOUT_FRACTION,
};
