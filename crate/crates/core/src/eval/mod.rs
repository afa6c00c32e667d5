//! Metrics, evaluation, checkpoints, export, kernel inspection and the
//! ablation harness.

pub mod ablate;
pub mod checkpoint;
pub mod export;
pub mod kernels;
pub mod metrics;
pub mod restore;

pub use ablate::{ablate, write_ablation_csv, AblationRow, Variant};
pub use checkpoint::{BlobDesc, Checkpoint, Header};
pub use export::{export_plain, export_plain_to};
pub use kernels::{kernel_viz, KernelGrid, KernelSlice};
pub use metrics::{psnr, report_db, PSNR_INF_SENTINEL};
pub use restore::{
    degrade_for_eval, evaluate_at, evaluate_plain, restore, self_ensemble, sweep, write_sweep_csv,
    SweepRow,
};
