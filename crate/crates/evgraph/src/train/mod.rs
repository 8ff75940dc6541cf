//! Training: loss stack, target assembly, optimizer, schedule,
//! augmentation, and the training loop.

mod augment;
mod losses;
mod optim;
mod run;

pub use augment::{apply_crop, apply_translation, augment, AugmentConfig};
pub use losses::{
    build_targets, class_weights, conf_target, loss_cls, loss_conf, loss_dim, loss_loc,
    total_loss, LossWeights, WindowTargets,
};
pub use optim::{lr_at, optimizer_step, AdamState, OptimizerConfig};
pub use run::{
    evaluate_dataset, load_manifest, metrics_csv, train, Dataset, StepLog, TrainConfig,
    TrainOutcome, TrainSample,
};
