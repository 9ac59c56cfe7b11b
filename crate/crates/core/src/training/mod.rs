//! Losses, batching and optimisation of J, G and D, plus the supervised
//! stages (classifier, G reconstruction, J warm-up).

pub mod batch;
pub mod config;
pub mod fit;
pub mod losses;
pub mod pretrain;
pub mod step;

pub use batch::{compatible, draw_pairs, epoch_donors, PlanPolicy, TrainingBatch};
pub use config::{ClassifierTrainConfig, TrainConfig};
pub use fit::{fit, fit_with, validation_score, EpochLog, FitLog, FitOutcome, LOG_HEADER};
pub use losses::{loss_adv, loss_bg, loss_cons, loss_path, total_loss, LossParts, LossWeights, Side};
pub use pretrain::{
    accuracy, class_recall, predictions, pretrain_generator, train_classifier, warmup_refiner, ClassifierReport, Labeled,
};
pub use step::{StepReport, Trainer};
