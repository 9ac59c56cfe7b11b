//! Augmentation protocol: synthesize candidates, keep the confident ones,
//! extend the training split, then score the result with fresh models.

pub mod eval;
pub mod fid;
pub mod pipeline;
pub mod segmenter;
pub mod traditional;

pub use eval::{eval_posthoc_classification, eval_posthoc_segmentation, ClassificationEval, EvalReport, PosthocConfig, ReportRow, Summary};
pub use fid::{frechet_distance, proxy_fid, COV_EPS};
pub use pipeline::{
    augment_dataset, augment_manifest, balancing_count, extract_near_gt_masks, filter_by_confidence, synthesize_candidates,
    AugmentTarget, AugmentationRequest, GeneratedSample, DEFAULT_POOL_MULTIPLIER, MASK_THRESHOLD,
};
pub use segmenter::{dice, label_map, mean_dice, train_segmenter, Segmenter, SegmenterConfig};
pub use traditional::{augment_image, augment_pair, TraditionalConfig, Warp};
