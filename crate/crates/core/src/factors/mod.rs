//! Anatomy factor tensors and the arithmetic performed on them.

mod anatomy;
mod arithmetic;
mod mask;
mod morphology;

pub use anatomy::{
    heart_mask, overlap_report, AnatomyTensor, ChannelRole, HeartMask, Overlap, PathologyLabel, SubjectId, MIN_SIDE,
};
pub use arithmetic::{
    apply_plan, plan_target, validate_plan, ArithmeticPlan, FactorOp, FactorOpKind, MixRecord, PlanViolation,
    SubjectStore,
};
pub use mask::{center_of_mass, register_factor, Mask};
pub use morphology::{dilate, erode, morph_traverse, MorphOp};
