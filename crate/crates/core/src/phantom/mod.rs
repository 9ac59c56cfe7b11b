//! Synthetic cardiac phantoms and dataset storage.

mod generate;
mod manifest;
mod record;

pub use generate::{
    generate_phantoms, masks_to_factors, ClassMorphology, PhantomSpec, Range, VendorModel, LV, MYO, RV, STRUCTURES,
    VENDORS,
};
pub use manifest::{
    build_manifest, build_manifest_with, imbalance_keep, split_sizes, Dataset, DatasetManifest, Imbalance, Split,
    SplitCounts, SubjectEntry, DEFAULT_FRACTIONS, MANIFEST_FILE, SUBJECT_DIR,
};
pub use record::{load_subject, save_subject, SubjectRecord};
