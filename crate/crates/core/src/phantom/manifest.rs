use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::{load_subject, save_subject, SubjectRecord};
use crate::error::{DaaError, Result};
use crate::factors::{AnatomyTensor, SubjectId, SubjectStore};
use crate::nets::init::rng;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUBJECT_DIR: &str = "subjects";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Downsample one class or one vendor in the train split so it makes up
/// `fraction` of the result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Imbalance {
    Class { class: usize, fraction: f64 },
    Vendor { vendor: u8, fraction: f64 },
}

impl Imbalance {
    fn matches(&self, label: usize, vendor: u8) -> bool {
        match *self {
            Imbalance::Class { class, .. } => label == class,
            Imbalance::Vendor { vendor: v, .. } => vendor == v,
        }
    }

    fn fraction(&self) -> f64 {
        match *self {
            Imbalance::Class { fraction, .. } | Imbalance::Vendor { fraction, .. } => fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub label: usize,
    pub vendor: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<Imbalance>,
    pub train: Vec<SubjectId>,
    pub val: Vec<SubjectId>,
    pub test: Vec<SubjectId>,
    /// Dropped by the imbalance step; kept out of every split.
    #[serde(default)]
    pub excluded: Vec<SubjectId>,
    pub subjects: BTreeMap<SubjectId, SubjectEntry>,
    /// Per class name, then per vendor index. Derived; see [`Self::recount`].
    pub class_counts: BTreeMap<String, SplitCounts>,
    pub vendor_counts: BTreeMap<u8, SplitCounts>,
}

impl DatasetManifest {
    pub fn split(&self, s: Split) -> &[SubjectId] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label(&self, id: &SubjectId) -> Option<usize> {
        self.subjects.get(id).map(|e| e.label)
    }

    pub fn recount(&mut self) {
        let mut classes: BTreeMap<String, SplitCounts> =
            self.class_names.iter().map(|n| (n.clone(), SplitCounts::default())).collect();
        let mut vendors: BTreeMap<u8, SplitCounts> = BTreeMap::new();
        for (split, ids) in [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)] {
            for id in ids {
                let e = &self.subjects[id];
                let bump = |c: &mut SplitCounts| match split {
                    Split::Train => c.train += 1,
                    Split::Val => c.val += 1,
                    Split::Test => c.test += 1,
                };
                if let Some(name) = self.class_names.get(e.label) {
                    bump(classes.get_mut(name).expect("class present"));
                }
                bump(vendors.entry(e.vendor).or_default());
            }
        }
        self.class_counts = classes;
        self.vendor_counts = vendors;
    }

    /// Check the splits are disjoint and every id has an entry.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test).chain(&self.excluded) {
            if !seen.insert(id) {
                return Err(DaaError::InvalidInput(format!("subject {id} appears in more than one split")));
            }
            let e = self
                .subjects
                .get(id)
                .ok_or_else(|| DaaError::InvalidInput(format!("subject {id} has no manifest entry")))?;
            if e.label >= self.num_classes() {
                return Err(DaaError::InvalidInput(format!("subject {id} has label {} out of range", e.label)));
            }
        }
        if seen.len() != self.subjects.len() {
            return Err(DaaError::InvalidInput("manifest lists subjects outside every split".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| DaaError::format(0, format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

/// Split sizes for `n` subjects: train and val rounded, test takes the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64) * fractions[0]).round() as usize;
    let val = (((n as f64) * fractions[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    [train, val, n - train - val]
}

/// Number of matching subjects to keep so they form `fraction` of the
/// result, given `others` non-matching ones.
pub fn imbalance_keep(fraction: f64, others: usize) -> usize {
    (fraction / (1.0 - fraction) * others as f64).round() as usize
}

/// Stratified 70/15/15 split. Each class is shuffled, the classes are dealt
/// round-robin into one sequence, and the sequence is cut at the split sizes.
pub fn build_manifest(
    records: &[SubjectRecord],
    class_names: &[String],
    split_seed: u64,
    imbalance: Option<Imbalance>,
) -> Result<DatasetManifest> {
    build_manifest_with(records, class_names, split_seed, imbalance, DEFAULT_FRACTIONS)
}

pub fn build_manifest_with(
    records: &[SubjectRecord],
    class_names: &[String],
    split_seed: u64,
    imbalance: Option<Imbalance>,
    fractions: [f64; 3],
) -> Result<DatasetManifest> {
    if records.len() < 3 {
        return Err(DaaError::InsufficientSubjects(format!(
            "need at least 3 subjects to split, got {}",
            records.len()
        )));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DaaError::InvalidInput(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut subjects = BTreeMap::new();
    let mut by_class: Vec<Vec<SubjectId>> = vec![Vec::new(); class_names.len()];
    for r in records {
        let label = r.pathology.class_index;
        if label >= class_names.len() {
            return Err(DaaError::InvalidInput(format!("subject {} has label {label} out of range", r.id)));
        }
        let entry = SubjectEntry {
            label,
            vendor: r.vendor,
            synthetic: r.synthetic,
            provenance: r.provenance.clone(),
        };
        if subjects.insert(r.id.clone(), entry).is_some() {
            return Err(DaaError::InvalidInput(format!("duplicate subject id {}", r.id)));
        }
        by_class[label].push(r.id.clone());
    }
    let mut rg = rng(split_seed);
    for ids in &mut by_class {
        ids.sort();
        ids.shuffle(&mut rg);
    }
    let mut order = Vec::with_capacity(records.len());
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for ids in &by_class {
            if let Some(id) = ids.get(i) {
                order.push(id.clone());
            }
        }
    }
    let [tr, va, _] = split_sizes(order.len(), fractions);
    let test = order.split_off(tr + va);
    let val = order.split_off(tr);
    let mut train = order;

    let mut excluded = Vec::new();
    if let Some(imb) = imbalance {
        let f = imb.fraction();
        if !(f > 0.0 && f < 1.0) {
            return Err(DaaError::InvalidInput(format!("imbalance fraction {f} must be in (0, 1)")));
        }
        let (hit, rest): (Vec<_>, Vec<_>) = train.iter().cloned().partition(|id| {
            let e: &SubjectEntry = &subjects[id];
            imb.matches(e.label, e.vendor)
        });
        let keep = imbalance_keep(f, rest.len());
        if keep == 0 || keep > hit.len() {
            return Err(DaaError::InsufficientSubjects(format!(
                "imbalance needs {keep} matching train subjects, have {}",
                hit.len()
            )));
        }
        // the train order is already shuffled within class
        let dropped: BTreeSet<SubjectId> = hit[keep..].iter().cloned().collect();
        train.retain(|id| !dropped.contains(id));
        excluded = dropped.into_iter().collect();
    }
    let mut m = DatasetManifest {
        class_names: class_names.to_vec(),
        split_seed,
        imbalance,
        train,
        val,
        test,
        excluded,
        subjects,
        class_counts: BTreeMap::new(),
        vendor_counts: BTreeMap::new(),
    };
    m.recount();
    Ok(m)
}

/// A manifest with its records held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: BTreeMap<SubjectId, SubjectRecord>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, records: impl IntoIterator<Item = SubjectRecord>) -> Result<Self> {
        manifest.validate()?;
        let records: BTreeMap<_, _> = records.into_iter().map(|r| (r.id.clone(), r)).collect();
        for id in manifest.subjects.keys() {
            if !records.contains_key(id) {
                return Err(DaaError::UnknownSubject(id.to_string()));
            }
        }
        Ok(Self { manifest, records })
    }

    pub fn get(&self, id: &SubjectId) -> Option<&SubjectRecord> {
        self.records.get(id)
    }

    pub fn split_records(&self, s: Split) -> Vec<&SubjectRecord> {
        self.manifest.split(s).iter().map(|id| &self.records[id]).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    /// Write `manifest.json` and `subjects/<id>.daaf`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let sub = dir.join(SUBJECT_DIR);
        std::fs::create_dir_all(&sub).map_err(|e| DaaError::io(&sub, e))?;
        for r in self.records.values() {
            save_subject(r, self.num_classes(), sub.join(format!("{}.daaf", r.id)))?;
        }
        let mp = dir.join(MANIFEST_FILE);
        std::fs::write(&mp, self.manifest.to_json()).map_err(|e| DaaError::io(&mp, e))
    }

    /// Load a dataset directory. Every manifest subject must have a file and
    /// every file a manifest entry.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| DaaError::io(&mp, e))?;
        let manifest = DatasetManifest::from_json(&text)?;
        let sub = dir.join(SUBJECT_DIR);
        let mut on_disk = BTreeSet::new();
        for e in std::fs::read_dir(&sub).map_err(|e| DaaError::io(&sub, e))? {
            let p = e.map_err(|e| DaaError::io(&sub, e))?.path();
            if p.extension().is_some_and(|x| x == "daaf") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    on_disk.insert(SubjectId::new(stem));
                }
            }
        }
        let listed: BTreeSet<SubjectId> = manifest.subjects.keys().cloned().collect();
        if on_disk != listed {
            let missing: Vec<_> = listed.difference(&on_disk).map(ToString::to_string).collect();
            let extra: Vec<_> = on_disk.difference(&listed).map(ToString::to_string).collect();
            return Err(DaaError::InvalidInput(format!(
                "dataset directory does not match manifest (missing files {missing:?}, unlisted files {extra:?})"
            )));
        }
        let mut records = BTreeMap::new();
        for id in listed {
            let r = load_subject(sub.join(format!("{id}.daaf")))?;
            if r.id != id {
                return Err(DaaError::InvalidInput(format!("file {id}.daaf holds subject {}", r.id)));
            }
            records.insert(id, r);
        }
        Ok(Self { manifest, records })
    }
}

impl SubjectStore for Dataset {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor> {
        self.records.get(id).map(|r| &r.anatomy)
    }
}
