use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::anatomy::{heart_mask, AnatomyTensor, PathologyLabel, SubjectId};
use super::mask::{center_of_mass, translate_to, Mask};
use crate::error::{DaaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorOpKind {
    Swap,
    Remove,
    Add,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorOp {
    pub kind: FactorOpKind,
    pub channel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_subject: Option<SubjectId>,
}

impl FactorOp {
    pub fn swap(channel: usize, donor: impl Into<SubjectId>) -> Self {
        Self {
            kind: FactorOpKind::Swap,
            channel,
            donor_subject: Some(donor.into()),
        }
    }

    pub fn add(channel: usize, donor: impl Into<SubjectId>) -> Self {
        Self {
            kind: FactorOpKind::Add,
            channel,
            donor_subject: Some(donor.into()),
        }
    }

    pub fn remove(channel: usize) -> Self {
        Self {
            kind: FactorOpKind::Remove,
            channel,
            donor_subject: None,
        }
    }
}

impl From<String> for SubjectId {
    fn from(s: String) -> Self {
        SubjectId(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithmeticPlan {
    pub base_subject: SubjectId,
    pub ops: Vec<FactorOp>,
}

impl ArithmeticPlan {
    pub fn new(base_subject: impl Into<SubjectId>) -> Self {
        Self {
            base_subject: base_subject.into(),
            ops: Vec::new(),
        }
    }

    pub fn with(mut self, op: FactorOp) -> Self {
        self.ops.push(op);
        self
    }

    /// Distinct donors referenced by add/swap ops.
    pub fn donors(&self) -> BTreeSet<&SubjectId> {
        self.ops.iter().filter_map(|o| o.donor_subject.as_ref()).collect()
    }
}

/// Pixels touched by a plan and the ops that touched them.
#[derive(Clone, Debug, PartialEq)]
pub struct MixRecord {
    pub modified_support: Mask,
    pub ops_applied: Vec<FactorOp>,
}

/// Lookup of subjects by id.
pub trait SubjectStore {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor>;
}

impl SubjectStore for BTreeMap<SubjectId, AnatomyTensor> {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor> {
        self.get(id)
    }
}

impl SubjectStore for HashMap<SubjectId, AnatomyTensor> {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor> {
        self.get(id)
    }
}

impl SubjectStore for [AnatomyTensor] {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor> {
        self.iter().find(|c| &c.subject_id == id)
    }
}

impl SubjectStore for Vec<AnatomyTensor> {
    fn anatomy(&self, id: &SubjectId) -> Option<&AnatomyTensor> {
        self.as_slice().anatomy(id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum PlanViolation {
    UnknownSubject { subject: SubjectId },
    MissingDonor { op: usize },
    UnexpectedDonor { op: usize },
    ChannelOutOfRange { op: usize, channel: usize, channels: usize },
    ShapeMismatch { subject: SubjectId },
    MultiplePathologies { classes: Vec<String> },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownSubject { subject } => write!(f, "unknown subject `{subject}`"),
            Self::MissingDonor { op } => write!(f, "op {op} needs a donor subject"),
            Self::UnexpectedDonor { op } => write!(f, "op {op} is a remove and takes no donor"),
            Self::ChannelOutOfRange { op, channel, channels } => {
                write!(f, "op {op} names channel {channel}, subjects have {channels}")
            }
            Self::ShapeMismatch { subject } => {
                write!(f, "subject `{subject}` has a different anatomy shape than the base")
            }
            Self::MultiplePathologies { classes } => write!(
                f,
                "plan would combine distinct pathologies in one subject: {}",
                classes.join(", ")
            ),
        }
    }
}

/// Check a plan against the store, collecting every violation.
///
/// The pathology check is conservative: the base label together with every
/// add/swap donor label may contain at most one non-normal class, whatever
/// channels are involved. It therefore does not depend on op order.
pub fn validate_plan<S: SubjectStore + ?Sized>(plan: &ArithmeticPlan, store: &S) -> std::result::Result<(), Vec<PlanViolation>> {
    let mut out = Vec::new();
    let base = store.anatomy(&plan.base_subject);
    if base.is_none() {
        out.push(PlanViolation::UnknownSubject {
            subject: plan.base_subject.clone(),
        });
    }
    let mut labels: Vec<&PathologyLabel> = base.map(|b| &b.pathology).into_iter().collect();
    let mut seen_unknown = BTreeSet::new();
    let mut seen_shape = BTreeSet::new();
    for (i, op) in plan.ops.iter().enumerate() {
        let donor = match (op.kind, &op.donor_subject) {
            (FactorOpKind::Remove, Some(_)) => {
                out.push(PlanViolation::UnexpectedDonor { op: i });
                None
            }
            (FactorOpKind::Remove, None) => None,
            (_, None) => {
                out.push(PlanViolation::MissingDonor { op: i });
                None
            }
            (_, Some(id)) => match store.anatomy(id) {
                Some(d) => Some(d),
                None => {
                    if seen_unknown.insert(id.clone()) {
                        out.push(PlanViolation::UnknownSubject { subject: id.clone() });
                    }
                    None
                }
            },
        };
        if let Some(b) = base {
            if op.channel >= b.num_channels() {
                out.push(PlanViolation::ChannelOutOfRange {
                    op: i,
                    channel: op.channel,
                    channels: b.num_channels(),
                });
            }
        }
        if let Some(d) = donor {
            labels.push(&d.pathology);
            if op.channel >= d.num_channels() && base.is_some_and(|b| op.channel < b.num_channels()) {
                out.push(PlanViolation::ChannelOutOfRange {
                    op: i,
                    channel: op.channel,
                    channels: d.num_channels(),
                });
            }
            if let Some(b) = base {
                if d.dims() != b.dims() && seen_shape.insert(d.subject_id.clone()) {
                    out.push(PlanViolation::ShapeMismatch {
                        subject: d.subject_id.clone(),
                    });
                }
            }
        }
    }
    let abnormal: BTreeSet<(usize, &str)> = labels
        .iter()
        .filter(|l| !l.is_normal())
        .map(|l| (l.class_index, l.class_name.as_str()))
        .collect();
    if abnormal.len() > 1 {
        out.push(PlanViolation::MultiplePathologies {
            classes: abnormal.iter().map(|(_, n)| n.to_string()).collect(),
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Pathology of the composed subject: the single non-normal class among
/// base and donors, or the base label if there is none.
pub fn plan_target<S: SubjectStore + ?Sized>(plan: &ArithmeticPlan, store: &S) -> Result<PathologyLabel> {
    let base = store
        .anatomy(&plan.base_subject)
        .ok_or_else(|| DaaError::UnknownSubject(plan.base_subject.to_string()))?;
    if !base.pathology.is_normal() {
        return Ok(base.pathology.clone());
    }
    for id in plan.donors() {
        let d = store.anatomy(id).ok_or_else(|| DaaError::UnknownSubject(id.to_string()))?;
        if !d.pathology.is_normal() {
            return Ok(d.pathology.clone());
        }
    }
    Ok(base.pathology.clone())
}

// Where a donor channel is registered to when the current target channel is
// empty: the base's original channel, then the base heart mask, else no shift.
fn anchor(current: &Mask, original: &Mask, base: &AnatomyTensor) -> Option<(f64, f64)> {
    center_of_mass(current)
        .or_else(|_| center_of_mass(original))
        .or_else(|_| center_of_mass(&heart_mask(base).mask))
        .ok()
}

/// Apply a validated plan, returning the composed anatomy and the touched
/// pixels.
pub fn apply_plan<S: SubjectStore + ?Sized>(
    base: &AnatomyTensor,
    store: &S,
    plan: &ArithmeticPlan,
) -> Result<(AnatomyTensor, MixRecord)> {
    if base.subject_id != plan.base_subject {
        return Err(DaaError::InvalidInput(format!(
            "plan base `{}` does not match anatomy `{}`",
            plan.base_subject, base.subject_id
        )));
    }
    if let Err(v) = validate_plan(plan, store) {
        if let Some(PlanViolation::UnknownSubject { subject }) =
            v.iter().find(|x| matches!(x, PlanViolation::UnknownSubject { .. }))
        {
            return Err(DaaError::UnknownSubject(subject.to_string()));
        }
        return Err(DaaError::InvalidPlan(v));
    }
    let base = if base.is_continuous() { base.binarized() } else { base.clone() };
    let mut out = base.clone();
    out.pathology = plan_target(plan, store)?;
    let mut touched = Mask::new(base.height(), base.width());
    for op in &plan.ops {
        let k = op.channel;
        let current = out.channel(k);
        match op.kind {
            FactorOpKind::Remove => {
                touched = touched.or(&current);
                out.set_channel(k, &Mask::new(base.height(), base.width()));
            }
            FactorOpKind::Swap | FactorOpKind::Add => {
                let id = op.donor_subject.as_ref().expect("validated");
                let donor = store.anatomy(id).expect("validated").channel(k);
                let from = center_of_mass(&donor).map_err(|_| DaaError::EmptyFactor { channel: Some(k) })?;
                let placed = match anchor(&current, &base.channel(k), &base) {
                    Some(to) => translate_to(&donor, from, to),
                    None => donor,
                };
                let new = if op.kind == FactorOpKind::Swap {
                    touched = touched.or(&current);
                    placed.clone()
                } else {
                    current.or(&placed)
                };
                touched = touched.or(&placed);
                out.set_channel(k, &new);
            }
        }
    }
    Ok((
        out,
        MixRecord {
            modified_support: touched,
            ops_applied: plan.ops.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::anatomy::ChannelRole;
    use proptest::prelude::*;

    fn nor() -> PathologyLabel {
        PathologyLabel::new(0, "NOR")
    }

    fn blob(h: usize, w: usize, cy: usize, cx: usize, r: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| y.abs_diff(cy) <= r && x.abs_diff(cx) <= r)
    }

    fn subject(id: &str, label: PathologyLabel, masks: Vec<Mask>) -> AnatomyTensor {
        let mut roles = vec![ChannelRole::Heart; masks.len()];
        *roles.last_mut().unwrap() = ChannelRole::Other;
        AnatomyTensor::from_masks(&masks, roles, id.into(), label).unwrap()
    }

    fn store() -> BTreeMap<SubjectId, AnatomyTensor> {
        let a = subject(
            "a",
            nor(),
            vec![blob(32, 32, 12, 12, 2), blob(32, 32, 12, 12, 4).xor(&blob(32, 32, 12, 12, 2)), Mask::full(32, 32)],
        );
        let b = subject(
            "b",
            PathologyLabel::new(2, "HCM"),
            vec![blob(32, 32, 20, 18, 1), blob(32, 32, 20, 18, 6).xor(&blob(32, 32, 20, 18, 1)), Mask::new(32, 32)],
        );
        let c = subject(
            "c",
            PathologyLabel::new(1, "DCM"),
            vec![blob(32, 32, 16, 16, 5), Mask::new(32, 32), Mask::new(32, 32)],
        );
        [a, b, c].into_iter().map(|s| (s.subject_id.clone(), s)).collect()
    }

    #[test]
    fn empty_plan_is_identity() {
        let s = store();
        let a = &s[&SubjectId::new("a")];
        let (out, rec) = apply_plan(a, &s, &ArithmeticPlan::new("a")).unwrap();
        assert_eq!(&out, a);
        assert!(!rec.modified_support.any());
    }

    #[test]
    fn self_swap_is_identity() {
        let s = store();
        let a = &s[&SubjectId::new("a")];
        let plan = ArithmeticPlan::new("a").with(FactorOp::swap(1, "a"));
        let (out, _) = apply_plan(a, &s, &plan).unwrap();
        assert_eq!(&out, a);
    }

    #[test]
    fn remove_then_add_equals_registered_donor() {
        let s = store();
        let a = &s[&SubjectId::new("a")];
        let b = &s[&SubjectId::new("b")];
        let plan = ArithmeticPlan::new("a")
            .with(FactorOp::remove(0))
            .with(FactorOp::remove(1))
            .with(FactorOp::add(0, "b"))
            .with(FactorOp::add(1, "b"));
        assert!(validate_plan(&plan, &s).is_ok());
        let (out, rec) = apply_plan(a, &s, &plan).unwrap();
        for k in 0..2 {
            let want = register_factor_for_test(&b.channel(k), &a.channel(k));
            assert_eq!(out.channel(k), want, "channel {k}");
            assert!(want.is_subset_of(&rec.modified_support));
            assert!(a.channel(k).is_subset_of(&rec.modified_support));
        }
        assert_eq!(out.channel(2), a.channel(2));
        assert_eq!(out.pathology.class_name, "HCM");
    }

    fn register_factor_for_test(d: &Mask, t: &Mask) -> Mask {
        super::super::mask::register_factor(d, t).unwrap()
    }

    #[test]
    fn pathology_rule() {
        let s = store();
        let ok = ArithmeticPlan::new("a").with(FactorOp::swap(1, "b"));
        assert!(validate_plan(&ok, &s).is_ok());
        let bad = ArithmeticPlan::new("c").with(FactorOp::swap(1, "b"));
        let v = validate_plan(&bad, &s).unwrap_err();
        assert!(matches!(v[0], PlanViolation::MultiplePathologies { .. }));
        assert!(validate_plan(&ArithmeticPlan::new("a"), &s).is_ok());
        let same = ArithmeticPlan::new("b").with(FactorOp::swap(0, "b"));
        assert!(validate_plan(&same, &s).is_ok());
    }

    #[test]
    fn structural_violations() {
        let s = store();
        let mut plan = ArithmeticPlan::new("a").with(FactorOp::swap(7, "zz")).with(FactorOp::remove(0));
        plan.ops.push(FactorOp {
            kind: FactorOpKind::Add,
            channel: 0,
            donor_subject: None,
        });
        plan.ops[1].donor_subject = Some("b".into());
        let v = validate_plan(&plan, &s).unwrap_err();
        assert!(v.contains(&PlanViolation::UnknownSubject { subject: "zz".into() }));
        assert!(v.contains(&PlanViolation::ChannelOutOfRange { op: 0, channel: 7, channels: 3 }));
        assert!(v.contains(&PlanViolation::UnexpectedDonor { op: 1 }));
        assert!(v.contains(&PlanViolation::MissingDonor { op: 2 }));
        let a = &s[&SubjectId::new("a")];
        let unknown = ArithmeticPlan::new("a").with(FactorOp::swap(0, "zz"));
        assert!(matches!(apply_plan(a, &s, &unknown), Err(DaaError::UnknownSubject(_))));
    }

    #[test]
    fn swapping_in_an_empty_donor_channel_fails() {
        let s = store();
        let a = &s[&SubjectId::new("a")];
        let plan = ArithmeticPlan::new("a").with(FactorOp::swap(2, "b"));
        assert!(matches!(apply_plan(a, &s, &plan), Err(DaaError::EmptyFactor { channel: Some(2) })));
    }

    fn arb_subject(id: &'static str) -> impl Strategy<Value = AnatomyTensor> {
        (0usize..4, proptest::collection::vec((6usize..26, 6usize..26, 1usize..5), 3)).prop_map(move |(cls, blobs)| {
            let names = ["NOR", "DCM", "HCM", "ARV"];
            let mut masks: Vec<Mask> = blobs.iter().map(|&(y, x, r)| blob(32, 32, y, x, r)).collect();
            masks.push(Mask::full(32, 32));
            subject(id, PathologyLabel::new(cls, names[cls]), masks)
        })
    }

    fn arb_op() -> impl Strategy<Value = FactorOp> {
        (0usize..3, 0usize..3, prop_oneof![Just("a"), Just("b"), Just("c")]).prop_map(|(k, ch, d)| match k {
            0 => FactorOp::swap(ch, d),
            1 => FactorOp::add(ch, d),
            _ => FactorOp::remove(ch),
        })
    }

    proptest! {
        #[test]
        fn untouched_channels_are_bit_identical(
            a in arb_subject("a"), b in arb_subject("b"), c in arb_subject("c"),
            ops in proptest::collection::vec(arb_op(), 0..5)
        ) {
            let s: Vec<AnatomyTensor> = vec![a.clone(), b, c];
            let plan = ArithmeticPlan { base_subject: "a".into(), ops };
            if let Ok((out, rec)) = apply_plan(&a, &s, &plan) {
                let named: BTreeSet<usize> = plan.ops.iter().map(|o| o.channel).collect();
                for k in 0..a.num_channels() {
                    if !named.contains(&k) {
                        prop_assert_eq!(out.channel_values(k), a.channel_values(k));
                    }
                    let diff = out.channel(k).xor(&a.channel(k));
                    prop_assert!(diff.is_subset_of(&rec.modified_support));
                }
            }
        }

        #[test]
        fn swap_aligns_centres(a in arb_subject("a"), b in arb_subject("b"), ch in 0usize..3) {
            let (mut a, mut b) = (a, b);
            a.pathology = nor();
            b.pathology = nor();
            let s2: Vec<AnatomyTensor> = vec![a.clone(), b];
            let plan = ArithmeticPlan::new("a").with(FactorOp::swap(ch, "b"));
            let (out, _) = apply_plan(&a, &s2, &plan).unwrap();
            let got = center_of_mass(&out.channel(ch)).unwrap();
            let want = center_of_mass(&a.channel(ch)).unwrap();
            prop_assert!((got.0 - want.0).abs() <= 0.5 && (got.1 - want.1).abs() <= 0.5);
        }

        #[test]
        fn validation_is_order_insensitive(
            a in arb_subject("a"), b in arb_subject("b"), c in arb_subject("c"),
            ops in proptest::collection::vec(arb_op(), 0..6), rot in 0usize..6
        ) {
            let s: Vec<AnatomyTensor> = vec![a, b, c];
            let plan = ArithmeticPlan { base_subject: "a".into(), ops: ops.clone() };
            let mut shuffled = ops;
            let n = shuffled.len().max(1);
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let other = ArithmeticPlan { base_subject: "a".into(), ops: shuffled };
            prop_assert_eq!(validate_plan(&plan, &s).is_ok(), validate_plan(&other, &s).is_ok());
        }
    }
}
