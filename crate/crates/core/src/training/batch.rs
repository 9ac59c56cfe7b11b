use daa_autograd::{Real, Tensor};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::blend::blend_from_support;
use crate::error::{DaaError, Result};
use crate::factors::{apply_plan, heart_mask, plan_target, ArithmeticPlan, FactorOp, SubjectStore};
use crate::nets::init::DetRng;
use crate::phantom::SubjectRecord;

/// Which anatomy channels carry each class's pathology. Training and
/// augmentation plans swap exactly these channels from the donor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPolicy {
    pub class_factors: Vec<Vec<usize>>,
}

impl Default for PlanPolicy {
    /// Phantom classes: NOR swaps the whole heart, DCM and HCM the LV and
    /// MYO, ARV the RV.
    fn default() -> Self {
        Self {
            class_factors: vec![vec![0, 1, 2], vec![0, 1], vec![0, 1], vec![2]],
        }
    }
}

impl PlanPolicy {
    pub fn factors(&self, class: usize) -> Result<&[usize]> {
        self.class_factors
            .get(class)
            .map(Vec::as_slice)
            .filter(|f| !f.is_empty())
            .ok_or_else(|| DaaError::InvalidInput(format!("plan policy has no factors for class {class}")))
    }

    /// Swap the donor's class factors into the base.
    pub fn plan(&self, base: &SubjectRecord, donor: &SubjectRecord) -> Result<ArithmeticPlan> {
        let mut plan = ArithmeticPlan::new(base.id.clone());
        for &k in self.factors(donor.pathology.class_index)? {
            plan = plan.with(FactorOp::swap(k, donor.id.clone()));
        }
        Ok(plan)
    }
}

/// Bases that may receive a donor's factors: a normal base, or one sharing
/// the donor's class. Either way the mix shows a single pathology that
/// matches its label.
pub fn compatible(base_label: usize, donor_label: usize) -> bool {
    base_label == 0 || base_label == donor_label
}

/// Draw one base per donor from `pool`, never the donor itself.
pub fn draw_pairs<'a>(
    donors: &[&'a SubjectRecord],
    pool: &[&'a SubjectRecord],
    rng: &mut DetRng,
) -> Result<Vec<(&'a SubjectRecord, &'a SubjectRecord)>> {
    let mut out = Vec::with_capacity(donors.len());
    for &d in donors {
        let bases: Vec<&SubjectRecord> = pool
            .iter()
            .copied()
            .filter(|b| b.id != d.id && compatible(b.pathology.class_index, d.pathology.class_index))
            .collect();
        let b = bases
            .choose(rng)
            .ok_or_else(|| DaaError::NoCompatiblePairs(format!("no base can receive factors of {}", d.id)))?;
        out.push((*b, d));
    }
    Ok(out)
}

/// Shuffled donor order for one epoch.
pub fn epoch_donors<'a>(records: &[&'a SubjectRecord], rng: &mut DetRng) -> Vec<&'a SubjectRecord> {
    let mut d = records.to_vec();
    d.shuffle(rng);
    d
}

/// One batch of mixes, stacked along the leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    /// Composed anatomy `[B, K, H, W]`.
    pub c_hat: Tensor,
    /// Blend mask `[B, 1, H, W]`.
    pub phi: Tensor,
    pub base_image: Tensor,
    /// Base imaging factor `[B, d]`.
    pub code: Tensor,
    pub donor_image: Tensor,
    /// Heart mask of the donor, applied to the real images shown to D.
    pub donor_mask: Tensor,
    /// Heart mask of the composed anatomy, applied to fakes.
    pub fake_mask: Tensor,
    /// Union of the base and composed heart masks, excluded from the
    /// background loss.
    pub bg_mask: Tensor,
    pub labels: Vec<usize>,
    pub plans: Vec<ArithmeticPlan>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_pairs<S: SubjectStore + ?Sized>(
        pairs: &[(&SubjectRecord, &SubjectRecord)],
        policy: &PlanPolicy,
        store: &S,
        dilation_radius: usize,
        blur_sigma: Real,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(DaaError::InvalidInput("empty batch".into()));
        }
        let n = pairs.len();
        let mut parts: [Vec<Tensor>; 8] = Default::default();
        let mut labels = Vec::with_capacity(n);
        let mut plans = Vec::with_capacity(n);
        for (base, donor) in pairs {
            let plan = policy.plan(base, donor)?;
            let (c_hat, rec) = apply_plan(&base.anatomy, store, &plan)?;
            let phi = blend_from_support(&rec.modified_support, dilation_radius, blur_sigma);
            let fake = heart_mask(&c_hat);
            let bg = fake.mask.or(&heart_mask(&base.anatomy).mask);
            parts[0].push(c_hat.to_tensor());
            parts[1].push(phi.to_tensor());
            parts[2].push(base.image.clone());
            parts[3].push(base.imaging.to_tensor());
            parts[4].push(donor.image.clone());
            parts[5].push(heart_mask(&donor.anatomy).to_tensor());
            parts[6].push(fake.to_tensor());
            parts[7].push(mask_tensor(&bg));
            labels.push(plan_target(&plan, store)?.class_index);
            plans.push(plan);
        }
        let [c_hat, phi, base_image, code, donor_image, donor_mask, fake_mask, bg_mask] = parts.map(|p| Tensor::stack(&p));
        Ok(Self {
            c_hat,
            phi,
            base_image,
            code,
            donor_image,
            donor_mask,
            fake_mask,
            bg_mask,
            labels,
            plans,
        })
    }
}

fn mask_tensor(m: &crate::factors::Mask) -> Tensor {
    Tensor::new(&[1, 1, m.height(), m.width()], m.to_reals())
}
