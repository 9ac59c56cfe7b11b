//! Build the soft blend mask around an edit and refine the composed
//! anatomy. Noise enters only where the mask is positive; keeping the rest
//! unchanged is learned, so a fresh refiner rewrites the whole map and a
//! warmed-up one mostly leaves it alone.

use daa_core::blend::{blend_from_support, default_blend_params, refine, BlendMask, Refiner};
use daa_core::factors::{apply_plan, AnatomyTensor, ArithmeticPlan, FactorOp};
use daa_core::phantom::{build_manifest, generate_phantoms, Dataset, PhantomSpec, SubjectRecord};
use daa_core::training::warmup_refiner;

fn changed(a: &AnatomyTensor, b: &AnatomyTensor, phi: &BlendMask) -> (usize, usize) {
    let (mut inside, mut outside) = (0, 0);
    for p in 0..phi.values().len() {
        let differs = (0..a.num_channels()).any(|k| (a.channel_values(k)[p] - b.channel_values(k)[p]).abs() > 0.5);
        if differs {
            if phi.values()[p] > 0.0 {
                inside += 1;
            } else {
                outside += 1;
            }
        }
    }
    (inside, outside)
}

fn main() -> daa_core::Result<()> {
    let spec = PhantomSpec { n: 24, size: 32, ..PhantomSpec::default() };
    let recs = generate_phantoms(&spec)?;
    let data = Dataset::new(build_manifest(&recs, &spec.class_names(), 0, None)?, recs)?;
    let nor = data.records.values().find(|r| r.pathology.class_index == 0).unwrap();
    let dcm = data.records.values().find(|r| r.pathology.class_index == 1).unwrap();

    let plan = ArithmeticPlan::new(nor.id.clone()).with(FactorOp::swap(0, dcm.id.clone()));
    let (c_hat, rec) = apply_plan(&nor.anatomy, &data, &plan)?;
    let (radius, sigma) = default_blend_params(32, 32);
    let phi = blend_from_support(&rec.modified_support, radius, sigma);
    let open = phi.values().iter().filter(|&&v| v > 0.0).count();
    println!("blend radius {radius}, sigma {sigma}: mask covers {open} of {} pixels", 32 * 32);

    let mut j = Refiner::new(c_hat.num_channels(), 8, 0.5, 0);
    let (i, o) = changed(&c_hat, &refine(&c_hat, &phi, &j, 3, true)?, &phi);
    println!("fresh refiner:  {i} pixels relabelled inside the mask, {o} outside");

    let records: Vec<&SubjectRecord> = data.records.values().collect();
    warmup_refiner(&mut j, &records, 15, 8, 5e-3, radius, sigma, 0)?;
    let (i, o) = changed(&c_hat, &refine(&c_hat, &phi, &j, 3, true)?, &phi);
    println!("after warm-up:  {i} pixels relabelled inside the mask, {o} outside");
    Ok(())
}
