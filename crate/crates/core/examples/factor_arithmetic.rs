//! Swap, remove and add anatomy factors between phantom subjects, and see
//! the plan validator reject a plan mixing two pathologies.

use daa_core::factors::{apply_plan, plan_target, validate_plan, ArithmeticPlan, FactorOp};
use daa_core::phantom::{build_manifest, generate_phantoms, Dataset, PhantomSpec};

fn main() -> daa_core::Result<()> {
    let spec = PhantomSpec { n: 12, size: 32, ..PhantomSpec::default() };
    let recs = generate_phantoms(&spec)?;
    let data = Dataset::new(build_manifest(&recs, &spec.class_names(), 0, None)?, recs)?;
    let of = |class: usize| data.records.values().find(|r| r.pathology.class_index == class).unwrap();
    let (nor, dcm, hcm) = (of(0), of(1), of(2));

    // a healthy heart with the HCM subject's LV and myocardium
    let plan = ArithmeticPlan::new(nor.id.clone())
        .with(FactorOp::swap(0, hcm.id.clone()))
        .with(FactorOp::swap(1, hcm.id.clone()));
    validate_plan(&plan, &data).expect("valid plan");
    let (c_hat, rec) = apply_plan(&nor.anatomy, &data, &plan)?;
    println!("target label: {}", plan_target(&plan, &data)?.class_name);
    for k in 0..3 {
        println!(
            "channel {k}: base area {:>4}  composed area {:>4}",
            nor.anatomy.channel(k).count(),
            c_hat.channel(k).count()
        );
    }
    println!("modified pixels: {}", rec.modified_support.count());

    let removed = ArithmeticPlan::new(nor.id.clone()).with(FactorOp::remove(2));
    let (c, _) = apply_plan(&nor.anatomy, &data, &removed)?;
    println!("RV area after removal: {}", c.channel(2).count());

    let mixed = plan.clone().with(FactorOp::swap(2, dcm.id.clone()));
    match validate_plan(&mixed, &data) {
        Ok(()) => println!("mixed plan unexpectedly accepted"),
        Err(v) => v.iter().for_each(|x| println!("rejected: {x}")),
    }
    Ok(())
}
