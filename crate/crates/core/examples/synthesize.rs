//! Compose a plan, refine, decode and classify it with a model checkpoint,
//! writing the image as PNG. Without a checkpoint an untrained desk-sized
//! bundle is used, so the picture is noise but the plumbing is the same.
//!
//!     cargo run --release --example synthesize -- [model.ckpt] [out.png]

use daa_core::config::desk_net;
use daa_core::factors::{ArithmeticPlan, FactorOp};
use daa_core::imageio::{image_png, save_png};
use daa_core::model::ModelBundle;
use daa_core::nets::Classifier;
use daa_core::phantom::{build_manifest, generate_phantoms, Dataset, PhantomSpec};

fn main() -> daa_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let model = match args.get(1) {
        Some(p) => ModelBundle::load(p)?,
        None => {
            let net = desk_net();
            ModelBundle::new(net, Classifier::new(net.classifier_config(), 0)?, 0)?
        }
    };
    let out = args.get(2).cloned().unwrap_or_else(|| "synth.png".into());
    let spec = PhantomSpec { n: 12, size: model.config.height, ..PhantomSpec::default() };
    let recs = generate_phantoms(&spec)?;
    let data = Dataset::new(build_manifest(&recs, &spec.class_names(), 0, None)?, recs)?;
    let nor = data.records.values().find(|r| r.pathology.class_index == 0).unwrap();
    let hcm = data.records.values().find(|r| r.pathology.class_index == 2).unwrap();

    let plan = ArithmeticPlan::new(nor.id.clone())
        .with(FactorOp::swap(0, hcm.id.clone()))
        .with(FactorOp::swap(1, hcm.id.clone()));
    let s = model.synthesize(&data, &plan, &nor.imaging, 7)?;
    let (label, conf) = s.predicted();
    println!("{} + HCM heart from {}: F says {} ({conf:.3})", nor.id, hcm.id, spec.class_names()[label]);
    save_png(&image_png(s.image.data(), spec.size, spec.size)?, &out)?;
    println!("wrote {out}");
    Ok(())
}
