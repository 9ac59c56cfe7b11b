//! Top up a rare class with confidence-filtered synthetic subjects. Uses
//! an untrained model unless a checkpoint matching 64x64 phantoms is given,
//! in which case the filter keeps far more of the pool.
//!
//!     cargo run --release --example augment_balance -- [model.ckpt]

use daa_core::augment::{balancing_count, AugmentTarget};
use daa_core::config::{AugmentOptions, PhantomOptions};
use daa_core::model::ModelBundle;
use daa_core::nets::{Classifier, ClassifierConfig, NetConfig};
use daa_core::phantom::Imbalance;
use daa_core::workflow::{augment_to_balance, phantom_dataset};

fn main() -> daa_core::Result<()> {
    let data = phantom_dataset(&PhantomOptions {
        n: 80,
        size: 32,
        imbalance: Some(Imbalance::Class { class: 3, fraction: 0.05 }),
        ..PhantomOptions::default()
    })?;
    let model = match std::env::args().nth(1) {
        Some(p) => ModelBundle::load(p)?,
        None => {
            let net = NetConfig {
                height: 32,
                width: 32,
                refiner_width: 4,
                generator_width: 4,
                disc_widths: [4, 4, 4, 4],
                ..NetConfig::default()
            };
            let f = Classifier::new(ClassifierConfig { base_width: 2, ..net.classifier_config() }, 0)?;
            ModelBundle::new(net, f, 0)?
        }
    };
    let target = AugmentTarget::Class(3);
    let need = balancing_count(&data.manifest, target);
    println!("ARV needs {need} more training subjects");
    // an untrained F rarely agrees with the target, so ask for a few only
    let opts = AugmentOptions { target, count: Some(need.min(2)), pool_multiplier: 16 };
    match augment_to_balance(&model, &data, &opts, 0) {
        Ok(a) => {
            println!("kept {} of {} candidates", a.kept.len(), a.candidates);
            for s in &a.kept {
                println!("  {}  confidence {:.3}  {}", s.id, s.confidence, s.provenance());
            }
        }
        Err(e) => println!("filter gave up: {e}"),
    }
    Ok(())
}
