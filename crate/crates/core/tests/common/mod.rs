#![allow(dead_code)]

use daa_core::model::ModelBundle;
use daa_core::nets::{Classifier, ClassifierConfig, NetConfig};
use daa_core::phantom::{build_manifest, generate_phantoms, Dataset, PhantomSpec};

pub fn tiny_dataset(n: usize) -> Dataset {
    let spec = PhantomSpec {
        n,
        size: 16,
        ..PhantomSpec::default()
    };
    let recs = generate_phantoms(&spec).unwrap();
    let manifest = build_manifest(&recs, &spec.class_names(), 0, None).unwrap();
    Dataset::new(manifest, recs).unwrap()
}

pub fn tiny_net() -> NetConfig {
    NetConfig {
        height: 16,
        width: 16,
        refiner_width: 4,
        generator_width: 4,
        mapper_hidden: 4,
        disc_widths: [2, 2, 2, 2],
        ..NetConfig::default()
    }
}

/// Untrained but complete bundle.
pub fn tiny_model() -> ModelBundle {
    let cfg = tiny_net();
    let f = Classifier::new(
        ClassifierConfig {
            base_width: 2,
            fc_hidden: [4, 4],
            ..cfg.classifier_config()
        },
        1,
    )
    .unwrap();
    ModelBundle::new(cfg, f, 2).unwrap()
}

/// First subject of a class, by id order.
pub fn first_of(data: &Dataset, class: usize) -> String {
    data.records
        .values()
        .find(|r| r.pathology.class_index == class)
        .map(|r| r.id.to_string())
        .unwrap()
}
