//! Fréchet distance between classifier features of two image sets: phantoms
//! from one scanner vendor against the other vendors.

use daa_core::augment::proxy_fid;
use daa_core::config::{desk_classifier, desk_net, PhantomOptions};
use daa_core::training::ClassifierTrainConfig;
use daa_core::workflow::{phantom_dataset, pretrain_f};

fn main() -> daa_core::Result<()> {
    let data = phantom_dataset(&PhantomOptions { n: 120, size: 32, ..PhantomOptions::default() })?;
    // a few epochs are enough to give F useful features
    let cfg = ClassifierTrainConfig { epochs: 5, ..desk_classifier() };
    let f = pretrain_f(&data, &desk_net(), &cfg, 0)?;
    println!("F test accuracy {:.3}", f.test_accuracy);
    let by_vendor = |v: u8| data.records.values().filter(|r| r.vendor == v).map(|r| r.image.clone()).collect::<Vec<_>>();
    let a = by_vendor(0);
    let half = a.len() / 2;
    println!("vendor 0 vs itself (split halves): {:.4}", proxy_fid(&a[..half], &a[half..], &f.classifier)?);
    for v in 1..4 {
        println!("vendor 0 vs vendor {v}: {:.4}", proxy_fid(&a, &by_vendor(v), &f.classifier)?);
    }
    Ok(())
}
