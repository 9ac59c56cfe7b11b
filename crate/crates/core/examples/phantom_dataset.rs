//! Generate an imbalanced phantom dataset and write it to disk.
//!
//!     cargo run --release --example phantom_dataset -- /tmp/phantoms

use daa_core::config::PhantomOptions;
use daa_core::phantom::Imbalance;
use daa_core::workflow::phantom_dataset;

fn main() -> daa_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "phantoms".into());
    let opts = PhantomOptions {
        n: 80,
        imbalance: Some(Imbalance::Class { class: 3, fraction: 0.05 }),
        ..PhantomOptions::default()
    };
    let data = phantom_dataset(&opts)?;
    for (name, c) in &data.manifest.class_counts {
        println!("{name:>4}  train {:>3}  val {:>3}  test {:>3}", c.train, c.val, c.test);
    }
    println!("excluded from every split: {}", data.manifest.excluded.len());
    data.save(&out)?;
    println!("wrote {out}/manifest.json and {} subject files", data.records.len());
    Ok(())
}
