//! Score a dataset the way augmentation is judged: fresh classifiers and
//! segmenters per seed, reported as `experiment,seed,metric,value` rows.

use daa_core::augment::{eval_posthoc_classification, eval_posthoc_segmentation, EvalReport, PosthocConfig, SegmenterConfig};
use daa_core::config::PhantomOptions;
use daa_core::workflow::phantom_dataset;

fn main() -> daa_core::Result<()> {
    let data = phantom_dataset(&PhantomOptions { n: 60, size: 32, ..PhantomOptions::default() })?;
    let mut cfg = PosthocConfig { seeds: vec![0, 1], ..PosthocConfig::default() };
    cfg.classifier.epochs = 8;
    cfg.segmenter = SegmenterConfig { epochs: 6, ..SegmenterConfig::default() };

    let mut report = EvalReport::default();
    let c = eval_posthoc_classification(&data, &cfg)?;
    report.push_summary("phantom", &cfg.seeds, "accuracy", &c.accuracy);
    let d = eval_posthoc_segmentation(&data, &cfg)?;
    report.push_summary("phantom", &cfg.seeds, "dice", &d);
    print!("{}", report.to_csv());
    println!("accuracy {:.3} ± {:.3}, dice {:.3} ± {:.3}", c.accuracy.mean, c.accuracy.std, d.mean, d.std);
    Ok(())
}
