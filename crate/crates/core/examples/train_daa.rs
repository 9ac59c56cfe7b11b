//! A short training run at 32x32: pretrain F, then fit J, G and D around
//! it, printing the losses of every epoch.

use daa_core::config::{desk_classifier, desk_net, PhantomOptions};
use daa_core::training::TrainConfig;
use daa_core::workflow::{phantom_dataset, pretrain_f, train_model};

fn main() -> daa_core::Result<()> {
    let data = phantom_dataset(&PhantomOptions { n: 60, size: 32, ..PhantomOptions::default() })?;
    let net = desk_net();
    let cls = daa_core::training::ClassifierTrainConfig { epochs: 10, ..desk_classifier() };
    let f = pretrain_f(&data, &net, &cls, 0)?;
    println!("F test accuracy {:.3}", f.test_accuracy);

    let cfg = TrainConfig {
        epochs: 3,
        generator_pretrain_epochs: 5,
        refiner_warmup_epochs: 1,
        ..TrainConfig::desk()
    };
    let out = train_model(&data, &net, f.classifier, &cfg, |e| {
        let l = &e.losses;
        println!(
            "epoch {}  L_D {:.3}  L_G {:.3}  L_path {:.3}  L_cons {:.3}  L_bg {:.3}",
            e.epoch, l.l_d, l.l_g, l.l_path, l.l_cons, l.l_bg
        );
    })?;
    println!("selected epoch {:?}", out.selected_epoch);
    print!("{}", out.log.to_csv());
    Ok(())
}
