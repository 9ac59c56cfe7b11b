use daa_autograd::{Adam, Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::batch::TrainingBatch;
use super::config::TrainConfig;
use super::losses::{adv_d_var, adv_g_var, masked_l1_var, path_var, total_var, LossWeights};
use crate::blend::RefinerNoise;
use crate::error::{DaaError, Result};
use crate::model::ModelBundle;
use crate::nets::init::rng;

/// Graph nodes of the J/G objective.
pub struct GeneratorTerms {
    pub c_tilde: Var,
    pub image: Var,
    pub adv: Var,
    pub path: Var,
    pub cons: Var,
    pub bg: Var,
    pub total: Var,
}

/// Variables of the four networks bound into one graph.
pub struct Bound {
    pub j: Vec<Var>,
    pub g: Vec<Var>,
    pub d: Vec<Var>,
    pub f: Vec<Var>,
}

impl Bound {
    pub fn new(graph: &Graph, m: &ModelBundle, train_j: bool, train_g: bool, train_d: bool) -> Self {
        Self {
            j: m.refiner.params.bind(graph, train_j),
            g: m.generator.params.bind(graph, train_g),
            d: m.discriminator.params.bind(graph, train_d),
            f: m.classifier.params.bind(graph, false),
        }
    }
}

/// `L_G + L_path + λ1 (L_cons + L_bg)` for one batch.
pub fn generator_terms(
    graph: &Graph,
    m: &ModelBundle,
    v: &Bound,
    batch: &TrainingBatch,
    noise: &RefinerNoise,
    weights: &LossWeights,
    hard: bool,
) -> GeneratorTerms {
    let c_hat = graph.constant(batch.c_hat.clone());
    let c_tilde = m.refiner.forward(graph, &v.j, c_hat, noise, hard);
    let code = graph.constant(batch.code.clone());
    let image = m.generator.forward(graph, &v.g, c_tilde, code);
    let fake_mask = graph.constant(batch.fake_mask.clone());
    let adv = adv_g_var(graph, m.discriminator.forward_masked(graph, &v.d, image, fake_mask));
    let logits = m.classifier.forward(graph, &v.f, image, false).logits;
    let path = path_var(graph, logits, &batch.labels);
    let cons = masked_l1_var(graph, c_hat, c_tilde, &batch.phi);
    let base = graph.constant(batch.base_image.clone());
    let bg = masked_l1_var(graph, base, image, &batch.bg_mask);
    let total = total_var(graph, adv, path, cons, bg, weights);
    GeneratorTerms {
        c_tilde,
        image,
        adv,
        path,
        cons,
        bg,
        total,
    }
}

/// `½(D(M'·I') - 1)² + ½ D(M̂·Ĩ)²`, batch-averaged.
pub fn discriminator_loss(graph: &Graph, m: &ModelBundle, d: &[Var], batch: &TrainingBatch, fake: &Tensor) -> Var {
    let real = m.discriminator.forward_masked(
        graph,
        d,
        graph.constant(batch.donor_image.clone()),
        graph.constant(batch.donor_mask.clone()),
    );
    let fake = m.discriminator.forward_masked(
        graph,
        d,
        graph.constant(fake.clone()),
        graph.constant(batch.fake_mask.clone()),
    );
    adv_d_var(graph, real, fake)
}

/// Loss values of one step. `l_d` is measured before the D update, the
/// others before the J/G update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub l_d: Real,
    pub l_g: Real,
    pub l_path: Real,
    pub l_cons: Real,
    pub l_bg: Real,
    pub l_total: Real,
}

impl StepReport {
    fn finite(&self) -> bool {
        [self.l_d, self.l_g, self.l_path, self.l_cons, self.l_bg, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Model and optimizer state for adversarial training. F is never updated.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    opt_j: Adam,
    opt_g: Adam,
    opt_d: Adam,
    steps: u64,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let a = config.adam();
        Ok(Self {
            opt_j: Adam::new(a, bundle.refiner.params.tensors()),
            opt_g: Adam::new(a, bundle.generator.params.tensors()),
            opt_d: Adam::new(a, bundle.discriminator.params.tensors()),
            bundle,
            config,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One D update on masked real and fake images, then one J/G update.
    pub fn train_step(&mut self, batch: &TrainingBatch, seed: u64) -> Result<StepReport> {
        let step = self.steps;
        self.steps += 1;
        let noise = self.bundle.refiner.draw_noise(&batch.phi, &mut rng(seed));
        let hard = self.config.hard;
        let weights = self.config.weights();

        let fake = {
            let g = Graph::new();
            let j = self.bundle.refiner.params.bind(&g, false);
            let gv = self.bundle.generator.params.bind(&g, false);
            let c = self.bundle.refiner.forward(&g, &j, g.constant(batch.c_hat.clone()), &noise, hard);
            let img = self.bundle.generator.forward(&g, &gv, c, g.constant(batch.code.clone()));
            let out = g.value(img).clone();
            out
        };

        let l_d = {
            let g = Graph::new();
            let d = self.bundle.discriminator.params.bind(&g, true);
            let loss = discriminator_loss(&g, &self.bundle, &d, batch, &fake);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(step, "L_D", value));
            }
            let grads = self.bundle.discriminator.params.grads(&g.backward(loss), &d);
            self.opt_d.step(self.bundle.discriminator.params.tensors_mut(), &grads);
            value
        };

        let (train_j, train_g) = (!self.config.freeze_refiner, !self.config.freeze_generator);
        let g = Graph::new();
        let v = Bound::new(&g, &self.bundle, train_j, train_g, false);
        let t = generator_terms(&g, &self.bundle, &v, batch, &noise, &weights, hard);
        let report = StepReport {
            l_d,
            l_g: g.value(t.adv).item(),
            l_path: g.value(t.path).item(),
            l_cons: g.value(t.cons).item(),
            l_bg: g.value(t.bg).item(),
            l_total: g.value(t.total).item(),
        };
        if !report.finite() {
            return Err(DaaError::NonFiniteLoss {
                step,
                diagnostics: format!("{report:?}"),
            });
        }
        if train_j || train_g {
            let grads = g.backward(t.total);
            if train_j {
                let gj = self.bundle.refiner.params.grads(&grads, &v.j);
                self.opt_j.step(self.bundle.refiner.params.tensors_mut(), &gj);
            }
            if train_g {
                let gg = self.bundle.generator.params.grads(&grads, &v.g);
                self.opt_g.step(self.bundle.generator.params.tensors_mut(), &gg);
            }
        }
        Ok(report)
    }
}

fn non_finite(step: u64, what: &str, value: Real) -> DaaError {
    DaaError::NonFiniteLoss {
        step,
        diagnostics: format!("{what} = {value}"),
    }
}
