//! The trained networks bundled together, and the synthesis pipeline
//! anatomy arithmetic -> blend mask -> refiner -> generator -> classifier.

use std::path::Path;

use daa_autograd::{Real, Tensor};

use crate::blend::{blend_from_support, default_blend_params, refine, BlendMask, Refiner};
use crate::error::{DaaError, Result};
use crate::factors::{apply_plan, morph_traverse, AnatomyTensor, ArithmeticPlan, Mask, MorphOp, SubjectStore};
use crate::nets::{Checkpoint, Classifier, Discriminator, Generator, ImagingFactor, NetConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: NetConfig,
    pub refiner: Refiner,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub classifier: Classifier,
    pub dilation_radius: usize,
    pub blur_sigma: Real,
}

/// Everything produced for one generated image.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub c_hat: AnatomyTensor,
    pub support: Mask,
    pub phi: BlendMask,
    pub c_tilde: AnatomyTensor,
    /// `[1, 1, H, W]` in `[-1, 1]`.
    pub image: Tensor,
    pub probs: Vec<Real>,
}

impl Synthesis {
    pub fn predicted(&self) -> (usize, Real) {
        argmax(&self.probs)
    }
}

pub fn argmax(p: &[Real]) -> (usize, Real) {
    p.iter()
        .enumerate()
        .fold((0, Real::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}

impl ModelBundle {
    /// Fresh J, G and D around an existing classifier.
    pub fn new(config: NetConfig, classifier: Classifier, seed: u64) -> Result<Self> {
        if classifier.config.height != config.height || classifier.config.width != config.width {
            return Err(DaaError::ShapeMismatch(format!(
                "classifier is {}x{}, model is {}x{}",
                classifier.config.height, classifier.config.width, config.height, config.width
            )));
        }
        let (r, s) = default_blend_params(config.height, config.width);
        Ok(Self {
            refiner: Refiner::new(config.channels, config.refiner_width, config.tau, seed.wrapping_add(1)),
            generator: Generator::new(config.generator_config(), seed.wrapping_add(2)),
            discriminator: Discriminator::new(config.disc_widths, seed.wrapping_add(3)),
            classifier,
            config,
            dilation_radius: r,
            blur_sigma: s,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push_meta("height", self.config.height as Real);
        c.push_meta("width", self.config.width as Real);
        c.push_meta("tau", self.config.tau);
        c.push_meta("dilation_radius", self.dilation_radius as Real);
        c.push_meta("blur_sigma", self.blur_sigma);
        c.push_params("refiner", &self.refiner.params);
        c.push_params("generator", &self.generator.params);
        c.push_params("discriminator", &self.discriminator.params);
        push_classifier(&mut c, &self.classifier);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| c.meta(k).ok_or_else(|| DaaError::format(0, format!("checkpoint lacks meta.{k}")));
        let (height, width) = (meta("height")? as usize, meta("width")? as usize);
        let tau = meta("tau")?;
        let refiner = Refiner::from_params(c.params("refiner"), tau)?;
        let generator = Generator::from_params(c.params("generator"))?;
        let discriminator = Discriminator::from_params(c.params("discriminator"))?;
        let classifier = classifier_from(c, height, width)?;
        let g = generator.config;
        let config = NetConfig {
            height,
            width,
            channels: refiner.channels,
            classes: classifier.config.classes,
            code_dim: g.code_dim,
            refiner_width: refiner.width,
            generator_width: g.width,
            mapper_hidden: g.mapper_hidden,
            disc_widths: discriminator.widths,
            classifier_width: classifier.config.base_width,
            classifier_fc: classifier.config.fc_hidden,
            tau: refiner.tau,
        };
        Ok(Self {
            config,
            refiner,
            generator,
            discriminator,
            classifier,
            dilation_radius: meta("dilation_radius")? as usize,
            blur_sigma: meta("blur_sigma")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Decode an anatomy with an imaging code, no refinement.
    pub fn render(&self, c: &AnatomyTensor, z: &ImagingFactor) -> Result<Tensor> {
        crate::nets::generate(c, z, &self.generator)
    }

    /// Compose, refine, decode and classify one plan.
    pub fn synthesize<S: SubjectStore + ?Sized>(
        &self,
        store: &S,
        plan: &ArithmeticPlan,
        z: &ImagingFactor,
        seed: u64,
    ) -> Result<Synthesis> {
        let base = store
            .anatomy(&plan.base_subject)
            .ok_or_else(|| DaaError::UnknownSubject(plan.base_subject.to_string()))?;
        let (c_hat, rec) = apply_plan(base, store, plan)?;
        self.synthesize_anatomy(c_hat, rec.modified_support, z, seed)
    }

    /// Refine, decode and classify an already composed anatomy whose edited
    /// pixels are `support`.
    pub fn synthesize_anatomy(&self, c_hat: AnatomyTensor, support: Mask, z: &ImagingFactor, seed: u64) -> Result<Synthesis> {
        let phi = blend_from_support(&support, self.dilation_radius, self.blur_sigma);
        let c_tilde = refine(&c_hat, &phi, &self.refiner, seed, true)?;
        let image = crate::nets::generate(&c_tilde, z, &self.generator)?;
        let probs = self.classifier.predict(&image)?.remove(0);
        Ok(Synthesis {
            c_hat,
            support,
            phi,
            c_tilde,
            image,
            probs,
        })
    }
}

/// One step of a factor traversal.
#[derive(Clone, Debug, PartialEq)]
pub struct TraverseStep {
    pub step: usize,
    /// The edited channel.
    pub factor: Mask,
    pub synthesis: Synthesis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub steps: Vec<TraverseStep>,
    /// First step at which erosion left the channel empty; later steps are
    /// not produced.
    pub emptied_at: Option<usize>,
}

/// Steps must be positive and strictly increasing.
pub fn check_steps(steps: &[usize]) -> Result<()> {
    if steps.first() == Some(&0) || steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DaaError::InvalidInput(format!("traversal steps must be positive and increasing, got {steps:?}")));
    }
    Ok(())
}

impl ModelBundle {
    /// Erode or dilate one channel by each step in turn and synthesize the
    /// result with the subject's own imaging factor.
    pub fn traverse(
        &self,
        c: &AnatomyTensor,
        z: &ImagingFactor,
        channel: usize,
        op: MorphOp,
        steps: &[usize],
        seed: u64,
    ) -> Result<Traversal> {
        check_steps(steps)?;
        let original = c.channel(channel.min(c.num_channels().saturating_sub(1)));
        let mut out = Vec::with_capacity(steps.len());
        for &step in steps {
            let edited = match morph_traverse(c, channel, op, step) {
                Ok(e) => e,
                Err(DaaError::EmptyFactor { .. }) => {
                    return Ok(Traversal {
                        steps: out,
                        emptied_at: Some(step),
                    })
                }
                Err(e) => return Err(e),
            };
            let factor = edited.channel(channel);
            let support = factor.xor(&original);
            let synthesis = self.synthesize_anatomy(edited, support, z, seed)?;
            out.push(TraverseStep { step, factor, synthesis });
        }
        Ok(Traversal {
            steps: out,
            emptied_at: None,
        })
    }
}

pub fn push_classifier(c: &mut Checkpoint, f: &Classifier) {
    c.push_params("classifier", &f.params);
    c.push_params("classifier_stats", &f.buffers);
}

pub fn classifier_from(c: &Checkpoint, height: usize, width: usize) -> Result<Classifier> {
    Classifier::from_params(c.params("classifier"), c.params("classifier_stats"), height, width)
}

/// Stand-alone classifier checkpoint.
pub fn save_classifier(f: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Checkpoint::new();
    c.push_meta("height", f.config.height as Real);
    c.push_meta("width", f.config.width as Real);
    push_classifier(&mut c, f);
    c.save(path)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<Classifier> {
    let c = Checkpoint::load(path)?;
    let meta = |k: &str| c.meta(k).ok_or_else(|| DaaError::format(0, format!("checkpoint lacks meta.{k}")));
    classifier_from(&c, meta("height")? as usize, meta("width")? as usize)
}
