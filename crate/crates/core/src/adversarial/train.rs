//! Alternating discriminator / generator optimization.

use std::sync::Arc;

use autoseg_nn::{Adam, Graph, ParamSet};
use log::{debug, info};
use ndarray::{Array4, s};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{build_discriminator_with, Discriminator, DiscriminatorSpec};
use super::loss::{discriminator_terms, generator_terms, EPS_DICE, EPS_LOG};
use crate::augment::{augment_copy, AugmentParams};
use crate::cascade::Segmenter;
use crate::data::{SliceSample, TrainingModality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    /// Weight of the dice term in the generator loss.
    pub lambda_weight: f64,
    pub use_adversarial: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub epsilon_log: f64,
    pub epsilon_dice: f64,
    pub discriminator_width: f64,
    /// Keep stage 1 of a cascade fixed.
    pub freeze_stage1: bool,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self::ct()
    }
}

impl AdversarialConfig {
    pub fn ct() -> Self {
        Self {
            lambda_weight: 150.0,
            use_adversarial: true,
            epochs: 6,
            batch_size: 3,
            learning_rate: 1e-5,
            seed: 0,
            epsilon_log: EPS_LOG,
            epsilon_dice: EPS_DICE,
            discriminator_width: 1.0,
            freeze_stage1: false,
        }
    }

    pub fn mr() -> Self {
        Self {
            epochs: 20,
            batch_size: 5,
            ..Self::ct()
        }
    }

    pub fn for_modality(m: TrainingModality) -> Self {
        if m.is_mr() {
            Self::mr()
        } else {
            Self::ct()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("training.{what}")));
        if !(self.lambda_weight.is_finite() && self.lambda_weight >= 0.0) {
            return bad("lambda_weight must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log < 1.0) {
            return bad("epsilon_log must lie in (0, 1)");
        }
        if !(self.epsilon_dice.is_finite() && self.epsilon_dice > 0.0) {
            return bad("epsilon_dice must be positive");
        }
        if !(self.discriminator_width.is_finite() && self.discriminator_width > 0.0) {
            return bad("discriminator_width must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_g: f64,
    pub l_d: f64,
    pub l_dice: f64,
    pub adv_term: f64,
}

/// Stacks samples into a `B x H x W x 3` input and `B x H x W x 1` target.
pub fn stack_batch(samples: &[&SliceSample]) -> Result<(Array4<f64>, Array4<f64>)> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    let mut x = Array4::zeros((samples.len(), h, w, 3));
    let mut y = Array4::zeros((samples.len(), h, w, 1));
    for (b, smp) in samples.iter().enumerate() {
        if (smp.height(), smp.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {h}x{w} and {}x{} slices",
                smp.height(),
                smp.width()
            )));
        }
        x.slice_mut(s![b, .., .., ..]).assign(&smp.input);
        y.slice_mut(s![b, .., .., 0]).assign(&smp.target.mapv(f64::from));
    }
    Ok((x, y))
}

fn finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("{what} = {v}"),
        })
    }
}

/// Owns the models and optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    segmenter: Segmenter,
    discriminator: Option<Discriminator>,
    config: AdversarialConfig,
    opt_g: Adam,
    opt_d: Adam,
    trainable: ParamSet,
    step: usize,
}

impl Trainer {
    /// Builds the discriminator (when adversarial) from `config.seed`.
    pub fn new(segmenter: Segmenter, config: AdversarialConfig) -> Result<Self> {
        config.validate()?;
        let discriminator = if config.use_adversarial {
            let spec = DiscriminatorSpec::new(segmenter.in_channels() + 1).width(config.discriminator_width);
            Some(build_discriminator_with(spec, config.seed ^ 0xD15C)?)
        } else {
            None
        };
        Self::with_discriminator(segmenter, discriminator, config)
    }

    pub fn with_discriminator(
        segmenter: Segmenter,
        discriminator: Option<Discriminator>,
        config: AdversarialConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.use_adversarial != discriminator.is_some() {
            return Err(Error::Config(
                "a discriminator is required exactly when use_adversarial is set".into(),
            ));
        }
        if let Some(d) = &discriminator {
            if d.spec().in_channels != segmenter.in_channels() + 1 {
                return Err(Error::Spec(format!(
                    "discriminator takes {} channels, expected {}",
                    d.spec().in_channels,
                    segmenter.in_channels() + 1
                )));
            }
        }
        let mut trainable = segmenter.parameters();
        if config.freeze_stage1 {
            match &segmenter {
                Segmenter::Cascade(c) => trainable.remove_store(c.stage1.store()),
                Segmenter::Single(_) => {
                    return Err(Error::Config("freeze_stage1 needs a cascaded variant".into()))
                }
            }
        }
        Ok(Self {
            segmenter,
            discriminator,
            config,
            opt_g: Adam::new(config.learning_rate),
            opt_d: Adam::new(config.learning_rate),
            trainable,
            step: 0,
        })
    }

    pub fn segmenter(&self) -> &Segmenter {
        &self.segmenter
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    pub fn config(&self) -> &AdversarialConfig {
        &self.config
    }

    pub fn trainable(&self) -> &ParamSet {
        &self.trainable
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn into_parts(self) -> (Segmenter, Option<Discriminator>) {
        (self.segmenter, self.discriminator)
    }

    /// One discriminator update on `(x, y)` versus `(x, G(x))`, then one
    /// generator update against the freshly updated discriminator. Without
    /// adversarial training only `lambda * dice` is minimized.
    ///
    /// Losses are checked before any parameter changes, so a non-finite
    /// step leaves the models untouched where it fails.
    pub fn train_step(&mut self, x: &Array4<f64>, y: &Array4<f64>) -> Result<LossRecord> {
        self.segmenter.check_input(x.shape())?;
        let (b, h, w, _) = x.dim();
        if y.dim() != (b, h, w, 1) {
            return Err(Error::Shape(format!(
                "target batch is {:?}, expected {:?}",
                y.dim(),
                (b, h, w, 1)
            )));
        }
        let step = self.step;
        let cfg = self.config;
        let mut g = Graph::new();
        let xn = g.input(x.clone().into_dyn());
        let pred = self.segmenter.forward_graph(&mut g, xn)?;
        let target = Arc::new(y.clone().into_dyn());

        let (l_d, d_fake) = match &mut self.discriminator {
            Some(d) => {
                let mut gd = Graph::new();
                let src = gd.input(x.clone().into_dyn());
                let real = gd.input(y.clone().into_dyn());
                let fake = gd.input(g.value(pred).clone());
                let d_real = d.forward_graph(&mut gd, src, real)?;
                let d_fake = d.forward_graph(&mut gd, src, fake)?;
                let loss = discriminator_terms(&mut gd, d_real, d_fake, cfg.epsilon_log);
                let l_d = finite(step, "l_D", gd.scalar(loss))?;
                let grads = gd.backward(loss);
                drop(gd);
                let params = d.parameters();
                self.opt_d.step(&mut [d.store_mut()], &grads, &params);
                (l_d, Some(d.forward_graph_frozen(&mut g, xn, pred)?))
            }
            None => (0.0, None),
        };

        let terms = generator_terms(
            &mut g,
            d_fake,
            pred,
            target,
            cfg.lambda_weight,
            cfg.epsilon_log,
            cfg.epsilon_dice,
        );
        let l_g = finite(step, "l_G", g.scalar(terms.total))?;
        let l_dice = g.scalar(terms.dice);
        let adv_term = terms.adversarial.map_or(0.0, |a| g.scalar(a));
        let grads = g.backward(terms.total);
        drop(g);
        self.opt_g.step(&mut self.segmenter.stores_mut(), &grads, &self.trainable);
        self.step += 1;
        let rec = LossRecord {
            step,
            l_g,
            l_d,
            l_dice,
            adv_term,
        };
        debug!("step {step}: l_G {l_g:.6} l_D {l_d:.6} dice {l_dice:.6}");
        Ok(rec)
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trainer: Trainer,
    pub records: Vec<LossRecord>,
}

/// Trains for `config.epochs` passes over every (slice, augmented copy)
/// pair, in a seeded shuffled order. Without augmentation each epoch is one
/// pass over the slices themselves.
pub fn train(
    dataset: &[SliceSample],
    segmenter: Segmenter,
    config: AdversarialConfig,
    augment: Option<&AugmentParams>,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(a) = augment {
        a.validate()?;
    }
    let mut trainer = Trainer::new(segmenter, config)?;
    let copies = augment.map_or(1, |a| a.copies);
    let mut units: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|i| (0..copies).map(move |c| (i, c)))
        .collect();
    let mut records = Vec::new();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64).rotate_left(17) ^ 0xE90C);
        units.sort_unstable();
        units.shuffle(&mut rng);
        for chunk in units.chunks(config.batch_size) {
            let owned: Vec<SliceSample> = match augment {
                Some(a) => chunk.iter().map(|&(i, c)| augment_copy(&dataset[i], a, c)).collect(),
                None => chunk.iter().map(|&(i, _)| dataset[i].clone()).collect(),
            };
            let refs: Vec<&SliceSample> = owned.iter().collect();
            let (x, y) = stack_batch(&refs)?;
            records.push(trainer.train_step(&x, &y)?);
        }
        if let Some(last) = records.last() {
            info!("epoch {}/{}: l_G {:.6} dice loss {:.6}", epoch + 1, config.epochs, last.l_g, last.l_dice);
        }
    }
    Ok(TrainReport { trainer, records })
}
