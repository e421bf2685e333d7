//! Alternating adversarial optimization.
//!
//! Each batch runs the generator forward once in training mode. The
//! discriminator then learns from real pairs `(I, M)` labelled 1 and fake
//! pairs `(I, Ĝ(I))` labelled 0, with the prediction treated as a constant.
//! Finally the generator is updated through the frozen discriminator on
//! `seg_loss + λ_adv · adv_term`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{collate, sample_rng, AugmentConfig, ImageSample};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{config_err, shape_err, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{adversarial_generator_grad, batch_seg_loss, discriminator_loss_grad, LossConfig, LossTerms};
use crate::nn::{export_values, import_values, zero_grad, Backprop, Module, NormStats};
use crate::optim::{Adam, AdamState};
use crate::{Error, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch_size: usize,
    /// Total optimizer steps (one batch each).
    pub steps: u64,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Save every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Relative to the run's output directory.
    pub checkpoint_dir: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 1e-4,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            d_steps_per_g_step: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-7,
            checkpoint_every: 0,
            checkpoint_dir: "checkpoints".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite()) {
            return Err(config_err!("learning rates must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("train.batch_size must be at least 1"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return Err(config_err!("Adam needs betas in [0, 1) and a positive epsilon"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: u64,
    pub seg_loss: f64,
    pub adv_term: f64,
    pub g_total: f64,
    pub d_loss: f64,
    /// Seconds since training started; filled in by the caller's clock.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

/// Generator-side result of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStep {
    pub seg_loss: f64,
    pub adv_term: f64,
    pub terms: LossTerms,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub generator: Vec<Vec<f32>>,
    pub discriminator: Vec<Vec<f32>>,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub step: u64,
    /// Caller-defined digest of the run configuration.
    pub fingerprint: u64,
}

impl Checkpoint {
    /// Rebuilds the generator with the stored weights.
    pub fn generator(&self) -> Result<Generator> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Generator::new(self.model.generator.clone(), &mut rng).map_err(incompatible)?;
        import_values(&mut g, &self.generator)?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Discriminator::new(self.model.discriminator.clone(), &mut rng).map_err(incompatible)?;
        import_values(&mut d, &self.discriminator)?;
        Ok(d)
    }
}

fn incompatible(e: Error) -> Error {
    Error::Checkpoint(alloc::format!("stored model configuration is unusable: {e}"))
}

/// Image and mask batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&ImageSample]) -> Result<Self> {
        let (images, masks) = collate(samples)?;
        Ok(Self { images, masks })
    }
}

fn split_items(t: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape();
    let item = s.h * s.w * s.c;
    let (a, b) = t.data().split_at(first * item);
    Ok((
        Tensor::from_vec(crate::Shape { n: first, ..s }, a.to_vec())?,
        Tensor::from_vec(crate::Shape { n: s.n - first, ..s }, b.to_vec())?,
    ))
}

pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    model: ModelConfig,
    loss: LossConfig,
    train: TrainConfig,
    step: u64,
}

impl Trainer {
    /// Fresh networks initialised from `train.seed`.
    pub fn new(model: ModelConfig, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        loss.validate()?;
        train.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let generator = Generator::new(model.generator.clone(), &mut rng)?;
        let discriminator = Discriminator::new(model.discriminator.clone(), &mut rng)?;
        let opt_g = Adam::new(train.lr_g, train.beta1, train.beta2, train.adam_eps);
        let opt_d = Adam::new(train.lr_d, train.beta1, train.beta2, train.adam_eps);
        Ok(Self { generator, discriminator, opt_g, opt_d, model, loss, train, step: 0 })
    }

    /// Resumes from a checkpoint; the model configuration comes from it.
    pub fn from_checkpoint(ckpt: &Checkpoint, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        let mut t = Self::new(ckpt.model.clone(), loss, train)?;
        t.generator = ckpt.generator()?;
        t.discriminator = ckpt.discriminator()?;
        t.opt_g.set_state(ckpt.opt_g.clone());
        t.opt_d.set_state(ckpt.opt_d.clone());
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self, fingerprint: u64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            generator: export_values(&self.generator),
            discriminator: export_values(&self.discriminator),
            opt_g: self.opt_g.state().clone(),
            opt_d: self.opt_d.state().clone(),
            step: self.step,
            fingerprint,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        let size = self.model.generator.input_size;
        let (si, sm) = (b.images.shape(), b.masks.shape());
        if si.h != size || si.w != size || si.c != 3 || sm != si.with_channels(1) {
            return Err(shape_err!("batch {si}/{sm} does not match the {size}×{size} model"));
        }
        Ok(())
    }

    /// Discriminator update against a fixed prediction.
    fn update_discriminator(&mut self, b: &Batch, fake: &Tensor) -> Result<f64> {
        let n = b.images.shape().n;
        let images = Tensor::stack(&[&b.images, &b.images])?;
        let masks = Tensor::stack(&[&b.masks, fake])?;
        let patches = self.discriminator.forward_train_pair(&images, &masks)?;
        let (real, fake_patch) = split_items(&patches, n)?;
        let (loss, g_real, g_fake) = discriminator_loss_grad(&real, &fake_patch, self.loss.clip)?;
        zero_grad(&mut self.discriminator);
        self.discriminator.backward_to_mask(&Tensor::stack(&[&g_real, &g_fake])?, Backprop::FULL, false);
        self.opt_d.step(&mut self.discriminator)?;
        Ok(loss)
    }

    /// Generator update from the prediction of the preceding
    /// `forward_train`.
    fn update_generator(&mut self, b: &Batch, pred: &Tensor) -> Result<GeneratorStep> {
        let (seg_loss, mut grad, terms) = batch_seg_loss(&b.masks, pred, &self.loss)?;
        let lambda = self.loss.lambda_adv;
        let adv_term = if lambda != 0.0 {
            let patch = self.discriminator.forward_train_pair(&b.images, pred)?;
            let (adv, g_patch) = adversarial_generator_grad(&patch, self.loss.clip)?;
            let g_patch = g_patch.map(|g| g * lambda as f32);
            let g_mask = self.discriminator.backward_to_mask(&g_patch, Backprop::INPUT_ONLY, true).expect("mask gradient");
            grad.add_assign(&g_mask);
            adv
        } else {
            let patch = self.discriminator.forward(&b.images, pred)?;
            adversarial_generator_grad(&patch, self.loss.clip)?.0
        };
        zero_grad(&mut self.generator);
        self.generator.backward(&grad, Backprop::FULL);
        self.opt_g.step(&mut self.generator)?;
        Ok(GeneratorStep { seg_loss, adv_term, terms })
    }

    /// One discriminator update with the generator frozen. The prediction
    /// uses batch statistics without touching the generator's running
    /// averages.
    pub fn discriminator_step(&mut self, b: &Batch) -> Result<f64> {
        self.check_batch(b)?;
        let fake = self.generator.forward_with(&b.images, NormStats::Batch)?;
        self.update_discriminator(b, &fake)
    }

    /// One generator update with the discriminator frozen.
    pub fn generator_step(&mut self, b: &Batch) -> Result<GeneratorStep> {
        self.check_batch(b)?;
        self.generator.check_image(&b.images)?;
        let pred = self.generator.forward_train(&b.images);
        self.update_generator(b, &pred)
    }

    /// Discriminator-free reference update on the segmentation loss alone.
    pub fn supervised_step(&mut self, b: &Batch) -> Result<f64> {
        self.check_batch(b)?;
        self.generator.check_image(&b.images)?;
        let pred = self.generator.forward_train(&b.images);
        let (loss, grad, _) = batch_seg_loss(&b.masks, &pred, &self.loss)?;
        zero_grad(&mut self.generator);
        self.generator.backward(&grad, Backprop::FULL);
        self.opt_g.step(&mut self.generator)?;
        Ok(loss)
    }

    /// `d_steps_per_g_step` discriminator updates, then one generator
    /// update, sharing a single generator forward pass.
    pub fn train_step(&mut self, b: &Batch) -> Result<StepRecord> {
        self.check_batch(b)?;
        self.generator.check_image(&b.images)?;
        let pred = self.generator.forward_train(&b.images);
        let mut d_loss = 0.0;
        for _ in 0..self.train.d_steps_per_g_step {
            d_loss = self.update_discriminator(b, &pred)?;
        }
        let g = self.update_generator(b, &pred)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            seg_loss: g.seg_loss,
            adv_term: g.adv_term,
            g_total: g.seg_loss + self.loss.lambda_adv * g.adv_term,
            d_loss,
            wall_clock_s: 0.0,
        })
    }

    /// Dataset indices of global step `step` (0-based): a seeded shuffle per
    /// epoch, cut into consecutive batches, the last one possibly short.
    pub fn batch_indices(&self, step: u64, n_samples: usize) -> (u64, Vec<usize>) {
        let bs = self.train.batch_size.min(n_samples);
        let per_epoch = n_samples.div_ceil(bs) as u64;
        let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut sample_rng(self.train.seed, epoch, u64::MAX));
        let end = ((k + 1) * bs).min(n_samples);
        (epoch, order[k * bs..end].to_vec())
    }

    /// Trains until `train.steps` global steps have run. `on_step` sees
    /// every record (and may stamp its clock) before it is logged.
    pub fn fit(
        &mut self,
        data: &[ImageSample],
        augment: &AugmentConfig,
        mut on_step: impl FnMut(&mut StepRecord, &Trainer) -> Result<()>,
    ) -> Result<TrainLog> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        augment.validate()?;
        for s in data {
            s.validate()?;
        }
        let mut log = TrainLog::default();
        while self.step < self.train.steps {
            let (epoch, idx) = self.batch_indices(self.step, data.len());
            let owned: Vec<ImageSample> = idx
                .iter()
                .map(|&i| {
                    if augment.enabled {
                        augment.augment(&data[i], &mut sample_rng(augment.seed, epoch, i as u64))
                    } else {
                        data[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&ImageSample> = owned.iter().collect();
            let mut rec = self.train_step(&Batch::from_samples(&refs)?)?;
            on_step(&mut rec, self)?;
            log.records.push(rec);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::nn::Module;

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            generator: GeneratorConfig {
                input_size: 32,
                stem_width: 4,
                stage_widths: alloc::vec![4, 4, 6, 6, 8, 8],
                decoder_widths: alloc::vec![8, 6, 4, 4],
                se_ratio: 2,
                parameter_budget: alloc::vec![],
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                conv_filters: alloc::vec![4, 4, 6, 8, 8],
                convcrf_channels: alloc::vec![4, 2, 1],
                ..DiscriminatorConfig::default()
            },
        }
    }

    fn data() -> Vec<ImageSample> {
        generate_synthetic(&SyntheticSpec { n_samples: 5, size: 32, blob_radius: [3.0, 8.0], ..SyntheticSpec::default() })
            .unwrap()
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig { batch_size: 2, steps: 3, lr_g: 1e-3, lr_d: 1e-3, ..TrainConfig::default() }
    }

    fn values(m: &dyn Module) -> Vec<Vec<f32>> {
        export_values(m)
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let t = Trainer::new(tiny_model(), LossConfig::default(), train_cfg()).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|s| t.batch_indices(s, 5).1).collect();
        assert_eq!(t.batch_indices(2, 5).1.len(), 1);
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
        assert_eq!(t.batch_indices(3, 5).0, 1);
    }

    #[test]
    fn frozen_networks_do_not_move() {
        let data = data();
        let refs: Vec<&ImageSample> = data.iter().take(2).collect();
        let b = Batch::from_samples(&refs).unwrap();
        let mut t = Trainer::new(tiny_model(), LossConfig::default(), train_cfg()).unwrap();
        let g0 = values(&t.generator);
        let d0 = values(&t.discriminator);
        t.discriminator_step(&b).unwrap();
        assert_eq!(values(&t.generator), g0);
        assert_ne!(values(&t.discriminator), d0);
        let d1 = values(&t.discriminator);
        t.generator_step(&b).unwrap();
        assert_eq!(values(&t.discriminator), d1);
        assert_ne!(values(&t.generator), g0);
    }

    #[test]
    fn zero_learning_rates_freeze_weights() {
        let data = data();
        let refs: Vec<&ImageSample> = data.iter().take(2).collect();
        let b = Batch::from_samples(&refs).unwrap();
        let cfg = TrainConfig { lr_g: 0.0, lr_d: 0.0, ..train_cfg() };
        let mut t = Trainer::new(tiny_model(), LossConfig::default(), cfg).unwrap();
        let trainable = |m: &dyn Module| {
            let mut v = Vec::new();
            m.visit(&mut |p| {
                if p.is_trainable() {
                    v.push(p.value.clone())
                }
            });
            v
        };
        let (g0, d0) = (trainable(&t.generator), trainable(&t.discriminator));
        t.train_step(&b).unwrap();
        assert_eq!(trainable(&t.generator), g0);
        assert_eq!(trainable(&t.discriminator), d0);
    }

    #[test]
    fn fit_is_deterministic_and_resumable() {
        let data = data();
        let run = |steps| {
            let mut t = Trainer::new(tiny_model(), LossConfig::default(), TrainConfig { steps, ..train_cfg() }).unwrap();
            let log = t.fit(&data, &AugmentConfig::default(), |_, _| Ok(())).unwrap();
            (t, log)
        };
        let (full, log_a) = run(4);
        let (_, log_b) = run(4);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.records.iter().map(|r| r.step).collect::<Vec<_>>(), [1, 2, 3, 4]);

        let (half, _) = run(2);
        let ckpt = half.checkpoint(7);
        let mut resumed = Trainer::from_checkpoint(&ckpt, LossConfig::default(), TrainConfig { steps: 4, ..train_cfg() }).unwrap();
        let log_c = resumed.fit(&data, &AugmentConfig::default(), |_, _| Ok(())).unwrap();
        assert_eq!(log_c.records, log_a.records[2..]);
        assert_eq!(values(&resumed.generator), values(&full.generator));
    }

    #[test]
    fn zero_steps_checkpoint_is_initialization() {
        let mut t = Trainer::new(tiny_model(), LossConfig::default(), TrainConfig { steps: 0, ..train_cfg() }).unwrap();
        let init = t.checkpoint(0);
        let log = t.fit(&data(), &AugmentConfig::default(), |_, _| Ok(())).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(t.checkpoint(0), init);
        let g = init.generator().unwrap();
        assert_eq!(values(&g), values(&t.generator));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut t = Trainer::new(tiny_model(), LossConfig::default(), train_cfg()).unwrap();
        assert_eq!(t.fit(&[], &AugmentConfig::default(), |_, _| Ok(())).unwrap_err(), Error::EmptyDataset);
    }
}
