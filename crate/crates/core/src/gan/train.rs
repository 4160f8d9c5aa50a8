use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{discriminator_loss_node, generator_loss_node, wgan_critic_loss_node, wgan_generator_loss_node};
use super::optim::{optimizer_step, OptimizerKind};
use super::{Conditioning, GanModel, Mode};
use crate::data::{augment_flip, ImagePair};
use crate::rng::{mix_seed, rng_from_seed, Rng};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x74_7261_696e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    pub optimizer: OptimizerKind,
    /// Critic weight clip, Wasserstein mode only.
    pub clip_w: f64,
    pub seed: u64,
    /// Defaults to 1 in standard mode and 5 in Wasserstein mode.
    pub d_steps_per_g_step: Option<usize>,
    /// Random horizontal/vertical flips of each training pair.
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate_g: 2e-4,
            learning_rate_d: 2e-4,
            optimizer: OptimizerKind::default(),
            clip_w: 0.01,
            seed: 0,
            d_steps_per_g_step: None,
            augment: true,
        }
    }
}

impl TrainingConfig {
    pub fn d_steps(&self, mode: Mode) -> usize {
        self.d_steps_per_g_step.unwrap_or(match mode {
            Mode::Standard => 1,
            Mode::Wasserstein => 5,
        })
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        for (name, lr) in [("learning_rate_g", self.learning_rate_g), ("learning_rate_d", self.learning_rate_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {lr}")));
            }
        }
        if mode == Mode::Wasserstein && !(self.clip_w > 0.0 && self.clip_w.is_finite()) {
            return Err(Error::invalid(format!("clip_w must be > 0, got {}", self.clip_w)));
        }
        if self.d_steps_per_g_step == Some(0) {
            return Err(Error::invalid("d_steps_per_g_step must be >= 1"));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Loss table without wall-clock times, so equal runs give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_G,L_D,mean_D_real,mean_D_fake\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.generator_loss, r.discriminator_loss, r.mean_d_real, r.mean_d_fake
            ));
        }
        out
    }
}

/// One training batch: generator inputs and real target images.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[m, 1, H, W]` modality-A images, or `[m, latent]` noise.
    pub source: Tensor,
    /// `[m, 1, H, W]` modality-B images.
    pub target: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of one discriminator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct BatchStats {
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

/// Emitted after every parameter update.
#[derive(Clone, Copy, Debug)]
pub enum TrainEvent<'a> {
    Discriminator { model: &'a GanModel, stats: StepStats },
    Generator { model: &'a GanModel, loss: f64 },
}

fn mean_of(g: &Graph, v: Var) -> f64 {
    let d = g.value(v).data();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Builds the discriminator objective for `batch` with only the
/// discriminator parameters tracked.
pub(crate) fn discriminator_graph(
    model: &GanModel,
    batch: &Batch,
) -> Result<(Graph, crate::nn::BoundParams, Var, StepStats)> {
    let mut g = Graph::new();
    let gp = model.generator.params.bind(&mut g, false);
    let dp = model.discriminator.params.bind(&mut g, true);
    let src = g.constant(batch.source.clone());
    let real = g.constant(batch.target.clone());
    let fake = model.generate_node(&mut g, &gp, src)?;
    let (_, d_real) = model.discriminate_node(&mut g, &dp, src, real)?;
    let (_, d_fake) = model.discriminate_node(&mut g, &dp, src, fake)?;
    let loss = match model.mode {
        Mode::Standard => discriminator_loss_node(&mut g, d_real, d_fake)?,
        Mode::Wasserstein => wgan_critic_loss_node(&mut g, d_real, d_fake)?,
    };
    let stats = StepStats {
        loss: g.value(loss).item()?,
        mean_d_real: mean_of(&g, d_real),
        mean_d_fake: mean_of(&g, d_fake),
    };
    Ok((g, dp, loss, stats))
}

/// Discriminator objective on `batch` without updating anything.
pub fn discriminator_objective(model: &GanModel, batch: &Batch) -> Result<f64> {
    Ok(discriminator_graph(model, batch)?.3.loss)
}

/// One discriminator (critic) update; Wasserstein critics are clipped
/// afterwards. Returns the pre-update loss and scores.
pub fn discriminator_step(model: &mut GanModel, batch: &Batch, cfg: &TrainingConfig) -> Result<StepStats> {
    let (g, dp, loss, stats) = discriminator_graph(model, batch)?;
    let grads = dp.gradients(&g.backward(loss)?);
    optimizer_step(
        &mut model.discriminator.params,
        &grads,
        &cfg.optimizer,
        cfg.learning_rate_d,
        &mut model.discriminator_opt,
    )?;
    if model.mode == Mode::Wasserstein {
        model.discriminator.params.clamp_all(cfg.clip_w);
    }
    Ok(stats)
}

/// One generator update. Returns the pre-update generator loss.
pub fn generator_step(model: &mut GanModel, batch: &Batch, cfg: &TrainingConfig) -> Result<f64> {
    let mut g = Graph::new();
    let gp = model.generator.params.bind(&mut g, true);
    let dp = model.discriminator.params.bind(&mut g, false);
    let src = g.constant(batch.source.clone());
    let fake = model.generate_node(&mut g, &gp, src)?;
    let (_, d_fake) = model.discriminate_node(&mut g, &dp, src, fake)?;
    let loss = match model.mode {
        Mode::Standard => generator_loss_node(&mut g, d_fake)?,
        Mode::Wasserstein => wgan_generator_loss_node(&mut g, d_fake)?,
    };
    let value = g.value(loss).item()?;
    let grads = gp.gradients(&g.backward(loss)?);
    optimizer_step(
        &mut model.generator.params,
        &grads,
        &cfg.optimizer,
        cfg.learning_rate_g,
        &mut model.generator_opt,
    )?;
    Ok(value)
}

/// Stacks single-image tensors along the batch axis.
fn stack(images: &[Tensor]) -> Result<Tensor> {
    let mut shape = images[0].shape().to_vec();
    shape[0] = images.len();
    let data = images.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

/// The epoch/batch loop shared by GAN and student training: per-epoch seeded
/// shuffle, per-pair flips, and per-batch noise all come from one stream.
pub(crate) fn run_epochs(
    model: &GanModel,
    data: &[ImagePair],
    cfg: &TrainingConfig,
    mut step: impl FnMut(&Batch) -> Result<BatchStats>,
) -> Result<TrainingHistory> {
    cfg.validate(model.mode)?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let size = model.image_size;
    if let Some(p) = data
        .iter()
        .find(|p| p.modality_a.height() != size || p.modality_a.width() != size || !p.modality_a.same_size(&p.modality_b))
    {
        return Err(Error::shape(format!(
            "pair {} is {}x{}, model expects {size}x{size}",
            p.pair_id,
            p.modality_a.height(),
            p.modality_a.width()
        )));
    }

    let mut rng: Rng = rng_from_seed(mix_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainingHistory::default();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<ImagePair> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment_flip(&data[i], &mut rng)
                    } else {
                        data[i].clone()
                    }
                })
                .collect();
            let target = stack(&pairs.iter().map(|p| p.modality_b.to_tensor()).collect::<Vec<_>>())?;
            let source = match model.conditioning {
                Conditioning::Image => stack(&pairs.iter().map(|p| p.modality_a.to_tensor()).collect::<Vec<_>>())?,
                Conditioning::Noise => {
                    let n = pairs.len() * model.latent_dim;
                    let z = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    Tensor::new(vec![pairs.len(), model.latent_dim], z)?
                }
            };
            let batch = Batch { source, target };
            let stats = step(&batch).map_err(|e| match e {
                Error::Domain(msg) => Error::NonFinite {
                    quantity: msg,
                    epoch,
                    batch: b,
                },
                other => other,
            })?;
            for (name, v) in [
                ("generator loss", stats.generator_loss),
                ("discriminator loss", stats.discriminator_loss),
                ("mean D(real)", stats.mean_d_real),
                ("mean D(fake)", stats.mean_d_fake),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        quantity: name.into(),
                        epoch,
                        batch: b,
                    });
                }
            }
            sums[0] += stats.generator_loss;
            sums[1] += stats.discriminator_loss;
            sums[2] += stats.mean_d_real;
            sums[3] += stats.mean_d_fake;
            batches += 1;
        }
        let n = batches as f64;
        history.records.push(EpochRecord {
            epoch,
            generator_loss: sums[0] / n,
            discriminator_loss: sums[1] / n,
            mean_d_real: sums[2] / n,
            mean_d_fake: sums[3] / n,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Alternating adversarial training: `d_steps` discriminator updates on each
/// batch, then one generator update on the same batch.
pub fn train_gan(model: GanModel, data: &[ImagePair], cfg: &TrainingConfig) -> Result<(GanModel, TrainingHistory)> {
    train_gan_observed(model, data, cfg, &mut |_| {})
}

/// [`train_gan`] with a callback after every update.
pub fn train_gan_observed(
    mut model: GanModel,
    data: &[ImagePair],
    cfg: &TrainingConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(GanModel, TrainingHistory)> {
    let d_steps = cfg.d_steps(model.mode);
    let shape_model = model.clone();
    let history = run_epochs(&shape_model, data, cfg, |batch| {
        let mut d = [0.0f64; 3];
        for _ in 0..d_steps {
            let s = discriminator_step(&mut model, batch, cfg)?;
            observer(TrainEvent::Discriminator { model: &model, stats: s });
            d[0] += s.loss;
            d[1] += s.mean_d_real;
            d[2] += s.mean_d_fake;
        }
        let g_loss = generator_step(&mut model, batch, cfg)?;
        observer(TrainEvent::Generator { model: &model, loss: g_loss });
        let k = d_steps as f64;
        Ok(BatchStats {
            generator_loss: g_loss,
            discriminator_loss: d[0] / k,
            mean_d_real: d[1] / k,
            mean_d_fake: d[2] / k,
        })
    })?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_split;
    use crate::gan::{build_noise_gan, build_teacher, GanSpec};

    fn toy_data() -> Vec<ImagePair> {
        make_split(6, 8, 3, 0.5).unwrap().train
    }

    fn small_cfg(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            epochs,
            batch_size: 2,
            seed: 11,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let model = build_teacher(8, 1).unwrap();
        let (after, hist) = train_gan(model.clone(), &toy_data(), &small_cfg(0)).unwrap();
        assert!(hist.is_empty());
        assert_eq!(after.parameters().to_bytes(), model.parameters().to_bytes());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || train_gan(build_teacher(8, 1).unwrap(), &toy_data(), &small_cfg(2)).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1.len(), 2);
        assert_eq!(h1.to_csv(), h2.to_csv());
        assert_eq!(m1.parameters().to_bytes(), m2.parameters().to_bytes());
        assert!(h1.records.iter().all(|r| r.generator_loss.is_finite() && r.discriminator_loss.is_finite()));
        let mut other = small_cfg(2);
        other.seed = 12;
        let (_, h3) = train_gan(build_teacher(8, 1).unwrap(), &toy_data(), &other).unwrap();
        assert_ne!(h1.to_csv(), h3.to_csv());
    }

    #[test]
    fn wasserstein_critic_stays_clipped() {
        let model = GanModel::build(&GanSpec::teacher(8).with_mode(Mode::Wasserstein), 2).unwrap();
        let mut critic_steps = 0;
        let mut worst: f64 = 0.0;
        let (_, hist) = train_gan_observed(model, &toy_data(), &small_cfg(1), &mut |ev| {
            if let TrainEvent::Discriminator { model, .. } = ev {
                critic_steps += 1;
                worst = worst.max(model.discriminator.params.max_abs());
            }
        })
        .unwrap();
        assert_eq!(hist.len(), 1);
        assert_eq!(critic_steps, 5 * 2);
        assert!(worst <= 0.01);
    }

    #[test]
    fn discriminator_step_decreases_its_loss() {
        let model = build_teacher(8, 5).unwrap();
        let data = toy_data();
        let mk = |i: usize| crate::data::apply_flips(&data[i], false, false);
        let stack_b = |f: fn(&ImagePair) -> Tensor| stack(&[f(&mk(0)), f(&mk(1))]).unwrap();
        let batch = Batch {
            source: stack_b(|p| p.modality_a.to_tensor()),
            target: stack_b(|p| p.modality_b.to_tensor()),
        };
        let before = discriminator_objective(&model, &batch).unwrap();
        let decreased = [1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let cfg = TrainingConfig {
                optimizer: OptimizerKind::Sgd,
                learning_rate_d: lr,
                ..TrainingConfig::default()
            };
            let mut m = model.clone();
            discriminator_step(&mut m, &batch, &cfg).unwrap();
            discriminator_objective(&m, &batch).unwrap() < before
        });
        assert!(decreased);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = build_teacher(8, 1).unwrap();
        assert!(train_gan(model.clone(), &[], &small_cfg(1)).is_err());
        let big = make_split(3, 16, 0, 0.5).unwrap().train;
        assert!(train_gan(model.clone(), &big, &small_cfg(1)).is_err());
        let mut cfg = small_cfg(1);
        cfg.batch_size = 0;
        assert!(train_gan(model, &toy_data(), &cfg).is_err());
    }

    #[test]
    fn noise_gan_trains() {
        let model = build_noise_gan(8, 1, Mode::Standard).unwrap();
        let (_, hist) = train_gan(model, &toy_data(), &small_cfg(2)).unwrap();
        assert_eq!(hist.len(), 2);
    }
}
