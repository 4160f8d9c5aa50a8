//! Generator/discriminator pairs and adversarial training.
//!
//! Image-conditioned models (the default) map a modality-A image to a
//! modality-B image and judge `concat(A, candidate)`. Noise-conditioned
//! models map a latent vector to an image and judge the image alone.
//!
//! Standard-mode discriminators end in a two-logit head whose T=1 softmax
//! gives `D(x)` as the "real" probability; Wasserstein critics end in one
//! unbounded output.

pub mod checkpoint;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{
    discriminator_loss, discriminator_loss_node, generator_loss, generator_loss_node, wgan_critic_loss_node,
    wgan_generator_loss_node, wgan_losses,
};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use train::{
    discriminator_objective, discriminator_step, generator_step, train_gan, train_gan_observed, Batch, EpochRecord, StepStats,
    TrainEvent, TrainingConfig, TrainingHistory,
};
pub(crate) use train::{run_epochs, BatchStats};

use serde::{Deserialize, Serialize};

use crate::nn::{self, BoundParams, LayerSpec, ParameterSet, DEFAULT_LEAKY_SLOPE};
use crate::rng::mix_seed;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    Wasserstein,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Noise,
    Image,
}

/// Hidden conv widths of the teacher generator.
pub const TEACHER_GENERATOR_CHANNELS: [usize; 4] = [32, 64, 64, 32];
/// Conv widths of the teacher discriminator (each halves the spatial size).
pub const TEACHER_DISCRIMINATOR_CHANNELS: [usize; 3] = [32, 64, 64];
/// Hidden widths of the noise-conditioned MLP generator and discriminator.
pub const NOISE_GENERATOR_WIDTHS: [usize; 2] = [32, 64];
pub const NOISE_DISCRIMINATOR_WIDTHS: [usize; 1] = [32];
pub const DEFAULT_LATENT_DIM: usize = 16;

/// Layer list plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    pub params: ParameterSet,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let params = nn::init_params(&layers, seed)?;
        Ok(Self { layers, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        nn::forward(g, &self.layers, bound, x)
    }
}

/// Architecture choices for [`GanModel::build`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanSpec {
    pub image_size: usize,
    pub scale: f64,
    pub mode: Mode,
    pub conditioning: Conditioning,
    pub latent_dim: usize,
}

impl GanSpec {
    pub fn teacher(image_size: usize) -> Self {
        Self {
            image_size,
            scale: 1.0,
            mode: Mode::Standard,
            conditioning: Conditioning::Image,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }

    pub fn student(image_size: usize, scale: f64) -> Self {
        Self {
            scale,
            ..Self::teacher(image_size)
        }
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        Self { mode, ..self }
    }

    pub fn with_conditioning(self, conditioning: Conditioning) -> Self {
        Self { conditioning, ..self }
    }

    fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if !(8..=256).contains(&s) || !s.is_power_of_two() {
            return Err(Error::invalid(format!(
                "unsupported image size {s}; expected a power of two in 8..=256"
            )));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::invalid(format!("scale {} must be in (0, 1]", self.scale)));
        }
        if self.conditioning == Conditioning::Noise && self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be >= 1"));
        }
        Ok(())
    }

    fn width(&self, c: usize) -> usize {
        ((c as f64 * self.scale).ceil() as usize).max(1)
    }

    fn head(&self) -> usize {
        match self.mode {
            Mode::Standard => 2,
            Mode::Wasserstein => 1,
        }
    }

    pub fn generator_layers(&self) -> Vec<LayerSpec> {
        let s = self.image_size;
        match self.conditioning {
            Conditioning::Image => {
                let mut layers = Vec::new();
                let mut c_in = 1;
                for c in TEACHER_GENERATOR_CHANNELS.map(|c| self.width(c)) {
                    layers.push(LayerSpec::conv(c_in, c, 3, 1, 1));
                    layers.push(LayerSpec::LeakyRelu {
                        slope: DEFAULT_LEAKY_SLOPE,
                    });
                    c_in = c;
                }
                layers.push(LayerSpec::conv(c_in, 1, 3, 1, 1));
                layers.push(LayerSpec::Sigmoid);
                layers
            }
            Conditioning::Noise => {
                let mut layers = Vec::new();
                let mut n_in = self.latent_dim;
                for w in NOISE_GENERATOR_WIDTHS.map(|w| self.width(w)) {
                    layers.push(LayerSpec::dense(n_in, w));
                    layers.push(LayerSpec::Relu);
                    n_in = w;
                }
                layers.push(LayerSpec::dense(n_in, s * s));
                layers.push(LayerSpec::Sigmoid);
                layers.push(LayerSpec::Reshape { shape: vec![1, s, s] });
                layers
            }
        }
    }

    pub fn discriminator_layers(&self) -> Vec<LayerSpec> {
        let s = self.image_size;
        let slope = DEFAULT_LEAKY_SLOPE;
        let mut layers = Vec::new();
        match self.conditioning {
            Conditioning::Image => {
                let mut c_in = 2;
                for c in TEACHER_DISCRIMINATOR_CHANNELS.map(|c| self.width(c)) {
                    layers.push(LayerSpec::conv(c_in, c, 4, 2, 1));
                    layers.push(LayerSpec::LeakyRelu { slope });
                    c_in = c;
                }
                let side = s / 8;
                layers.push(LayerSpec::Flatten);
                layers.push(LayerSpec::dense(c_in * side * side, self.head()));
            }
            Conditioning::Noise => {
                layers.push(LayerSpec::Flatten);
                let mut n_in = s * s;
                for w in NOISE_DISCRIMINATOR_WIDTHS.map(|w| self.width(w)) {
                    layers.push(LayerSpec::dense(n_in, w));
                    layers.push(LayerSpec::LeakyRelu { slope });
                    n_in = w;
                }
                layers.push(LayerSpec::dense(n_in, self.head()));
            }
        }
        layers
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub mode: Mode,
    pub conditioning: Conditioning,
    pub image_size: usize,
    pub scale: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub generator: Network,
    pub discriminator: Network,
    pub generator_opt: OptimizerState,
    pub discriminator_opt: OptimizerState,
}

/// Image-conditioned standard-mode teacher.
pub fn build_teacher(image_size: usize, seed: u64) -> Result<GanModel> {
    GanModel::build(&GanSpec::teacher(image_size), seed)
}

/// Teacher topology with every channel count multiplied by `scale`
/// (rounded up, at least 1).
pub fn build_student(image_size: usize, seed: u64, scale: f64) -> Result<GanModel> {
    GanModel::build(&GanSpec::student(image_size, scale), seed)
}

/// Noise-conditioned MLP GAN, used for the equilibrium toy problem.
pub fn build_noise_gan(image_size: usize, seed: u64, mode: Mode) -> Result<GanModel> {
    GanModel::build(
        &GanSpec::teacher(image_size)
            .with_conditioning(Conditioning::Noise)
            .with_mode(mode),
        seed,
    )
}

impl GanModel {
    pub fn build(spec: &GanSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let generator = Network::new(spec.generator_layers(), mix_seed(seed, 1))?;
        let discriminator = Network::new(spec.discriminator_layers(), mix_seed(seed, 2))?;
        Ok(Self {
            mode: spec.mode,
            conditioning: spec.conditioning,
            image_size: spec.image_size,
            scale: spec.scale,
            seed,
            latent_dim: match spec.conditioning {
                Conditioning::Noise => spec.latent_dim,
                Conditioning::Image => 0,
            },
            generator,
            discriminator,
            generator_opt: OptimizerState::default(),
            discriminator_opt: OptimizerState::default(),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.generator.parameter_count() + self.discriminator.parameter_count()
    }

    /// Generator and discriminator parameters under `generator/` and
    /// `discriminator/` prefixes.
    pub fn parameters(&self) -> ParameterSet {
        let mut all = ParameterSet::new(self.seed);
        all.extend_prefixed("generator/", &self.generator.params);
        all.extend_prefixed("discriminator/", &self.discriminator.params);
        all
    }

    /// Shape of a generator input batch of `m` samples.
    pub fn source_shape(&self, m: usize) -> Vec<usize> {
        match self.conditioning {
            Conditioning::Image => vec![m, 1, self.image_size, self.image_size],
            Conditioning::Noise => vec![m, self.latent_dim],
        }
    }

    pub(crate) fn check_source(&self, source: &Tensor) -> Result<usize> {
        let m = source.shape()[0];
        if source.shape() != self.source_shape(m).as_slice() {
            return Err(Error::shape(format!(
                "generator input {:?} does not match model input {:?}",
                source.shape(),
                self.source_shape(m)
            )));
        }
        Ok(m)
    }

    pub(crate) fn generate_node(&self, g: &mut Graph, params: &BoundParams, source: Var) -> Result<Var> {
        self.generator.forward(g, params, source)
    }

    /// Discriminator on `candidate` (conditioned on `source` for image
    /// models). Returns `(logits, score)` where `score` is `D(x)` in (0,1)
    /// for standard mode and the raw critic value for Wasserstein mode.
    pub(crate) fn discriminate_node(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        source: Var,
        candidate: Var,
    ) -> Result<(Var, Var)> {
        let input = match self.conditioning {
            Conditioning::Image => g.concat_channels(source, candidate)?,
            Conditioning::Noise => candidate,
        };
        let logits = self.discriminator.forward(g, params, input)?;
        let score = match self.mode {
            Mode::Standard => {
                let p = g.softmax_t(logits, 1.0)?;
                g.column(p, 1)?
            }
            Mode::Wasserstein => {
                let m = g.value(logits).shape()[0];
                g.reshape(logits, &[m])?
            }
        };
        Ok((logits, score))
    }

    /// Runs the generator on a batch of sources without tracking gradients.
    pub fn generate(&self, source: &Tensor) -> Result<Tensor> {
        self.check_source(source)?;
        let mut g = Graph::new();
        let params = self.generator.params.bind(&mut g, false);
        let src = g.constant(source.clone());
        let out = self.generate_node(&mut g, &params, src)?;
        Ok(g.value(out).clone())
    }

    /// Discriminator scores for `candidate` images given their sources.
    pub fn discriminate(&self, source: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        self.check_source(source)?;
        let mut g = Graph::new();
        let params = self.discriminator.params.bind(&mut g, false);
        let src = g.constant(source.clone());
        let cand = g.constant(candidate.clone());
        let (_, score) = self.discriminate_node(&mut g, &params, src, cand)?;
        Ok(g.value(score).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_is_deterministic() {
        let a = build_teacher(32, 7).unwrap();
        let b = build_teacher(32, 7).unwrap();
        assert_eq!(a.parameters().to_bytes(), b.parameters().to_bytes());
        let c = build_teacher(32, 8).unwrap();
        assert_ne!(a.parameters().to_bytes(), c.parameters().to_bytes());
    }

    #[test]
    fn generator_output_is_image_in_unit_interval() {
        let t = build_teacher(32, 7).unwrap();
        let out = t.generate(&Tensor::zeros(&[1, 1, 32, 32])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 32, 32]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn unsupported_sizes_and_scales_are_rejected() {
        assert!(build_teacher(12, 1).is_err());
        assert!(build_teacher(4, 1).is_err());
        assert!(build_teacher(512, 1).is_err());
        assert!(build_student(16, 1, 0.0).is_err());
        assert!(build_student(16, 1, 1.5).is_err());
    }

    #[test]
    fn full_scale_student_equals_teacher() {
        let t = build_teacher(16, 3).unwrap();
        let s = build_student(16, 3, 1.0).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn student_is_smaller() {
        let t = build_teacher(32, 1).unwrap();
        let s = build_student(32, 1, 0.5).unwrap();
        assert!(s.parameter_count() < t.parameter_count());
    }

    #[test]
    fn discriminator_heads() {
        let t = build_teacher(16, 1).unwrap();
        let src = Tensor::full(&[3, 1, 16, 16], 0.3);
        let d = t.discriminate(&src, &src).unwrap();
        assert_eq!(d.shape(), &[3]);
        assert!(d.data().iter().all(|&p| p > 0.0 && p < 1.0));

        let w = GanModel::build(&GanSpec::teacher(16).with_mode(Mode::Wasserstein), 1).unwrap();
        assert_eq!(w.discriminator.layers.last(), Some(&LayerSpec::dense(64 * 4, 1)));
    }

    #[test]
    fn noise_gan_shapes() {
        let m = build_noise_gan(8, 2, Mode::Standard).unwrap();
        let z = Tensor::full(&[4, DEFAULT_LATENT_DIM], 0.1);
        let img = m.generate(&z).unwrap();
        assert_eq!(img.shape(), &[4, 1, 8, 8]);
        assert!(m.generate(&Tensor::zeros(&[4, 1, 8, 8])).is_err());
    }
}
