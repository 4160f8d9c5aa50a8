//! Teacher-to-student distillation.
//!
//! The student discriminator minimises `alpha * T^2 * L_soft + beta * L_hard`,
//! where `L_soft` is the cross-entropy between its temperature-softened
//! 2-way logits and the frozen teacher discriminator's on the same inputs,
//! and `L_hard` is binary cross-entropy against real/fake labels. The
//! student generator minimises `-mean(log D_s(G_s(a))) + gamma * mean|G_s(a) - G_t(a)|`.

use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::gan::{self, run_epochs, Batch, BatchStats, GanModel, Mode, TrainingConfig, TrainingHistory};
use crate::nn::cross_entropy_node;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Student channel fraction.
    pub scale: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 4.0,
            alpha: 0.7,
            beta: 0.3,
            gamma: 1.0,
            scale: 0.5,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature {} must be > 0", self.temperature)));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} {w} must be >= 0")));
            }
        }
        if !(self.alpha + self.beta > 0.0) {
            return Err(Error::invalid("alpha + beta must be > 0"));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::invalid(format!("scale {} must be in (0, 1]", self.scale)));
        }
        Ok(())
    }
}

/// Batch-mean `cross_entropy(softmax_t(student), softmax_t(teacher))`.
/// Unscaled: training multiplies it by `T^2`.
pub fn soft_label_loss_node(g: &mut Graph, student_logits: Var, teacher_logits: Var, temperature: f64) -> Result<Var> {
    let s = g.value(student_logits).shape();
    if s.len() != 2 || s != g.value(teacher_logits).shape() {
        return Err(Error::shape(format!(
            "soft labels need equal [m, K] logits, got {s:?} and {:?}",
            g.value(teacher_logits).shape()
        )));
    }
    let ps = g.softmax_t(student_logits, temperature)?;
    let pt = g.softmax_t(teacher_logits, temperature)?;
    cross_entropy_node(g, ps, pt)
}

/// `-mean(y log p + (1 - y) log(1 - p))`
pub fn hard_label_loss_node(g: &mut Graph, probs: Var, labels: &Tensor) -> Result<Var> {
    let shape = g.value(probs).shape();
    if shape.len() != 1 || shape != labels.shape() {
        return Err(Error::shape(format!(
            "hard labels need equal [m] vectors, got {shape:?} and {:?}",
            labels.shape()
        )));
    }
    if let Some(y) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Domain(format!("label {y} is not 0 or 1")));
    }
    let y = g.constant(labels.clone());
    let not_y = g.constant(labels.map(|v| 1.0 - v));
    let lp = g.log_clamped(probs)?;
    let pos = g.mul(y, lp)?;
    let q = g.rsub_scalar(1.0, probs)?;
    let lq = g.log_clamped(q)?;
    let neg = g.mul(not_y, lq)?;
    let total = g.add(pos, neg)?;
    let m = g.mean(total)?;
    g.neg(m)
}

pub fn soft_label_loss(student_logits: &Tensor, teacher_logits: &Tensor, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(student_logits.clone());
    let t = g.constant(teacher_logits.clone());
    let l = soft_label_loss_node(&mut g, s, t, temperature)?;
    g.value(l).item()
}

pub fn hard_label_loss(student_probs: &Tensor, labels: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(student_probs.clone());
    let l = hard_label_loss_node(&mut g, p, labels)?;
    g.value(l).item()
}

/// `alpha * l_soft + beta * l_hard`
pub fn distill_loss(l_soft: f64, l_hard: f64, cfg: &DistillConfig) -> f64 {
    cfg.alpha * l_soft + cfg.beta * l_hard
}

/// A frozen teacher (borrowed, so it cannot change) and a trainable student.
#[derive(Clone, Debug)]
pub struct TeacherStudentPair<'a> {
    pub teacher: &'a GanModel,
    pub student: GanModel,
}

impl<'a> TeacherStudentPair<'a> {
    pub fn new(teacher: &'a GanModel, student: GanModel) -> Result<Self> {
        if teacher.image_size != student.image_size || teacher.conditioning != student.conditioning {
            return Err(Error::invalid(format!(
                "teacher ({}x{}, {:?}) and student ({}x{}, {:?}) disagree",
                teacher.image_size,
                teacher.image_size,
                teacher.conditioning,
                student.image_size,
                student.image_size,
                student.conditioning
            )));
        }
        if teacher.mode != Mode::Standard || student.mode != Mode::Standard {
            return Err(Error::invalid("distillation needs standard-mode (2-logit) discriminators"));
        }
        Ok(Self { teacher, student })
    }
}

fn mean_of(t: &Tensor) -> f64 {
    t.data().iter().sum::<f64>() / t.numel() as f64
}

fn student_discriminator_step(
    teacher: &GanModel,
    student: &mut GanModel,
    batch: &Batch,
    cfg: &TrainingConfig,
    dcfg: &DistillConfig,
) -> Result<(f64, f64, f64)> {
    let m = batch.len();
    let mut g = Graph::new();
    let gp = student.generator.params.bind(&mut g, false);
    let dp = student.discriminator.params.bind(&mut g, true);
    let src = g.constant(batch.source.clone());
    let real = g.constant(batch.target.clone());
    let fake = student.generate_node(&mut g, &gp, src)?;
    let (real_logits, d_real) = student.discriminate_node(&mut g, &dp, src, real)?;
    let (fake_logits, d_fake) = student.discriminate_node(&mut g, &dp, src, fake)?;

    let hard_real = hard_label_loss_node(&mut g, d_real, &Tensor::full(&[m], 1.0))?;
    let hard_fake = hard_label_loss_node(&mut g, d_fake, &Tensor::full(&[m], 0.0))?;
    let hard = g.add(hard_real, hard_fake)?;
    let mut loss = g.mul_scalar(hard, dcfg.beta)?;
    if dcfg.alpha > 0.0 {
        let tp = teacher.discriminator.params.bind(&mut g, false);
        let (t_real, _) = teacher.discriminate_node(&mut g, &tp, src, real)?;
        let (t_fake, _) = teacher.discriminate_node(&mut g, &tp, src, fake)?;
        let s_logits = g.concat_rows(real_logits, fake_logits)?;
        let t_logits = g.concat_rows(t_real, t_fake)?;
        let soft = soft_label_loss_node(&mut g, s_logits, t_logits, dcfg.temperature)?;
        let t2 = dcfg.temperature * dcfg.temperature;
        let weighted = g.mul_scalar(soft, dcfg.alpha * t2)?;
        loss = g.add(weighted, loss)?;
    }

    let value = g.value(loss).item()?;
    let stats = (value, mean_of(g.value(d_real)), mean_of(g.value(d_fake)));
    let grads = dp.gradients(&g.backward(loss)?);
    gan::optimizer_step(
        &mut student.discriminator.params,
        &grads,
        &cfg.optimizer,
        cfg.learning_rate_d,
        &mut student.discriminator_opt,
    )?;
    Ok(stats)
}

fn student_generator_step(
    teacher: &GanModel,
    student: &mut GanModel,
    batch: &Batch,
    cfg: &TrainingConfig,
    dcfg: &DistillConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let gp = student.generator.params.bind(&mut g, true);
    let dp = student.discriminator.params.bind(&mut g, false);
    let src = g.constant(batch.source.clone());
    let fake = student.generate_node(&mut g, &gp, src)?;
    let (_, d_fake) = student.discriminate_node(&mut g, &dp, src, fake)?;
    let mut loss = gan::generator_loss_node(&mut g, d_fake)?;
    if dcfg.gamma > 0.0 {
        let imitation = imitation_node(&mut g, teacher, src, fake)?;
        let weighted = g.mul_scalar(imitation, dcfg.gamma)?;
        loss = g.add(loss, weighted)?;
    }
    let value = g.value(loss).item()?;
    let grads = gp.gradients(&g.backward(loss)?);
    gan::optimizer_step(
        &mut student.generator.params,
        &grads,
        &cfg.optimizer,
        cfg.learning_rate_g,
        &mut student.generator_opt,
    )?;
    Ok(value)
}

/// `mean|student_out - G_t(src)|` with the teacher output held constant.
fn imitation_node(g: &mut Graph, teacher: &GanModel, src: Var, student_out: Var) -> Result<Var> {
    let tp = teacher.generator.params.bind(g, false);
    let t_out = teacher.generate_node(g, &tp, src)?;
    let diff = g.sub(student_out, t_out)?;
    let a = g.abs(diff)?;
    g.mean(a)
}

/// Mean absolute difference between student and teacher generator outputs
/// on `source`.
pub fn imitation_error(teacher: &GanModel, student: &GanModel, source: &Tensor) -> Result<f64> {
    let a = student.generate(source)?;
    let b = teacher.generate(source)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64)
}

/// Trains the student against the frozen teacher. The batch schedule,
/// shuffles and flips are those of [`gan::train_gan`] for the same config.
pub fn train_student(
    pair: TeacherStudentPair<'_>,
    data: &[ImagePair],
    cfg: &TrainingConfig,
    dcfg: &DistillConfig,
) -> Result<(GanModel, TrainingHistory)> {
    dcfg.validate()?;
    let TeacherStudentPair { teacher, mut student } = pair;
    let d_steps = cfg.d_steps(student.mode);
    let shape_model = student.clone();
    let history = run_epochs(&shape_model, data, cfg, |batch| {
        let mut d = [0.0f64; 3];
        for _ in 0..d_steps {
            let (l, r, f) = student_discriminator_step(teacher, &mut student, batch, cfg, dcfg)?;
            d[0] += l;
            d[1] += r;
            d[2] += f;
        }
        let g_loss = student_generator_step(teacher, &mut student, batch, cfg, dcfg)?;
        let k = d_steps as f64;
        Ok(BatchStats {
            generator_loss: g_loss,
            discriminator_loss: d[0] / k,
            mean_d_real: d[1] / k,
            mean_d_fake: d[2] / k,
        })
    })?;
    Ok((student, history))
}
