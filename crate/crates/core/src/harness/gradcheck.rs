//! Finite-difference suite over every differentiable op, the layer stack,
//! all losses and the full teacher at 16x16.

use crate::data::generate_phantom_pair;
use crate::distill::{hard_label_loss_node, soft_label_loss_node};
use crate::gan::{self, build_teacher, GanModel};
use crate::nn::{self, cross_entropy_node, LayerSpec};
use crate::tensor::{grad_check_with, random_tensor, Graph, Tensor, Var};
use crate::Result;

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
const MAX_COORDS: usize = 48;
const NETWORK_COORDS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

struct Suite<'a> {
    prepare: &'a dyn Fn(&mut Graph),
    entries: Vec<GradCheckEntry>,
    seed: u64,
}

impl Suite<'_> {
    fn next_seed(&mut self) -> u64 {
        self.seed += 1;
        self.seed
    }

    fn check_coords(
        &mut self,
        name: &str,
        x: &Tensor,
        coords: usize,
        f: impl Fn(&mut Graph, Var) -> Result<Var>,
    ) -> Result<f64> {
        let seed = self.next_seed();
        grad_check_with(f, x, STEP, coords, seed, self.prepare).map_err(|e| {
            crate::Error::Domain(format!("gradcheck {name}: {e}"))
        })
    }

    fn check(&mut self, name: &str, x: &Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<()> {
        let err = self.check_coords(name, x, MAX_COORDS, f)?;
        self.record(name, err);
        Ok(())
    }

    fn record(&mut self, name: &str, max_rel_error: f64) {
        self.entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_error,
        });
    }

    /// Checks `op(x)` reduced by a fixed random projection.
    fn unary(
        &mut self,
        name: &str,
        shape: &[usize],
        lo: f64,
        hi: f64,
        op: impl Fn(&mut Graph, Var) -> Result<Var>,
    ) -> Result<()> {
        let x = random_tensor(shape, lo, hi, self.next_seed());
        let proj_seed = self.next_seed();
        self.check(name, &x, |g, v| {
            let y = op(g, v)?;
            project(g, y, proj_seed)
        })
    }
}

/// `sum(y * W)` with `W ~ U(-1, 1)` fixed by `seed`.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = random_tensor(g.value(y).shape(), -1.0, 1.0, seed);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn constant(g: &mut Graph, shape: &[usize], lo: f64, hi: f64, seed: u64) -> Var {
    g.constant(random_tensor(shape, lo, hi, seed))
}

/// Runs the full suite. `prepare` is applied to every analytic graph
/// before its backward pass.
pub fn run_suite_with(prepare: &dyn Fn(&mut Graph)) -> Result<Vec<GradCheckEntry>> {
    let mut s = Suite {
        prepare,
        entries: Vec::new(),
        seed: 1000,
    };
    let sh = [3, 4];

    let c = 1;
    s.unary("add", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &sh, -1.0, 1.0, c);
        g.add(x, k)
    })?;
    s.unary("sub", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &sh, -1.0, 1.0, c);
        g.sub(k, x)
    })?;
    s.unary("mul", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &sh, -1.0, 1.0, c);
        let a = g.mul(x, k)?;
        g.mul(a, x)
    })?;
    s.unary("add_scalar/mul_scalar", &sh, -1.0, 1.0, |g, x| {
        let a = g.mul_scalar(x, 1.7)?;
        g.add_scalar(a, -0.3)
    })?;
    s.unary("neg", &sh, -1.0, 1.0, |g, x| g.neg(x))?;
    s.unary("log", &sh, 0.5, 2.0, |g, x| g.log(x))?;
    s.unary("log_clamped", &sh, 0.01, 0.9, |g, x| g.log_clamped(x))?;
    s.unary("exp", &sh, -1.0, 1.0, |g, x| g.exp(x))?;
    s.unary("relu", &sh, -1.0, 1.0, |g, x| g.relu(x))?;
    s.unary("leaky_relu", &sh, -1.0, 1.0, |g, x| g.leaky_relu(x, 0.2))?;
    s.unary("sigmoid", &sh, -3.0, 3.0, |g, x| g.sigmoid(x))?;
    s.unary("tanh", &sh, -2.0, 2.0, |g, x| g.tanh(x))?;
    s.unary("abs", &sh, -1.0, 1.0, |g, x| g.abs(x))?;
    s.unary("clamp", &sh, -1.0, 1.0, |g, x| g.clamp(x, -0.5, 0.5))?;
    s.unary("matmul (left)", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &[4, 2], -1.0, 1.0, c);
        g.matmul(x, k)
    })?;
    s.unary("matmul (right)", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &[2, 3], -1.0, 1.0, c);
        g.matmul(k, x)
    })?;
    s.unary("add_bias", &[4], -1.0, 1.0, |g, b| {
        let k = constant(g, &sh, -1.0, 1.0, c);
        g.add_bias(k, b)
    })?;
    s.unary("sum", &sh, -1.0, 1.0, |g, x| {
        let sq = g.mul(x, x)?;
        g.sum(sq)
    })?;
    s.unary("mean", &sh, -1.0, 1.0, |g, x| {
        let sq = g.mul(x, x)?;
        g.mean(sq)
    })?;
    s.unary("reshape", &sh, -1.0, 1.0, |g, x| g.reshape(x, &[2, 6]))?;

    let xs = [2, 2, 6, 6];
    let ws = [3, 2, 3, 3];
    s.unary("conv2d (input)", &xs, -1.0, 1.0, |g, x| {
        let w = constant(g, &ws, -1.0, 1.0, c);
        let b = constant(g, &[3], -1.0, 1.0, c);
        g.conv2d(x, w, b, 1, 1)
    })?;
    s.unary("conv2d (weight)", &[3, 2, 4, 4], -1.0, 1.0, |g, w| {
        let x = constant(g, &xs, -1.0, 1.0, c);
        let b = constant(g, &[3], -1.0, 1.0, c);
        g.conv2d(x, w, b, 2, 1)
    })?;
    s.unary("conv2d (bias)", &[3], -1.0, 1.0, |g, b| {
        let x = constant(g, &xs, -1.0, 1.0, c);
        let w = constant(g, &ws, -1.0, 1.0, c);
        g.conv2d(x, w, b, 1, 0)
    })?;
    let dx = [2, 3, 4, 4];
    let dw = [3, 2, 4, 4];
    s.unary("deconv2d (input)", &dx, -1.0, 1.0, |g, x| {
        let w = constant(g, &dw, -1.0, 1.0, c);
        let b = constant(g, &[2], -1.0, 1.0, c);
        g.deconv2d(x, w, b, 2, 1)
    })?;
    s.unary("deconv2d (weight)", &dw, -1.0, 1.0, |g, w| {
        let x = constant(g, &dx, -1.0, 1.0, c);
        let b = constant(g, &[2], -1.0, 1.0, c);
        g.deconv2d(x, w, b, 2, 1)
    })?;
    s.unary("deconv2d (bias)", &[2], -1.0, 1.0, |g, b| {
        let x = constant(g, &dx, -1.0, 1.0, c);
        let w = constant(g, &[3, 2, 3, 3], -1.0, 1.0, c);
        g.deconv2d(x, w, b, 1, 1)
    })?;
    s.unary("softmax_t", &sh, -2.0, 2.0, |g, x| g.softmax_t(x, 2.5))?;
    s.unary("concat_channels", &[2, 1, 3, 3], -1.0, 1.0, |g, x| {
        let k = constant(g, &[2, 2, 3, 3], -1.0, 1.0, c);
        let a = g.concat_channels(k, x)?;
        g.concat_channels(a, x)
    })?;
    s.unary("concat_rows", &sh, -1.0, 1.0, |g, x| {
        let k = constant(g, &[2, 4], -1.0, 1.0, c);
        g.concat_rows(x, k)
    })?;
    s.unary("column", &sh, -1.0, 1.0, |g, x| g.column(x, 2))?;

    let layers = [
        LayerSpec::conv(1, 3, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv(3, 2, 4, 2, 1),
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Flatten,
        LayerSpec::dense(2 * 4 * 4, 5),
        LayerSpec::Tanh,
        LayerSpec::dense(5, 2),
        LayerSpec::SoftmaxT { temperature: 2.0 },
    ];
    let params = nn::init_params(&layers, 77)?;
    let input = random_tensor(&[2, 1, 8, 8], 0.0, 1.0, 78);
    let mut worst: f64 = 0.0;
    for name in params.names() {
        let proj_seed = s.next_seed();
        let err = s.check_coords(&name, params.get(&name).unwrap(), MAX_COORDS, |g, v| {
            let mut bound = params.bind(g, false);
            bound.replace(&name, v);
            let x = g.constant(input.clone());
            let y = nn::forward(g, &layers, &bound, x)?;
            project(g, y, proj_seed)
        })?;
        worst = worst.max(err);
    }
    s.record("layer stack (conv/dense/activations)", worst);

    let target = crate::nn::softmax_t(&random_tensor(&sh, -1.0, 1.0, 5), 1.0)?;
    s.unary("cross_entropy", &sh, -2.0, 2.0, |g, x| {
        let p = g.softmax_t(x, 1.0)?;
        let t = g.constant(target.clone());
        cross_entropy_node(g, p, t)
    })?;
    s.check("generator loss", &random_tensor(&[5], -2.0, 2.0, 6), |g, x| {
        let p = g.sigmoid(x)?;
        gan::generator_loss_node(g, p)
    })?;
    s.check("discriminator loss (real)", &random_tensor(&[5], -2.0, 2.0, 7), |g, x| {
        let p = g.sigmoid(x)?;
        let f = constant(g, &[5], 0.05, 0.95, 8);
        gan::discriminator_loss_node(g, p, f)
    })?;
    s.check("discriminator loss (fake)", &random_tensor(&[5], -2.0, 2.0, 9), |g, x| {
        let r = constant(g, &[5], 0.05, 0.95, 10);
        let p = g.sigmoid(x)?;
        gan::discriminator_loss_node(g, r, p)
    })?;
    s.check("wasserstein critic loss", &random_tensor(&[5], -2.0, 2.0, 11), |g, x| {
        let f = g.mul(x, x)?;
        gan::wgan_critic_loss_node(g, x, f)
    })?;
    s.check("wasserstein generator loss", &random_tensor(&[5], -2.0, 2.0, 12), |g, x| {
        let f = g.tanh(x)?;
        gan::wgan_generator_loss_node(g, f)
    })?;
    let teacher_logits = random_tensor(&[4, 2], -2.0, 2.0, 13);
    s.check("soft label loss", &random_tensor(&[4, 2], -2.0, 2.0, 14), |g, x| {
        let t = g.constant(teacher_logits.clone());
        soft_label_loss_node(g, x, t, 4.0)
    })?;
    let labels = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0])?;
    s.check("hard label loss", &random_tensor(&[5], -2.0, 2.0, 15), |g, x| {
        let p = g.sigmoid(x)?;
        hard_label_loss_node(g, p, &labels)
    })?;

    let teacher = build_teacher(16, 21)?;
    let pairs: Vec<_> = (0..2).map(|i| generate_phantom_pair(100 + i, 16)).collect::<Result<_>>()?;
    let stack = |f: fn(&crate::data::ImagePair) -> &crate::ImageGray| {
        Tensor::new(
            vec![2, 1, 16, 16],
            pairs.iter().flat_map(|p| f(p).pixels().iter().copied()).collect(),
        )
    };
    let source = stack(|p| &p.modality_a)?;
    let real = stack(|p| &p.modality_b)?;
    teacher_checks(&mut s, &teacher, &source, &real)?;
    Ok(s.entries)
}

fn teacher_checks(s: &mut Suite<'_>, teacher: &GanModel, source: &Tensor, real: &Tensor) -> Result<()> {
    let mut worst: f64 = 0.0;
    for name in teacher.generator.params.names() {
        let err = s.check_coords(&name, teacher.generator.params.get(&name).unwrap(), NETWORK_COORDS, |g, v| {
            let mut gp = teacher.generator.params.bind(g, false);
            gp.replace(&name, v);
            let dp = teacher.discriminator.params.bind(g, false);
            let src = g.constant(source.clone());
            let fake = teacher.generate_node(g, &gp, src)?;
            let (_, d) = teacher.discriminate_node(g, &dp, src, fake)?;
            gan::generator_loss_node(g, d)
        })?;
        worst = worst.max(err);
    }
    s.record("teacher generator, 16x16 (all parameters)", worst);

    let mut worst: f64 = 0.0;
    for name in teacher.discriminator.params.names() {
        let err = s.check_coords(
            &name,
            teacher.discriminator.params.get(&name).unwrap(),
            NETWORK_COORDS,
            |g, v| {
                let gp = teacher.generator.params.bind(g, false);
                let mut dp = teacher.discriminator.params.bind(g, false);
                dp.replace(&name, v);
                let src = g.constant(source.clone());
                let r = g.constant(real.clone());
                let fake = teacher.generate_node(g, &gp, src)?;
                let (_, dr) = teacher.discriminate_node(g, &dp, src, r)?;
                let (_, df) = teacher.discriminate_node(g, &dp, src, fake)?;
                gan::discriminator_loss_node(g, dr, df)
            },
        )?;
        worst = worst.max(err);
    }
    s.record("teacher discriminator, 16x16 (all parameters)", worst);
    Ok(())
}

pub fn run_suite() -> Result<Vec<GradCheckEntry>> {
    run_suite_with(&|_| {})
}

/// The suite with conv weight gradients scaled by `scale` (test fixture).
pub fn run_suite_with_conv_fault(scale: f64) -> Result<Vec<GradCheckEntry>> {
    run_suite_with(&move |g| g.inject_conv_weight_grad_fault(scale))
}

/// Fixed-width table, one line per check plus a summary line.
pub fn format_table(entries: &[GradCheckEntry]) -> String {
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(2).max(2);
    let mut out = format!("{:<width$}  {:>13}  status\n", "op", "max_rel_error");
    for e in entries {
        out.push_str(&format!(
            "{:<width$}  {:>13.3e}  {}\n",
            e.name,
            e.max_rel_error,
            if e.passed() { "PASS" } else { "FAIL" }
        ));
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    out.push_str(&format!(
        "{} checks, {} failed, tolerance {TOLERANCE:e}\n",
        entries.len(),
        failed
    ));
    out
}
