//! Adversarial losses. Probabilities go through `log_clamped`, so inputs at
//! exactly 0 or 1 give finite values.

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

fn check_scores(g: &Graph, v: Var, what: &str) -> Result<usize> {
    let shape = g.value(v).shape();
    if shape.len() != 1 {
        return Err(Error::shape(format!("{what} must be a [m] vector, got {shape:?}")));
    }
    Ok(shape[0])
}

fn check_pair(g: &Graph, real: Var, fake: Var) -> Result<()> {
    let m_real = check_scores(g, real, "real scores")?;
    let m_fake = check_scores(g, fake, "fake scores")?;
    if m_real != m_fake {
        return Err(Error::shape(format!("batch size mismatch: {m_real} real vs {m_fake} fake")));
    }
    Ok(())
}

/// `-mean(log D(G(z)))`
pub fn generator_loss_node(g: &mut Graph, d_fake: Var) -> Result<Var> {
    check_scores(g, d_fake, "D(G(z))")?;
    let l = g.log_clamped(d_fake)?;
    let m = g.mean(l)?;
    g.neg(m)
}

/// `-mean(log D(x)) - mean(log(1 - D(G(z))))`
pub fn discriminator_loss_node(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    check_pair(g, d_real, d_fake)?;
    let lr = g.log_clamped(d_real)?;
    let real_term = g.mean(lr)?;
    let one_minus = g.rsub_scalar(1.0, d_fake)?;
    let lf = g.log_clamped(one_minus)?;
    let fake_term = g.mean(lf)?;
    let neg_real = g.neg(real_term)?;
    g.sub(neg_real, fake_term)
}

/// Critic loss `-(mean(real) - mean(fake))`.
pub fn wgan_critic_loss_node(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    check_pair(g, real, fake)?;
    let mr = g.mean(real)?;
    let mf = g.mean(fake)?;
    let diff = g.sub(mr, mf)?;
    g.neg(diff)
}

/// Generator loss `-mean(fake)`.
pub fn wgan_generator_loss_node(g: &mut Graph, fake: Var) -> Result<Var> {
    check_scores(g, fake, "critic scores")?;
    let mf = g.mean(fake)?;
    g.neg(mf)
}

pub fn generator_loss(d_on_fake: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant(d_on_fake.clone());
    let l = generator_loss_node(&mut g, f)?;
    g.value(l).item()
}

pub fn discriminator_loss(d_on_real: &Tensor, d_on_fake: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(d_on_real.clone());
    let f = g.constant(d_on_fake.clone());
    let l = discriminator_loss_node(&mut g, r, f)?;
    g.value(l).item()
}

/// Returns `(critic_objective, generator_loss)`: the critic maximises
/// `mean(real) - mean(fake)`; the generator minimises `-mean(fake)`.
pub fn wgan_losses(critic_on_real: &Tensor, critic_on_fake: &Tensor) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let r = g.constant(critic_on_real.clone());
    let f = g.constant(critic_on_fake.clone());
    let critic = wgan_critic_loss_node(&mut g, r, f)?;
    let gen = wgan_generator_loss_node(&mut g, f)?;
    Ok((-g.value(critic).item()?, g.value(gen).item()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::from_vec(x.to_vec()).unwrap()
    }

    #[test]
    fn generator_loss_examples() {
        assert!(generator_loss(&v(&[1.0, 1.0, 1.0])).unwrap().abs() <= 1.2e-6);
        for m in [1, 3, 8] {
            let l = generator_loss(&v(&vec![0.5; m])).unwrap();
            assert!((l - 2f64.ln()).abs() <= 1e-12);
        }
        let l = generator_loss(&v(&[0.9, 0.8])).unwrap();
        assert!((l - 0.164_252_033_486_018_1).abs() <= 1e-12, "{l}");
        assert!(generator_loss(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn discriminator_loss_examples() {
        assert!(discriminator_loss(&v(&[1.0]), &v(&[0.0])).unwrap().abs() <= 1.2e-6);
        let l = discriminator_loss(&v(&[0.5; 4]), &v(&[0.5; 4])).unwrap();
        assert!((l - 1.386_294_361_119_890_6).abs() <= 1e-12);
        let l = discriminator_loss(&v(&[0.9]), &v(&[0.1])).unwrap();
        assert!((l - 0.210_721_031_315_652_6).abs() <= 1e-12, "{l}");
        assert!(discriminator_loss(&v(&[0.5, 0.5]), &v(&[0.5])).is_err());
    }

    #[test]
    fn wgan_examples() {
        let (c, _) = wgan_losses(&v(&[0.3, -2.0]), &v(&[0.3, -2.0])).unwrap();
        assert_eq!(c, 0.0);
        let (c, gl) = wgan_losses(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(gl, 0.0);
        assert!(wgan_losses(&v(&[1.0]), &v(&[0.0, 0.0])).is_err());
    }

    proptest! {
        #[test]
        fn graph_losses_match_closed_form(real in prop::collection::vec(0.01f64..0.99, 1..10), seed in 0u64..1000) {
            let m = real.len();
            let fake: Vec<f64> = crate::tensor::random_tensor(&[m], 0.01, 0.99, seed).into_data();
            let mean = |f: &dyn Fn(f64) -> f64, x: &[f64]| x.iter().map(|&p| f(p)).sum::<f64>() / x.len() as f64;
            let lg = -mean(&|p: f64| p.ln(), &fake);
            let ld = -mean(&|p: f64| p.ln(), &real) - mean(&|p: f64| (1.0 - p).ln(), &fake);
            prop_assert!((generator_loss(&v(&fake)).unwrap() - lg).abs() <= 1e-10);
            prop_assert!((discriminator_loss(&v(&real), &v(&fake)).unwrap() - ld).abs() <= 1e-10);
        }
    }
}
