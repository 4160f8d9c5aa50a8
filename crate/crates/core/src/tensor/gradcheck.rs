//! Central finite-difference checks of analytic gradients.

use rand::Rng as _;

use super::{Graph, Tensor, Var};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    let value = g.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Domain(format!("function value {value} is not finite")));
    }
    Ok(value)
}

/// Maximum over components of `|analytic - numeric| / max(1, |numeric|)`,
/// where the numeric gradient is the central difference with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    check_coords(&f, x, h, &coords, None)
}

/// Like [`grad_check`] but only probes `max_coords` components drawn
/// without replacement from a seeded stream (all of them if the tensor is
/// small enough).
pub fn grad_check_sampled<F>(f: F, x: &Tensor, h: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_coords(&f, x, h, &sample_coords(x.numel(), max_coords, seed), None)
}

/// Same as [`grad_check_sampled`] but runs the analytic pass on a graph
/// prepared by `prepare` (used for fault injection).
#[doc(hidden)]
pub fn grad_check_with<F>(
    f: F,
    x: &Tensor,
    h: f64,
    max_coords: usize,
    seed: u64,
    prepare: &dyn Fn(&mut Graph),
) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_coords(&f, x, h, &sample_coords(x.numel(), max_coords, seed), Some(prepare))
}

fn sample_coords(n: usize, max_coords: usize, seed: u64) -> Vec<usize> {
    if n <= max_coords {
        (0..n).collect()
    } else {
        let mut coords = rand::seq::index::sample(&mut rng_from_seed(seed), n, max_coords).into_vec();
        coords.sort_unstable();
        coords
    }
}

fn check_coords<F>(
    f: &F,
    x: &Tensor,
    h: f64,
    coords: &[usize],
    prepare: Option<&dyn Fn(&mut Graph)>,
) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be > 0, got {h}")));
    }
    let mut g = Graph::new();
    if let Some(prepare) = prepare {
        prepare(&mut g);
    }
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let value = g.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Domain(format!("function value {value} is not finite")));
    }
    let grads = g.backward(out)?;
    let analytic = grads.get(v).expect("tracked leaf has a gradient");
    if !analytic.all_finite() {
        return Err(Error::Domain("analytic gradient is not finite".into()));
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = evaluate(f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = evaluate(f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Uniform random tensor in `[lo, hi)` from a seeded stream.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
