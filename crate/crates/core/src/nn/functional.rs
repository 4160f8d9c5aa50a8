use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// `q_i = exp(z_i / T) / sum_j exp(z_j / T)` over the last axis, with the
/// row maximum subtracted first.
pub fn softmax_t(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let q = g.softmax_t(z, temperature)?;
    Ok(g.value(q).clone())
}

fn check_distribution(t: &Tensor, what: &str) -> Result<()> {
    let k = *t.shape().last().unwrap();
    for (r, row) in t.data().chunks(k).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Domain(format!(
                "{what} row {r} is not a probability distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// `-sum_i target_i * log(clamp(pred_i, 1e-7, 1))`, averaged over rows when
/// the inputs are `[m, K]`.
pub fn cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_distribution(pred, "prediction")?;
    check_distribution(target, "target")?;
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let ce = cross_entropy_node(&mut g, p, t)?;
    g.value(ce).item()
}

/// Graph form of [`cross_entropy`]; no normalisation check.
pub fn cross_entropy_node(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if g.value(target).shape() != shape.as_slice() || shape.len() > 2 {
        return Err(Error::shape(format!(
            "cross_entropy of {shape:?} and {:?}",
            g.value(target).shape()
        )));
    }
    let rows = if shape.len() == 2 { shape[0] } else { 1 };
    let logp = g.log_clamped(pred)?;
    let weighted = g.mul(target, logp)?;
    let total = g.sum(weighted)?;
    g.mul_scalar(total, -1.0 / rows as f64)
}
