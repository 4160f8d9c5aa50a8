use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::{NamedGrads, ParameterSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        if let OptimizerKind::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::invalid(format!(
                    "adam needs 0 <= beta < 1 and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Adam moment estimates for one network. Empty for SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    /// Moments as one parameter set, `first/<name>` and `second/<name>`.
    pub fn to_parameter_set(&self) -> ParameterSet {
        let mut set = ParameterSet::new(0);
        for (name, t) in &self.first {
            set.insert(format!("first/{name}"), t.clone());
        }
        for (name, t) in &self.second {
            set.insert(format!("second/{name}"), t.clone());
        }
        set
    }

    pub fn from_parameter_set(set: &ParameterSet, step: u64) -> Self {
        let take = |prefix: &str| {
            set.strip_prefix(prefix)
                .iter()
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect()
        };
        Self {
            step,
            first: take("first/"),
            second: take("second/"),
        }
    }
}

/// One descent step on every parameter.
///
/// SGD: `p <- p - lr * g`. Adam: bias-corrected moments,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`, with the moments kept in
/// `state`.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &NamedGrads,
    kind: &OptimizerKind,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate {lr} must be > 0")));
    }
    kind.validate()?;
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no gradient for parameter {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if let Some(extra) = grads.keys().find(|n| params.get(n).is_none()) {
        return Err(Error::invalid(format!("gradient for unknown parameter {extra}")));
    }

    match *kind {
        OptimizerKind::Sgd => {
            for (name, p) in params.iter_mut() {
                let g = &grads[name];
                p.data_mut().iter_mut().zip(g.data()).for_each(|(p, g)| *p -= lr * g);
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            state.step += 1;
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (name, p) in params.iter_mut() {
                let g = &grads[name];
                let m = state
                    .first
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(p.shape()));
                m.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(m, g)| *m = beta1 * *m + (1.0 - beta1) * g);
                let v = state
                    .second
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(p.shape()));
                v.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(v, g)| *v = beta2 * *v + (1.0 - beta2) * g * g);
                for ((p, m), v) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
