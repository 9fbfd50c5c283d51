//! Stochastic gradient descent with momentum.
//!
//! `v ← μ·v + g`, `θ ← θ − η·v`. Frozen layers are never touched.

use super::layers::LayerGrad;
use super::model::{Gradients, Model};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<Option<LayerGrad>>>,
    pending: Option<Gradients>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "learning rate {learning_rate} must be positive and momentum {momentum} in [0, 1)"
            )));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
            pending: None,
        })
    }

    /// Stores gradients from a backward pass for the next [`Sgd::step`].
    pub fn set_gradients(&mut self, grads: Gradients) {
        self.pending = Some(grads);
    }

    pub fn has_gradients(&self) -> bool {
        self.pending.is_some()
    }

    /// Applies and consumes the pending gradients.
    pub fn step(&mut self, model: &mut Model) -> Result<()> {
        let grads = self
            .pending
            .take()
            .ok_or_else(|| Error::State("step called before backward".into()))?;
        let sections = grads.sections();
        if self.velocity.is_empty() {
            self.velocity = sections.iter().map(|s| vec![None; s.len()]).collect();
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        let velocity = &mut self.velocity;
        let mut mismatch = None;
        model.for_each_param_layer_mut(|si, li, layer| {
            if !layer.is_trainable() || mismatch.is_some() {
                return;
            }
            let Some(Some(g)) = sections.get(si).and_then(|s| s.get(li)) else {
                mismatch = Some(format!("no gradient for section {si} layer {li}"));
                return;
            };
            let Some(vs) = velocity.get_mut(si).and_then(|s| s.get_mut(li)) else {
                mismatch = Some(format!("optimizer state lacks section {si} layer {li}"));
                return;
            };
            let v = vs.get_or_insert_with(|| LayerGrad {
                weight: vec![0.0; g.weight.len()],
                bias: vec![0.0; g.bias.len()],
            });
            let (w, b) = layer.params_mut().expect("parameterized layer");
            if w.len() != g.weight.len() || b.len() != g.bias.len() || v.weight.len() != w.len() {
                mismatch = Some(format!("gradient shape differs at section {si} layer {li}"));
                return;
            }
            update(w, &g.weight, &mut v.weight, lr, mu);
            update(b, &g.bias, &mut v.bias, lr, mu);
        });
        match mismatch {
            Some(m) => Err(Error::Shape(m)),
            None => Ok(()),
        }
    }
}

fn update(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64) {
    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
}
