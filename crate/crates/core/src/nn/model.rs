//! Beam predictor with an optional domain-classifier branch.
//!
//! ```text
//! input ─ trunk ─┬─ head ─────────────────────────────────── per-beam rates
//!                └─ GRL ─ dense ─ ReLU ─ dense ─ sigmoid ─── P(source)
//! ```

use serde::{Deserialize, Serialize};

use super::layers::{specs_param_count, Act, Layer, LayerGrad, LayerSpec};
use super::loss::{bce_domain_loss, bce_grad, mse_grad, mse_loss};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn from_specs(specs: &[LayerSpec]) -> Result<Self> {
        Ok(Sequential {
            layers: specs.iter().map(Layer::from_spec).collect::<Result<_>>()?,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn forward(&self, x: &Act) -> Result<Act> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `x`, which must be the input of layer `start`.
    pub fn forward_from(&self, start: usize, x: &Act) -> Result<Act> {
        let mut cur = x.clone();
        for layer in &self.layers[start..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Runs layers `range` on `x`.
    pub fn forward_range(&self, range: std::ops::Range<usize>, x: &Act) -> Result<Act> {
        let mut cur = x.clone();
        for layer in &self.layers[range] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Runs layers `start..` and records which piecewise-linear branch each
    /// ReLU and max-pool takes.
    fn forward_pattern(&self, start: usize, x: &Act, pattern: &mut Vec<u32>) -> Result<Act> {
        let mut cur = x.clone();
        for layer in &self.layers[start..] {
            match layer {
                Layer::Relu => pattern.extend(cur.data.iter().map(|v| u32::from(*v > 0.0))),
                Layer::MaxPool1d { size } => pattern.extend(
                    cur.data
                        .chunks_exact(cur.l)
                        .flat_map(|row| row.chunks_exact(*size).map(|w| crate::beam_metrics::argmax(w) as u32)),
                ),
                _ => {}
            }
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Activations `[x, y_start, y_start+1, …]` for a later backward pass.
    fn forward_train(&self, start: usize, x: Act) -> Result<Vec<Act>> {
        let mut acts = Vec::with_capacity(self.layers.len() - start + 1);
        acts.push(x);
        for layer in &self.layers[start..] {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    fn backward(
        &self,
        start: usize,
        acts: &[Act],
        grad: Act,
        grads: &mut [Option<LayerGrad>],
        need_input: bool,
    ) -> Option<Act> {
        let first_trainable = (start..self.layers.len()).find(|&i| self.layers[i].is_trainable());
        let mut g = grad;
        for i in (start..self.layers.len()).rev() {
            let wants_input = need_input || (i > start && first_trainable.is_some_and(|f| f < i));
            if !wants_input && !self.layers[i].is_trainable() {
                return None;
            }
            let a = i - start;
            g = self.layers[i].backward(&acts[a], &acts[a + 1], &g, grads[i].as_mut(), wants_input)?;
        }
        Some(g)
    }

    fn zero_grads(&self) -> Vec<Option<LayerGrad>> {
        self.layers.iter().map(|l| if l.is_trainable() { l.zero_grad() } else { None }).collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_trainable()).map(Layer::param_count).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }
}

/// Parameter gradients of a whole model, aligned with its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<Option<LayerGrad>>,
    pub head: Vec<Option<LayerGrad>>,
    pub domain: Vec<Option<LayerGrad>>,
}

impl Gradients {
    pub fn sections(&self) -> [&Vec<Option<LayerGrad>>; 3] {
        [&self.trunk, &self.head, &self.domain]
    }

    fn sections_mut(&mut self) -> [&mut Vec<Option<LayerGrad>>; 3] {
        [&mut self.trunk, &mut self.head, &mut self.domain]
    }

    /// Every gradient value in layer order (weights, then biases).
    pub fn flatten(&self) -> Vec<f64> {
        self.sections()
            .iter()
            .flat_map(|s| s.iter().flatten())
            .flat_map(|g| g.weight.iter().chain(g.bias.iter()).copied())
            .collect()
    }

    /// Elementwise sum; both sides must have identical structure.
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.sections_mut().into_iter().zip(other.sections()) {
            if a.len() != b.len() {
                return Err(Error::Shape("gradient structures differ".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                match (x, y) {
                    (Some(x), Some(y)) if x.weight.len() == y.weight.len() && x.bias.len() == y.bias.len() => {
                        x.weight.iter_mut().zip(&y.weight).for_each(|(p, q)| *p += q);
                        x.bias.iter_mut().zip(&y.bias).for_each(|(p, q)| *p += q);
                    }
                    (None, None) => {}
                    _ => return Err(Error::Shape("gradient structures differ".into())),
                }
            }
        }
        Ok(())
    }
}

/// What a training step optimizes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Objective<'a> {
    /// Normalized rate targets, `n × D`; `None` disables the regression loss.
    pub targets: Option<&'a [f64]>,
    /// Samples that contribute to the regression loss; `None` means all.
    pub mse_mask: Option<&'a [bool]>,
    /// Domain labels (1 source, 0 target); `None` disables the domain loss.
    pub domain_labels: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub mse: f64,
    pub bce: f64,
    /// Domain predictions on the correct side of 0.5.
    pub domain_correct: usize,
    pub domain_count: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.mse + self.bce
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub trunk: Sequential,
    pub head: Sequential,
    pub domain: Option<Sequential>,
    pub seed: u64,
}

/// Builds the beam-predictor layer stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input length `K_DL`; the input has two channels (real, imaginary).
    pub input_len: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Conv blocks (0-based) followed by a 2× max-pool.
    pub pool_after: Vec<usize>,
    pub hidden: usize,
    pub outputs: usize,
    pub domain_hidden: usize,
}

/// Largest model an [`Architecture`] may describe.
pub const MAX_MODEL_PARAMS: usize = 1 << 24;

impl Architecture {
    /// Four conv blocks (16/32/64/64, kernel 3), pooling after blocks 2 and 4,
    /// a 256-unit hidden layer and a 64-unit domain classifier.
    pub fn standard(input_len: usize, outputs: usize) -> Self {
        Architecture {
            input_len,
            conv_channels: vec![16, 32, 64, 64],
            kernel: 3,
            pool_after: vec![1, 3],
            hidden: 256,
            outputs,
            domain_hidden: 64,
        }
    }

    /// Flattened length after the conv blocks.
    pub fn flat_width(&self) -> Result<usize> {
        let mut len = self.input_len;
        for b in 0..self.conv_channels.len() {
            if self.pool_after.contains(&b) {
                len /= 2;
            }
        }
        if len == 0 {
            return Err(Error::Config(format!(
                "input length {} too short for {} pooling stages",
                self.input_len,
                self.pool_after.len()
            )));
        }
        len.checked_mul(self.conv_channels.last().copied().unwrap_or(2))
            .ok_or_else(|| Error::Config("flattened width overflows".into()))
    }

    pub fn trunk_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.kernel.is_multiple_of(2) || self.input_len == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::Config("kernel must be odd and sizes positive".into()));
        }
        let mut specs = Vec::new();
        let mut in_ch = 2;
        for (b, &ch) in self.conv_channels.iter().enumerate() {
            specs.push(LayerSpec::Conv1d {
                in_channels: in_ch,
                out_channels: ch,
                kernel: self.kernel,
                stride: 1,
                padding: self.kernel / 2,
                frozen: false,
            });
            specs.push(LayerSpec::Relu);
            if self.pool_after.contains(&b) {
                specs.push(LayerSpec::MaxPool1d { size: 2 });
            }
            in_ch = ch;
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense {
            inputs: self.flat_width()?,
            outputs: self.hidden,
            frozen: false,
        });
        specs.push(LayerSpec::Relu);
        Ok(specs)
    }

    pub fn head_specs(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Dense {
            inputs: self.hidden,
            outputs: self.outputs,
            frozen: false,
        }]
    }

    /// Two new dense layers (`hidden → hidden → D`) used by pure fine-tuning.
    pub fn finetune_head_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs: self.hidden,
                outputs: self.hidden,
                frozen: false,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: self.hidden,
                outputs: self.outputs,
                frozen: false,
            },
        ]
    }

    pub fn domain_specs(&self, lambda: f64) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Grl { lambda },
            LayerSpec::Dense {
                inputs: self.hidden,
                outputs: self.domain_hidden,
                frozen: false,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: self.domain_hidden,
                outputs: 1,
                frozen: false,
            },
            LayerSpec::Sigmoid,
        ]
    }

    /// Checks the layout and returns the parameter count of the predictor
    /// with its domain branch, without allocating it.
    pub fn validate(&self) -> Result<usize> {
        let mut specs = self.trunk_specs()?;
        specs.extend(self.head_specs());
        specs.extend(self.domain_specs(0.0));
        specs_param_count(&specs, MAX_MODEL_PARAMS)
    }

    /// Freshly initialized predictor, with a domain branch when `lambda` is given.
    pub fn build(&self, seed: u64, lambda: Option<f64>) -> Result<Model> {
        let mut model = Model {
            trunk: Sequential::from_specs(&self.trunk_specs()?)?,
            head: Sequential::from_specs(&self.head_specs())?,
            domain: lambda.map(|l| Sequential::from_specs(&self.domain_specs(l))).transpose()?,
            seed,
        };
        model.init_all(seed);
        Ok(model)
    }
}

fn init_section(seq: &mut Sequential, seed: u64, base: u64) {
    for (i, layer) in seq.layers.iter_mut().enumerate() {
        let mut r = rng::stream(seed, purpose::INIT, base + i as u64);
        layer.init(&mut r);
    }
}

impl Model {
    fn init_all(&mut self, seed: u64) {
        init_section(&mut self.trunk, seed, 0);
        init_section(&mut self.head, seed, 1 << 16);
        if let Some(d) = self.domain.as_mut() {
            init_section(d, seed, 2 << 16);
        }
    }

    /// Replaces the head with freshly initialized layers.
    pub fn replace_head(&mut self, specs: &[LayerSpec], seed: u64) -> Result<()> {
        let mut head = Sequential::from_specs(specs)?;
        init_section(&mut head, seed, 3 << 16);
        self.head = head;
        Ok(())
    }

    /// Attaches a freshly initialized domain branch.
    pub fn attach_domain(&mut self, specs: &[LayerSpec], seed: u64) -> Result<()> {
        let mut d = Sequential::from_specs(specs)?;
        init_section(&mut d, seed, 2 << 16);
        self.domain = Some(d);
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        if let Some(d) = self.domain.as_mut() {
            for l in &mut d.layers {
                if let Layer::Grl { lambda: v } = l {
                    *v = lambda;
                }
            }
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        self.domain.as_ref().and_then(|d| {
            d.layers.iter().find_map(|l| match l {
                Layer::Grl { lambda } => Some(*lambda),
                _ => None,
            })
        })
    }

    /// Freezes the first `count` parameterized trunk layers and unfreezes the rest.
    pub fn freeze_leading(&mut self, count: usize) -> Result<()> {
        let total = self.trunk.layers.iter().filter(|l| l.has_params()).count();
        if count > total {
            return Err(Error::Config(format!("cannot freeze {count} of {total} trunk layers")));
        }
        let mut seen = 0;
        for l in &mut self.trunk.layers {
            if l.has_params() {
                l.set_frozen(seen < count);
                seen += 1;
            }
        }
        Ok(())
    }

    /// Number of leading trunk layers with nothing to train; their output can
    /// be computed once and reused.
    pub fn frozen_prefix_len(&self) -> usize {
        self.trunk
            .layers
            .iter()
            .position(Layer::is_trainable)
            .unwrap_or(self.trunk.layers.len())
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trunk.trainable_param_count()
            + self.head.trainable_param_count()
            + self.domain.as_ref().map_or(0, Sequential::trainable_param_count)
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count() + self.domain.as_ref().map_or(0, Sequential::param_count)
    }

    /// Predicted rates and the shared feature vector fed to the domain branch.
    pub fn forward(&self, x: &Act) -> Result<(Act, Act)> {
        let feature = self.trunk.forward(x)?;
        let pred = self.head.forward(&feature)?;
        Ok((pred, feature))
    }

    /// Predicted rates, starting from the output of trunk layer `trunk_start - 1`.
    pub fn predict_from(&self, trunk_start: usize, x: &Act) -> Result<Act> {
        let feature = self.trunk.forward_from(trunk_start, x)?;
        self.head.forward(&feature)
    }

    /// Domain-classifier probabilities for shared features.
    pub fn domain_probs(&self, feature: &Act) -> Result<Vec<f64>> {
        let d = self
            .domain
            .as_ref()
            .ok_or_else(|| Error::State("model has no domain classifier".into()))?;
        Ok(d.forward(feature)?.data)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            trunk: self.trunk.zero_grads(),
            head: self.head.zero_grads(),
            domain: self.domain.as_ref().map_or_else(Vec::new, Sequential::zero_grads),
        }
    }

    /// Branch pattern of every ReLU and max-pool touched by `obj`. Two
    /// parameter settings with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self, x: &Act, trunk_start: usize, obj: &Objective) -> Result<Vec<u32>> {
        let mut pattern = Vec::new();
        let feature = self.trunk.forward_pattern(trunk_start, x, &mut pattern)?;
        if obj.targets.is_some() {
            self.head.forward_pattern(0, &feature, &mut pattern)?;
        }
        if let (Some(_), Some(d)) = (obj.domain_labels, self.domain.as_ref()) {
            d.forward_pattern(0, &feature, &mut pattern)?;
        }
        Ok(pattern)
    }

    /// Loss values without gradients, for the same inputs as [`Model::loss_and_grads`].
    pub fn losses(&self, x: &Act, trunk_start: usize, obj: &Objective) -> Result<LossParts> {
        let feature = self.trunk.forward_from(trunk_start, x)?;
        let mut parts = LossParts::default();
        if let Some(targets) = obj.targets {
            let pred = self.head.forward(&feature)?;
            let width = pred.l;
            if targets.len() != pred.data.len() {
                return Err(Error::Shape(format!(
                    "{} targets for {} predictions",
                    targets.len(),
                    pred.data.len()
                )));
            }
            let rows: Vec<usize> = match obj.mse_mask {
                Some(mask) if mask.len() != x.n => return Err(Error::Shape("mse mask length".into())),
                Some(mask) => (0..x.n).filter(|&i| mask[i]).collect(),
                None => (0..x.n).collect(),
            };
            if !rows.is_empty() {
                let gather = |src: &[f64]| -> Vec<f64> {
                    rows.iter().flat_map(|&r| src[r * width..(r + 1) * width].iter().copied()).collect()
                };
                parts.mse = mse_loss(&gather(&pred.data), &gather(targets), width)?;
            }
        }
        if let Some(labels) = obj.domain_labels {
            let probs = self.domain_probs(&feature)?;
            if labels.len() != x.n {
                return Err(Error::Shape(format!("{} domain labels for {} samples", labels.len(), x.n)));
            }
            parts.bce = bce_domain_loss(&probs, labels)?;
            parts.domain_count = x.n;
            parts.domain_correct = probs.iter().zip(labels).filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5)).count();
        }
        Ok(parts)
    }

    /// Forward and backward pass on one batch. `x` is the input of trunk layer
    /// `trunk_start`; earlier layers must be frozen.
    pub fn loss_and_grads(&self, x: &Act, trunk_start: usize, obj: &Objective) -> Result<(LossParts, Gradients)> {
        if trunk_start > self.frozen_prefix_len() {
            return Err(Error::State("cannot skip trainable trunk layers".into()));
        }
        let n = x.n;
        let trunk_acts = self.trunk.forward_train(trunk_start, x.clone())?;
        let feature = trunk_acts.last().unwrap().clone();
        let mut grads = self.zero_grads();
        let mut parts = LossParts::default();
        let mut feature_grad = Act::zeros(n, feature.c, feature.l);

        if let Some(targets) = obj.targets {
            let head_acts = self.head.forward_train(0, feature.clone())?;
            let pred = head_acts.last().unwrap();
            let width = pred.l;
            if targets.len() != pred.data.len() {
                return Err(Error::Shape(format!(
                    "{} targets for {} predictions",
                    targets.len(),
                    pred.data.len()
                )));
            }
            let rows: Vec<usize> = match obj.mse_mask {
                Some(mask) if mask.len() != n => return Err(Error::Shape("mse mask length".into())),
                Some(mask) => (0..n).filter(|&i| mask[i]).collect(),
                None => (0..n).collect(),
            };
            if !rows.is_empty() {
                let gather = |src: &[f64]| -> Vec<f64> {
                    rows.iter().flat_map(|&r| src[r * width..(r + 1) * width].iter().copied()).collect()
                };
                let (p, t) = (gather(&pred.data), gather(targets));
                parts.mse = mse_loss(&p, &t, width)?;
                let g_rows = mse_grad(&p, &t, width)?;
                let mut g = Act::zeros(n, 1, width);
                for (k, &r) in rows.iter().enumerate() {
                    g.data[r * width..(r + 1) * width].copy_from_slice(&g_rows[k * width..(k + 1) * width]);
                }
                if let Some(fg) = self.head.backward(0, &head_acts, g, &mut grads.head, true) {
                    feature_grad.data.iter_mut().zip(&fg.data).for_each(|(a, b)| *a += b);
                }
            }
        }

        if let Some(labels) = obj.domain_labels {
            let dom = self
                .domain
                .as_ref()
                .ok_or_else(|| Error::State("domain labels given but model has no domain classifier".into()))?;
            if labels.len() != n {
                return Err(Error::Shape(format!("{} domain labels for {n} samples", labels.len())));
            }
            let acts = dom.forward_train(0, feature.clone())?;
            let probs = &acts.last().unwrap().data;
            parts.bce = bce_domain_loss(probs, labels)?;
            parts.domain_count = n;
            parts.domain_correct = probs.iter().zip(labels).filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5)).count();
            let g = Act::new(n, 1, 1, bce_grad(probs, labels)?)?;
            if let Some(fg) = dom.backward(0, &acts, g, &mut grads.domain, true) {
                feature_grad.data.iter_mut().zip(&fg.data).for_each(|(a, b)| *a += b);
            }
        }

        self.trunk.backward(trunk_start, &trunk_acts, feature_grad, &mut grads.trunk, false);
        Ok((parts, grads))
    }

    fn sections_mut(&mut self) -> Vec<&mut Sequential> {
        let mut v = vec![&mut self.trunk, &mut self.head];
        if let Some(d) = self.domain.as_mut() {
            v.push(d);
        }
        v
    }

    fn sections(&self) -> Vec<&Sequential> {
        let mut v = vec![&self.trunk, &self.head];
        if let Some(d) = self.domain.as_ref() {
            v.push(d);
        }
        v
    }

    /// Every parameter tensor `(weight, bias)` in layer order.
    pub fn param_tensors(&self) -> Vec<(&[f64], &[f64])> {
        self.sections()
            .into_iter()
            .flat_map(|s| s.layers.iter().filter_map(Layer::params))
            .collect()
    }

    pub fn for_each_param_layer_mut(&mut self, mut f: impl FnMut(usize, usize, &mut Layer)) {
        for (si, s) in self.sections_mut().into_iter().enumerate() {
            for (li, l) in s.layers.iter_mut().enumerate() {
                if l.has_params() {
                    f(si, li, l);
                }
            }
        }
    }
}
