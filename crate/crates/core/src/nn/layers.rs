//! Layer kinds with hand-written forward and backward passes.
//!
//! Activations are `[n, channels, length]` row-major. Dense layers expect a
//! flattened input (`channels == 1`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn new(n: usize, c: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * l {
            return Err(Error::Shape(format!("{} values for a [{n}, {c}, {l}] activation", data.len())));
        }
        Ok(Act { n, c, l, data })
    }

    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Act {
            n,
            c,
            l,
            data: vec![0.0; n * c * l],
        }
    }

    /// Values of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.c * self.l;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn width(&self) -> usize {
        self.c * self.l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][kernel]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
    Relu,
    MaxPool1d { size: usize },
    Flatten,
    Sigmoid,
    /// Gradient reversal: identity forward, `-λ · g` backward.
    Grl { lambda: f64 },
}

/// Serializable layer description (no parameter values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        frozen: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        frozen: bool,
    },
    Relu,
    MaxPool1d {
        size: usize,
    },
    Flatten,
    Sigmoid,
    Grl {
        lambda: f64,
    },
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros(weights: usize, biases: usize) -> Self {
        LayerGrad {
            weight: vec![0.0; weights],
            bias: vec![0.0; biases],
        }
    }
}

/// Reverses and scales an upstream gradient.
pub fn grl_backward(grad: &[f64], lambda: f64) -> Vec<f64> {
    grad.iter().map(|g| -lambda * g).collect()
}

/// Largest weight tensor a layer may hold.
pub const MAX_LAYER_PARAMS: usize = 1 << 24;

fn check_size(dims: &[usize]) -> Result<usize> {
    match dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) {
        Some(n) if n <= MAX_LAYER_PARAMS => Ok(n),
        _ => Err(Error::Config(format!("layer of shape {dims:?} exceeds {MAX_LAYER_PARAMS} weights"))),
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
fn glorot<R: Rng>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl Conv1d {
    fn out_len(&self, l: usize) -> Option<usize> {
        (l + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1)
    }

    /// Column matrix `[in·k][n·l_out]`: row `i·k + j`, column `n·l_out + t`
    /// holds `x[n][i][t·stride + j − padding]`, zero outside the input.
    fn im2col(&self, x: &Act, l_out: usize) -> Vec<f64> {
        let (k, w) = (self.kernel, x.n * l_out);
        let mut cols = vec![0.0; self.in_channels * k * w];
        for i in 0..self.in_channels {
            for j in 0..k {
                let row = &mut cols[(i * k + j) * w..(i * k + j + 1) * w];
                for n in 0..x.n {
                    let xi = &x.data[(n * x.c + i) * x.l..(n * x.c + i + 1) * x.l];
                    let dst = &mut row[n * l_out..(n + 1) * l_out];
                    for (t, v) in dst.iter_mut().enumerate() {
                        let idx = (t * self.stride + j).wrapping_sub(self.padding);
                        if idx < x.l {
                            *v = xi[idx];
                        }
                    }
                }
            }
        }
        cols
    }

    fn forward(&self, x: &Act) -> Result<Act> {
        if x.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels, x.c
            )));
        }
        let l_out = self
            .out_len(x.l)
            .ok_or_else(|| Error::Shape(format!("input length {} shorter than kernel", x.l)))?;
        let cols = self.im2col(x, l_out);
        let (rows, w) = (self.in_channels * self.kernel, x.n * l_out);
        let mut out = Act::zeros(x.n, self.out_channels, l_out);
        let mut acc = vec![0.0; w];
        for o in 0..self.out_channels {
            acc.fill(self.bias[o]);
            for r in 0..rows {
                axpy(self.weight[o * rows + r], &cols[r * w..(r + 1) * w], &mut acc);
            }
            for n in 0..x.n {
                out.data[(n * self.out_channels + o) * l_out..(n * self.out_channels + o + 1) * l_out]
                    .copy_from_slice(&acc[n * l_out..(n + 1) * l_out]);
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &Act, g: &Act, grads: Option<&mut LayerGrad>, need_input: bool) -> Option<Act> {
        let (k, l_out) = (self.kernel, g.l);
        let (rows, w) = (self.in_channels * k, x.n * l_out);
        // Gradient regrouped as [out][n·l_out].
        let mut gt = vec![0.0; self.out_channels * w];
        for n in 0..x.n {
            for o in 0..self.out_channels {
                gt[o * w + n * l_out..o * w + (n + 1) * l_out]
                    .copy_from_slice(&g.data[(n * self.out_channels + o) * l_out..(n * self.out_channels + o + 1) * l_out]);
            }
        }
        let cols = self.im2col(x, l_out);
        if let Some(gr) = grads {
            for o in 0..self.out_channels {
                let go = &gt[o * w..(o + 1) * w];
                gr.bias[o] += go.iter().sum::<f64>();
                for r in 0..rows {
                    gr.weight[o * rows + r] += dot(go, &cols[r * w..(r + 1) * w]);
                }
            }
        }
        if !need_input {
            return None;
        }
        let mut dcols = cols;
        dcols.fill(0.0);
        for o in 0..self.out_channels {
            let go = &gt[o * w..(o + 1) * w];
            for r in 0..rows {
                axpy(self.weight[o * rows + r], go, &mut dcols[r * w..(r + 1) * w]);
            }
        }
        let mut dx = Act::zeros(x.n, x.c, x.l);
        for i in 0..self.in_channels {
            for j in 0..k {
                let row = &dcols[(i * k + j) * w..(i * k + j + 1) * w];
                for n in 0..x.n {
                    let dxi = &mut dx.data[(n * x.c + i) * x.l..(n * x.c + i + 1) * x.l];
                    for (t, v) in row[n * l_out..(n + 1) * l_out].iter().enumerate() {
                        let idx = (t * self.stride + j).wrapping_sub(self.padding);
                        if idx < x.l {
                            dxi[idx] += v;
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

impl Dense {
    fn forward(&self, x: &Act) -> Result<Act> {
        if x.c != 1 || x.l != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects [n, 1, {}], got [n, {}, {}]",
                self.inputs, x.c, x.l
            )));
        }
        let mut out = Act::zeros(x.n, 1, self.outputs);
        for n in 0..x.n {
            let xs = x.sample(n);
            let ys = &mut out.data[n * self.outputs..(n + 1) * self.outputs];
            for (o, y) in ys.iter_mut().enumerate() {
                *y = self.bias[o] + dot(&self.weight[o * self.inputs..(o + 1) * self.inputs], xs);
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &Act, g: &Act, mut grads: Option<&mut LayerGrad>, need_input: bool) -> Option<Act> {
        let mut dx = need_input.then(|| Act::zeros(x.n, 1, self.inputs));
        for n in 0..x.n {
            let xs = x.sample(n);
            let gs = g.sample(n);
            for (o, &go) in gs.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = o * self.inputs..(o + 1) * self.inputs;
                if let Some(gr) = grads.as_deref_mut() {
                    gr.bias[o] += go;
                    axpy(go, xs, &mut gr.weight[row.clone()]);
                }
                if let Some(dx) = dx.as_mut() {
                    axpy(go, &self.weight[row], &mut dx.data[n * self.inputs..(n + 1) * self.inputs]);
                }
            }
        }
        dx
    }
}

impl LayerSpec {
    /// Weights plus biases of the layer this spec describes, after checking
    /// the spec; allocates nothing.
    pub fn param_count(&self) -> Result<usize> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || padding >= kernel {
                    return Err(Error::Config(format!("invalid conv1d spec {self:?}")));
                }
                Ok(check_size(&[out_channels, in_channels, kernel])? + out_channels)
            }
            LayerSpec::Dense { inputs, outputs, .. } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config(format!("invalid dense spec {self:?}")));
                }
                Ok(check_size(&[inputs, outputs])? + outputs)
            }
            LayerSpec::MaxPool1d { size: 0 } => Err(Error::Config("pool size must be positive".into())),
            LayerSpec::Grl { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                Err(Error::Config(format!("GRL lambda {lambda} must be finite and >= 0")))
            }
            _ => Ok(0),
        }
    }
}

/// Total parameters of a list of specs, failing above `limit`.
pub fn specs_param_count(specs: &[LayerSpec], limit: usize) -> Result<usize> {
    let mut total = 0usize;
    for s in specs {
        total = total.saturating_add(s.param_count()?);
        if total > limit {
            return Err(Error::Config(format!("model exceeds {limit} parameters")));
        }
    }
    Ok(total)
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec) -> Result<Self> {
        spec.param_count()?;
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                frozen,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || padding >= kernel {
                    return Err(Error::Config(format!("invalid conv1d spec {spec:?}")));
                }
                Layer::Conv1d(Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight: vec![0.0; out_channels * in_channels * kernel],
                    bias: vec![0.0; out_channels],
                    frozen,
                })
            }
            LayerSpec::Dense { inputs, outputs, frozen } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config(format!("invalid dense spec {spec:?}")));
                }
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight: vec![0.0; inputs * outputs],
                    bias: vec![0.0; outputs],
                    frozen,
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool1d { size } => {
                if size == 0 {
                    return Err(Error::Config("pool size must be positive".into()));
                }
                Layer::MaxPool1d { size }
            }
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Grl { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::Config(format!("GRL lambda {lambda} must be finite and >= 0")));
                }
                Layer::Grl { lambda }
            }
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                frozen: c.frozen,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                frozen: d.frozen,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool1d { size } => LayerSpec::MaxPool1d { size: *size },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Grl { lambda } => LayerSpec::Grl { lambda: *lambda },
        }
    }

    /// Draws Glorot-uniform weights and zero biases.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        match self {
            Layer::Conv1d(c) => {
                c.weight = glorot(rng, c.weight.len(), c.in_channels * c.kernel, c.out_channels * c.kernel);
                c.bias.fill(0.0);
            }
            Layer::Dense(d) => {
                d.weight = glorot(rng, d.weight.len(), d.inputs, d.outputs);
                d.bias.fill(0.0);
            }
            _ => {}
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv1d(_) | Layer::Dense(_))
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Conv1d(c) => c.frozen,
            Layer::Dense(d) => d.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Conv1d(c) => c.frozen = frozen,
            Layer::Dense(d) => d.frozen = frozen,
            _ => {}
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.has_params() && !self.is_frozen()
    }

    pub fn param_count(&self) -> usize {
        self.params().map_or(0, |(w, b)| w.len() + b.len())
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv1d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv1d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }

    /// Zero gradient buffer matching the parameters, if any.
    pub fn zero_grad(&self) -> Option<LayerGrad> {
        self.params().map(|(w, b)| LayerGrad::zeros(w.len(), b.len()))
    }

    /// Weight tensor dimensions.
    pub fn weight_dims(&self) -> Option<Vec<u64>> {
        match self {
            Layer::Conv1d(c) => Some(vec![c.out_channels as u64, c.in_channels as u64, c.kernel as u64]),
            Layer::Dense(d) => Some(vec![d.outputs as u64, d.inputs as u64]),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Act) -> Result<Act> {
        match self {
            Layer::Conv1d(c) => c.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => Ok(Act {
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
                ..*x
            }),
            Layer::MaxPool1d { size } => {
                let l_out = x.l / size;
                if l_out == 0 {
                    return Err(Error::Shape(format!("length {} shorter than pool {size}", x.l)));
                }
                let mut out = Act::zeros(x.n, x.c, l_out);
                for (row_in, row_out) in x.data.chunks_exact(x.l).zip(out.data.chunks_exact_mut(l_out)) {
                    for (t, o) in row_out.iter_mut().enumerate() {
                        *o = row_in[t * size..(t + 1) * size]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max);
                    }
                }
                Ok(out)
            }
            Layer::Flatten => Ok(Act {
                n: x.n,
                c: 1,
                l: x.c * x.l,
                data: x.data.clone(),
            }),
            Layer::Sigmoid => Ok(Act {
                data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                ..*x
            }),
            Layer::Grl { .. } => Ok(x.clone()),
        }
    }

    /// Backpropagates `g` (gradient w.r.t. `y = forward(x)`), accumulating
    /// parameter gradients into `grads` and returning the input gradient when
    /// `need_input` is set.
    pub fn backward(
        &self,
        x: &Act,
        y: &Act,
        g: &Act,
        grads: Option<&mut LayerGrad>,
        need_input: bool,
    ) -> Option<Act> {
        let grads = if self.is_trainable() { grads } else { None };
        match self {
            Layer::Conv1d(c) => c.backward(x, g, grads, need_input),
            Layer::Dense(d) => d.backward(x, g, grads, need_input),
            _ if !need_input => None,
            Layer::Relu => Some(Act {
                data: y.data.iter().zip(&g.data).map(|(yv, gv)| if *yv > 0.0 { *gv } else { 0.0 }).collect(),
                ..*x
            }),
            Layer::MaxPool1d { size } => {
                let mut dx = Act::zeros(x.n, x.c, x.l);
                let l_out = y.l;
                for ((row_in, row_g), row_dx) in x
                    .data
                    .chunks_exact(x.l)
                    .zip(g.data.chunks_exact(l_out))
                    .zip(dx.data.chunks_exact_mut(x.l))
                {
                    for t in 0..l_out {
                        let window = &row_in[t * size..(t + 1) * size];
                        let arg = crate::beam_metrics::argmax(window);
                        row_dx[t * size + arg] += row_g[t];
                    }
                }
                Some(dx)
            }
            Layer::Flatten => Some(Act {
                n: x.n,
                c: x.c,
                l: x.l,
                data: g.data.clone(),
            }),
            Layer::Sigmoid => Some(Act {
                data: y.data.iter().zip(&g.data).map(|(p, gv)| gv * p * (1.0 - p)).collect(),
                ..*x
            }),
            Layer::Grl { lambda } => Some(Act {
                data: grl_backward(&g.data, *lambda),
                ..*x
            }),
        }
    }
}
