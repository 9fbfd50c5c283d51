//! Training regimes: source pretraining, fine-tuning with domain adaptation,
//! pure fine-tuning and training from scratch.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::{Act, Architecture, Model, Objective, Sgd};
use crate::rng::{self, purpose};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pretrain,
    TransferDa,
    FinetunePure,
    Scratch,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Pretrain => "pretrain",
            Regime::TransferDa => "transfer_da",
            Regime::FinetunePure => "finetune_pure",
            Regime::Scratch => "scratch",
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda: f64,
    /// Ramp λ with `2/(1+e^{−10p}) − 1` over training progress `p`.
    #[serde(default)]
    pub lambda_schedule: bool,
    /// Leading parameterized trunk layers kept fixed (`freezed`).
    pub freeze_count: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    #[serde(default = "default_true")]
    pub mse_on_source: bool,
    /// Share of each training set held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn new(regime: Regime) -> Self {
        TrainConfig {
            regime,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            momentum: 0.9,
            lambda: 1.0,
            lambda_schedule: false,
            freeze_count: 4,
            seed: 0,
            patience: 10,
            mse_on_source: true,
            val_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning_rate must be positive and momentum in [0, 1)".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn lambda_at(&self, progress: f64) -> f64 {
        if self.lambda_schedule {
            self.lambda * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0)
        } else {
            self.lambda
        }
    }
}

/// Dense inputs and targets of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `[n, 2, K_DL]`, or the cached output of a frozen trunk prefix.
    pub x: Act,
    /// `n × D` rate targets.
    pub y: Vec<f64>,
    pub outputs: usize,
}

impl Tensors {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let n = ds.len();
        let (k_dl, d) = (ds.manifest.k_dl, ds.manifest.num_beams);
        let mut x = Vec::with_capacity(n * 2 * k_dl);
        let mut y = Vec::with_capacity(n * d);
        for s in &ds.samples {
            if s.features.len() != 2 * k_dl || s.labels.len() != d {
                return Err(Error::Shape("sample does not match its manifest".into()));
            }
            x.extend(s.features.iter().map(|v| f64::from(*v)));
            y.extend(s.labels.iter().map(|v| f64::from(*v)));
        }
        Ok(Tensors {
            x: Act::new(n, 2, k_dl, x)?,
            y,
            outputs: d,
        })
    }

    pub fn len(&self) -> usize {
        self.x.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.n == 0
    }

    fn gather_into(&self, idx: &[usize], x: &mut Vec<f64>, y: &mut Vec<f64>) {
        for &i in idx {
            x.extend_from_slice(self.x.sample(i));
            y.extend_from_slice(&self.y[i * self.outputs..(i + 1) * self.outputs]);
        }
    }

    /// Replaces inputs with the output of trunk layers `0..prefix`.
    fn through_prefix(&self, model: &Model, prefix: usize) -> Result<Tensors> {
        if prefix == 0 || self.is_empty() {
            return Ok(self.clone());
        }
        Ok(Tensors {
            x: model.trunk.forward_range(0..prefix, &self.x)?,
            y: self.y.clone(),
            outputs: self.outputs,
        })
    }
}

fn single_bs(ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Config(format!("{what} dataset is empty")));
    }
    if ds.bs_ids().len() != 1 {
        return Err(Error::Config(format!(
            "{what} dataset mixes base stations {:?}; train one model per BS",
            ds.bs_ids()
        )));
    }
    Ok(())
}

/// Deterministic train/validation split. Single-sample sets keep everything
/// for training.
pub fn split_train_val(ds: &Dataset, val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, purpose::SHUFFLE, u64::MAX));
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * val_fraction).round() as usize).clamp(usize::from(val_fraction > 0.0), n - 1)
    };
    let (val, train) = idx.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (ds.select(&train), ds.select(&val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub domain_bce: f64,
    pub domain_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

struct DomainData<'a> {
    source: &'a Tensors,
    source_val: &'a Tensors,
    /// Include source samples in the regression loss.
    mse_on_source: bool,
    /// Train the domain branch with labels; off gives plain fine-tuning with the
    /// same batch schedule.
    domain_loss: bool,
}

fn val_mse(model: &Model, prefix: usize, val: &Tensors) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let obj = Objective {
        targets: Some(&val.y),
        ..Default::default()
    };
    Ok(model.losses(&val.x, prefix, &obj)?.mse)
}

/// Domain accuracy on a balanced mix of held-out target and source inputs.
fn held_out_domain_accuracy(model: &Model, prefix: usize, target: &Tensors, source: &Tensors) -> Result<f64> {
    let m = target.len().min(source.len());
    if m == 0 || model.domain.is_none() {
        return Ok(f64::NAN);
    }
    let idx: Vec<usize> = (0..m).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    target.gather_into(&idx, &mut x, &mut y);
    source.gather_into(&idx, &mut x, &mut y);
    let xa = Act::new(2 * m, target.x.c, target.x.l, x)?;
    let labels: Vec<f64> = (0..2 * m).map(|i| if i < m { 0.0 } else { 1.0 }).collect();
    let obj = Objective {
        domain_labels: Some(&labels),
        ..Default::default()
    };
    let parts = model.losses(&xa, prefix, &obj)?;
    Ok(parts.domain_correct as f64 / parts.domain_count as f64)
}

/// Generic optimization loop with early stopping on `val` MSE. `train` holds
/// the labeled samples of the regime; `domain` adds paired source batches.
fn fit(
    model: &mut Model,
    cfg: &TrainConfig,
    train: &Tensors,
    val: &Tensors,
    domain: Option<DomainData>,
) -> Result<(Vec<EpochMetrics>, usize, f64)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let prefix = model.frozen_prefix_len();
    let train_c = train.through_prefix(model, prefix)?;
    let val_c = val.through_prefix(model, prefix)?;
    let dom_c = match &domain {
        Some(d) => {
            if d.source.is_empty() {
                return Err(Error::Config("source dataset is empty".into()));
            }
            Some((d.source.through_prefix(model, prefix)?, d.source_val.through_prefix(model, prefix)?))
        }
        None => None,
    };

    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let n = train_c.len();
    let batch = cfg.batch_size.min(n);
    let steps = n.div_ceil(batch);
    let mut source_order: Vec<usize> = Vec::new();
    let mut source_cursor = 0usize;
    let mut source_cycle = 0u64;

    let monitor = if val_c.is_empty() { &train_c } else { &val_c };
    let mut best = (val_mse(model, prefix, monitor)?, 0usize, model.clone());
    let mut since_best = 0;
    let mut metrics = Vec::new();
    let total_steps = (cfg.epochs * steps) as f64;

    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, purpose::SHUFFLE, epoch as u64));
        let (mut mse_sum, mut bce_sum, mut weight) = (0.0, 0.0, 0.0);
        for (s, chunk) in order.chunks(batch).enumerate() {
            xb.clear();
            yb.clear();
            train_c.gather_into(chunk, &mut xb, &mut yb);
            let mut rows = chunk.len();
            let mut mask = Vec::new();
            let mut labels = Vec::new();
            if let (Some(d), Some((src, _))) = (&domain, &dom_c) {
                let mut picked = Vec::with_capacity(chunk.len());
                while picked.len() < chunk.len() {
                    if source_cursor == source_order.len() {
                        source_order = (0..src.len()).collect();
                        source_order.shuffle(&mut rng::stream(cfg.seed, purpose::SHUFFLE ^ 1, source_cycle));
                        source_cycle += 1;
                        source_cursor = 0;
                    }
                    picked.push(source_order[source_cursor]);
                    source_cursor += 1;
                }
                src.gather_into(&picked, &mut xb, &mut yb);
                rows += picked.len();
                mask = (0..rows).map(|i| i < chunk.len() || d.mse_on_source).collect();
                if d.domain_loss {
                    labels = (0..rows).map(|i| if i < chunk.len() { 0.0 } else { 1.0 }).collect();
                }
            }
            if model.domain.is_some() {
                let progress = ((epoch - 1) * steps + s) as f64 / total_steps;
                model.set_lambda(cfg.lambda_at(progress));
            }
            let xa = Act::new(rows, train_c.x.c, train_c.x.l, std::mem::take(&mut xb))?;
            let obj = Objective {
                targets: Some(&yb),
                mse_mask: (!mask.is_empty()).then_some(mask.as_slice()),
                domain_labels: (!labels.is_empty()).then_some(labels.as_slice()),
            };
            let (parts, grads) = model.loss_and_grads(&xa, prefix, &obj)?;
            xb = xa.data;
            if !parts.total().is_finite() {
                return Err(Error::DegenerateData(format!("loss diverged at epoch {epoch}")));
            }
            opt.set_gradients(grads);
            opt.step(model)?;
            let w = chunk.len() as f64;
            mse_sum += parts.mse * w;
            bce_sum += parts.bce * w;
            weight += w;
        }
        let v = val_mse(model, prefix, monitor)?;
        let acc = match &dom_c {
            Some((_, sv)) if domain.as_ref().is_some_and(|d| d.domain_loss) => {
                held_out_domain_accuracy(model, prefix, &val_c, sv)?
            }
            _ => f64::NAN,
        };
        metrics.push(EpochMetrics {
            epoch,
            train_mse: mse_sum / weight,
            val_mse: v,
            domain_bce: if domain.as_ref().is_some_and(|d| d.domain_loss) {
                bce_sum / weight
            } else {
                f64::NAN
            },
            domain_acc: acc,
        });
        if v < best.0 {
            best = (v, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_val, best_epoch, best_model) = best;
    *model = best_model;
    Ok((metrics, best_epoch, best_val))
}

fn outcome(model: Model, fitted: (Vec<EpochMetrics>, usize, f64)) -> TrainOutcome {
    TrainOutcome {
        model,
        metrics: fitted.0,
        best_epoch: fitted.1,
        best_val_mse: fitted.2,
    }
}

fn expect_regime(cfg: &TrainConfig, regime: Regime) -> Result<()> {
    if cfg.regime != regime {
        return Err(Error::Config(format!(
            "config regime {} used for {}",
            cfg.regime.name(),
            regime.name()
        )));
    }
    Ok(())
}

/// Trains a fresh model on one BS's source data.
pub fn pretrain(source: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_regime(cfg, Regime::Pretrain)?;
    single_bs(source, "source")?;
    from_scratch(source, arch, cfg)
}

/// Trains a fresh model on one BS's target data, never touching a checkpoint.
pub fn train_scratch(target: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_regime(cfg, Regime::Scratch)?;
    single_bs(target, "target")?;
    from_scratch(target, arch, cfg)
}

fn from_scratch(ds: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, val) = split_train_val(ds, cfg.val_fraction, cfg.seed);
    let mut model = arch.build(cfg.seed, None)?;
    let fitted = fit(
        &mut model,
        cfg,
        &Tensors::from_dataset(&train)?,
        &Tensors::from_dataset(&val)?,
        None,
    )?;
    Ok(outcome(model, fitted))
}

/// Fine-tunes a pretrained model on target data while a domain classifier,
/// behind gradient reversal, pushes the shared features towards domain
/// invariance.
pub fn transfer_da(
    pretrained: &Model,
    target: &Dataset,
    source: Option<&Dataset>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    expect_regime(cfg, Regime::TransferDa)?;
    let source = source.ok_or_else(|| Error::Config("transfer_da requires source-domain data".into()))?;
    single_bs(target, "target")?;
    single_bs(source, "source")?;
    if target.bs_ids() != source.bs_ids() {
        return Err(Error::Config("target and source data belong to different BSs".into()));
    }
    run_transfer(pretrained, target, source, arch, cfg, true)
}

fn run_transfer(
    pretrained: &Model,
    target: &Dataset,
    source: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    domain_loss: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = pretrained.clone();
    model.freeze_leading(cfg.freeze_count)?;
    if domain_loss {
        model.attach_domain(&arch.domain_specs(cfg.lambda), cfg.seed)?;
    } else {
        model.domain = None;
    }
    let (t_train, t_val) = split_train_val(target, cfg.val_fraction, cfg.seed);
    let (s_train, s_val) = split_train_val(source, cfg.val_fraction, cfg.seed);
    let (src, src_val) = (Tensors::from_dataset(&s_train)?, Tensors::from_dataset(&s_val)?);
    let fitted = fit(
        &mut model,
        cfg,
        &Tensors::from_dataset(&t_train)?,
        &Tensors::from_dataset(&t_val)?,
        Some(DomainData {
            source: &src,
            source_val: &src_val,
            mse_on_source: cfg.mse_on_source,
            domain_loss,
        }),
    )?;
    Ok(outcome(model, fitted))
}

/// Freezes the conv blocks, appends two fresh dense layers in place of the
/// output layer and trains on target data only.
pub fn finetune_pure(pretrained: &Model, target: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_regime(cfg, Regime::FinetunePure)?;
    single_bs(target, "target")?;
    cfg.validate()?;
    let mut model = pretrained.clone();
    model.domain = None;
    model.freeze_leading(cfg.freeze_count)?;
    model.replace_head(&arch.finetune_head_specs(), cfg.seed)?;
    let (train, val) = split_train_val(target, cfg.val_fraction, cfg.seed);
    let fitted = fit(
        &mut model,
        cfg,
        &Tensors::from_dataset(&train)?,
        &Tensors::from_dataset(&val)?,
        None,
    )?;
    Ok(outcome(model, fitted))
}

/// Pretrains one model per BS of a multi-BS source dataset.
pub fn pretrain_per_bs(source: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<BTreeMap<u32, TrainOutcome>> {
    if source.is_empty() {
        return Err(Error::Config("source dataset is empty".into()));
    }
    source
        .per_bs()
        .into_iter()
        .map(|(bs, ds)| Ok((bs, pretrain(&ds, arch, cfg)?)))
        .collect()
}

/// Held-out accuracy of a domain classifier trained without gradient reversal
/// on the frozen features of `pretrained`: how separable the two domains are
/// before adaptation.
pub fn domain_probe(
    pretrained: &Model,
    target: &Dataset,
    source: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    single_bs(target, "target")?;
    single_bs(source, "source")?;
    let mut model = pretrained.clone();
    let trunk_params = model.trunk.layers.iter().filter(|l| l.has_params()).count();
    model.freeze_leading(trunk_params)?;
    for l in &mut model.head.layers {
        l.set_frozen(true);
    }
    model.attach_domain(&arch.domain_specs(0.0), cfg.seed)?;
    let (t_train, t_val) = split_train_val(target, cfg.val_fraction, cfg.seed);
    let (s_train, s_val) = split_train_val(source, cfg.val_fraction, cfg.seed);
    let prefix = model.frozen_prefix_len();
    let t = Tensors::from_dataset(&t_train)?.through_prefix(&model, prefix)?;
    let s = Tensors::from_dataset(&s_train)?.through_prefix(&model, prefix)?;
    let tv = Tensors::from_dataset(&t_val)?.through_prefix(&model, prefix)?;
    let sv = Tensors::from_dataset(&s_val)?.through_prefix(&model, prefix)?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let batch = cfg.batch_size.min(t.len());
    let mut source_pos = 0usize;
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, purpose::SHUFFLE, epoch as u64));
        for chunk in order.chunks(batch) {
            xb.clear();
            yb.clear();
            t.gather_into(chunk, &mut xb, &mut yb);
            let picked: Vec<usize> = (0..chunk.len()).map(|i| (source_pos + i) % s.len()).collect();
            source_pos = (source_pos + chunk.len()) % s.len();
            s.gather_into(&picked, &mut xb, &mut yb);
            let rows = 2 * chunk.len();
            let labels: Vec<f64> = (0..rows).map(|i| if i < chunk.len() { 0.0 } else { 1.0 }).collect();
            let xa = Act::new(rows, t.x.c, t.x.l, std::mem::take(&mut xb))?;
            let obj = Objective {
                domain_labels: Some(&labels),
                ..Default::default()
            };
            let (_, grads) = model.loss_and_grads(&xa, prefix, &obj)?;
            xb = xa.data;
            opt.set_gradients(grads);
            opt.step(&mut model)?;
        }
    }
    held_out_domain_accuracy(&model, prefix, &tv, &sv)
}

/// Final held-out domain-classifier accuracy of a transfer run, on the same
/// split the run used.
pub fn transfer_domain_accuracy(outcome: &TrainOutcome, target: &Dataset, source: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let (_, t_val) = split_train_val(target, cfg.val_fraction, cfg.seed);
    let (_, s_val) = split_train_val(source, cfg.val_fraction, cfg.seed);
    held_out_domain_accuracy(
        &outcome.model,
        0,
        &Tensors::from_dataset(&t_val)?,
        &Tensors::from_dataset(&s_val)?,
    )
}

/// Writes `config.json`, `metrics.csv` and the checkpoint into `dir`.
pub fn save_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_mse", "val_mse", "domain_bce", "domain_acc"])
        .map_err(csv_err)?;
    for m in &outcome.metrics {
        w.write_record([
            m.epoch.to_string(),
            m.train_mse.to_string(),
            m.val_mse.to_string(),
            m.domain_bce.to_string(),
            m.domain_acc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(dir.join(METRICS_FILE), bytes)?;
    save_checkpoint(&outcome.model, dir)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DomainTag;
    use crate::dataset::{BeamSample, DatasetManifest, NormConstants};
    use crate::nn::checkpoint::load_checkpoint;
    use crate::nn::Layer;
    use rand::Rng;

    fn arch() -> Architecture {
        Architecture {
            input_len: 8,
            conv_channels: vec![3, 4, 4, 4],
            kernel: 3,
            pool_after: vec![1, 3],
            hidden: 12,
            outputs: 4,
            domain_hidden: 6,
        }
    }

    /// Labels follow a fixed linear map of the features so the task is learnable.
    fn toy(n: usize, domain: DomainTag, shift: f32, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 1, 1);
        let samples = (0..n)
            .map(|u| {
                let features: Vec<f32> = (0..16).map(|_| r.random_range(-1.0f32..1.0) + shift).collect();
                let labels = (0..4)
                    .map(|d| {
                        let s: f32 = features.iter().skip(d).step_by(4).sum();
                        (0.5 + 0.1 * s).clamp(0.0, 1.0)
                    })
                    .collect();
                BeamSample {
                    features,
                    labels,
                    domain_label: domain.label(),
                    bs_id: 0,
                    user_id: u as u32,
                }
            })
            .collect();
        Dataset {
            manifest: DatasetManifest {
                scenario_digest: String::new(),
                num_subcarriers: 8,
                k_dl: 8,
                num_beams: 4,
                num_samples: n,
                normalized: true,
                normalization: NormConstants {
                    feature_scale: 1.0,
                    label_scale: 1.0,
                },
                noise_power: 1.0,
                rng_seed: seed,
                domain,
                files: None,
            },
            samples,
        }
    }

    fn cfg(regime: Regime) -> TrainConfig {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            learning_rate: 0.01,
            patience: 100,
            ..TrainConfig::new(regime)
        }
    }

    fn conv_tensors(m: &Model) -> Vec<Vec<f64>> {
        m.trunk
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv1d(_)))
            .flat_map(|l| {
                let (w, b) = l.params().unwrap();
                [w.to_vec(), b.to_vec()]
            })
            .collect()
    }

    #[test]
    fn memorizes_one_sample() {
        let ds = toy(1, DomainTag::Source, 0.0, 1);
        let c = TrainConfig {
            epochs: 30,
            learning_rate: 0.005,
            momentum: 0.0,
            ..cfg(Regime::Pretrain)
        };
        let out = pretrain(&ds, &arch(), &c).unwrap();
        for w in out.metrics.windows(2) {
            assert!(w[1].train_mse <= w[0].train_mse + 1e-12, "{:?}", out.metrics);
        }
    }

    #[test]
    fn pretraining_improves_and_is_deterministic() {
        let ds = toy(120, DomainTag::Source, 0.0, 2);
        let c = cfg(Regime::Pretrain);
        let initial = {
            let (_, val) = split_train_val(&ds, c.val_fraction, c.seed);
            let m = arch().build(c.seed, None).unwrap();
            val_mse(&m, 0, &Tensors::from_dataset(&val).unwrap()).unwrap()
        };
        let a = pretrain(&ds, &arch(), &c).unwrap();
        assert!(a.best_val_mse < initial);
        let b = pretrain(&ds, &arch(), &c).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn transfer_keeps_frozen_convs() {
        let src = toy(80, DomainTag::Source, 0.0, 3);
        let tgt = toy(40, DomainTag::Target, 0.3, 4);
        let pre = pretrain(&src, &arch(), &cfg(Regime::Pretrain)).unwrap().model;
        let out = transfer_da(&pre, &tgt, Some(&src), &arch(), &cfg(Regime::TransferDa)).unwrap();
        assert_eq!(conv_tensors(&out.model), conv_tensors(&pre));
        assert!(out.metrics.iter().all(|m| m.domain_bce.is_finite()));
        let ft = finetune_pure(&pre, &tgt, &arch(), &cfg(Regime::FinetunePure)).unwrap();
        assert_eq!(conv_tensors(&ft.model), conv_tensors(&pre));
    }

    #[test]
    fn transfer_requires_source() {
        let tgt = toy(10, DomainTag::Target, 0.0, 4);
        let pre = arch().build(0, None).unwrap();
        let err = transfer_da(&pre, &tgt, None, &arch(), &cfg(Regime::TransferDa)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_lambda_matches_plain_finetuning() {
        let src = toy(60, DomainTag::Source, 0.0, 5);
        let tgt = toy(30, DomainTag::Target, 0.4, 6);
        let pre = pretrain(&src, &arch(), &cfg(Regime::Pretrain)).unwrap().model;
        let c = TrainConfig {
            lambda: 0.0,
            ..cfg(Regime::TransferDa)
        };
        let da = transfer_da(&pre, &tgt, Some(&src), &arch(), &c).unwrap();
        let plain = run_transfer(&pre, &tgt, &src, &arch(), &c, false).unwrap();
        assert_eq!(da.model.trunk, plain.model.trunk);
        assert_eq!(da.model.head, plain.model.head);
        let a: Vec<f64> = da.metrics.iter().map(|m| m.val_mse).collect();
        let b: Vec<f64> = plain.metrics.iter().map(|m| m.val_mse).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn trainable_counts_per_regime() {
        let a = arch();
        let src = toy(30, DomainTag::Source, 0.0, 7);
        let pre = a.build(1, None).unwrap();
        let c = TrainConfig {
            epochs: 1,
            ..cfg(Regime::FinetunePure)
        };
        let ft = finetune_pure(&pre, &src, &a, &c).unwrap();
        let hidden_layer = a.flat_width().unwrap() * a.hidden + a.hidden;
        let added = (a.hidden * a.hidden + a.hidden) + (a.hidden * a.outputs + a.outputs);
        assert_eq!(ft.model.trainable_param_count(), hidden_layer + added);
        let sc = train_scratch(
            &src,
            &a,
            &TrainConfig {
                epochs: 1,
                ..cfg(Regime::Scratch)
            },
        )
        .unwrap();
        assert_eq!(sc.model.trainable_param_count(), sc.model.param_count());
    }

    #[test]
    fn config_validation() {
        let ds = toy(10, DomainTag::Source, 0.0, 8);
        let mut c = cfg(Regime::Pretrain);
        c.epochs = 0;
        assert!(matches!(pretrain(&ds, &arch(), &c), Err(Error::Config(_))));
        let empty = ds.select(&[]);
        assert!(matches!(pretrain(&empty, &arch(), &cfg(Regime::Pretrain)), Err(Error::Config(_))));
        assert!(pretrain(&ds, &arch(), &cfg(Regime::Scratch)).is_err());
        let mut c = cfg(Regime::TransferDa);
        c.freeze_count = 9;
        let pre = arch().build(0, None).unwrap();
        assert!(transfer_da(&pre, &ds, Some(&ds), &arch(), &c).is_err());
    }

    #[test]
    fn mixed_bs_rejected() {
        let mut ds = toy(10, DomainTag::Source, 0.0, 9);
        ds.samples[3].bs_id = 1;
        assert!(matches!(pretrain(&ds, &arch(), &cfg(Regime::Pretrain)), Err(Error::Config(_))));
    }

    #[test]
    fn run_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(20, DomainTag::Source, 0.0, 10);
        let c = TrainConfig {
            epochs: 3,
            ..cfg(Regime::Pretrain)
        };
        let out = pretrain(&ds, &arch(), &c).unwrap();
        save_run(dir.path(), &c, &out).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), out.model);
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), out.metrics.len() + 1);
        let back: TrainConfig = serde_json::from_str(&fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = toy(50, DomainTag::Source, 0.0, 11);
        let (a, b) = split_train_val(&ds, 0.2, 3);
        assert_eq!((a.len(), b.len()), (40, 10));
        let (a2, _) = split_train_val(&ds, 0.2, 3);
        assert_eq!(a.samples, a2.samples);
        let ua: Vec<u32> = a.samples.iter().map(|s| s.user_id).collect();
        assert!(b.samples.iter().all(|s| !ua.contains(&s.user_id)));
        let (one, none) = split_train_val(&ds.select(&[0]), 0.2, 3);
        assert_eq!((one.len(), none.len()), (1, 0));
    }

    #[test]
    fn lambda_schedule_ramps() {
        let mut c = cfg(Regime::TransferDa);
        assert_eq!(c.lambda_at(0.3), 1.0);
        c.lambda_schedule = true;
        assert_eq!(c.lambda_at(0.0), 0.0);
        assert!(c.lambda_at(0.5) < c.lambda_at(1.0));
        assert!((c.lambda_at(1.0) - 1.0).abs() < 1e-4);
    }
}
