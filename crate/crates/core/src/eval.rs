//! Evaluation: top-k beam accuracy, effective achievable rate of the genie,
//! exhaustive-search and learned policies, and the aggregated report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_codebook::Codebook;
use crate::beam_metrics::{effective_rate, optimal_beam, OverheadModel, TrainingMode};
use crate::channel::ChannelRealization;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Act, Model};
use crate::training::csv_err;

pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_COLUMNS: [&str; 8] = [
    "method",
    "bs_id",
    "train_size",
    "seed",
    "eff_rate_bps_hz",
    "top1",
    "top3",
    "trainable_params",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Genie,
    Exhaustive,
    TransferDa,
    FinetunePure,
    Scratch,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Genie,
        Method::Exhaustive,
        Method::TransferDa,
        Method::FinetunePure,
        Method::Scratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Genie => "genie",
            Method::Exhaustive => "exhaustive",
            Method::TransferDa => "transfer_da",
            Method::FinetunePure => "finetune_pure",
            Method::Scratch => "scratch",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Genie | Method::Exhaustive)
    }
}

/// Predicted rates of every sample, in dataset order.
pub fn predict(model: &Model, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let k_dl = ds.manifest.k_dl;
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.samples.chunks(256) {
        let x: Vec<f64> = chunk.iter().flat_map(|s| s.features.iter().map(|v| f64::from(*v))).collect();
        let act = Act::new(chunk.len(), 2, k_dl, x)?;
        let (pred, _) = model.forward(&act)?;
        out.extend(pred.data.chunks_exact(pred.l).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Indices of the `k` largest scores, ties going to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Share of samples whose true best beam is among the top `k` scores.
pub fn topk_accuracy_from_scores(scores: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::Config("cannot score an empty dataset".into()));
    }
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", scores.len(), truth.len())));
    }
    let hits = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| topk_indices(s, k).contains(t))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

pub fn topk_accuracy(model: &Model, ds: &Dataset, k: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Config("cannot score an empty dataset".into()));
    }
    let truth: Vec<usize> = ds.samples.iter().map(|s| s.best_beam()).collect();
    topk_accuracy_from_scores(&predict(model, ds)?, &truth, k)
}

/// Test users with their channels to every BS.
#[derive(Debug, Clone)]
pub struct EvalScenario {
    pub user_ids: Vec<u32>,
    /// `channels[u][n]`: user `user_ids[u]` to BS `n`.
    pub channels: Vec<Vec<ChannelRealization>>,
    pub codebooks: Vec<Codebook>,
    pub noise_power: f64,
    /// Per-user, per-BS best beams by exact rate.
    pub optimal: Vec<Vec<usize>>,
}

impl EvalScenario {
    pub fn new(
        user_ids: Vec<u32>,
        channels: Vec<Vec<ChannelRealization>>,
        codebooks: Vec<Codebook>,
        noise_power: f64,
    ) -> Result<Self> {
        if user_ids.is_empty() || user_ids.len() != channels.len() {
            return Err(Error::Config("evaluation needs one channel set per test user".into()));
        }
        let optimal = channels
            .iter()
            .map(|per_bs| {
                if per_bs.len() != codebooks.len() {
                    return Err(Error::Shape("one channel per BS codebook required".into()));
                }
                per_bs
                    .iter()
                    .zip(&codebooks)
                    .map(|(h, cb)| optimal_beam(h, cb, noise_power).map(|(d, _)| d))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(EvalScenario {
            user_ids,
            channels,
            codebooks,
            noise_power,
            optimal,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.codebooks.len()
    }
}

/// Beam choices of a learned policy: for every BS, a map from user id to beam.
pub type BeamChoices = Vec<BTreeMap<u32, usize>>;

/// Argmax beams predicted by per-BS models on per-BS test datasets.
pub fn learned_beams(models: &[&Model], test: &[&Dataset]) -> Result<BeamChoices> {
    if models.len() != test.len() {
        return Err(Error::Config("one model per BS test set required".into()));
    }
    models
        .iter()
        .zip(test)
        .map(|(m, ds)| {
            let preds = predict(m, ds)?;
            Ok(ds
                .samples
                .iter()
                .zip(preds)
                .map(|(s, p)| (s.user_id, crate::beam_metrics::argmax(&p)))
                .collect())
        })
        .collect()
}

/// Mean effective rate over the test users. `learned` is required for
/// [`Method`]s that are learned.
pub fn eval_effective_rate(
    scenario: &EvalScenario,
    overhead: &OverheadModel,
    method: Method,
    learned: Option<&BeamChoices>,
) -> Result<f64> {
    overhead.validate()?;
    let mode = match method {
        Method::Genie => None,
        Method::Exhaustive => Some(TrainingMode::Exhaustive),
        _ => Some(TrainingMode::Learned),
    };
    let cbs: Vec<&Codebook> = scenario.codebooks.iter().collect();
    let genie_overhead = OverheadModel {
        t_pilot: 0.0,
        t_train: 0.0,
        t_beam_coherence: overhead.t_beam_coherence,
    };
    let mut total = 0.0;
    for (u, per_bs) in scenario.channels.iter().enumerate() {
        let beams: Vec<usize> = match (method.is_learned(), learned) {
            (false, _) => scenario.optimal[u].clone(),
            (true, Some(choices)) => {
                if choices.len() != scenario.num_bs() {
                    return Err(Error::Config("learned beams must cover every BS".into()));
                }
                let uid = scenario.user_ids[u];
                choices
                    .iter()
                    .map(|c| {
                        c.get(&uid)
                            .copied()
                            .ok_or_else(|| Error::Config(format!("no learned beam for user {uid}")))
                    })
                    .collect::<Result<_>>()?
            }
            (true, None) => return Err(Error::Config(format!("{} needs per-BS models", method.name()))),
        };
        let chans: Vec<&ChannelRealization> = per_bs.iter().collect();
        total += match mode {
            None => effective_rate(&chans, &cbs, &beams, scenario.noise_power, &genie_overhead, TrainingMode::Learned)?,
            Some(m) => effective_rate(&chans, &cbs, &beams, scenario.noise_power, overhead, m)?,
        };
    }
    Ok(total / scenario.channels.len() as f64)
}

/// Metrics of one (method, target-train-size, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub method: Method,
    pub train_size: usize,
    pub seed: u64,
    pub eff_rate_bps_hz: f64,
    /// Mean over BSs.
    pub top1: f64,
    pub top3: f64,
    /// Per-BS model.
    pub trainable_params: usize,
    pub test_samples: usize,
    /// Held-out domain-classifier accuracy after adaptation (transfer only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_acc: Option<f64>,
    /// Same, for a classifier trained without reversal on the frozen
    /// pretrained features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_acc: Option<f64>,
}

pub fn write_cell(dir: &Path, cell: &EvalCell) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(EVAL_FILE), serde_json::to_string_pretty(cell)? + "\n")?;
    Ok(())
}

pub fn read_cell(dir: &Path) -> Result<EvalCell> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(EVAL_FILE))?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub train_size: usize,
    pub mean_eff_rate: f64,
    pub std_eff_rate: f64,
    pub mean_top1: f64,
    pub mean_top3: f64,
    pub trainable_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    pub summaries: Vec<MethodSummary>,
    pub seeds: Vec<u64>,
    pub train_sizes: Vec<usize>,
    pub test_samples: usize,
    pub config_digest: String,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

impl EvalReport {
    pub fn from_cells(mut cells: Vec<EvalCell>, config_digest: String) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Config("no evaluation cells to report".into()));
        }
        cells.sort_by_key(|a| (a.method, a.train_size, a.seed));
        let mut groups: BTreeMap<(Method, usize), Vec<&EvalCell>> = BTreeMap::new();
        for c in &cells {
            groups.entry((c.method, c.train_size)).or_default().push(c);
        }
        let summaries = groups
            .into_iter()
            .map(|((method, train_size), g)| {
                let rates: Vec<f64> = g.iter().map(|c| c.eff_rate_bps_hz).collect();
                let (mean_eff_rate, std_eff_rate) = mean_std(&rates);
                MethodSummary {
                    method,
                    train_size,
                    mean_eff_rate,
                    std_eff_rate,
                    mean_top1: mean_std(&g.iter().map(|c| c.top1).collect::<Vec<_>>()).0,
                    mean_top3: mean_std(&g.iter().map(|c| c.top3).collect::<Vec<_>>()).0,
                    trainable_params: g[0].trainable_params,
                }
            })
            .collect();
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut train_sizes: Vec<usize> = cells.iter().map(|c| c.train_size).collect();
        train_sizes.sort_unstable();
        train_sizes.dedup();
        Ok(EvalReport {
            test_samples: cells.iter().map(|c| c.test_samples).max().unwrap_or(0),
            cells,
            summaries,
            seeds,
            train_sizes,
            config_digest,
        })
    }

    pub fn summary(&self, method: Method, train_size: usize) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.train_size == train_size)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.summaries.iter().map(|s| s.method).collect();
        m.dedup();
        m
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.method.name().to_string(),
                "all".to_string(),
                c.train_size.to_string(),
                c.seed.to_string(),
                c.eff_rate_bps_hz.to_string(),
                c.top1.to_string(),
                c.top3.to_string(),
                c.trainable_params.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Reads `eval.json` from every run directory, failing with the full list
/// of absent files.
pub fn collect_cells(run_dirs: &[PathBuf]) -> Result<Vec<EvalCell>> {
    if run_dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let missing: Vec<PathBuf> = run_dirs
        .iter()
        .map(|d| d.join(EVAL_FILE))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    run_dirs.iter().map(|d| read_cell(d)).collect()
}

pub const RATE_PLOT: &str = "eff_rate_vs_train_size.svg";
pub const TOP1_PLOT: &str = "top1_accuracy.svg";
pub const TOP3_PLOT: &str = "top3_accuracy.svg";
pub const PARAMS_PLOT: &str = "trainable_params.svg";

/// Builds the report from run directories and writes `report.csv` plus the
/// plots into `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path, config_digest: String) -> Result<EvalReport> {
    let rep = EvalReport::from_cells(collect_cells(run_dirs)?, config_digest)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT_FILE), rep.to_csv()?)?;
    write_plots(&rep, out)?;
    Ok(rep)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

const PALETTE: [RGBColor; 5] = [
    RGBColor(0, 0, 0),
    RGBColor(128, 128, 128),
    RGBColor(200, 40, 40),
    RGBColor(40, 90, 200),
    RGBColor(40, 150, 60),
];

fn color(m: Method) -> RGBColor {
    PALETTE[Method::ALL.iter().position(|x| *x == m).unwrap_or(0)]
}

pub fn write_plots(rep: &EvalReport, out: &Path) -> Result<()> {
    let sizes = &rep.train_sizes;
    let methods = rep.methods();
    let learned: Vec<Method> = methods.iter().copied().filter(|m| m.is_learned()).collect();

    // Effective rate vs training-set size.
    {
        let path = out.join(RATE_PLOT);
        let root = SVGBackend::new(&path, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ymax = rep.summaries.iter().map(|s| s.mean_eff_rate).fold(0.0, f64::max) * 1.1 + 1e-9;
        let xmax = sizes.len().max(1) as f64 - 0.5;
        let mut chart = ChartBuilder::on(&root)
            .caption("Effective achievable rate", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(-0.5f64..xmax, 0f64..ymax)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("target training samples per BS")
            .y_desc("bits/s/Hz")
            .x_labels(sizes.len().max(2))
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < sizes.len() {
                    sizes[i as usize].to_string()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(plot_err)?;
        for &m in &methods {
            let pts: Vec<(f64, f64)> = sizes
                .iter()
                .enumerate()
                .filter_map(|(i, &s)| rep.summary(m, s).map(|x| (i as f64, x.mean_eff_rate)))
                .collect();
            let c = color(m);
            chart
                .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
                .map_err(plot_err)?
                .label(m.name())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
            chart
                .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, c.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }

    for (file, title, pick) in [
        (TOP1_PLOT, "Top-1 beam accuracy", 1usize),
        (TOP3_PLOT, "Top-3 beam accuracy", 3usize),
    ] {
        let path = out.join(file);
        let root = SVGBackend::new(&path, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let groups = sizes.len().max(1) as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(0f64..groups, 0f64..1.05f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("target training samples per BS")
            .y_desc("accuracy")
            .x_labels(sizes.len().max(2) * 2 + 1)
            .x_label_formatter(&|x| {
                let i = (x - 0.5).round();
                if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < sizes.len() {
                    sizes[i as usize].to_string()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(plot_err)?;
        let width = 0.8 / learned.len().max(1) as f64;
        for (j, &m) in learned.iter().enumerate() {
            let c = color(m);
            let bars: Vec<_> = sizes
                .iter()
                .enumerate()
                .filter_map(|(i, &s)| {
                    rep.summary(m, s).map(|x| {
                        let v = if pick == 1 { x.mean_top1 } else { x.mean_top3 };
                        let x0 = i as f64 + 0.1 + j as f64 * width;
                        Rectangle::new([(x0, 0.0), (x0 + width * 0.9, v)], c.filled())
                    })
                })
                .collect();
            chart
                .draw_series(bars)
                .map_err(plot_err)?
                .label(m.name())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], c.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }

    {
        let path = out.join(PARAMS_PLOT);
        let root = SVGBackend::new(&path, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let counts: Vec<(Method, usize)> = learned
            .iter()
            .filter_map(|&m| rep.summaries.iter().find(|s| s.method == m).map(|s| (m, s.trainable_params)))
            .collect();
        let ymax = counts.iter().map(|c| c.1).max().unwrap_or(1) as f64 * 1.1;
        let mut chart = ChartBuilder::on(&root)
            .caption("Trainable parameters per BS model", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(72)
            .build_cartesian_2d(0f64..counts.len().max(1) as f64, 0f64..ymax)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_labels(counts.len().max(1) * 2 + 1)
            .x_label_formatter(&|x| {
                let i = (x - 0.5).round();
                if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < counts.len() {
                    counts[i as usize].0.name().to_string()
                } else {
                    String::new()
                }
            })
            .y_desc("parameters")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(counts.iter().enumerate().map(|(i, &(m, n))| {
                Rectangle::new([(i as f64 + 0.2, 0.0), (i as f64 + 0.8, n as f64)], color(m).filled())
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_codebook::{beam_column, dft_codebook, UpaGeometry};
    use crate::channel::DomainTag;
    use crate::dataset::{BeamSample, DatasetManifest, NormConstants};
    use crate::nn::{Layer, LayerSpec, Sequential};
    use crate::rng;
    use num_complex::Complex64;
    use rand::Rng;

    fn labels_ds(labels: Vec<Vec<f32>>) -> Dataset {
        let d = labels[0].len();
        let samples = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| BeamSample {
                features: vec![0.0; 2 * d],
                labels: l,
                domain_label: 0,
                bs_id: 0,
                user_id: i as u32,
            })
            .collect::<Vec<_>>();
        Dataset {
            manifest: DatasetManifest {
                scenario_digest: String::new(),
                num_subcarriers: d,
                k_dl: d,
                num_beams: d,
                num_samples: samples.len(),
                normalized: true,
                normalization: NormConstants {
                    feature_scale: 1.0,
                    label_scale: 1.0,
                },
                noise_power: 1.0,
                rng_seed: 0,
                domain: DomainTag::Target,
                files: None,
            },
            samples,
        }
    }

    /// A model whose only layer is a dense map with the given bias, so its
    /// output is constant.
    fn constant_model(d: usize, bias: Vec<f64>) -> Model {
        let mut head = Sequential::from_specs(&[LayerSpec::Dense {
            inputs: 2 * d,
            outputs: d,
            frozen: false,
        }])
        .unwrap();
        if let Layer::Dense(l) = &mut head.layers[0] {
            l.bias = bias;
        }
        Model {
            trunk: Sequential::from_specs(&[LayerSpec::Flatten]).unwrap(),
            head,
            domain: None,
            seed: 0,
        }
    }

    #[test]
    fn topk_examples() {
        let scores = vec![vec![0.1, 0.9, 0.5, 0.2], vec![0.3, 0.3, 0.1, 0.0]];
        assert_eq!(topk_indices(&scores[0], 2), vec![1, 2]);
        // Ties go to the lower index.
        assert_eq!(topk_indices(&scores[1], 1), vec![0]);
        assert_eq!(topk_accuracy_from_scores(&scores, &[1, 1], 1).unwrap(), 0.5);
        assert_eq!(topk_accuracy_from_scores(&scores, &[1, 1], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy_from_scores(&scores, &[3, 3], 4).unwrap(), 1.0);
        assert!(matches!(topk_accuracy_from_scores(&[], &[], 1), Err(Error::Config(_))));
        assert!(topk_accuracy_from_scores(&scores, &[0, 0], 0).is_err());
    }

    #[test]
    fn oracle_and_constant_models() {
        let mut r = rng::stream(1, 2, 3);
        let labels: Vec<Vec<f32>> = (0..1000)
            .map(|i| {
                let mut l: Vec<f32> = (0..4).map(|_| r.random_range(0.0f32..0.5)).collect();
                l[i % 4] = 1.0;
                l
            })
            .collect();
        let ds = labels_ds(labels.clone());
        let truth: Vec<usize> = ds.samples.iter().map(|s| s.best_beam()).collect();
        let oracle: Vec<Vec<f64>> = labels.iter().map(|l| l.iter().map(|v| f64::from(*v)).collect()).collect();
        for k in 1..=4 {
            assert_eq!(topk_accuracy_from_scores(&oracle, &truth, k).unwrap(), 1.0);
        }
        let m = constant_model(4, vec![0.3, 0.2, 0.1, 0.0]);
        let top1 = topk_accuracy(&m, &ds, 1).unwrap();
        assert!((top1 - 0.25).abs() <= 0.05);
        let accs: Vec<f64> = (1..=4).map(|k| topk_accuracy(&m, &ds, k).unwrap()).collect();
        assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(accs[3], 1.0);
        assert!(matches!(topk_accuracy(&m, &ds.select(&[]), 1), Err(Error::Config(_))));
    }

    fn tiny_scenario(users: usize) -> EvalScenario {
        let geom = UpaGeometry::half_wavelength(4, 1).unwrap();
        let cb = dft_codebook(&geom).unwrap();
        let mut r = rng::stream(9, 9, 9);
        let channels = (0..users)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let h = (0..8 * 4)
                            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                            .collect();
                        ChannelRealization::from_rows(8, 4, h).unwrap()
                    })
                    .collect()
            })
            .collect();
        EvalScenario::new((0..users as u32).collect(), channels, vec![cb.clone(), cb], 0.5).unwrap()
    }

    fn overhead(t_p: f64, d: usize, t_b: f64) -> OverheadModel {
        OverheadModel::with_exhaustive_sweep(t_p, d, t_b).unwrap()
    }

    #[test]
    fn oracle_policy_beats_exhaustive_when_d_exceeds_two() {
        let sc = tiny_scenario(20);
        let oh = overhead(1e-5, 4, 1e-3);
        let oracle: BeamChoices = (0..2)
            .map(|n| sc.user_ids.iter().zip(&sc.optimal).map(|(u, o)| (*u, o[n])).collect())
            .collect();
        let learned = eval_effective_rate(&sc, &oh, Method::TransferDa, Some(&oracle)).unwrap();
        let exhaustive = eval_effective_rate(&sc, &oh, Method::Exhaustive, None).unwrap();
        let genie = eval_effective_rate(&sc, &oh, Method::Genie, None).unwrap();
        assert!(learned > exhaustive);
        assert!(genie >= learned);
        assert!((learned / genie - oh.factor(TrainingMode::Learned)).abs() < 1e-12);
    }

    #[test]
    fn half_coherence_pilots_give_zero() {
        let sc = tiny_scenario(5);
        let oh = OverheadModel {
            t_pilot: 0.5e-3,
            t_train: 4.0 * 0.5e-3 / 4.0,
            t_beam_coherence: 1e-3,
        };
        let any: BeamChoices = (0..2).map(|_| sc.user_ids.iter().map(|u| (*u, 0)).collect()).collect();
        assert_eq!(eval_effective_rate(&sc, &oh, Method::TransferDa, Some(&any)).unwrap(), 0.0);
        assert!(eval_effective_rate(&sc, &oh, Method::Scratch, None).is_err());
    }

    #[test]
    fn genie_dominates_random_policy_on_average() {
        let sc = tiny_scenario(1000);
        let oh = overhead(1e-5, 4, 1e-3);
        let mut r = rng::stream(4, 4, 4);
        let random: BeamChoices = (0..2)
            .map(|_| sc.user_ids.iter().map(|u| (*u, r.random_range(0..4))).collect())
            .collect();
        let genie = eval_effective_rate(&sc, &oh, Method::Genie, None).unwrap();
        let rnd = eval_effective_rate(&sc, &oh, Method::TransferDa, Some(&random)).unwrap();
        assert!(genie > rnd);
        let _ = beam_column(&sc.codebooks[0], 0).unwrap();
    }

    fn cell(method: Method, size: usize, seed: u64, rate: f64) -> EvalCell {
        EvalCell {
            method,
            train_size: size,
            seed,
            eff_rate_bps_hz: rate,
            top1: 0.5,
            top3: 0.8,
            trainable_params: 10,
            test_samples: 7,
            domain_acc: None,
            probe_acc: None,
        }
    }

    #[test]
    fn report_rows_and_determinism() {
        let root = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for m in Method::ALL {
            for size in [50, 100] {
                for seed in 0..3 {
                    let d = root.path().join(format!("{}/{size}/{seed}", m.name()));
                    write_cell(&d, &cell(m, size, seed, 1.0 + seed as f64)).unwrap();
                    dirs.push(d);
                }
            }
        }
        let out = root.path().join("out");
        let rep = report(&dirs, &out, "x".into()).unwrap();
        let csv1 = fs::read(out.join(REPORT_FILE)).unwrap();
        let text = String::from_utf8(csv1.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 2 * 3);
        assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join(","));
        let s = rep.summary(Method::Genie, 50).unwrap();
        assert_eq!(s.mean_eff_rate, 2.0);
        dirs.reverse();
        report(&dirs, &out, "x".into()).unwrap();
        assert_eq!(fs::read(out.join(REPORT_FILE)).unwrap(), csv1);
        for f in [RATE_PLOT, TOP1_PLOT, TOP3_PLOT, PARAMS_PLOT] {
            assert!(fs::read_to_string(out.join(f)).unwrap().starts_with("<svg"));
        }
    }

    #[test]
    fn report_errors() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(report(&[], root.path(), String::new()), Err(Error::Config(_))));
        let dirs = vec![root.path().join("a"), root.path().join("b")];
        match report(&dirs, root.path(), String::new()) {
            Err(Error::MissingArtifacts(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
