//! End-to-end experiment: a source street deployment and a target deployment
//! with shifted BS placements, per-BS pretraining, the three learned regimes
//! over a sweep of target training-set sizes and seeds, evaluation and report.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! experiment.json
//! data/{paths_source.csv, paths_target.csv, source/, target_pool/, target_test/}
//! pretrain/bs_<n>/
//! runs/<method>/size_<s>/seed_<k>/{eval.json, bs_<n>/}
//! report/{report.csv, *.svg}
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_codebook::{dft_codebook, Codebook, UpaGeometry};
use crate::beam_metrics::OverheadModel;
use crate::channel::{channel_matrix, load_paths, save_paths, synth_scenario, BsSite, DomainTag, PathTable, ScenarioConfig, UserState};
use crate::dataset::{self, apply_normalization, build_domain_dataset, normalize, sha256_hex, Dataset, SampleSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalCell, EvalReport, EvalScenario, Method};
use crate::nn::{load_checkpoint, Architecture, Model};
use crate::rng::{self, purpose};
use crate::training::{self, Regime, TrainConfig};

pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub num_subcarriers: usize,
    pub k_dl: usize,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_power: f64,
    /// Horizontal and vertical element counts of every BS array.
    pub array: [usize; 2],
    pub paths_per_link: usize,
    pub nlos_delay_spread_samples: f64,
    pub nlos_power_deficit_db: f64,
    pub time_s: f64,
}

/// Rectangular region users are dropped into uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetLayout {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub height: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsPlacement {
    pub position: [f64; 3],
    pub boresight_azimuth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadConfig {
    pub t_pilot: f64,
    pub t_beam_coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub radio: RadioConfig,
    pub street: StreetLayout,
    /// BS `n` of the target deployment is the moved counterpart of source BS `n`.
    pub source_bs: Vec<BsPlacement>,
    pub target_bs: Vec<BsPlacement>,
    pub source_users: usize,
    pub target_pool_users: usize,
    pub test_users: usize,
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Learned regimes to run.
    pub methods: Vec<Method>,
    pub overhead: OverheadConfig,
    pub pretrain: TrainConfig,
    pub transfer: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
    #[serde(default)]
    pub architecture: Option<Architecture>,
}

fn train_cfg(regime: Regime, epochs: usize, batch: usize, lr: f64, patience: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        patience,
        ..TrainConfig::new(regime)
    }
}

impl ExperimentConfig {
    /// Desk-scale street scenario: four BSs near the ends of a 7 m wide,
    /// 28 m long street, looking into it. The target deployment moves every
    /// BS 2 m further out and 2 m higher, and swaps the street side of the two
    /// axial ones.
    pub fn desk() -> Self {
        let bs = |x: f64, y: f64, z: f64, az: f64| BsPlacement {
            position: [x, y, z],
            boresight_azimuth: az,
        };
        let pi = std::f64::consts::PI;
        ExperimentConfig {
            seed: 2024,
            radio: RadioConfig {
                num_subcarriers: 64,
                k_dl: 32,
                carrier_freq_hz: 60e9,
                bandwidth_hz: 0.5e9,
                noise_power: 6.3e-12,
                array: [8, 8],
                paths_per_link: 4,
                nlos_delay_spread_samples: 6.0,
                nlos_power_deficit_db: 10.0,
                time_s: 0.0,
            },
            street: StreetLayout {
                x_range: [-3.5, 3.5],
                y_range: [-14.0, 14.0],
                height: 1.5,
                speed_mps: 30.0 / 3.6,
            },
            source_bs: vec![
                bs(-1.0, -16.0, 6.0, pi / 2.0),
                bs(1.0, 16.0, 6.0, -pi / 2.0),
                bs(-6.0, -15.0, 6.0, pi / 4.0),
                bs(6.0, 15.0, 6.0, -3.0 * pi / 4.0),
            ],
            target_bs: vec![
                bs(1.0, -18.0, 8.0, pi / 2.0),
                bs(-1.0, 18.0, 8.0, -pi / 2.0),
                bs(-6.0, -17.0, 8.0, pi / 4.0),
                bs(6.0, 17.0, 8.0, -3.0 * pi / 4.0),
            ],
            source_users: 2000,
            target_pool_users: 500,
            test_users: 500,
            train_sizes: vec![50, 100, 200, 500],
            seeds: (0..5).collect(),
            methods: vec![Method::TransferDa, Method::FinetunePure, Method::Scratch],
            overhead: OverheadConfig {
                t_pilot: 10e-6,
                t_beam_coherence: 10e-3,
            },
            pretrain: train_cfg(Regime::Pretrain, 40, 32, 5e-3, 8),
            transfer: TrainConfig {
                mse_on_source: false,
                ..train_cfg(Regime::TransferDa, 60, 16, 2e-3, 15)
            },
            finetune: train_cfg(Regime::FinetunePure, 60, 16, 2e-3, 15),
            scratch: train_cfg(Regime::Scratch, 40, 16, 2e-3, 10),
            architecture: None,
        }
    }

    pub fn num_bs(&self) -> usize {
        self.source_bs.len()
    }

    pub fn num_beams(&self) -> usize {
        self.radio.array[0].saturating_mul(self.radio.array[1])
    }

    pub fn arch(&self) -> Architecture {
        self.architecture
            .clone()
            .unwrap_or_else(|| Architecture::standard(self.radio.k_dl, self.num_beams()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.source_bs.is_empty() || self.source_bs.len() != self.target_bs.len() {
            return fail("source_bs and target_bs must be nonempty and of equal length");
        }
        if self.source_users == 0 || self.target_pool_users == 0 || self.test_users == 0 {
            return fail("user counts must be positive");
        }
        if self.train_sizes.is_empty() || self.seeds.is_empty() {
            return fail("train_sizes and seeds must be nonempty");
        }
        if self.train_sizes.iter().any(|&s| s == 0 || s > self.target_pool_users) {
            return fail("every train size must lie in 1..=target_pool_users");
        }
        if self.methods.iter().any(|m| !m.is_learned()) {
            return fail("methods lists learned regimes only; genie and exhaustive are always evaluated");
        }
        let s = &self.street;
        let finite = s.x_range.iter().chain(&s.y_range).chain([&s.height, &s.speed_mps]).all(|v| v.is_finite());
        if !finite || !(s.x_range[0] <= s.x_range[1] && s.y_range[0] <= s.y_range[1]) || s.speed_mps < 0.0 {
            return fail("street ranges must be finite and ordered, speed non-negative");
        }
        if self.radio.k_dl == 0 || self.radio.k_dl > self.radio.num_subcarriers {
            return fail("k_dl must lie in 1..=num_subcarriers");
        }
        self.overhead_model()?;
        for (c, r) in [
            (&self.pretrain, Regime::Pretrain),
            (&self.transfer, Regime::TransferDa),
            (&self.finetune, Regime::FinetunePure),
            (&self.scratch, Regime::Scratch),
        ] {
            if c.regime != r {
                return Err(Error::Config(format!("{} config has regime {}", r.name(), c.regime.name())));
            }
            c.validate()?;
        }
        let arch = self.arch();
        if arch.input_len != self.radio.k_dl || arch.outputs != self.num_beams() {
            return fail("architecture does not match k_dl and the codebook size");
        }
        arch.validate()?;
        self.scenario(DomainTag::Source, Vec::new()).validate()
    }

    pub fn overhead_model(&self) -> Result<OverheadModel> {
        OverheadModel::with_exhaustive_sweep(self.overhead.t_pilot, self.num_beams(), self.overhead.t_beam_coherence)
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }

    pub fn geometry(&self) -> Result<UpaGeometry> {
        UpaGeometry::half_wavelength(self.radio.array[0], self.radio.array[1])
    }

    fn scenario(&self, domain: DomainTag, users: Vec<UserState>) -> ScenarioConfig {
        let placements = match domain {
            DomainTag::Source => &self.source_bs,
            DomainTag::Target => &self.target_bs,
        };
        let geometry = self.geometry().unwrap_or(UpaGeometry {
            m_h: 0,
            m_v: 0,
            spacing_wavelengths: 0.5,
        });
        ScenarioConfig {
            num_subcarriers: self.radio.num_subcarriers,
            carrier_freq_hz: self.radio.carrier_freq_hz,
            bandwidth_hz: self.radio.bandwidth_hz,
            noise_power: self.radio.noise_power,
            bs_list: placements
                .iter()
                .map(|p| BsSite {
                    position: p.position,
                    geometry,
                    boresight_azimuth: p.boresight_azimuth,
                })
                .collect(),
            users,
            paths_per_link: self.radio.paths_per_link,
            rng_seed: self.seed,
            time_s: self.radio.time_s,
            nlos_delay_spread_samples: self.radio.nlos_delay_spread_samples,
            nlos_power_deficit_db: self.radio.nlos_power_deficit_db,
        }
    }

    /// Uniform user drops; source and target users use disjoint streams.
    pub fn users(&self, domain: DomainTag) -> Vec<UserState> {
        let (count, offset) = match domain {
            DomainTag::Source => (self.source_users, 0u64),
            DomainTag::Target => (self.target_pool_users + self.test_users, 1 << 32),
        };
        let s = &self.street;
        (0..count)
            .map(|i| {
                let mut r = rng::stream(self.seed, purpose::USER_PLACEMENT, offset + i as u64);
                let mut draw = |lo: f64, hi: f64| if hi > lo { r.random_range(lo..hi) } else { lo };
                let x = draw(s.x_range[0], s.x_range[1]);
                let y = draw(s.y_range[0], s.y_range[1]);
                UserState {
                    position: [x, y, s.height],
                    speed_mps: s.speed_mps,
                }
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Normalized datasets of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub source: Dataset,
    pub target_pool: Dataset,
    pub target_test: Dataset,
}

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn sample_spec(cfg: &ExperimentConfig) -> SampleSpec {
    SampleSpec {
        num_subcarriers: cfg.radio.num_subcarriers,
        k_dl: cfg.radio.k_dl,
        noise_power: cfg.radio.noise_power,
        time_s: cfg.radio.time_s,
    }
}

/// Synthesizes both deployments, builds and normalizes the datasets and
/// writes them with the path tables.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentData> {
    cfg.validate()?;
    let dir = data_dir(out);
    fs::create_dir_all(&dir)?;
    fs::write(out.join(EXPERIMENT_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    let geom = cfg.geometry()?;
    let cb = dft_codebook(&geom)?;
    let n_bs = cfg.num_bs();
    let codebooks = vec![cb; n_bs];
    let geoms = vec![geom; n_bs];
    let digest = cfg.digest();
    let mut raw = Vec::new();
    for domain in [DomainTag::Source, DomainTag::Target] {
        let table = synth_scenario(&cfg.scenario(domain, cfg.users(domain)), domain)?;
        save_paths(&table, &dir.join(format!("paths_{domain}.csv")))?;
        raw.push(build_domain_dataset(
            &table,
            &codebooks,
            &geoms,
            &sample_spec(cfg),
            domain,
            cfg.seed,
            digest.clone(),
        )?);
    }
    let (source, consts) = normalize(&raw[0])?;
    let target = apply_normalization(&raw[1], &consts)?;
    let pool = cfg.target_pool_users as u32;
    let data = ExperimentData {
        source,
        target_pool: target.filter_users(|u| u < pool),
        target_test: target.filter_users(|u| u >= pool),
    };
    dataset::save(&data.source, &dir.join("source"))?;
    dataset::save(&data.target_pool, &dir.join("target_pool"))?;
    dataset::save(&data.target_test, &dir.join("target_test"))?;
    Ok(data)
}

pub fn load_data(out: &Path) -> Result<ExperimentData> {
    let dir = data_dir(out);
    Ok(ExperimentData {
        source: dataset::load(&dir.join("source"))?,
        target_pool: dataset::load(&dir.join("target_pool"))?,
        target_test: dataset::load(&dir.join("target_test"))?,
    })
}

pub fn pretrain_dir(out: &Path, bs: u32) -> PathBuf {
    out.join("pretrain").join(format!("bs_{bs}"))
}

pub fn cell_dir(out: &Path, method: Method, size: usize, seed: u64) -> PathBuf {
    out.join("runs")
        .join(method.name())
        .join(format!("size_{size}"))
        .join(format!("seed_{seed}"))
}

pub fn run_dir(out: &Path, method: Method, size: usize, seed: u64, bs: u32) -> PathBuf {
    cell_dir(out, method, size, seed).join(format!("bs_{bs}"))
}

/// Trains and saves one source model per BS.
pub fn pretrain_stage(cfg: &ExperimentConfig, out: &Path, data: &ExperimentData) -> Result<()> {
    let arch = cfg.arch();
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.pretrain.clone()
    };
    for (bs, outcome) in training::pretrain_per_bs(&data.source, &arch, &tc)? {
        training::save_run(&pretrain_dir(out, bs), &tc, &outcome)?;
    }
    Ok(())
}

fn load_pretrained(out: &Path, bs: u32) -> Result<Model> {
    load_checkpoint(&pretrain_dir(out, bs))
}

/// Target users used for training at a given size and seed; the same users
/// serve every BS.
pub fn target_subset(pool: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    let users: Vec<u32> = pool
        .samples
        .iter()
        .map(|s| s.user_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if size == 0 || size > users.len() {
        return Err(Error::Config(format!("train size {size} exceeds the {} pool users", users.len())));
    }
    let mut shuffled = users;
    shuffled.shuffle(&mut rng::stream(seed, purpose::SUBSET, size as u64));
    let keep: BTreeSet<u32> = shuffled.into_iter().take(size).collect();
    Ok(pool.filter_users(|u| keep.contains(&u)))
}

fn regime_cfg(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<TrainConfig> {
    let base = match method {
        Method::TransferDa => &cfg.transfer,
        Method::FinetunePure => &cfg.finetune,
        Method::Scratch => &cfg.scratch,
        _ => return Err(Error::Config(format!("{} is not trained", method.name()))),
    };
    Ok(TrainConfig { seed, ..base.clone() })
}

/// Trains every (size, seed, BS) model of a learned method.
pub fn train_stage(cfg: &ExperimentConfig, out: &Path, data: &ExperimentData, method: Method) -> Result<()> {
    let arch = cfg.arch();
    let source = data.source.per_bs();
    for &size in &cfg.train_sizes {
        for &seed in &cfg.seeds {
            let subset = target_subset(&data.target_pool, size, seed)?;
            let tc = regime_cfg(cfg, method, seed)?;
            for (bs, target) in subset.per_bs() {
                let outcome = match method {
                    Method::Scratch => training::train_scratch(&target, &arch, &tc)?,
                    Method::TransferDa => {
                        training::transfer_da(&load_pretrained(out, bs)?, &target, source.get(&bs), &arch, &tc)?
                    }
                    _ => training::finetune_pure(&load_pretrained(out, bs)?, &target, &arch, &tc)?,
                };
                training::save_run(&run_dir(out, method, size, seed, bs), &tc, &outcome)?;
            }
        }
    }
    Ok(())
}

/// Channels of the test users to every target BS, rebuilt from the saved
/// path table.
pub fn eval_scenario(cfg: &ExperimentConfig, out: &Path, data: &ExperimentData) -> Result<EvalScenario> {
    let table: PathTable = load_paths(&data_dir(out).join("paths_target.csv"))?;
    let geom = cfg.geometry()?;
    let cb: Codebook = dft_codebook(&geom)?;
    let users: Vec<u32> = data
        .target_test
        .samples
        .iter()
        .map(|s| s.user_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let channels = users
        .iter()
        .map(|&u| {
            (0..cfg.num_bs())
                .map(|n| {
                    let paths = table
                        .get(u as usize, n)
                        .ok_or_else(|| Error::Config(format!("no paths for user {u} at bs {n}")))?;
                    channel_matrix(paths, &geom, cfg.radio.num_subcarriers, cfg.radio.time_s)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EvalScenario::new(users, channels, vec![cb; cfg.num_bs()], cfg.radio.noise_power)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates one learned cell from its saved checkpoints.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    out: &Path,
    data: &ExperimentData,
    scenario: &EvalScenario,
    method: Method,
    size: usize,
    seed: u64,
) -> Result<EvalCell> {
    let overhead = cfg.overhead_model()?;
    let test = data.target_test.per_bs();
    let bs_ids: Vec<u32> = (0..cfg.num_bs() as u32).collect();
    let models = bs_ids
        .iter()
        .map(|&bs| load_checkpoint(&run_dir(out, method, size, seed, bs)))
        .collect::<Result<Vec<_>>>()?;
    let tests = bs_ids
        .iter()
        .map(|bs| {
            test.get(bs)
                .ok_or_else(|| Error::Config(format!("no test samples for bs {bs}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Model> = models.iter().collect();
    let choices = eval::learned_beams(&refs, &tests)?;
    let rate = eval::eval_effective_rate(scenario, &overhead, method, Some(&choices))?;
    let mut top1 = Vec::new();
    let mut top3 = Vec::new();
    for (m, t) in models.iter().zip(&tests) {
        top1.push(eval::topk_accuracy(m, t, 1)?);
        top3.push(eval::topk_accuracy(m, t, 3)?);
    }
    let (mut domain_acc, mut probe_acc) = (None, None);
    if method == Method::TransferDa {
        let subset = target_subset(&data.target_pool, size, seed)?.per_bs();
        let source = data.source.per_bs();
        let tc = regime_cfg(cfg, method, seed)?;
        let mut dom = Vec::new();
        let mut probe = Vec::new();
        for (i, &bs) in bs_ids.iter().enumerate() {
            let (t, s) = (&subset[&bs], &source[&bs]);
            let outcome = training::TrainOutcome {
                model: models[i].clone(),
                metrics: Vec::new(),
                best_epoch: 0,
                best_val_mse: f64::NAN,
            };
            dom.push(training::transfer_domain_accuracy(&outcome, t, s, &tc)?);
            let probe_cfg = TrainConfig {
                lambda: 0.0,
                ..tc.clone()
            };
            probe.push(training::domain_probe(&load_pretrained(out, bs)?, t, s, &cfg.arch(), &probe_cfg)?);
        }
        domain_acc = Some(mean(&dom));
        probe_acc = Some(mean(&probe));
    }
    Ok(EvalCell {
        method,
        train_size: size,
        seed,
        eff_rate_bps_hz: rate,
        top1: mean(&top1),
        top3: mean(&top3),
        trainable_params: models[0].trainable_param_count(),
        test_samples: scenario.user_ids.len(),
        domain_acc,
        probe_acc,
    })
}

/// Writes `eval.json` for every (method, size, seed) cell, genie and
/// exhaustive included.
pub fn evaluate_stage(cfg: &ExperimentConfig, out: &Path, data: &ExperimentData) -> Result<Vec<EvalCell>> {
    let scenario = eval_scenario(cfg, out, data)?;
    let overhead = cfg.overhead_model()?;
    let mut cells = Vec::new();
    for method in [Method::Genie, Method::Exhaustive] {
        let rate = eval::eval_effective_rate(&scenario, &overhead, method, None)?;
        for &size in &cfg.train_sizes {
            for &seed in &cfg.seeds {
                cells.push(EvalCell {
                    method,
                    train_size: size,
                    seed,
                    eff_rate_bps_hz: rate,
                    top1: 1.0,
                    top3: 1.0,
                    trainable_params: 0,
                    test_samples: scenario.user_ids.len(),
                    domain_acc: None,
                    probe_acc: None,
                });
            }
        }
    }
    for &method in &cfg.methods {
        for &size in &cfg.train_sizes {
            for &seed in &cfg.seeds {
                cells.push(evaluate_cell(cfg, out, data, &scenario, method, size, seed)?);
            }
        }
    }
    for c in &cells {
        eval::write_cell(&cell_dir(out, c.method, c.train_size, c.seed), c)?;
    }
    Ok(cells)
}

/// Every cell directory the configuration implies.
pub fn expected_cells(cfg: &ExperimentConfig, out: &Path) -> Vec<PathBuf> {
    let mut methods = vec![Method::Genie, Method::Exhaustive];
    methods.extend(cfg.methods.iter().copied());
    let mut dirs = Vec::new();
    for m in methods {
        for &size in &cfg.train_sizes {
            for &seed in &cfg.seeds {
                dirs.push(cell_dir(out, m, size, seed));
            }
        }
    }
    dirs
}

pub fn report_stage(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    eval::report(&expected_cells(cfg, out), &out.join("report"), cfg.digest())
}

/// Runs every stage in order.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let data = generate(cfg, out)?;
    pretrain_stage(cfg, out, &data)?;
    for &m in &cfg.methods {
        train_stage(cfg, out, &data, m)?;
    }
    evaluate_stage(cfg, out, &data)?;
    report_stage(cfg, out)
}
