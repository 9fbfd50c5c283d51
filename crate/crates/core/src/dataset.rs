//! Supervised samples: uplink reception through the sounding beam as
//! features, per-beam downlink rates as labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array_codebook::{beam_column, Codebook};
use crate::beam_metrics::{rate_per_beam, receive_symbol, unit_pilot};
use crate::channel::{channel_matrix, ChannelRealization, DomainTag, PathTable};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::tensor::{self, Tensor, TensorData};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const META_FILE: &str = "meta.bin";

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSample {
    /// `2 × K_DL` row-major: real parts, then imaginary parts.
    pub features: Vec<f32>,
    /// Per-beam rates, length `D`.
    pub labels: Vec<f32>,
    pub domain_label: u8,
    pub bs_id: u32,
    pub user_id: u32,
}

impl BeamSample {
    pub fn best_beam(&self) -> usize {
        crate::beam_metrics::argmax(&self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub feature_scale: f64,
    pub label_scale: f64,
}

impl NormConstants {
    pub fn denormalize_rate(&self, normalized: f64) -> f64 {
        normalized * self.label_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigests {
    pub features: String,
    pub labels: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario_digest: String,
    pub num_subcarriers: usize,
    pub k_dl: usize,
    pub num_beams: usize,
    pub num_samples: usize,
    pub normalized: bool,
    /// Feature and label divisors; both 1 until [`normalize`] runs.
    pub normalization: NormConstants,
    pub noise_power: f64,
    pub rng_seed: u64,
    pub domain: DomainTag,
    /// Filled in by [`save`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<FileDigests>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<BeamSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct BS ids, ascending.
    pub fn bs_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.bs_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Splits into one dataset per BS, keeping sample order.
    pub fn per_bs(&self) -> BTreeMap<u32, Dataset> {
        let mut out: BTreeMap<u32, Dataset> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.bs_id)
                .or_insert_with(|| Dataset {
                    manifest: DatasetManifest {
                        files: None,
                        ..self.manifest.clone()
                    },
                    samples: Vec::new(),
                })
                .samples
                .push(s.clone());
        }
        for ds in out.values_mut() {
            ds.manifest.num_samples = ds.samples.len();
        }
        out
    }

    /// Samples of one BS.
    pub fn for_bs(&self, bs_id: u32) -> Dataset {
        let samples: Vec<BeamSample> = self.samples.iter().filter(|s| s.bs_id == bs_id).cloned().collect();
        Dataset {
            manifest: DatasetManifest {
                num_samples: samples.len(),
                files: None,
                ..self.manifest.clone()
            },
            samples,
        }
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<BeamSample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset {
            manifest: DatasetManifest {
                num_samples: samples.len(),
                files: None,
                ..self.manifest.clone()
            },
            samples,
        }
    }

    /// Keeps only samples whose user id satisfies `keep`.
    pub fn filter_users(&self, keep: impl Fn(u32) -> bool) -> Dataset {
        let samples: Vec<BeamSample> = self.samples.iter().filter(|s| keep(s.user_id)).cloned().collect();
        Dataset {
            manifest: DatasetManifest {
                num_samples: samples.len(),
                files: None,
                ..self.manifest.clone()
            },
            samples,
        }
    }
}

/// Channel and reception parameters shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub num_subcarriers: usize,
    pub k_dl: usize,
    pub noise_power: f64,
    pub time_s: f64,
}

/// Builds one sample from a channel: features are the first `k_dl` received
/// values through beam 0, labels the noiseless per-beam rates.
pub fn build_sample<R: Rng + ?Sized>(
    h: &ChannelRealization,
    cb: &Codebook,
    noise_power: f64,
    k_dl: usize,
    rng: &mut R,
) -> Result<BeamSample> {
    if k_dl == 0 || k_dl > h.num_subcarriers() {
        return Err(Error::Config(format!(
            "K_DL = {k_dl} must lie in 1..={}",
            h.num_subcarriers()
        )));
    }
    let f0 = beam_column(cb, 0)?;
    let rx = receive_symbol(h, f0, &unit_pilot(h.num_subcarriers()), noise_power, rng)?;
    let mut features = Vec::with_capacity(2 * k_dl);
    features.extend(rx[..k_dl].iter().map(|z| z.re as f32));
    features.extend(rx[..k_dl].iter().map(|z| z.im as f32));
    let labels = rate_per_beam(h, cb, noise_power)?
        .into_vec()
        .into_iter()
        .map(|r| r as f32)
        .collect();
    Ok(BeamSample {
        features,
        labels,
        domain_label: 0,
        bs_id: 0,
        user_id: 0,
    })
}

fn noise_stream(seed: u64, domain: DomainTag, user_id: usize, bs_id: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(
        seed,
        purpose::RX_NOISE ^ u64::from(domain.label()),
        ((user_id as u64) << 32) | bs_id as u64,
    )
}

/// Builds the dataset of one domain: one sample per `(user, BS)` link of
/// `paths`. `codebooks[bs_id]` must match that BS's array.
pub fn build_domain_dataset(
    paths: &PathTable,
    codebooks: &[Codebook],
    geometries: &[crate::array_codebook::UpaGeometry],
    spec: &SampleSpec,
    domain: DomainTag,
    seed: u64,
    scenario_digest: String,
) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Config("scenario has no links".into()));
    }
    if codebooks.len() != geometries.len() {
        return Err(Error::Config("one codebook per BS geometry required".into()));
    }
    let mut num_beams = None;
    let mut samples = Vec::with_capacity(paths.len());
    for (user_id, bs_id, link) in paths.iter() {
        let cb = codebooks
            .get(bs_id)
            .ok_or_else(|| Error::Config(format!("no codebook for bs {bs_id}")))?;
        if *num_beams.get_or_insert(cb.num_beams()) != cb.num_beams() {
            return Err(Error::Config("all BSs must use the same number of beams".into()));
        }
        let h = channel_matrix(link, &geometries[bs_id], spec.num_subcarriers, spec.time_s)?;
        let mut rng = noise_stream(seed, domain, user_id, bs_id);
        let mut s = build_sample(&h, cb, spec.noise_power, spec.k_dl, &mut rng)?;
        s.domain_label = domain.label();
        s.bs_id = bs_id as u32;
        s.user_id = user_id as u32;
        samples.push(s);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            scenario_digest,
            num_subcarriers: spec.num_subcarriers,
            k_dl: spec.k_dl,
            num_beams: num_beams.unwrap_or(0),
            num_samples: samples.len(),
            normalized: false,
            normalization: NormConstants {
                feature_scale: 1.0,
                label_scale: 1.0,
            },
            noise_power: spec.noise_power,
            rng_seed: seed,
            domain,
            files: None,
        },
        samples,
    })
}

/// Computes max-abs constants over `train` and normalizes it.
pub fn normalize(train: &Dataset) -> Result<(Dataset, NormConstants)> {
    if train.is_empty() {
        return Err(Error::DegenerateData("cannot normalize an empty dataset".into()));
    }
    if train.manifest.normalized {
        return Err(Error::State("dataset is already normalized".into()));
    }
    let fmax = train
        .samples
        .iter()
        .flat_map(|s| s.features.iter())
        .fold(0.0f32, |m, x| m.max(x.abs()));
    let lmax = train
        .samples
        .iter()
        .flat_map(|s| s.labels.iter())
        .fold(0.0f32, |m, x| m.max(*x));
    if fmax == 0.0 {
        return Err(Error::DegenerateData("all features are zero".into()));
    }
    if lmax <= 0.0 {
        return Err(Error::DegenerateData("all labels are zero".into()));
    }
    let consts = NormConstants {
        feature_scale: f64::from(fmax),
        label_scale: f64::from(lmax),
    };
    Ok((apply_normalization(train, &consts)?, consts))
}

/// Applies previously computed constants. Fails on an already-normalized dataset.
pub fn apply_normalization(ds: &Dataset, consts: &NormConstants) -> Result<Dataset> {
    if ds.manifest.normalized {
        return Err(Error::State("dataset is already normalized".into()));
    }
    if !(consts.feature_scale > 0.0 && consts.label_scale > 0.0) {
        return Err(Error::Config("normalization constants must be positive".into()));
    }
    let fs = consts.feature_scale as f32;
    let ls = consts.label_scale as f32;
    let samples = ds
        .samples
        .iter()
        .map(|s| BeamSample {
            features: s.features.iter().map(|x| x / fs).collect(),
            labels: s.labels.iter().map(|x| x / ls).collect(),
            ..s.clone()
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            normalized: true,
            normalization: *consts,
            files: None,
            ..ds.manifest.clone()
        },
        samples,
    })
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_tensors(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let n = ds.samples.len() as u64;
    let (k_dl, d) = (ds.manifest.k_dl, ds.manifest.num_beams);
    let mut features = Vec::with_capacity(ds.samples.len() * 2 * k_dl);
    let mut labels = Vec::with_capacity(ds.samples.len() * d);
    let mut meta = Vec::with_capacity(ds.samples.len() * 3);
    for (i, s) in ds.samples.iter().enumerate() {
        if s.features.len() != 2 * k_dl || s.labels.len() != d {
            return Err(Error::Shape(format!("sample {i} does not match the manifest shape")));
        }
        features.extend_from_slice(&s.features);
        labels.extend_from_slice(&s.labels);
        meta.extend_from_slice(&[s.bs_id as i32, s.user_id as i32, i32::from(s.domain_label)]);
    }
    let mut fb = Vec::new();
    tensor::encode(&Tensor::new(vec![n, 2, k_dl as u64], TensorData::F32(features))?, &mut fb);
    let mut lb = Vec::new();
    tensor::encode(&Tensor::new(vec![n, d as u64], TensorData::F32(labels))?, &mut lb);
    let mut mb = Vec::new();
    tensor::encode(&Tensor::new(vec![n, 3], TensorData::I32(meta))?, &mut mb);
    Ok((fb, lb, mb))
}

pub fn save(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (fb, lb, mb) = encode_tensors(ds)?;
    let mut manifest = ds.manifest.clone();
    manifest.num_samples = ds.samples.len();
    manifest.files = Some(FileDigests {
        features: sha256_hex(&fb),
        labels: sha256_hex(&lb),
        meta: sha256_hex(&mb),
    });
    fs::write(dir.join(FEATURES_FILE), &fb)?;
    fs::write(dir.join(LABELS_FILE), &lb)?;
    fs::write(dir.join(META_FILE), &mb)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_checked(dir: &Path, name: &str, digest: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path)?;
    if sha256_hex(&bytes) != digest {
        return Err(Error::integrity(path.display().to_string(), "digest mismatch"));
    }
    Ok(bytes)
}

fn decode_single(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let relabel = |e: Error| match e {
        Error::Integrity { message, .. } => Error::integrity(path.display().to_string(), message),
        other => other,
    };
    let (t, used) = tensor::decode(bytes).map_err(relabel)?;
    if used != bytes.len() {
        return Err(Error::integrity(path.display().to_string(), "trailing bytes after tensor"));
    }
    Ok(t)
}

/// Parses a manifest document.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_str(text)?;
    if !(m.normalization.feature_scale > 0.0 && m.normalization.label_scale > 0.0) {
        return Err(Error::Config("normalization constants must be positive".into()));
    }
    Ok(m)
}

/// Rebuilds samples from decoded tensor files, checking shapes against the manifest.
pub fn decode_tensors(manifest: &DatasetManifest, fb: &[u8], lb: &[u8], mb: &[u8]) -> Result<Vec<BeamSample>> {
    let (n, k_dl, d) = (manifest.num_samples as u64, manifest.k_dl as u64, manifest.num_beams as u64);
    let f = decode_single(fb, Path::new(FEATURES_FILE))?;
    let l = decode_single(lb, Path::new(LABELS_FILE))?;
    let m = decode_single(mb, Path::new(META_FILE))?;
    if f.dims != [n, 2, k_dl] || l.dims != [n, d] || m.dims != [n, 3] {
        return Err(Error::integrity("dataset", "tensor shapes disagree with the manifest"));
    }
    let features = f.into_f32().ok_or_else(|| Error::integrity(FEATURES_FILE, "expected f32"))?;
    let labels = l.into_f32().ok_or_else(|| Error::integrity(LABELS_FILE, "expected f32"))?;
    let meta = m.into_i32().ok_or_else(|| Error::integrity(META_FILE, "expected i32"))?;
    let fw = manifest
        .k_dl
        .checked_mul(2)
        .ok_or_else(|| Error::integrity("dataset", "k_dl overflows"))?;
    let mut samples = Vec::with_capacity(manifest.num_samples);
    for i in 0..manifest.num_samples {
        let row = &meta[3 * i..3 * i + 3];
        let (bs, user, dom) = (row[0], row[1], row[2]);
        if bs < 0 || user < 0 || !(dom == 0 || dom == 1) {
            return Err(Error::integrity(META_FILE, format!("invalid metadata in row {i}")));
        }
        samples.push(BeamSample {
            features: features[i * fw..(i + 1) * fw].to_vec(),
            labels: labels[i * manifest.num_beams..(i + 1) * manifest.num_beams].to_vec(),
            domain_label: dom as u8,
            bs_id: bs as u32,
            user_id: user as u32,
        });
    }
    Ok(samples)
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path)?;
    let mut manifest = std::str::from_utf8(&text)
        .map_err(|e| Error::integrity(manifest_path.display().to_string(), e.to_string()))
        .and_then(|t| {
            parse_manifest(t).map_err(|e| Error::integrity(manifest_path.display().to_string(), e.to_string()))
        })?;
    let digests = manifest
        .files
        .clone()
        .ok_or_else(|| Error::integrity(manifest_path.display().to_string(), "manifest lacks file digests"))?;
    let fb = read_checked(dir, FEATURES_FILE, &digests.features)?;
    let lb = read_checked(dir, LABELS_FILE, &digests.labels)?;
    let mb = read_checked(dir, META_FILE, &digests.meta)?;
    let samples = decode_tensors(&manifest, &fb, &lb, &mb)?;
    manifest.files = None;
    Ok(Dataset { manifest, samples })
}

/// Complex received values back from a feature block (testing aid).
pub fn features_to_complex(features: &[f32]) -> Vec<Complex64> {
    let k = features.len() / 2;
    (0..k)
        .map(|i| Complex64::new(f64::from(features[i]), f64::from(features[k + i])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_codebook::{dft_codebook, UpaGeometry};
    use crate::channel::{synth_scenario, BsSite, ScenarioConfig, UserState};

    fn flat(k: usize, row: &[Complex64]) -> ChannelRealization {
        let h = (0..k).flat_map(|_| row.iter().copied()).collect();
        ChannelRealization::from_rows(k, row.len(), h).unwrap()
    }

    fn unit_cb() -> Codebook {
        Codebook::from_columns(1, vec![Complex64::new(1.0, 0.0)]).unwrap()
    }

    fn assert_close(got: &[f32], want: &[f32]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
        }
    }

    // Reception noise at σ² = 1e-20 is ~1e-10, far below the tolerance.
    #[test]
    fn near_noiseless_feature_layout() {
        let mut r = rng::stream(0, 0, 0);
        let h = flat(4, &[Complex64::new(1.0, 0.0)]);
        let s = build_sample(&h, &unit_cb(), 1e-20, 2, &mut r).unwrap();
        assert_close(&s.features, &[1.0, 1.0, 0.0, 0.0]);

        let h = flat(4, &[Complex64::new(0.0, 1.0)]);
        let s = build_sample(&h, &unit_cb(), 1e-20, 3, &mut r).unwrap();
        assert_close(&s.features, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn labels_are_rate_per_beam() {
        let geom = UpaGeometry::half_wavelength(2, 2).unwrap();
        let cb = dft_codebook(&geom).unwrap();
        let row: Vec<Complex64> = (0..4).map(|i| Complex64::from_polar(1.0, 0.7 * i as f64)).collect();
        let h = flat(8, &row);
        let mut r = rng::stream(0, 0, 0);
        let s = build_sample(&h, &cb, 0.3, 8, &mut r).unwrap();
        let expected: Vec<f32> = rate_per_beam(&h, &cb, 0.3).unwrap().as_slice().iter().map(|x| *x as f32).collect();
        assert_eq!(s.labels, expected);
        assert_eq!(s.best_beam(), crate::beam_metrics::optimal_beam(&h, &cb, 0.3).unwrap().0);
    }

    #[test]
    fn k_dl_above_k_is_config_error() {
        let h = flat(4, &[Complex64::new(1.0, 0.0)]);
        let mut r = rng::stream(0, 0, 0);
        assert!(matches!(build_sample(&h, &unit_cb(), 1.0, 5, &mut r), Err(Error::Config(_))));
        assert!(matches!(build_sample(&h, &unit_cb(), 1.0, 0, &mut r), Err(Error::Config(_))));
    }

    fn small_scenario(users: usize, seed: u64) -> (ScenarioConfig, Vec<Codebook>, Vec<UpaGeometry>) {
        let geom = UpaGeometry::half_wavelength(4, 2).unwrap();
        let bs_list = (0..4)
            .map(|i| BsSite {
                position: [-8.0, -6.0 + 4.0 * i as f64, 6.0],
                geometry: geom,
                boresight_azimuth: 0.0,
            })
            .collect();
        let cfg = ScenarioConfig {
            num_subcarriers: 64,
            carrier_freq_hz: 60e9,
            bandwidth_hz: 0.5e9,
            noise_power: 1e-11,
            bs_list,
            users: (0..users)
                .map(|u| UserState {
                    position: [1.0, -10.0 + u as f64, 1.5],
                    speed_mps: 8.3,
                })
                .collect(),
            paths_per_link: 3,
            rng_seed: seed,
            time_s: 0.0,
            nlos_delay_spread_samples: 5.0,
            nlos_power_deficit_db: 10.0,
        };
        let cbs = vec![dft_codebook(&geom).unwrap(); 4];
        (cfg, cbs, vec![geom; 4])
    }

    fn build(users: usize, seed: u64, domain: DomainTag) -> Dataset {
        let (cfg, cbs, geoms) = small_scenario(users, seed);
        let paths = synth_scenario(&cfg, domain).unwrap();
        let spec = SampleSpec {
            num_subcarriers: 64,
            k_dl: 16,
            noise_power: cfg.noise_power,
            time_s: 0.0,
        };
        build_domain_dataset(&paths, &cbs, &geoms, &spec, domain, seed, "test".into()).unwrap()
    }

    #[test]
    fn domain_dataset_counts_and_labels() {
        let ds = build(10, 3, DomainTag::Source);
        let per = ds.per_bs();
        assert_eq!(per.len(), 4);
        assert!(per.values().all(|d| d.len() == 10));
        assert!(ds.samples.iter().all(|s| s.domain_label == 1));
        assert!(per.iter().all(|(b, d)| d.samples.iter().all(|s| s.bs_id == *b)));

        let tgt = build(3, 3, DomainTag::Target);
        assert!(tgt.samples.iter().all(|s| s.domain_label == 0));

        assert_eq!(build(10, 3, DomainTag::Source), ds);
    }

    #[test]
    fn regenerating_a_sample_is_exact() {
        let (cfg, cbs, geoms) = small_scenario(3, 5);
        let paths = synth_scenario(&cfg, DomainTag::Target).unwrap();
        let spec = SampleSpec {
            num_subcarriers: 64,
            k_dl: 16,
            noise_power: cfg.noise_power,
            time_s: 0.0,
        };
        let ds = build_domain_dataset(&paths, &cbs, &geoms, &spec, DomainTag::Target, 5, String::new()).unwrap();
        let s = &ds.samples[7];
        let (u, b) = (s.user_id as usize, s.bs_id as usize);
        let h = channel_matrix(paths.get(u, b).unwrap(), &geoms[b], 64, 0.0).unwrap();
        let mut r = noise_stream(5, DomainTag::Target, u, b);
        let again = build_sample(&h, &cbs[b], cfg.noise_power, 16, &mut r).unwrap();
        assert_eq!(again.features, s.features);
        assert_eq!(again.labels, s.labels);
    }

    #[test]
    fn empty_scenario_is_config_error() {
        let (_, cbs, geoms) = small_scenario(0, 1);
        let spec = SampleSpec {
            num_subcarriers: 64,
            k_dl: 16,
            noise_power: 1.0,
            time_s: 0.0,
        };
        assert!(matches!(
            build_domain_dataset(&PathTable::default(), &cbs, &geoms, &spec, DomainTag::Source, 0, String::new()),
            Err(Error::Config(_))
        ));
    }

    fn toy(features: Vec<Vec<f32>>, labels: Vec<Vec<f32>>) -> Dataset {
        let k_dl = features[0].len() / 2;
        let d = labels[0].len();
        Dataset {
            manifest: DatasetManifest {
                scenario_digest: String::new(),
                num_subcarriers: k_dl,
                k_dl,
                num_beams: d,
                num_samples: features.len(),
                normalized: false,
                normalization: NormConstants {
                    feature_scale: 1.0,
                    label_scale: 1.0,
                },
                noise_power: 1.0,
                rng_seed: 0,
                domain: DomainTag::Source,
                files: None,
            },
            samples: features
                .into_iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (f, l))| BeamSample {
                    features: f,
                    labels: l,
                    domain_label: 1,
                    bs_id: 0,
                    user_id: i as u32,
                })
                .collect(),
        }
    }

    #[test]
    fn normalization_constants() {
        let ds = toy(vec![vec![1.0, -4.0], vec![2.0, 0.5]], vec![vec![3.0, 6.0], vec![1.5, 0.0]]);
        let (n, c) = normalize(&ds).unwrap();
        assert_eq!(c.feature_scale, 4.0);
        assert_eq!(c.label_scale, 6.0);
        assert_eq!(n.samples[0].features, vec![0.25, -1.0]);
        assert_eq!(n.samples[0].labels, vec![0.5, 1.0]);
        assert!(n.manifest.normalized);
        let fmax = n.samples.iter().flat_map(|s| &s.features).fold(0.0f32, |m, x| m.max(x.abs()));
        assert_eq!(fmax, 1.0);

        assert!(matches!(apply_normalization(&n, &c), Err(Error::State(_))));
        assert!(matches!(normalize(&n), Err(Error::State(_))));

        let other = toy(vec![vec![8.0, 0.0]], vec![vec![12.0, 3.0]]);
        let o = apply_normalization(&other, &c).unwrap();
        assert_eq!(o.samples[0].features, vec![2.0, 0.0]);
        assert_eq!(o.manifest.normalization, c);
    }

    #[test]
    fn degenerate_inputs() {
        let z = toy(vec![vec![0.0, 0.0]], vec![vec![1.0]]);
        assert!(matches!(normalize(&z), Err(Error::DegenerateData(_))));
        let mut empty = toy(vec![vec![1.0, 0.0]], vec![vec![1.0]]);
        empty.samples.clear();
        assert!(matches!(normalize(&empty), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn denormalize_round_trip() {
        let c = NormConstants {
            feature_scale: 3.0,
            label_scale: 7.123456789,
        };
        for raw in [0.0, 0.37, 5.0, 11.9] {
            let normalized = raw / c.label_scale;
            assert!((c.denormalize_rate(normalized) - raw).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build(5, 9, DomainTag::Source);
        save(&ds, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), ds);

        let mut empty = ds.clone();
        empty.samples.clear();
        empty.manifest.num_samples = 0;
        let d2 = dir.path().join("empty");
        save(&empty, &d2).unwrap();
        assert_eq!(load(&d2).unwrap(), empty);
    }

    #[test]
    fn manifest_floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = build(3, 4, DomainTag::Target);
        ds.manifest.normalization = NormConstants {
            feature_scale: 0.00012095046258764341,
            label_scale: 13.604262351989746,
        };
        ds.manifest.normalized = true;
        save(&ds, dir.path()).unwrap();
        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(
            back.manifest.normalization.feature_scale.to_bits(),
            ds.manifest.normalization.feature_scale.to_bits()
        );
        let again = dir.path().join("again");
        save(&back, &again).unwrap();
        assert_eq!(fs::read(again.join(MANIFEST_FILE)).unwrap(), first);
    }

    #[test]
    fn corrupted_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build(2, 9, DomainTag::Target);
        save(&ds, dir.path()).unwrap();

        let fpath = dir.path().join(FEATURES_FILE);
        let mut bytes = fs::read(&fpath).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&fpath, &bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Integrity { .. })));

        save(&ds, dir.path()).unwrap();
        let lpath = dir.path().join(LABELS_FILE);
        let bytes = fs::read(&lpath).unwrap();
        fs::write(&lpath, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn decode_rejects_shape_mismatch() {
        let ds = build(2, 1, DomainTag::Source);
        let (fb, lb, mb) = encode_tensors(&ds).unwrap();
        let mut m = ds.manifest.clone();
        m.num_samples += 1;
        assert!(matches!(decode_tensors(&m, &fb, &lb, &mb), Err(Error::Integrity { .. })));
        assert!(decode_tensors(&ds.manifest, &fb, &lb, &mb).is_ok());
        assert!(decode_tensors(&ds.manifest, &lb, &fb, &mb).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn normalized_features_peak_at_one(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, 4), 1..20),
            labels in proptest::collection::vec(0.01f32..20.0, 3),
        ) {
            proptest::prop_assume!(rows.iter().flatten().any(|x| *x != 0.0));
            let n = rows.len();
            let ds = toy(rows, vec![labels; n]);
            let (out, _) = normalize(&ds).unwrap();
            let fmax = out.samples.iter().flat_map(|s| &s.features).fold(0.0f32, |m, x| m.max(x.abs()));
            proptest::prop_assert_eq!(fmax, 1.0);
            let lmax = out.samples.iter().flat_map(|s| &s.labels).fold(0.0f32, |m, x| m.max(*x));
            proptest::prop_assert_eq!(lmax, 1.0);
        }
    }
}
