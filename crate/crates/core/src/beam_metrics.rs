//! Pilot reception, per-beam achievable rates, optimal-beam selection and
//! effective-rate accounting.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array_codebook::Codebook;
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};

/// Achievable rate of every beam of a codebook, bits/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Domain(format!("rate {bad} is not a finite non-negative value")));
        }
        Ok(RateVector(rates))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest rate; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// First index of the maximum. NaN entries never win.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Time budget of one beam coherence interval, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadModel {
    /// Pilot sequence time `T_p`.
    pub t_pilot: f64,
    /// Beam training time `T_tr` of the exhaustive search.
    pub t_train: f64,
    /// Beam coherence time `T_B`.
    pub t_beam_coherence: f64,
}

/// How the beams were obtained, which decides the overhead factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// Sweep of the codebook: factor `1 − T_tr/T_B`.
    Exhaustive,
    /// Uplink pilot plus prediction: factor `1 − 2T_p/T_B`.
    Learned,
}

impl OverheadModel {
    /// Exhaustive search sounding each of `num_beams` beams once: `T_tr = D · T_p`.
    pub fn with_exhaustive_sweep(t_pilot: f64, num_beams: usize, t_beam_coherence: f64) -> Result<Self> {
        let oh = OverheadModel {
            t_pilot,
            t_train: num_beams as f64 * t_pilot,
            t_beam_coherence,
        };
        oh.validate()?;
        Ok(oh)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t_beam_coherence.is_finite()
            && self.t_beam_coherence > 0.0
            && (0.0..=self.t_beam_coherence).contains(&self.t_train)
            && self.t_pilot >= 0.0
            && 2.0 * self.t_pilot <= self.t_beam_coherence;
        if !ok {
            return Err(Error::Config(format!(
                "overhead model needs 0 <= T_tr <= T_B and 0 <= 2 T_p <= T_B, got T_p={}, T_tr={}, T_B={}",
                self.t_pilot, self.t_train, self.t_beam_coherence
            )));
        }
        Ok(())
    }

    pub fn factor(&self, mode: TrainingMode) -> f64 {
        match mode {
            TrainingMode::Exhaustive => 1.0 - self.t_train / self.t_beam_coherence,
            TrainingMode::Learned => 1.0 - 2.0 * self.t_pilot / self.t_beam_coherence,
        }
    }
}

#[inline]
fn dot_t(h: &[Complex64], f: &[Complex64]) -> Complex64 {
    h.iter().zip(f).map(|(a, b)| a * b).sum()
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Uplink reception through beam `f`: `r_k = fᵀ h_k s_k + fᵀ n_k`.
///
/// `n_k` is circularly-symmetric Gaussian with variance `noise_power` per
/// antenna. With `noise_power == 0` no random numbers are drawn.
pub fn receive_symbol<R: Rng + ?Sized>(
    h: &ChannelRealization,
    f: &[Complex64],
    pilot: &[Complex64],
    noise_power: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if f.len() != h.num_elements() {
        return Err(Error::Shape(format!(
            "beam has {} weights, channel has {} antennas",
            f.len(),
            h.num_elements()
        )));
    }
    if pilot.len() != h.num_subcarriers() {
        return Err(Error::Shape(format!(
            "pilot has {} symbols, channel has {} subcarriers",
            pilot.len(),
            h.num_subcarriers()
        )));
    }
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(Error::Domain(format!("noise power {noise_power} must be >= 0")));
    }
    let out = h
        .rows()
        .zip(pilot)
        .map(|(row, s)| {
            let mut r = dot_t(row, f) * s;
            if noise_power > 0.0 {
                for w in f {
                    r += w * complex_normal(rng, noise_power);
                }
            }
            r
        })
        .collect();
    Ok(out)
}

/// Constant unit pilot of length `k`.
pub fn unit_pilot(k: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); k]
}

fn check_noise(noise_power: f64) -> Result<()> {
    if !(noise_power > 0.0 && noise_power.is_finite()) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise_power}")));
    }
    Ok(())
}

/// `R[d] = (1/K) Σ_k log2(1 + |h_kᵀ f_d|² / σ²)` for every beam `d`.
pub fn rate_per_beam(h: &ChannelRealization, cb: &Codebook, noise_power: f64) -> Result<RateVector> {
    check_noise(noise_power)?;
    if cb.num_elements() != h.num_elements() {
        return Err(Error::Shape(format!(
            "codebook has {} antennas, channel has {}",
            cb.num_elements(),
            h.num_elements()
        )));
    }
    let inv_k = 1.0 / h.num_subcarriers() as f64;
    let rates = cb
        .columns()
        .map(|f| {
            let s: f64 = h
                .rows()
                .map(|row| (1.0 + dot_t(row, f).norm_sqr() / noise_power).log2())
                .sum();
            s * inv_k
        })
        .collect();
    RateVector::new(rates)
}

/// Best beam by achievable rate and its rate.
pub fn optimal_beam(h: &ChannelRealization, cb: &Codebook, noise_power: f64) -> Result<(usize, f64)> {
    let rates = rate_per_beam(h, cb, noise_power)?;
    let d = rates.argmax();
    Ok((d, rates.as_slice()[d]))
}

/// Coherent joint-transmission rate `(1/K) Σ_k log2(1 + |Σ_n h_{k,n}ᵀ f_n|² / σ²)`
/// without any overhead factor.
pub fn joint_payload_rate(
    channels: &[&ChannelRealization],
    beams: &[&[Complex64]],
    noise_power: f64,
) -> Result<f64> {
    check_noise(noise_power)?;
    if channels.is_empty() || channels.len() != beams.len() {
        return Err(Error::Shape(format!(
            "{} channels but {} beams",
            channels.len(),
            beams.len()
        )));
    }
    let k = channels[0].num_subcarriers();
    for (h, f) in channels.iter().zip(beams) {
        if h.num_subcarriers() != k || h.num_elements() != f.len() {
            return Err(Error::Shape("per-BS channel and beam dimensions disagree".into()));
        }
    }
    let total: f64 = (0..k)
        .map(|sc| {
            let y: Complex64 = channels.iter().zip(beams).map(|(h, f)| dot_t(h.row(sc), f)).sum();
            (1.0 + y.norm_sqr() / noise_power).log2()
        })
        .sum();
    Ok(total / k as f64)
}

/// Effective downlink rate: the overhead factor of `mode` times the joint payload rate.
pub fn effective_rate(
    channels: &[&ChannelRealization],
    codebooks: &[&Codebook],
    beam_indices: &[usize],
    noise_power: f64,
    overhead: &OverheadModel,
    mode: TrainingMode,
) -> Result<f64> {
    overhead.validate()?;
    if codebooks.len() != channels.len() || beam_indices.len() != channels.len() {
        return Err(Error::Shape(format!(
            "{} channels, {} codebooks, {} beam indices",
            channels.len(),
            codebooks.len(),
            beam_indices.len()
        )));
    }
    let beams = codebooks
        .iter()
        .zip(beam_indices)
        .map(|(cb, &d)| crate::array_codebook::beam_column(cb, d))
        .collect::<Result<Vec<_>>>()?;
    let factor = overhead.factor(mode);
    if factor == 0.0 {
        return Ok(0.0);
    }
    Ok(factor * joint_payload_rate(channels, &beams, noise_power)?)
}
