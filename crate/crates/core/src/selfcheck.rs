//! Built-in oracle and finite-difference suites, run by `beampred selfcheck`.

use num_complex::Complex64;
use rand::Rng;

use crate::array_codebook::{dft_codebook, UpaGeometry};
use crate::beam_metrics::{argmax, effective_rate, optimal_beam, OverheadModel, TrainingMode};
use crate::channel::{doppler_shift, ChannelRealization};
use crate::error::Result;
use crate::nn::{finite_diff_check, grl_backward, jitter_biases, reduced_arch, Act, Objective};
use crate::rng;
use crate::tensor::{self, Tensor, TensorData};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Largest entry of `|FᴴF − I|`.
pub fn unitarity_error(m_h: usize, m_v: usize) -> Result<f64> {
    let cb = dft_codebook(&UpaGeometry::half_wavelength(m_h, m_v)?)?;
    let cols: Vec<&[Complex64]> = cb.columns().collect();
    let mut worst = 0.0f64;
    for (i, a) in cols.iter().enumerate() {
        for (j, b) in cols.iter().enumerate() {
            let g: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
            let e = if i == j { g - 1.0 } else { g };
            worst = worst.max(e.norm());
        }
    }
    Ok(worst)
}

/// Random channels whose optimal beam must match a direct evaluation of the
/// rate of every beam. Returns the number of disagreements.
pub fn beam_oracle_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let cb = dft_codebook(&UpaGeometry::half_wavelength(4, 2)?)?;
    let (k, m, sigma2) = (16usize, 8usize, 0.1);
    let mut mismatches = 0;
    for i in 0..instances {
        let mut r = rng::stream(seed, 0x4f52_4143, i as u64);
        let h: Vec<Complex64> = (0..k * m)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let brute: Vec<f64> = cb
            .columns()
            .map(|f| {
                (0..k)
                    .map(|kk| {
                        let y: Complex64 = (0..m).map(|e| h[kk * m + e] * f[e]).sum();
                        (1.0 + y.norm_sqr() / sigma2).log2()
                    })
                    .sum::<f64>()
                    / k as f64
            })
            .collect();
        let ch = ChannelRealization::from_rows(k, m, h)?;
        if optimal_beam(&ch, &cb, sigma2)?.0 != argmax(&brute) {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

fn fd_batch(n: usize, seed: u64, len: usize, outputs: usize) -> (Act, Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, 0x4644, 0);
    let x = Act::new(n, 2, len, (0..n * 2 * len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let t = (0..n * outputs).map(|_| r.random_range(0.0..1.0)).collect();
    let y = (0..n).map(|i| (i % 2) as f64).collect();
    (x, t, y)
}

/// Largest relative difference between the gradient of the joint loss and
/// the sum of the regression-only and domain-only gradients.
pub fn additivity_error(seed: u64) -> Result<f64> {
    let arch = reduced_arch();
    let mut m = arch.build(seed, Some(1.0))?;
    jitter_biases(&mut m, seed);
    let (x, t, y) = fd_batch(6, seed, arch.input_len, arch.outputs);
    let both = Objective {
        targets: Some(&t),
        mse_mask: None,
        domain_labels: Some(&y),
    };
    let mse = Objective {
        targets: Some(&t),
        ..Default::default()
    };
    let dom = Objective {
        domain_labels: Some(&y),
        ..Default::default()
    };
    let (_, g) = m.loss_and_grads(&x, 0, &both)?;
    let (_, a) = m.loss_and_grads(&x, 0, &mse)?;
    let (_, b) = m.loss_and_grads(&x, 0, &dom)?;
    let mut sum = a;
    sum.add(&b)?;
    Ok(g
        .flatten()
        .iter()
        .zip(sum.flatten())
        .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

fn persistence_round_trip() -> Result<bool> {
    let t = Tensor::new(vec![2, 3], TensorData::F32(vec![0.5, -1.0, 2.0, f32::MIN_POSITIVE, 0.0, 7.25]))?;
    let mut bytes = Vec::new();
    tensor::encode(&t, &mut bytes);
    let (back, used) = tensor::decode(&bytes)?;
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    Ok(back == t && used == bytes.len() && tensor::decode(&bad).is_err())
}

/// Runs every suite; never fails early.
pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    match unitarity_error(32, 8) {
        Ok(e) => out.push(check("codebook unitarity 32x8", e < 1e-9, format!("max |F^H F - I| = {e:.3e}"))),
        Err(e) => out.push(check("codebook unitarity 32x8", false, e.to_string())),
    }
    match beam_oracle_mismatches(100, 1) {
        Ok(n) => out.push(check("optimal beam vs brute force", n == 0, format!("{n} of 100 disagree"))),
        Err(e) => out.push(check("optimal beam vs brute force", false, e.to_string())),
    }

    let arch = reduced_arch();
    let fd = (|| -> Result<_> {
        let mut m = arch.build(11, Some(1.0))?;
        jitter_biases(&mut m, 11);
        let (x, t, y) = fd_batch(6, 3, arch.input_len, arch.outputs);
        let obj = Objective {
            targets: Some(&t),
            mse_mask: None,
            domain_labels: Some(&y),
        };
        finite_diff_check(&m, &x, &obj, 1e-4)
    })();
    match fd {
        Ok(r) => out.push(check(
            "finite differences incl. reversal",
            r.passed,
            format!("{} params, max rel {:.2e}, kinks {}", r.checked, r.max_rel_error, r.kinks),
        )),
        Err(e) => out.push(check("finite differences incl. reversal", false, e.to_string())),
    }

    let g: Vec<f64> = (0..64).map(|i| (i as f64 - 31.5) * 0.37).collect();
    let grl_ok = [0.0, 0.5, 1.0, 3.0].iter().all(|&l| {
        grl_backward(&g, l)
            .iter()
            .zip(&g)
            .all(|(a, b)| a.to_bits() == (-l * b).to_bits())
    });
    out.push(check("gradient reversal is -lambda*g", grl_ok, "bit-exact".into()));

    match additivity_error(5) {
        Ok(e) => out.push(check("loss additivity", e <= 1e-12, format!("max rel {e:.2e}"))),
        Err(e) => out.push(check("loss additivity", false, e.to_string())),
    }

    let overhead_ok = (|| -> Result<bool> {
        let d = 64;
        let ex = OverheadModel::with_exhaustive_sweep(1e-5, d, 64e-5)?;
        let learned = OverheadModel {
            t_pilot: 5e-3,
            t_train: 0.0,
            t_beam_coherence: 10e-3,
        };
        let h = ChannelRealization::from_rows(1, 1, vec![Complex64::new(1.0, 0.0)])?;
        let cb = dft_codebook(&UpaGeometry::half_wavelength(1, 1)?)?;
        let zero_ex = effective_rate(&[&h], &[&cb], &[0], 1.0, &ex, TrainingMode::Exhaustive)? == 0.0;
        let zero_l = effective_rate(&[&h], &[&cb], &[0], 1.0, &learned, TrainingMode::Learned)? == 0.0;
        let m = OverheadModel::with_exhaustive_sweep(1e-5, d, 10e-3)?;
        Ok(zero_ex && zero_l && m.factor(TrainingMode::Learned) > m.factor(TrainingMode::Exhaustive))
    })();
    out.push(check(
        "overhead accounting",
        matches!(overhead_ok, Ok(true)),
        format!("{overhead_ok:?}"),
    ));

    let fd_hz = doppler_shift(8.3333, 60e9, 0.0);
    out.push(check(
        "doppler 8.3333 m/s at 60 GHz",
        (fd_hz - 1666.67).abs() <= 0.01 + 1e-9,
        format!("{fd_hz:.4} Hz"),
    ));

    let p = persistence_round_trip();
    out.push(check("tensor round trip and corruption", matches!(p, Ok(true)), format!("{p:?}")));
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
