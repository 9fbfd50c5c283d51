//! Central finite-difference check of the analytic gradients.
//!
//! The forward pass is blind to the gradient-reversal scale, so the expected
//! gradient of a trunk parameter is `∂L_mse − λ·∂L_bce`; domain-branch
//! parameters see `+∂L_bce`.

use super::layers::{Act, Layer};
use super::model::{Architecture, Model, Objective};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator so vanishing gradients compare
/// absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(section, layer, index)` of the worst parameter; sections are trunk,
    /// head, domain.
    pub worst: Option<(usize, usize, usize)>,
    /// Parameters whose ±h perturbation crosses a ReLU or max-pool kink;
    /// central differences are meaningless there, so any kink fails the check.
    pub kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const MAX_CHECKED_PARAMS: usize = 10_000;

fn layer_mut(model: &mut Model, section: usize, index: usize) -> &mut Layer {
    match section {
        0 => &mut model.trunk.layers[index],
        1 => &mut model.head.layers[index],
        _ => &mut model.domain.as_mut().expect("domain section").layers[index],
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every trainable parameter's analytic gradient with a central
/// difference of step [`FD_STEP`].
pub fn finite_diff_check(model: &Model, x: &Act, obj: &Objective, tolerance: f64) -> Result<FdReport> {
    let trainable = model.trainable_param_count();
    if trainable > MAX_CHECKED_PARAMS {
        return Err(Error::Config(format!(
            "{trainable} trainable parameters exceed the finite-difference limit {MAX_CHECKED_PARAMS}"
        )));
    }
    let (_, grads) = model.loss_and_grads(x, 0, obj)?;
    let lambda = model.lambda().unwrap_or(0.0);
    let base_pattern = model.activation_pattern(x, 0, obj)?;
    let mut work = model.clone();
    let mut report = FdReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        kinks: 0,
        tolerance,
        passed: true,
    };
    for (si, section) in grads.sections().iter().enumerate() {
        let bce_sign = match si {
            0 => -lambda,
            1 => 0.0,
            _ => 1.0,
        };
        for (li, g) in section.iter().enumerate() {
            let Some(g) = g else { continue };
            let analytic: Vec<f64> = g.weight.iter().chain(&g.bias).copied().collect();
            for (pi, &a) in analytic.iter().enumerate() {
                let eval = |work: &mut Model, delta: f64| -> Result<(f64, f64, bool)> {
                    let (w, b) = layer_mut(work, si, li).params_mut().expect("parameterized layer");
                    let nw = w.len();
                    let p = if pi < nw { &mut w[pi] } else { &mut b[pi - nw] };
                    let orig = *p;
                    *p = orig + delta;
                    let out = work.losses(x, 0, obj);
                    let same = work.activation_pattern(x, 0, obj).map(|p| p == base_pattern);
                    let (w, b) = layer_mut(work, si, li).params_mut().expect("parameterized layer");
                    if pi < nw {
                        w[pi] = orig;
                    } else {
                        b[pi - nw] = orig;
                    }
                    let parts = out?;
                    Ok((parts.mse, parts.bce, same?))
                };
                let (mp, bp, same_p) = eval(&mut work, FD_STEP)?;
                let (mm, bm, same_m) = eval(&mut work, -FD_STEP)?;
                if !(same_p && same_m) {
                    report.kinks += 1;
                }
                let numeric = (mp - mm) / (2.0 * FD_STEP) + bce_sign * (bp - bm) / (2.0 * FD_STEP);
                let rel = relative_error(a, numeric);
                report.checked += 1;
                report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((si, li, pi));
                }
            }
        }
    }
    report.passed = report.max_rel_error < tolerance && report.kinks == 0;
    Ok(report)
}

/// Small copy of the standard layout, well under the parameter cap.
pub fn reduced_arch() -> Architecture {
    Architecture {
        input_len: 8,
        conv_channels: vec![2, 3, 4, 4],
        kernel: 3,
        pool_after: vec![1, 3],
        hidden: 8,
        outputs: 4,
        domain_hidden: 4,
    }
}

/// Random biases keep pre-activations away from zero.
pub fn jitter_biases(m: &mut Model, seed: u64) {
    let mut r = rng::stream(seed, 98, 0);
    m.for_each_param_layer_mut(|_, _, l| {
        let (_, b) = l.params_mut().unwrap();
        b.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::nn::model::Sequential;
    use crate::rng;
    use rand::Rng;

    fn batch(n: usize, seed: u64) -> (Act, Vec<f64>, Vec<f64>) {
        let mut r = rng::stream(seed, 99, 0);
        let x = Act::new(n, 2, 8, (0..n * 16).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let t = (0..n * 4).map(|_| r.random_range(0.0..1.0)).collect();
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        (x, t, y)
    }

    #[test]
    fn linear_model_is_exact() {
        let mut head = Sequential::from_specs(&[LayerSpec::Dense {
            inputs: 5,
            outputs: 3,
            frozen: false,
        }])
        .unwrap();
        head.layers[0].init(&mut rng::stream(1, 1, 1));
        let m = Model {
            trunk: Sequential::default(),
            head,
            domain: None,
            seed: 1,
        };
        let mut r = rng::stream(2, 2, 2);
        let x = Act::new(4, 1, 5, (0..20).map(|_| r.random_range(0.5..1.5)).collect()).unwrap();
        let t = vec![3.0; 12];
        let obj = Objective {
            targets: Some(&t),
            ..Default::default()
        };
        let rep = finite_diff_check(&m, &x, &obj, 1e-9).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, 18);
        assert_eq!(rep.kinks, 0);
    }

    #[test]
    fn full_model_with_reversal() {
        let mut m = reduced_arch().build(7, Some(1.0)).unwrap();
        jitter_biases(&mut m, 7);
        assert!(m.param_count() <= MAX_CHECKED_PARAMS);
        let (x, t, y) = batch(6, 3);
        let obj = Objective {
            targets: Some(&t),
            mse_mask: None,
            domain_labels: Some(&y),
        };
        let rep = finite_diff_check(&m, &x, &obj, 1e-4).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, m.trainable_param_count());
    }

    #[test]
    fn non_unit_lambda_and_frozen_prefix() {
        let mut m = reduced_arch().build(8, Some(0.3)).unwrap();
        m.freeze_leading(2).unwrap();
        jitter_biases(&mut m, 8);
        let (x, t, y) = batch(5, 4);
        let mask = [true, false, true, true, false];
        let obj = Objective {
            targets: Some(&t),
            mse_mask: Some(&mask),
            domain_labels: Some(&y),
        };
        let rep = finite_diff_check(&m, &x, &obj, 1e-4).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn zero_lambda_blocks_domain_gradient() {
        let mut m = reduced_arch().build(9, Some(0.0)).unwrap();
        jitter_biases(&mut m, 9);
        let (x, _, y) = batch(4, 5);
        let obj = Objective {
            domain_labels: Some(&y),
            ..Default::default()
        };
        let (_, g) = m.loss_and_grads(&x, 0, &obj).unwrap();
        for lg in g.trunk.iter().flatten() {
            assert!(lg.weight.iter().chain(&lg.bias).all(|v| *v == 0.0));
        }
        assert!(g.domain.iter().flatten().any(|lg| lg.weight.iter().any(|v| *v != 0.0)));
        let rep = finite_diff_check(&m, &x, &obj, 1e-4).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn too_many_parameters_rejected() {
        let m = Architecture::standard(32, 64).build(0, None).unwrap();
        let (x, _, _) = batch(1, 1);
        assert!(matches!(
            finite_diff_check(&m, &x, &Objective::default(), 1e-4),
            Err(Error::Config(_))
        ));
    }
}
