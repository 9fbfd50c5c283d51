//! Geometric multipath OFDM channels.
//!
//! A link between one user and one BS is a list of [`PathComponent`]s. The
//! channel seen on subcarrier `k` is
//!
//! ```text
//! h_k = sqrt(M/L) · Σ_l α_l · a(φ_l, θ_l) · exp(-j2π τ_l k / K) · exp(j2π f_l t)
//! ```
//!
//! with `a` the unit-norm UPA response and `τ_l` expressed in samples of the
//! `K`-point OFDM symbol. Subcarriers are indexed from zero.

mod path_table;
mod scenario;

pub use path_table::{load_paths, parse_path_table, write_path_table, save_paths, PathTable, PATH_TABLE_HEADER};
pub use scenario::{synth_scenario, BsSite, DomainTag, ScenarioConfig, UserState};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_codebook::{upa_array_response, UpaGeometry};
use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// One multipath ray of a user–BS link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Complex path gain (linear).
    pub gain: Complex64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Delay in samples of the K-point symbol.
    pub delay_samples: f64,
    pub doppler_hz: f64,
}

impl PathComponent {
    fn validate(&self, num_subcarriers: usize) -> Result<()> {
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(Error::Domain("path gain is not finite".into()));
        }
        if !self.doppler_hz.is_finite() {
            return Err(Error::Domain("doppler is not finite".into()));
        }
        if !(self.delay_samples >= 0.0 && self.delay_samples < num_subcarriers as f64) {
            return Err(Error::Domain(format!(
                "path delay {} samples outside [0, {num_subcarriers})",
                self.delay_samples
            )));
        }
        Ok(())
    }
}

/// Doppler shift `v · f_c · cos(θ) / c` of a path with elevation `θ`.
pub fn doppler_shift(speed_mps: f64, carrier_freq_hz: f64, path_elevation: f64) -> f64 {
    speed_mps * carrier_freq_hz * path_elevation.cos() / SPEED_OF_LIGHT
}

/// Per-path terms that do not depend on the subcarrier.
struct PreparedPath {
    /// `sqrt(M/L) · α · exp(j2π f t) · a(φ, θ)`.
    weighted_response: Vec<Complex64>,
    delay_samples: f64,
}

fn prepare(
    paths: &[PathComponent],
    geom: &UpaGeometry,
    num_subcarriers: usize,
    t: f64,
) -> Result<Vec<PreparedPath>> {
    if paths.is_empty() {
        return Err(Error::Domain("a channel needs at least one path".into()));
    }
    if num_subcarriers == 0 {
        return Err(Error::Domain("symbol length K must be positive".into()));
    }
    if !t.is_finite() {
        return Err(Error::Domain("sampling instant is not finite".into()));
    }
    let scale = (geom.num_elements() as f64 / paths.len() as f64).sqrt();
    paths
        .iter()
        .map(|p| {
            p.validate(num_subcarriers)?;
            let coeff = scale * p.gain * Complex64::from_polar(1.0, 2.0 * PI * p.doppler_hz * t);
            let weighted_response = upa_array_response(geom, p.azimuth, p.elevation)?
                .into_iter()
                .map(|a| coeff * a)
                .collect();
            Ok(PreparedPath {
                weighted_response,
                delay_samples: p.delay_samples,
            })
        })
        .collect()
}

fn accumulate_row(prepared: &[PreparedPath], k: usize, num_subcarriers: usize, out: &mut [Complex64]) {
    out.fill(Complex64::new(0.0, 0.0));
    for p in prepared {
        let rot = Complex64::from_polar(1.0, -2.0 * PI * p.delay_samples * k as f64 / num_subcarriers as f64);
        for (o, a) in out.iter_mut().zip(&p.weighted_response) {
            *o += a * rot;
        }
    }
}

/// Channel vector `h_k` (length `M`) on subcarrier `k` of a `K`-point symbol at time `t`.
pub fn channel_vector(
    paths: &[PathComponent],
    geom: &UpaGeometry,
    k: usize,
    num_subcarriers: usize,
    t: f64,
) -> Result<Vec<Complex64>> {
    let prepared = prepare(paths, geom, num_subcarriers, t)?;
    if k >= num_subcarriers {
        return Err(Error::Index {
            index: k,
            len: num_subcarriers,
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); geom.num_elements()];
    accumulate_row(&prepared, k, num_subcarriers, &mut out);
    Ok(out)
}

/// Channel of one user–BS link over all subcarriers: `K × M`, row `k` is `h_kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    num_subcarriers: usize,
    num_elements: usize,
    h: Vec<Complex64>,
}

impl ChannelRealization {
    /// Wraps row-major `K × M` data.
    pub fn from_rows(num_subcarriers: usize, num_elements: usize, h: Vec<Complex64>) -> Result<Self> {
        if num_subcarriers == 0 || num_elements == 0 || h.len() != num_subcarriers * num_elements {
            return Err(Error::Shape(format!(
                "{} entries for a {num_subcarriers}x{num_elements} channel",
                h.len()
            )));
        }
        if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Domain("channel has non-finite entries".into()));
        }
        Ok(ChannelRealization {
            num_subcarriers,
            num_elements,
            h,
        })
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.h[k * self.num_elements..(k + 1) * self.num_elements]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Complex64]> {
        self.h.chunks_exact(self.num_elements)
    }
}

/// Stacks [`channel_vector`] over `k = 0..K`.
pub fn channel_matrix(
    paths: &[PathComponent],
    geom: &UpaGeometry,
    num_subcarriers: usize,
    t: f64,
) -> Result<ChannelRealization> {
    let prepared = prepare(paths, geom, num_subcarriers, t)?;
    let m = geom.num_elements();
    let mut h = vec![Complex64::new(0.0, 0.0); num_subcarriers * m];
    for (k, row) in h.chunks_exact_mut(m).enumerate() {
        accumulate_row(&prepared, k, num_subcarriers, row);
    }
    ChannelRealization::from_rows(num_subcarriers, m, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_path(delay: f64, doppler: f64) -> PathComponent {
        PathComponent {
            gain: Complex64::new(1.0, 0.0),
            azimuth: 0.0,
            elevation: PI / 2.0,
            delay_samples: delay,
            doppler_hz: doppler,
        }
    }

    fn scalar() -> UpaGeometry {
        UpaGeometry::half_wavelength(1, 1).unwrap()
    }

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_shift(0.0, 60e9, 0.3), 0.0);
        // 8.3333 · 200 = 1666.66 lies on the closed ±0.01 boundary; allow for
        // representation error in the decimal literals.
        assert!((doppler_shift(8.3333, 60e9, 0.0) - 1666.67).abs() <= 0.01 + 1e-9);
        assert!((doppler_shift(30.0 / 3.6, 60e9, 0.0) - 1666.67).abs() < 0.01);
        assert!(doppler_shift(8.3333, 60e9, PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn single_path_scalar_channel() {
        let h = channel_vector(&[unit_path(0.0, 0.0)], &scalar(), 0, 8, 0.0).unwrap();
        assert!((h[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let h = channel_vector(&[unit_path(4.0, 0.0)], &scalar(), 1, 8, 0.0).unwrap();
        assert!((h[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn opposite_gains_cancel() {
        let mut b = unit_path(1.5, 20.0);
        b.gain = -b.gain;
        let geom = UpaGeometry::half_wavelength(4, 2).unwrap();
        let h = channel_vector(&[unit_path(1.5, 20.0), b], &geom, 3, 8, 1e-3).unwrap();
        assert!(h.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn empty_paths_and_bad_index_rejected() {
        assert!(matches!(
            channel_vector(&[], &scalar(), 0, 4, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            channel_vector(&[unit_path(0.0, 0.0)], &scalar(), 4, 4, 0.0),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            channel_matrix(&[unit_path(4.0, 0.0)], &scalar(), 4, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn matrix_rows_carry_delay_phases() {
        let h = channel_matrix(&[unit_path(1.0, 0.0)], &scalar(), 4, 0.0).unwrap();
        assert_eq!(h.num_subcarriers(), 4);
        for (k, row) in h.rows().enumerate() {
            let expected = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / 4.0);
            assert!((row[0] - expected).norm() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn matrix_matches_vector_bitwise() {
        let geom = UpaGeometry::half_wavelength(4, 2).unwrap();
        let paths = [
            unit_path(0.7, 100.0),
            PathComponent {
                gain: Complex64::new(0.2, -0.3),
                azimuth: 0.4,
                elevation: 1.1,
                delay_samples: 2.25,
                doppler_hz: -40.0,
            },
        ];
        let h = channel_matrix(&paths, &geom, 8, 2e-4).unwrap();
        for k in 0..8 {
            assert_eq!(h.row(k), channel_vector(&paths, &geom, k, 8, 2e-4).unwrap().as_slice());
        }
    }

    fn arb_path() -> impl Strategy<Value = PathComponent> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -PI..PI,
            0.0f64..PI,
            0.0f64..15.9,
            -2000.0f64..2000.0,
        )
            .prop_map(|(re, im, az, el, tau, fd)| PathComponent {
                gain: Complex64::new(re, im),
                azimuth: az,
                elevation: el,
                delay_samples: tau,
                doppler_hz: fd,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linear_in_paths(
            a in prop::collection::vec(arb_path(), 1..4),
            b in prop::collection::vec(arb_path(), 1..4),
            k in 0usize..16,
        ) {
            let geom = UpaGeometry::half_wavelength(3, 2).unwrap();
            let m = geom.num_elements() as f64;
            let unscale = |n: usize| (n as f64 / m).sqrt();
            let ha = channel_vector(&a, &geom, k, 16, 1e-4).unwrap();
            let hb = channel_vector(&b, &geom, k, 16, 1e-4).unwrap();
            let all: Vec<_> = a.iter().chain(b.iter()).copied().collect();
            let hab = channel_vector(&all, &geom, k, 16, 1e-4).unwrap();
            for i in 0..ha.len() {
                let lhs = hab[i] * unscale(all.len());
                let rhs = ha[i] * unscale(a.len()) + hb[i] * unscale(b.len());
                prop_assert!((lhs - rhs).norm() < 1e-12);
            }
        }

        #[test]
        fn doppler_rotates_single_path(p in arb_path(), t in 0.0f64..1e-3, dt in 0.0f64..1e-3) {
            let geom = UpaGeometry::half_wavelength(2, 2).unwrap();
            let h0 = channel_vector(&[p], &geom, 3, 16, t).unwrap();
            let h1 = channel_vector(&[p], &geom, 3, 16, t + dt).unwrap();
            let rot = Complex64::from_polar(1.0, 2.0 * PI * p.doppler_hz * dt);
            for (x, y) in h0.iter().zip(&h1) {
                prop_assert!((x * rot - y).norm() < 1e-12);
            }
        }

        #[test]
        fn zero_delay_is_flat(mut paths in prop::collection::vec(arb_path(), 1..5)) {
            for p in &mut paths {
                p.delay_samples = 0.0;
            }
            let geom = UpaGeometry::half_wavelength(2, 3).unwrap();
            let h = channel_matrix(&paths, &geom, 6, 5e-4).unwrap();
            for row in h.rows() {
                prop_assert_eq!(row, h.row(0));
            }
        }
    }
}
