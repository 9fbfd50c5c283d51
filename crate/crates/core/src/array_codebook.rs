//! Uniform planar array geometry, array response vectors and the Kronecker
//! DFT beamforming codebook.
//!
//! Elements sit in the y–z plane. Element `(p, q)` (horizontal index `p`,
//! vertical index `q`) is stored at flat index `p * m_v + q`, which is the row
//! ordering of `F_h ⊗ F_v`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpaGeometry {
    /// Horizontal element count (columns).
    pub m_h: usize,
    /// Vertical element count (rows).
    pub m_v: usize,
    /// Element spacing in carrier wavelengths.
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl UpaGeometry {
    pub fn new(m_h: usize, m_v: usize, spacing_wavelengths: f64) -> Result<Self> {
        let geom = UpaGeometry {
            m_h,
            m_v,
            spacing_wavelengths,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(m_h: usize, m_v: usize) -> Result<Self> {
        Self::new(m_h, m_v, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_h == 0 || self.m_v == 0 {
            return Err(Error::Config(format!(
                "array dimensions must be positive, got {}x{}",
                self.m_h, self.m_v
            )));
        }
        if !(self.spacing_wavelengths.is_finite() && self.spacing_wavelengths > 0.0) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got {}",
                self.spacing_wavelengths
            )));
        }
        Ok(())
    }

    /// Total element count `M`.
    pub fn num_elements(&self) -> usize {
        self.m_h * self.m_v
    }
}

/// Unit-norm array response toward (`azimuth`, `elevation`).
///
/// `elevation` is measured from the array's vertical (z) axis, so broadside
/// is `elevation = π/2, azimuth = 0`.
pub fn upa_array_response(
    geom: &UpaGeometry,
    azimuth: f64,
    elevation: f64,
) -> Result<Vec<Complex64>> {
    geom.validate()?;
    if !azimuth.is_finite() || !elevation.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite angle (azimuth {azimuth}, elevation {elevation})"
        )));
    }
    let m = geom.num_elements();
    let scale = 1.0 / (m as f64).sqrt();
    let u = elevation.sin() * azimuth.sin();
    let w = elevation.cos();
    let k = 2.0 * PI * geom.spacing_wavelengths;
    let mut out = Vec::with_capacity(m);
    for p in 0..geom.m_h {
        for q in 0..geom.m_v {
            let phase = k * (p as f64 * u + q as f64 * w);
            out.push(Complex64::from_polar(scale, phase));
        }
    }
    Ok(out)
}

/// Codebook of `D` beamforming vectors of length `M`, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_elements: usize,
    num_beams: usize,
    beams: Vec<Complex64>,
}

impl Codebook {
    /// Builds a codebook from column-major data, checking that every column
    /// has unit norm.
    pub fn from_columns(num_elements: usize, beams: Vec<Complex64>) -> Result<Self> {
        if num_elements == 0 || beams.is_empty() || !beams.len().is_multiple_of(num_elements) {
            return Err(Error::Shape(format!(
                "{} entries do not form columns of length {num_elements}",
                beams.len()
            )));
        }
        let cb = Codebook {
            num_elements,
            num_beams: beams.len() / num_elements,
            beams,
        };
        for d in 0..cb.num_beams {
            let norm: f64 = cb.column(d).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("beam {d} has norm {norm}, expected 1")));
            }
        }
        Ok(cb)
    }

    /// Antenna count `M`.
    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    /// Beam count `D`.
    pub fn num_beams(&self) -> usize {
        self.num_beams
    }

    fn column(&self, d: usize) -> &[Complex64] {
        &self.beams[d * self.num_elements..(d + 1) * self.num_elements]
    }

    /// Iterates over the beams in index order.
    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[Complex64]> {
        self.beams.chunks_exact(self.num_elements)
    }

    /// Entry `(row, col)` of the `M × D` matrix.
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.beams[col * self.num_elements + row]
    }
}

/// Unitary `n`-point DFT matrix, row-major, entry `(p, d) = e^{-j2πpd/n}/√n`.
fn unitary_dft(n: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::with_capacity(n * n);
    for p in 0..n {
        for d in 0..n {
            // Reduce the exponent first so large arrays keep full phase precision.
            let phase = -2.0 * PI * ((p * d) % n) as f64 / n as f64;
            out.push(Complex64::from_polar(scale, phase));
        }
    }
    out
}

/// Kronecker DFT codebook `F = F_h ⊗ F_v`; beam `d = d_h * m_v + d_v`.
pub fn dft_codebook(geom: &UpaGeometry) -> Result<Codebook> {
    geom.validate()?;
    let (mh, mv) = (geom.m_h, geom.m_v);
    let fh = unitary_dft(mh);
    let fv = unitary_dft(mv);
    let m = mh * mv;
    let mut beams = Vec::with_capacity(m * m);
    for dh in 0..mh {
        for dv in 0..mv {
            for p in 0..mh {
                for q in 0..mv {
                    beams.push(fh[p * mh + dh] * fv[q * mv + dv]);
                }
            }
        }
    }
    Ok(Codebook {
        num_elements: m,
        num_beams: m,
        beams,
    })
}

/// Beam `d` of the codebook. Beam 0 is the uplink sounding beam.
pub fn beam_column(cb: &Codebook, d: usize) -> Result<&[Complex64]> {
    if d >= cb.num_beams {
        return Err(Error::Index {
            index: d,
            len: cb.num_beams,
        });
    }
    Ok(cb.column(d))
}
