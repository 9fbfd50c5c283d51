//! Line-oriented path-table files, one ray per row.
//!
//! ```text
//! user_id,bs_id,gain_re,gain_im,azimuth_rad,elevation_rad,delay_samples,doppler_hz
//! 0,0,0.00001,-0.00002,0.3,1.4,12.5,1500
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use super::PathComponent;
use crate::error::{Error, Result};

pub const PATH_TABLE_HEADER: &str =
    "user_id,bs_id,gain_re,gain_im,azimuth_rad,elevation_rad,delay_samples,doppler_hz";

const FIELDS: [&str; 8] = [
    "user_id",
    "bs_id",
    "gain_re",
    "gain_im",
    "azimuth_rad",
    "elevation_rad",
    "delay_samples",
    "doppler_hz",
];

/// Path lists keyed by `(user_id, bs_id)`, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathTable {
    links: BTreeMap<(usize, usize), Vec<PathComponent>>,
}

impl PathTable {
    pub fn insert(&mut self, user_id: usize, bs_id: usize, paths: Vec<PathComponent>) {
        self.links.insert((user_id, bs_id), paths);
    }

    pub fn get(&self, user_id: usize, bs_id: usize) -> Option<&[PathComponent]> {
        self.links.get(&(user_id, bs_id)).map(Vec::as_slice)
    }

    /// Number of links.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[PathComponent])> {
        self.links.iter().map(|(&(u, b), p)| (u, b, p.as_slice()))
    }

    /// Distinct user ids, ascending.
    pub fn user_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.links.keys().map(|&(u, _)| u).collect();
        ids.dedup();
        ids
    }

    /// Distinct BS ids, ascending.
    pub fn bs_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.links.keys().map(|&(_, b)| b).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Serializes a table; floats use the shortest representation that parses
/// back to the same value.
pub fn write_path_table(table: &PathTable) -> String {
    let mut out = String::with_capacity(64 * (table.len() + 1));
    out.push_str(PATH_TABLE_HEADER);
    out.push('\n');
    for (u, b, paths) in table.iter() {
        for p in paths {
            let _ = writeln!(
                out,
                "{u},{b},{},{},{},{},{},{}",
                p.gain.re, p.gain.im, p.azimuth, p.elevation, p.delay_samples, p.doppler_hz
            );
        }
    }
    out
}

pub fn save_paths(table: &PathTable, path: &Path) -> Result<()> {
    std::fs::write(path, write_path_table(table))?;
    Ok(())
}

pub fn load_paths(path: &Path) -> Result<PathTable> {
    let text = std::fs::read_to_string(path)?;
    parse_path_table(&text)
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses path-table text. Line numbers in errors are 1-based.
pub fn parse_path_table(text: &str) -> Result<PathTable> {
    let mut lines = text.split('\n').enumerate().peekable();
    let header = lines
        .next()
        .map(|(_, l)| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or("");
    if header != PATH_TABLE_HEADER {
        return Err(parse_err(1, "header", format!("expected `{PATH_TABLE_HEADER}`")));
    }

    let mut table = PathTable::default();
    while let Some((idx, raw)) = lines.next() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if lines.peek().is_none() {
                break;
            }
            return Err(parse_err(line_no, "row", "blank line"));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != FIELDS.len() {
            return Err(parse_err(
                line_no,
                "row",
                format!("expected {} fields, found {}", FIELDS.len(), cols.len()),
            ));
        }
        let int = |i: usize| -> Result<usize> {
            cols[i]
                .parse::<usize>()
                .map_err(|e| parse_err(line_no, FIELDS[i], e.to_string()))
        };
        let float = |i: usize| -> Result<f64> {
            let v = cols[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, FIELDS[i], e.to_string()))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, FIELDS[i], "value is not finite"));
            }
            Ok(v)
        };
        let (user, bs) = (int(0)?, int(1)?);
        let delay = float(6)?;
        if delay < 0.0 {
            return Err(parse_err(line_no, FIELDS[6], "delay must be non-negative"));
        }
        let path = PathComponent {
            gain: Complex64::new(float(2)?, float(3)?),
            azimuth: float(4)?,
            elevation: float(5)?,
            delay_samples: delay,
            doppler_hz: float(7)?,
        };
        table.links.entry((user, bs)).or_default().push(path);
    }
    Ok(table)
}
