//! Plot-ready CSV grids of a fitted field over azimuth × radius, one grid
//! per height slice.

use std::f64::consts::PI;
use std::fmt::Write as _;

use bartr::nonuse::NonuseError;
use bartr::{Point3, WorkspaceSpec};
use thiserror::Error;

/// First header cell; the remaining header cells are azimuths in degrees and
/// each row starts with its radius in cm.
pub const CORNER: &str = "radius_cm\\azimuth_deg";

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("resolution must be at least 2 (got {0})")]
    Resolution(usize),
    #[error("at least one height slice is required")]
    NoHeights,
    #[error("field evaluation failed: {0}")]
    Field(#[from] NonuseError),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSlice {
    pub height: f64,
    pub radii: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    /// `values[i][j]` at `radii[i]`, `azimuths_deg[j]`.
    pub values: Vec<Vec<f64>>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(a + b) / 2.0];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evaluates `field` on a `resolution × resolution` lattice at each of
/// `heights` evenly spaced slices (a single slice sits at mid-height).
pub fn export_heatmap(
    field: impl Fn(&[Point3]) -> Result<Vec<f64>, NonuseError>,
    spec: &WorkspaceSpec,
    resolution: usize,
    heights: usize,
) -> Result<Vec<HeatmapSlice>, HeatmapError> {
    if resolution < 2 {
        return Err(HeatmapError::Resolution(resolution));
    }
    if heights == 0 {
        return Err(HeatmapError::NoHeights);
    }
    let radii = linspace(spec.r_min, spec.r_max, resolution);
    let azimuths = linspace(0.0, PI, resolution);
    let mut slices = Vec::new();
    for z in linspace(spec.z_min, spec.z_max, heights) {
        let points: Vec<Point3> = radii
            .iter()
            .flat_map(|&r| {
                azimuths
                    .iter()
                    .map(move |&a| Point3::from_cylindrical(r, a, z))
            })
            .collect();
        let flat = field(&points)?;
        slices.push(HeatmapSlice {
            height: z,
            radii: radii.clone(),
            azimuths_deg: azimuths.iter().map(|a| a.to_degrees()).collect(),
            values: flat.chunks(resolution).map(<[f64]>::to_vec).collect(),
        });
    }
    Ok(slices)
}

impl HeatmapSlice {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CORNER);
        for a in &self.azimuths_deg {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
        for (r, row) in self.radii.iter().zip(&self.values) {
            let _ = write!(out, "{r}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`HeatmapSlice::to_csv`] output; the height is not part of the
    /// grid and must be supplied.
    pub fn from_csv(text: &str, height: f64) -> Result<Self, HeatmapError> {
        let err = |line: usize, reason: String| HeatmapError::Parse { line, reason };
        let num = |line: usize, s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(line, format!("invalid number '{s}'")))
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let mut cells = header.split(',');
        if cells.next() != Some(CORNER) {
            return Err(err(
                1,
                format!("expected '{CORNER}' in the first header cell"),
            ));
        }
        let azimuths_deg = cells.map(|c| num(1, c)).collect::<Result<Vec<_>, _>>()?;
        let (mut radii, mut values) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| num(i + 2, c))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != azimuths_deg.len() + 1 {
                return Err(err(
                    i + 2,
                    format!("expected {} cells", azimuths_deg.len() + 1),
                ));
            }
            radii.push(row[0]);
            values.push(row[1..].to_vec());
        }
        Ok(HeatmapSlice {
            height,
            radii,
            azimuths_deg,
            values,
        })
    }

    /// File name for this slice, e.g. `choice_z13.33.csv`.
    pub fn file_name(&self, field: &str) -> String {
        format!("{field}_z{:.2}.csv", self.height)
    }
}
