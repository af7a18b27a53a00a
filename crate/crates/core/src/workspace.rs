//! Reaching workspace geometry: an annular half-cylinder in front of the
//! participant, centered on the home position.
//!
//! Coordinates are centimeters. `x` is lateral (positive to the participant's
//! right), `y` is anterior, `z` is height above the table. Azimuth is measured
//! from the participant's left (0°) through straight ahead (90°) to the right
//! (180°).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Radial slack (cm) used by [`WorkspaceSpec::contains`]. Grid points are
/// stored at 0.01 cm resolution, which can move a boundary point inward by up
/// to ~0.007 cm.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-2;

/// Number of targets per phase.
pub const GRID_SIZE: usize = 100;

const GRID_RADII: usize = 5;
const GRID_AZIMUTHS: usize = 5;
const GRID_HEIGHTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("invalid workspace: {0}")]
    InvalidSpec(String),
    #[error("sample count must be at least 1")]
    EmptySample,
}

/// A location in the reaching workspace (cm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Builds a point from cylindrical coordinates (radius, azimuth in
    /// radians from the left, height).
    pub fn from_cylindrical(radius: f64, azimuth: f64, height: f64) -> Self {
        Self::new(-radius * azimuth.cos(), radius * azimuth.sin(), height)
    }

    /// Snaps every coordinate to the 0.01 cm serialization resolution.
    pub fn rounded(self) -> Self {
        Self::new(round2(self.x), round2(self.y), round2(self.z))
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn distance_sq(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_sq(other).sqrt()
    }

    /// Horizontal distance from the home center.
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Azimuth in radians, 0 at the participant's left, π at the right.
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(-self.x)
    }

    /// The same location reflected across the participant's midline.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

fn round2(v: f64) -> f64 {
    // + 0.0 normalizes -0.0
    (v * 100.0).round() / 100.0 + 0.0
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    x: f64,
    y: f64,
    z: f64,
}

impl Serialize for Point3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let p = self.rounded();
        PointRepr {
            x: p.x,
            y: p.y,
            z: p.z,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = PointRepr::deserialize(deserializer)?;
        let p = Point3::new(r.x, r.y, r.z);
        if !p.is_finite() {
            return Err(serde::de::Error::custom("point coordinates must be finite"));
        }
        Ok(p)
    }
}

/// Bounds of the annular half-cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        Self {
            r_min: 10.0,
            r_max: 30.0,
            z_min: 0.0,
            z_max: 40.0,
        }
    }
}

impl WorkspaceSpec {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        let all = [self.r_min, self.r_max, self.z_min, self.z_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(WorkspaceError::InvalidSpec("bounds must be finite".into()));
        }
        if self.r_min <= 0.0 {
            return Err(WorkspaceError::InvalidSpec(format!(
                "r_min must be > 0 (got {})",
                self.r_min
            )));
        }
        if self.r_min >= self.r_max {
            return Err(WorkspaceError::InvalidSpec(format!(
                "r_min must be < r_max (got r_min={}, r_max={})",
                self.r_min, self.r_max
            )));
        }
        if self.z_min >= self.z_max {
            return Err(WorkspaceError::InvalidSpec(format!(
                "z_min must be < z_max (got z_min={}, z_max={})",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        if !p.is_finite() {
            return false;
        }
        let r = p.radius();
        r >= self.r_min - MEMBERSHIP_TOLERANCE
            && r <= self.r_max + MEMBERSHIP_TOLERANCE
            && p.y >= 0.0
            && p.z >= self.z_min
            && p.z <= self.z_max
    }

    /// Volume of the region in cm³.
    pub fn volume(&self) -> f64 {
        0.5 * PI * (self.r_max.powi(2) - self.r_min.powi(2)) * (self.z_max - self.z_min)
    }

    /// Mean horizontal radius under volume-uniform sampling.
    pub fn mean_radius(&self) -> f64 {
        let (a, b) = (self.r_min, self.r_max);
        2.0 / 3.0 * (b.powi(3) - a.powi(3)) / (b.powi(2) - a.powi(2))
    }

    /// The 100 protocol targets: 5 radii × 5 azimuths × 4 heights, ordered
    /// radius-major, then azimuth, then height. Coordinates are snapped to
    /// 0.01 cm.
    pub fn generate_grid(&self) -> Result<Vec<Point3>, WorkspaceError> {
        self.validate()?;
        let radii = linspace(self.r_min, self.r_max, GRID_RADII);
        let azimuths = linspace(0.0, PI, GRID_AZIMUTHS);
        let heights = linspace(self.z_min, self.z_max, GRID_HEIGHTS);
        let mut grid = Vec::with_capacity(GRID_SIZE);
        for &r in &radii {
            for &phi in &azimuths {
                for &z in &heights {
                    grid.push(Point3::from_cylindrical(r, phi, z).rounded());
                }
            }
        }
        Ok(grid)
    }

    /// `n` volume-uniform samples (radial density ∝ r), deterministic in `seed`.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Result<Vec<Point3>, WorkspaceError> {
        self.validate()?;
        if n == 0 {
            return Err(WorkspaceError::EmptySample);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r2_lo, r2_hi) = (self.r_min * self.r_min, self.r_max * self.r_max);
        Ok((0..n)
            .map(|_| {
                let r = rng.gen_range(r2_lo..=r2_hi).sqrt();
                let phi = rng.gen_range(0.0..=PI);
                let z = rng.gen_range(self.z_min..=self.z_max);
                Point3::from_cylindrical(r, phi, z)
            })
            .collect())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
