//! Unit vectors and axial (sign-free) directions on the unit sphere,
//! with the geodesic metric used by the entropy estimator.
//!
//! Fibre axes carry no orientation: `v` and `-v` describe the same axis.
//! [`AxialDirection`] stores one canonical hemisphere representative per
//! axis so that downstream averaging and export are well defined.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vectors shorter than this cannot be normalized meaningfully.
pub const MIN_VECTOR_NORM: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("vector norm {0:.3e} is below {MIN_VECTOR_NORM:.0e}, direction undefined")]
    NearZeroVector(f64),
}

/// Which metric to use on the sphere.
///
/// `Spherical` is the great-circle angle in `[0, pi]`. `Axial` identifies
/// antipodes (`v` with `-v`) and lives in `[0, pi/2]`; it is the pipeline
/// default because fibre axes are sign-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Spherical,
    Axial,
}

/// A vector on the unit sphere (norm 1 within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector {
    /// Normalizes `(x, y, z)`. Fails if the input is too short to define
    /// a direction.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let norm = (x * x + y * y + z * z).sqrt();
        if norm < MIN_VECTOR_NORM {
            return Err(GeometryError::NearZeroVector(norm));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Wraps components that are already unit length.
    ///
    /// Debug builds assert the invariant; release builds trust the caller.
    pub fn from_unit_unchecked(x: f64, y: f64, z: f64) -> Self {
        debug_assert!(((x * x + y * y + z * z) - 1.0).abs() < 1e-9);
        Self { x, y, z }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn flipped(&self) -> UnitVector {
        UnitVector {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// An undirected fibre axis, stored as its canonical hemisphere
/// representative: `z > 0`, or `z = 0, y > 0`, or `z = y = 0, x = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialDirection(UnitVector);

impl AxialDirection {
    /// Maps a unit vector to the canonical representative of its axis.
    /// `canonicalize(v) == canonicalize(-v)` for every `v`.
    pub fn canonicalize(v: UnitVector) -> Self {
        let flip = if v.z != 0.0 {
            v.z < 0.0
        } else if v.y != 0.0 {
            v.y < 0.0
        } else {
            v.x < 0.0
        };
        let v = if flip { v.flipped() } else { v };
        // `+ 0.0` folds -0.0 into +0.0 so exports are stable.
        AxialDirection(UnitVector {
            x: v.x + 0.0,
            y: v.y + 0.0,
            z: v.z + 0.0,
        })
    }

    /// Normalizes raw components and canonicalizes in one step.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Ok(Self::canonicalize(UnitVector::new(x, y, z)?))
    }

    pub fn as_unit(&self) -> &UnitVector {
        &self.0
    }

    pub fn components(&self) -> [f64; 3] {
        self.0.components()
    }

    /// Axial geodesic distance to another axis, in `[0, pi/2]`.
    pub fn distance(&self, other: &AxialDirection) -> f64 {
        geodesic_distance(&self.0, &other.0, Metric::Axial)
    }
}

/// Geodesic distance between two unit vectors.
///
/// The dot product is clamped before `acos` so rounding can never
/// produce NaN; coincident inputs short-circuit to exactly zero
/// (`u.dot(u)` rounds away from 1 and `acos` amplifies that to ~1e-8).
pub fn geodesic_distance(u: &UnitVector, v: &UnitVector, metric: Metric) -> f64 {
    if u == v || (metric == Metric::Axial && *u == v.flipped()) {
        return 0.0;
    }
    let dot = u.dot(v);
    match metric {
        Metric::Spherical => dot.clamp(-1.0, 1.0).acos(),
        Metric::Axial => dot.abs().clamp(0.0, 1.0).acos(),
    }
}
