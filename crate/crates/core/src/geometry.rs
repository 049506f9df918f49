//! Points and the two region shapes used throughout: closed balls and axis-aligned boxes.
//!
//! Everything here is value-typed. Boxes are closed; inflating a box grows it
//! per axis, which is an outer approximation of the Minkowski sum with a ball.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inflation amount must be nonnegative, got {0}")]
    NegativeInflation(f64),
    #[error("box lower bound exceeds upper bound on axis {0}")]
    InvertedBox(usize),
    #[error("ball radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
}

fn check_dim(expected: usize, got: usize) -> Result<(), GeometryError> {
    if expected == got {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, got })
    }
}

/// A vector in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point<S>(pub Vec<S>);

impl<S: Scalar> Point<S> {
    pub fn new(coords: Vec<S>) -> Self {
        Point(coords)
    }

    pub fn zeros(n: usize) -> Self {
        Point(vec![S::zero(); n])
    }

    pub fn splat(n: usize, v: S) -> Self {
        Point(vec![v; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[S] {
        &self.0
    }

    pub fn norm(&self) -> S {
        self.0.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn dist(&self, other: &Point<S>) -> S {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            .sqrt()
    }

    pub fn scale(&self, k: S) -> Point<S> {
        Point(self.0.iter().map(|&v| v * k).collect())
    }

    /// `self + k * dir`
    pub fn axpy(&self, k: S, dir: &Point<S>) -> Point<S> {
        Point(self.0.iter().zip(&dir.0).map(|(&a, &d)| a + k * d).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Point<T> {
        Point(self.0.iter().map(|v| T::lit(v.as_f64())).collect())
    }
}

impl<S> Index<usize> for Point<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.0[i]
    }
}

impl<S> IndexMut<usize> for Point<S> {
    fn index_mut(&mut self, i: usize) -> &mut S {
        &mut self.0[i]
    }
}

impl<S: Scalar> Add for &Point<S> {
    type Output = Point<S>;
    fn add(self, rhs: &Point<S>) -> Point<S> {
        debug_assert_eq!(self.dim(), rhs.dim());
        Point(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a + b).collect())
    }
}

impl<S: Scalar> Sub for &Point<S> {
    type Output = Point<S>;
    fn sub(self, rhs: &Point<S>) -> Point<S> {
        debug_assert_eq!(self.dim(), rhs.dim());
        Point(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a - b).collect())
    }
}

impl<S: Scalar> Mul<S> for &Point<S> {
    type Output = Point<S>;
    fn mul(self, k: S) -> Point<S> {
        self.scale(k)
    }
}

/// Closed ball `B(center; radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball<S> {
    pub center: Point<S>,
    pub radius: S,
}

impl<S: Scalar> Ball<S> {
    pub fn new(center: Point<S>, radius: S) -> Result<Self, GeometryError> {
        if !(radius >= S::zero()) {
            return Err(GeometryError::NegativeRadius(radius.as_f64()));
        }
        Ok(Ball { center, radius })
    }
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb<S> {
    pub lower: Point<S>,
    pub upper: Point<S>,
}

impl<S: Scalar> Aabb<S> {
    pub fn new(lower: Point<S>, upper: Point<S>) -> Result<Self, GeometryError> {
        check_dim(lower.dim(), upper.dim())?;
        if let Some(axis) = (0..lower.dim()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(GeometryError::InvertedBox(axis));
        }
        Ok(Aabb { lower, upper })
    }

    pub fn center(&self) -> Point<S> {
        Point(
            self.lower
                .0
                .iter()
                .zip(&self.upper.0)
                .map(|(&a, &b)| (a + b) * S::half())
                .collect(),
        )
    }

    /// Length of the main diagonal.
    pub fn diameter(&self) -> S {
        self.lower.dist(&self.upper)
    }

    /// Shrinks every face inward by `m`, collapsing to the center on axes narrower than `2m`.
    pub fn shrunk(&self, m: S) -> Aabb<S> {
        let c = self.center();
        let lower = (0..self.dim()).map(|k| (self.lower[k] + m).min(c[k])).collect();
        let upper = (0..self.dim()).map(|k| (self.upper[k] - m).max(c[k])).collect();
        Aabb { lower: Point(lower), upper: Point(upper) }
    }
}

/// Shared interface of the two convex region kinds.
pub trait Region<S: Scalar>: Sized {
    fn dim(&self) -> usize;

    /// Euclidean distance from `x` to the region (zero inside).
    fn distance(&self, x: &Point<S>) -> Result<S, GeometryError>;

    /// Unique nearest point of the region.
    fn project(&self, x: &Point<S>) -> Point<S>;

    /// Region grown by `c`: exact for balls, per-axis for boxes.
    fn inflate(&self, c: S) -> Result<Self, GeometryError>;

    fn contains(&self, x: &Point<S>, eps: S) -> bool {
        self.distance(x).map(|d| d <= eps).unwrap_or(false)
    }
}

impl<S: Scalar> Region<S> for Ball<S> {
    fn dim(&self) -> usize {
        self.center.dim()
    }

    fn distance(&self, x: &Point<S>) -> Result<S, GeometryError> {
        check_dim(self.dim(), x.dim())?;
        Ok((x.dist(&self.center) - self.radius).max(S::zero()))
    }

    fn project(&self, x: &Point<S>) -> Point<S> {
        let d = x.dist(&self.center);
        if d <= self.radius {
            return x.clone();
        }
        let dir = x - &self.center;
        self.center.axpy(self.radius / d, &dir)
    }

    fn inflate(&self, c: S) -> Result<Self, GeometryError> {
        if !(c >= S::zero()) {
            return Err(GeometryError::NegativeInflation(c.as_f64()));
        }
        Ok(Ball { center: self.center.clone(), radius: self.radius + c })
    }
}

impl<S: Scalar> Region<S> for Aabb<S> {
    fn dim(&self) -> usize {
        self.lower.dim()
    }

    fn distance(&self, x: &Point<S>) -> Result<S, GeometryError> {
        check_dim(self.dim(), x.dim())?;
        Ok(x.dist(&self.project(x)))
    }

    fn project(&self, x: &Point<S>) -> Point<S> {
        Point(
            x.0.iter()
                .enumerate()
                .map(|(k, &v)| v.max(self.lower[k]).min(self.upper[k]))
                .collect(),
        )
    }

    fn inflate(&self, c: S) -> Result<Self, GeometryError> {
        if !(c >= S::zero()) {
            return Err(GeometryError::NegativeInflation(c.as_f64()));
        }
        Ok(Aabb {
            lower: Point(self.lower.0.iter().map(|&v| v - c).collect()),
            upper: Point(self.upper.0.iter().map(|&v| v + c).collect()),
        })
    }
}

pub fn inflate<S: Scalar, R: Region<S>>(region: &R, c: S) -> Result<R, GeometryError> {
    region.inflate(c)
}

pub fn distance_to_set<S: Scalar>(x: &Point<S>, set: &Aabb<S>) -> Result<S, GeometryError> {
    set.distance(x)
}

pub fn project<S: Scalar, R: Region<S>>(x: &Point<S>, region: &R) -> Point<S> {
    region.project(x)
}

/// `true` iff the box comes within `b.radius` of the ball center.
pub fn ball_intersects_box<S: Scalar>(b: &Ball<S>, s: &Aabb<S>) -> Result<bool, GeometryError> {
    Ok(s.distance(&b.center)? <= b.radius)
}

/// Projection onto `box + B(c)` (the exact Minkowski sum, a box with rounded corners).
pub fn project_rounded_box<S: Scalar>(x: &Point<S>, bx: &Aabb<S>, c: S) -> Point<S> {
    let p = bx.project(x);
    let d = x.dist(&p);
    if d <= c {
        return x.clone();
    }
    let dir = x - &p;
    p.axpy(c / d, &dir)
}

/// Distance from `x` to `box + B(c)`.
pub fn distance_rounded_box<S: Scalar>(x: &Point<S>, bx: &Aabb<S>, c: S) -> S {
    let p = bx.project(x);
    (x.dist(&p) - c).max(S::zero())
}
