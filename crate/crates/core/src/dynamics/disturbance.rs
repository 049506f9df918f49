use rand::Rng;

use super::DynamicsError;
use crate::geometry::{distance_rounded_box, project_rounded_box, Aabb, Ball, Point, Region};
use crate::scalar::Scalar;

/// A neighbor signal `d(t) = P_t(a + b t)` where `P_t` maps onto
/// `(cell + B(growth * t)) ∩ tube`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSignal<S> {
    pub a: Point<S>,
    pub b: Point<S>,
    pub cell: Aabb<S>,
    pub growth: S,
    pub tube: Ball<S>,
    /// A point of `cell ∩ tube`, feasible for every `t`.
    anchor: Point<S>,
}

const ALTERNATIONS: usize = 32;

impl<S: Scalar> DisturbanceSignal<S> {
    pub fn new(a: Point<S>, b: Point<S>, cell: Aabb<S>, growth: S, tube: Ball<S>) -> Result<Self, DynamicsError> {
        let anchor = cell.project(&tube.center);
        if anchor.dist(&tube.center) > tube.radius {
            return Err(DynamicsError::EmptyAdmissibleSet);
        }
        Ok(DisturbanceSignal { a, b, cell, growth, tube, anchor })
    }

    /// Distance-type violation of `p` at time `t` (zero when admissible).
    pub fn violation(&self, p: &Point<S>, t: S) -> S {
        let in_box = distance_rounded_box(p, &self.cell, self.growth * t.max(S::zero()));
        let in_ball = (p.dist(&self.tube.center) - self.tube.radius).max(S::zero());
        in_box.max(in_ball)
    }

    pub fn eval(&self, t: S) -> Point<S> {
        let c = self.growth * t.max(S::zero());
        let mut p = self.a.axpy(t, &self.b);
        for _ in 0..ALTERNATIONS {
            p = project_rounded_box(&p, &self.cell, c);
            p = self.tube.project(&p);
        }
        let tol = S::lit(1e-12) * (S::one() + self.tube.radius);
        if self.violation(&p, t) <= tol {
            return p;
        }
        // fall back to the last feasible point on the segment from the anchor
        let (mut lo, mut hi) = (S::zero(), S::one());
        let dir = &p - &self.anchor;
        for _ in 0..60 {
            let mid = (lo + hi) * S::half();
            if self.violation(&self.anchor.axpy(mid, &dir), t) <= S::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = self.anchor.axpy(lo, &dir);
        debug_assert!(self.violation(&q, t) <= tol);
        q
    }
}

/// Uniform point of `B(0; r)` in `n` dimensions by rejection from the cube.
fn uniform_in_ball<S: Scalar, R: Rng>(n: usize, r: S, rng: &mut R) -> Point<S> {
    if r <= S::zero() {
        return Point::zeros(n);
    }
    loop {
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return Point(p.into_iter().map(|v| S::lit(v) * r).collect());
        }
    }
}

/// `a` uniform in the cell, `b` uniform in `B(growth)`.
///
/// With `extreme` set, `a` is a random vertex of the cell and `|b| = growth`
/// instead, so the neighbor leaves its cell as fast as admissible.
pub fn sample_disturbance<S: Scalar, R: Rng>(
    cell: &Aabb<S>,
    growth: S,
    tube: &Ball<S>,
    extreme: bool,
    rng: &mut R,
) -> Result<DisturbanceSignal<S>, DynamicsError> {
    let n = cell.lower.dim();
    let a = Point(
        (0..n)
            .map(|k| {
                let u: f64 = if extreme { f64::from(u8::from(rng.gen::<bool>())) } else { rng.gen() };
                cell.lower[k] + S::lit(u) * (cell.upper[k] - cell.lower[k])
            })
            .collect(),
    );
    let mut b = uniform_in_ball(n, growth, rng);
    if extreme {
        let norm = b.norm();
        b = if norm > S::zero() { b.scale(growth / norm) } else { Point::zeros(n) };
    }
    DisturbanceSignal::new(a, b, cell.clone(), growth, tube.clone())
}
