//! Closed-loop machinery for one time step.
//!
//! The bounded extension `g_i` of the agent field drives the reference
//! trajectories. The hybrid feedback law tracks them against sampled neighbor
//! disturbances.

mod disturbance;
pub mod integrator;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use disturbance::{sample_disturbance, DisturbanceSignal};
pub use integrator::{integrate, rk4_step, Trajectory};

use crate::field::Dynamics;
use crate::geometry::{Ball, Point, Region};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("time {t} outside the step [0, {dt}]")]
    TimeOutOfRange { t: f64, dt: f64 },
    #[error("target at distance {distance} from the reference endpoint exceeds the reach radius {radius}")]
    TargetOutsideBall { distance: f64, radius: f64 },
    #[error("admissible disturbance set is empty: neighbor cell misses the tube")]
    EmptyAdmissibleSet,
}

/// `g_i(x, x_j) = f_i(P_own(x), P_j(x_j))` with projections onto Ball domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedField<S> {
    pub dynamics: Dynamics<S>,
    pub own: Ball<S>,
    pub neighbors: Vec<Ball<S>>,
}

impl<S: Scalar> ExtendedField<S> {
    pub fn new(dynamics: Dynamics<S>, own: Ball<S>, neighbors: Vec<Ball<S>>) -> Self {
        ExtendedField { dynamics, own, neighbors }
    }

    pub fn eval(&self, x: &Point<S>, nbs: &[Point<S>]) -> Point<S> {
        let px = self.own.project(x);
        let pn: Vec<Point<S>> =
            nbs.iter().zip(&self.neighbors).map(|(y, b)| b.project(y)).collect();
        self.dynamics.eval(&px, &pn)
    }

    /// The unprojected field, for simulating the true system.
    pub fn eval_raw(&self, x: &Point<S>, nbs: &[Point<S>]) -> Point<S> {
        self.dynamics.eval(x, nbs)
    }
}

/// `chi_i` on `[0, dt]`: the solution of `chi' = g_i(chi, x_{l_j,G})`, `chi(0) = x_{l_i,G}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory<S> {
    pub dt: S,
    pub nodes: Vec<Point<S>>,
    /// `g_i` at each node, used for Hermite interpolation.
    pub slopes: Vec<Point<S>>,
}

impl<S: Scalar> ReferenceTrajectory<S> {
    pub fn compute(
        field: &ExtendedField<S>,
        x_g: &Point<S>,
        neighbor_refs: &[Point<S>],
        dt: S,
        steps: usize,
    ) -> Self {
        let rhs = |_t: S, x: &[S]| field.eval(&Point(x.to_vec()), neighbor_refs).0;
        let tr = integrate(rhs, x_g.coords(), S::zero(), dt, steps);
        let nodes: Vec<Point<S>> = tr.states.into_iter().map(Point).collect();
        let slopes = nodes.iter().map(|x| field.eval(x, neighbor_refs)).collect();
        ReferenceTrajectory { dt, nodes, slopes }
    }

    pub fn start(&self) -> &Point<S> {
        &self.nodes[0]
    }

    pub fn endpoint(&self) -> &Point<S> {
        self.nodes.last().expect("nonempty")
    }

    /// Cubic Hermite interpolation between integrator nodes; `t` is clamped to `[0, dt]`.
    pub fn at(&self, t: S) -> Point<S> {
        let steps = self.nodes.len() - 1;
        let h = self.dt / S::from_usize_lossy(steps);
        let t = t.max(S::zero()).min(self.dt);
        let k = (t / h).floor().to_usize().unwrap_or(0).min(steps - 1);
        let s = (t - h * S::from_usize_lossy(k)) / h;
        if s <= S::zero() {
            return self.nodes[k].clone();
        }
        if s >= S::one() {
            return self.nodes[k + 1].clone();
        }
        let (s2, s3) = (s * s, s * s * s);
        let two = S::two();
        let three = S::lit(3.0);
        let h00 = two * s3 - three * s2 + S::one();
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        let (p0, p1) = (&self.nodes[k], &self.nodes[k + 1]);
        let (m0, m1) = (&self.slopes[k], &self.slopes[k + 1]);
        Point(
            (0..p0.dim())
                .map(|c| h00 * p0[c] + h10 * h * m0[c] + h01 * p1[c] + h11 * h * m1[c])
                .collect(),
        )
    }
}

/// `r_i = lambda * dt * v_max`
pub fn reach_radius<S: Scalar>(lambda: S, dt: S, v_max: S) -> S {
    lambda * dt * v_max
}

/// `w_i = (x - chi(dt)) / (lambda dt)`; rejects targets outside `B(chi(dt); r_i)`.
pub fn target_parameter<S: Scalar>(
    x_target: &Point<S>,
    chi_end: &Point<S>,
    lambda: S,
    dt: S,
    v_max: S,
) -> Result<Point<S>, DynamicsError> {
    let r = reach_radius(lambda, dt, v_max);
    let d = x_target.dist(chi_end);
    if d > r * (S::one() + S::lit(1e-12)) {
        return Err(DynamicsError::TargetOutsideBall { distance: d.as_f64(), radius: r.as_f64() });
    }
    Ok((x_target - chi_end).scale(S::one() / (lambda * dt)))
}

/// The feedback law `k = k1 + k2 + k3` of one agent for one step.
#[derive(Debug, Clone)]
pub struct HybridController<S> {
    pub field: Arc<ExtendedField<S>>,
    pub chi: Arc<ReferenceTrajectory<S>>,
    pub neighbor_refs: Vec<Point<S>>,
    /// `(x_{l_i,G} - x_{i0}) / dt`
    pub k2: Point<S>,
    /// `lambda * w_i`
    pub k3: Point<S>,
    pub dt: S,
}

impl<S: Scalar> HybridController<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        field: Arc<ExtendedField<S>>,
        chi: Arc<ReferenceTrajectory<S>>,
        neighbor_refs: Vec<Point<S>>,
        x_i0: &Point<S>,
        w: &Point<S>,
        lambda: S,
    ) -> Self {
        let dt = chi.dt;
        let k2 = (chi.start() - x_i0).scale(S::one() / dt);
        let k3 = w.scale(lambda);
        HybridController { field, chi, neighbor_refs, k2, k3, dt }
    }

    /// `(k1, k2, k3)` at `(t, x, x_j)`.
    pub fn components(
        &self,
        t: S,
        x: &Point<S>,
        nbs: &[Point<S>],
    ) -> Result<(Point<S>, Point<S>, Point<S>), DynamicsError> {
        let slack = self.dt * S::lit(1e-9);
        if t < -slack || t > self.dt + slack {
            return Err(DynamicsError::TimeOutOfRange { t: t.as_f64(), dt: self.dt.as_f64() });
        }
        let chi = self.chi.at(t);
        let k1 = &self.field.eval(&chi, &self.neighbor_refs) - &self.field.eval(x, nbs);
        Ok((k1, self.k2.clone(), self.k3.clone()))
    }

    pub fn evaluate(&self, t: S, x: &Point<S>, nbs: &[Point<S>]) -> Result<Point<S>, DynamicsError> {
        let (k1, k2, k3) = self.components(t, x, nbs)?;
        Ok(&(&k1 + &k2) + &k3)
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent: u32,
    pub x: Vec<f64>,
    pub k_norm: f64,
    /// Cell id in the agent's decomposition, `-1` when outside it.
    pub cell: i64,
}

/// CSV with columns `t, agent, x0.., k_norm, cell`.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let n = rows.first().map_or(0, |r| r.x.len());
    let mut out = String::from("t,agent");
    for k in 0..n {
        out.push_str(&format!(",x{k}"));
    }
    out.push_str(",k_norm,cell\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.t, r.agent));
        for v in &r.x {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", r.k_norm, r.cell));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DynamicsSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn compile(spec: &str, n: usize, nb: &[u32]) -> Dynamics<f64> {
        serde_json::from_str::<DynamicsSpec<f64>>(spec).unwrap().compile(n, nb).unwrap()
    }

    fn ball(c: &[f64], r: f64) -> Ball<f64> {
        Ball { center: Point(c.to_vec()), radius: r }
    }

    #[test]
    fn extension_agrees_inside_and_is_bounded_outside() {
        let f = ExtendedField::new(compile(r#"{"kind":"linear","own":[[-1.0]]}"#, 1, &[]), ball(&[0.0], 1.0), vec![]);
        for x in [-0.9, -0.2, 0.0, 0.7, 1.0] {
            assert_eq!(f.eval(&Point(vec![x]), &[]).0, vec![-x]);
        }
        for x in [1.5, 4.0, 100.0] {
            let g = f.eval(&Point(vec![x]), &[]);
            assert_eq!(g.0, vec![-1.0]);
            assert!(g.norm() <= 1.0);
            assert_eq!(f.eval(&Point(vec![-x]), &[]).0, vec![1.0]);
        }
    }

    #[test]
    fn extension_is_lipschitz() {
        let dyn_ = compile(r#"{"kind":"consensus"}"#, 2, &[7]);
        let (l1, l2) = dyn_.lipschitz_bounds();
        let f = ExtendedField::new(dyn_, ball(&[0.0, 0.0], 0.5), vec![ball(&[1.0, 0.0], 0.3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pt = || Point(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        for _ in 0..10_000 {
            let (x, y, a, b) = (pt(), pt(), pt(), pt());
            let dx = (&f.eval(&x, std::slice::from_ref(&a)) - &f.eval(&y, std::slice::from_ref(&a))).norm();
            assert!(dx <= l2 * x.dist(&y) + 1e-12);
            let dn = (&f.eval(&x, std::slice::from_ref(&a)) - &f.eval(&x, std::slice::from_ref(&b))).norm();
            assert!(dn <= l1 * a.dist(&b) + 1e-12);
        }
    }

    #[test]
    fn reference_trajectory_cases() {
        let zero = ExtendedField::new(Dynamics::Zero, ball(&[0.0], 1.0), vec![]);
        let chi = ReferenceTrajectory::compute(&zero, &Point(vec![0.3]), &[], 0.1, 128);
        assert!(chi.nodes.iter().all(|p| p.0 == vec![0.3]));

        let decay = ExtendedField::new(compile(r#"{"kind":"linear","own":[[-1.0]]}"#, 1, &[]), ball(&[0.0], 2.0), vec![]);
        let chi = ReferenceTrajectory::compute(&decay, &Point(vec![1.0]), &[], 0.1, 128);
        assert!((chi.endpoint()[0] - (-0.1f64).exp()).abs() < 1e-9);
        // interpolation between nodes stays on the exponential
        for k in 0..=100 {
            let t = 0.1 * k as f64 / 100.0 + 1e-5;
            let t = t.min(0.1);
            assert!((chi.at(t)[0] - (-t).exp()).abs() < 1e-10);
        }

        let cons = ExtendedField::new(compile(r#"{"kind":"consensus"}"#, 1, &[3]), ball(&[0.0], 5.0), vec![ball(&[0.0], 5.0)]);
        let (xi, xj) = (0.4, -0.6);
        let chi = ReferenceTrajectory::compute(&cons, &Point(vec![xi]), &[Point(vec![xj])], 0.2, 128);
        for k in 0..=20 {
            let t = 0.01 * k as f64;
            let exact = xj + (xi - xj) * (-t).exp();
            assert!((chi.at(t)[0] - exact).abs() < 1e-9);
        }
        // endpoint bound |chi(dt) - x_G| <= M dt with M = sup |g| = 2 * 5
        assert!((chi.endpoint()[0] - xi).abs() <= 10.0 * 0.2);
    }

    #[test]
    fn reach_radius_cases() {
        assert!((reach_radius(0.5f64, 0.1, 1.0) - 0.05).abs() < 1e-15);
        assert!((reach_radius(1.0f64 - 1e-12, 0.1, 2.0) - 0.2).abs() < 1e-12);
        assert!((reach_radius(0.3f64, 0.4, 1.5) - 2.0 * reach_radius(0.3f64, 0.2, 1.5)).abs() < 1e-15);
    }

    #[test]
    fn target_parameter_cases() {
        let c = Point(vec![0.2, -0.1]);
        assert_eq!(target_parameter(&c, &c, 0.5, 0.1, 1.0).unwrap().0, vec![0.0, 0.0]);
        let surf = Point(vec![0.2 + 0.05, -0.1]);
        assert!((target_parameter(&surf, &c, 0.5, 0.1, 1.0).unwrap().norm() - 1.0f64).abs() < 1e-12);
        let out = Point(vec![0.3, -0.1]);
        assert!(matches!(target_parameter(&out, &c, 0.5, 0.1, 1.0), Err(DynamicsError::TargetOutsideBall { .. })));
    }

    fn zero_controller(x_g: &[f64], x_i0: &[f64], w: &[f64]) -> HybridController<f64> {
        let n = x_g.len();
        let f = Arc::new(ExtendedField::new(Dynamics::Zero, ball(&vec![0.0; n], 10.0), vec![]));
        let chi = Arc::new(ReferenceTrajectory::compute(&f, &Point(x_g.to_vec()), &[], 0.1, 128));
        HybridController::new(f, chi, vec![], &Point(x_i0.to_vec()), &Point(w.to_vec()), 0.5)
    }

    #[test]
    fn zero_field_controller() {
        let c = zero_controller(&[0.5], &[0.5], &[0.0]);
        for t in [0.0, 0.03, 0.1] {
            assert_eq!(c.evaluate(t, &Point(vec![0.9]), &[]).unwrap().0, vec![0.0]);
        }
        let c = zero_controller(&[0.5, 0.0], &[0.52, -0.01], &[0.4, -0.2]);
        let k0 = c.evaluate(0.0, &Point(vec![0.52, -0.01]), &[]).unwrap();
        for t in [0.01, 0.05, 0.1] {
            let k = c.evaluate(t, &Point(vec![1.0, 1.0]), &[]).unwrap();
            assert!(k.dist(&k0) < 1e-15);
        }
        assert!((k0[0] - (-0.02 / 0.1 + 0.2)).abs() < 1e-12);
        assert!(matches!(c.evaluate(0.2, &Point(vec![0.0, 0.0]), &[]), Err(DynamicsError::TimeOutOfRange { .. })));
    }

    #[test]
    fn zero_field_closed_loop_lands_exactly() {
        let (x_g, x_i0, w) = ([0.5, 0.0], [0.52, -0.01], [0.4, -0.2]);
        let c = zero_controller(&x_g, &x_i0, &w);
        let tr = integrate(|t, x: &[f64]| c.evaluate(t, &Point(x.to_vec()), &[]).unwrap().0, &x_i0, 0.0, 0.1, 128);
        let end = tr.endpoint();
        for k in 0..2 {
            assert!((end[k] - (x_g[k] + 0.5 * w[k] * 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_targets_are_reached() {
        let f = Arc::new(ExtendedField::new(compile(r#"{"kind":"linear","own":[[-1.0,0.5],[0.0,-0.3]]}"#, 2, &[]), ball(&[0.0, 0.0], 3.0), vec![]));
        let x_g = Point(vec![0.3, -0.2]);
        let chi = Arc::new(ReferenceTrajectory::compute(&f, &x_g, &[], 0.1, 128));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = reach_radius(0.5, 0.1, 1.0);
        for _ in 0..50 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rho = r * rng.gen::<f64>().sqrt();
            let target = Point(vec![chi.endpoint()[0] + rho * a.cos(), chi.endpoint()[1] + rho * a.sin()]);
            let w = target_parameter(&target, chi.endpoint(), 0.5, 0.1, 1.0).unwrap();
            assert!(w.norm() <= 1.0 + 1e-12);
            let x_i0 = Point(vec![0.3 + rng.gen_range(-0.02..0.02), -0.2 + rng.gen_range(-0.02..0.02)]);
            let c = HybridController::new(f.clone(), chi.clone(), vec![], &x_i0, &w, 0.5);
            let tr = integrate(
                |t, x: &[f64]| {
                    let p = Point(x.to_vec());
                    (&f.eval(&p, &[]) + &c.evaluate(t, &p, &[]).unwrap()).0
                },
                x_i0.coords(),
                0.0,
                0.1,
                128,
            );
            assert!(Point(tr.endpoint().to_vec()).dist(&target) < 1e-6);
        }
    }

    #[test]
    fn controller_is_lipschitz_in_state() {
        let dyn_ = compile(r#"{"kind":"consensus"}"#, 1, &[2]);
        let (l1, l2) = dyn_.lipschitz_bounds();
        let f = Arc::new(ExtendedField::new(dyn_, ball(&[0.0], 1.0), vec![ball(&[0.5], 1.0)]));
        let refs = vec![Point(vec![0.5])];
        let chi = Arc::new(ReferenceTrajectory::compute(&f, &Point(vec![0.0]), &refs, 0.1, 64));
        let c = HybridController::new(f, chi, refs, &Point(vec![0.01]), &Point(vec![0.3]), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let t = rng.gen_range(0.0..0.1);
            let (x, y) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let kx = c.evaluate(t, &Point(vec![x]), &[Point(vec![a])]).unwrap();
            let ky = c.evaluate(t, &Point(vec![y]), &[Point(vec![b])]).unwrap();
            let dist = ((x - y) * (x - y) + (a - b) * (a - b)).sqrt();
            assert!(kx.dist(&ky) <= (l1 + l2) * dist + 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let rows = vec![TrajectoryRow { t: 0.0, agent: 3, x: vec![1.0, 2.0], k_norm: 0.5, cell: 7 }];
        assert_eq!(trajectory_csv(&rows), "t,agent,x0,x1,k_norm,cell\n0,3,1,2,0.5,7\n");
    }
}
