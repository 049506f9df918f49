//! Classical fixed-step fourth-order Runge-Kutta.

use crate::scalar::Scalar;

/// Samples `states[k] = x(times[k])` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<S>,
    pub states: Vec<Vec<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn endpoint(&self) -> &[S] {
        self.states.last().expect("trajectory has at least one node")
    }
}

fn axpy<S: Scalar>(x: &[S], k: S, d: &[S]) -> Vec<S> {
    x.iter().zip(d).map(|(&a, &b)| a + k * b).collect()
}

/// One RK4 step of size `h` from `(t, x)`.
pub fn rk4_step<S: Scalar, F>(field: &mut F, t: S, x: &[S], h: S) -> Vec<S>
where
    F: FnMut(S, &[S]) -> Vec<S>,
{
    let half = S::half() * h;
    let k1 = field(t, x);
    let k2 = field(t + half, &axpy(x, half, &k1));
    let k3 = field(t + half, &axpy(x, half, &k2));
    let k4 = field(t + h, &axpy(x, h, &k3));
    let six = S::lit(6.0);
    (0..x.len())
        .map(|k| x[k] + h / six * (k1[k] + S::two() * (k2[k] + k3[k]) + k4[k]))
        .collect()
}

/// Integrates `x' = field(t, x)` over `[t0, tf]` with `steps` equal steps.
pub fn integrate<S: Scalar, F>(mut field: F, x0: &[S], t0: S, tf: S, steps: usize) -> Trajectory<S>
where
    F: FnMut(S, &[S]) -> Vec<S>,
{
    assert!(steps >= 1, "at least one integration step");
    let h = (tf - t0) / S::from_usize_lossy(steps);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(x0.to_vec());
    for k in 0..steps {
        let t = t0 + h * S::from_usize_lossy(k);
        let next = rk4_step(&mut field, t, &states[k], h);
        times.push(if k + 1 == steps { tf } else { t0 + h * S::from_usize_lossy(k + 1) });
        states.push(next);
    }
    Trajectory { times, states }
}
