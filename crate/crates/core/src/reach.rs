//! Ball-shaped reachable-set overapproximations over the horizon.
//!
//! The default tube is `R_i(t) = B(x0_i; rate_i * t)`, found by a fixed-point
//! iteration on the growth rates. Users may override the tube per agent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ball, Point, Region};
use crate::scalar::Scalar;
use crate::scenario::{Scenario, TubeOverride};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("tube divergence for agent {agent} after {iterations} iterations: provide explicit global bound")]
    Divergence { agent: u32, iterations: usize },
    #[error("dynamics of agent {agent} evaluated to a non-finite value on its tube")]
    NonFinite { agent: u32 },
}

/// Radius of `R_i(t)` as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusProfile<S> {
    Linear { rate: S },
    Constant { radius: S },
    /// Piecewise linear through `(t, r)` knots, flat outside the knot range.
    Knots { points: Vec<[S; 2]> },
}

impl<S: Scalar> RadiusProfile<S> {
    pub fn radius_at(&self, t: S) -> S {
        match self {
            RadiusProfile::Linear { rate } => *rate * t.max(S::zero()),
            RadiusProfile::Constant { radius } => *radius,
            RadiusProfile::Knots { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t <= first[0] {
                    return first[1];
                }
                if t >= last[0] {
                    return last[1];
                }
                let k = points.partition_point(|p| p[0] <= t);
                let (a, b) = (points[k - 1], points[k]);
                let s = (t - a[0]) / (b[0] - a[0]);
                a[1] + s * (b[1] - a[1])
            }
        }
    }

    /// Largest radius over `[a, b]`.
    pub fn hull_radius(&self, a: S, b: S) -> S {
        match self {
            RadiusProfile::Linear { rate } => *rate * b.max(S::zero()),
            RadiusProfile::Constant { radius } => *radius,
            RadiusProfile::Knots { points } => points
                .iter()
                .filter(|p| p[0] > a && p[0] < b)
                .map(|p| p[1])
                .fold(self.radius_at(a).max(self.radius_at(b)), S::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTube<S> {
    pub center: Point<S>,
    pub profile: RadiusProfile<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTube<S> {
    pub horizon: S,
    pub agents: Vec<AgentTube<S>>,
    /// Fixed-point iterations used (0 when every agent was overridden).
    pub iterations: usize,
}

impl<S: Scalar> ReachTube<S> {
    /// `R_i(t)`
    pub fn at(&self, i: usize, t: S) -> Ball<S> {
        let a = &self.agents[i];
        Ball { center: a.center.clone(), radius: a.profile.radius_at(t) }
    }

    /// `R_i([a, b])`
    pub fn hull(&self, i: usize, a: S, b: S) -> Ball<S> {
        let ag = &self.agents[i];
        Ball { center: ag.center.clone(), radius: ag.profile.hull_radius(a, b) }
    }

    /// `R_i^c([a, b])`
    pub fn inflated_hull(&self, i: usize, a: S, b: S, c: S) -> Ball<S> {
        self.hull(i, a, b).inflate(c.max(S::zero())).expect("nonnegative inflation")
    }

    /// `R_i([0, T])`
    pub fn horizon_hull(&self, i: usize) -> Ball<S> {
        self.hull(i, S::zero(), self.horizon)
    }

    /// Rows `(agent, t, center..., radius)` on `samples + 1` equispaced times.
    pub fn to_csv(&self, samples: usize) -> String {
        let n = self.agents.first().map_or(0, |a| a.center.dim());
        let mut out = String::from("agent,t");
        for k in 0..n {
            out.push_str(&format!(",c{k}"));
        }
        out.push_str(",radius\n");
        for (i, a) in self.agents.iter().enumerate() {
            for s in 0..=samples {
                let t = self.horizon * S::from_usize_lossy(s) / S::from_usize_lossy(samples.max(1));
                out.push_str(&format!("{i},{t}"));
                for c in a.center.coords() {
                    out.push_str(&format!(",{c}"));
                }
                out.push_str(&format!(",{}\n", a.profile.radius_at(t)));
            }
        }
        out
    }
}

/// Per-agent bound `M(i)` on `|f_i|` over the tube hulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsBounds<S> {
    pub m: Vec<S>,
}

/// `c_i(sigma) = (M(i) + v_max(i)) * sigma`
pub fn inflation_constant<S: Scalar>(m: S, v_max: S, sigma: S) -> S {
    (m + v_max) * sigma
}

/// Grid of up to `per_axis^n` points covering `ball`, projected onto it, plus the covering radius.
fn ball_samples<S: Scalar>(ball: &Ball<S>, per_axis: usize) -> (Vec<Point<S>>, S) {
    let n = ball.center.dim();
    if ball.radius == S::zero() || per_axis < 2 {
        let cov = if per_axis < 2 { ball.radius } else { S::zero() };
        return (vec![ball.center.clone()], cov);
    }
    let h = S::two() * ball.radius / S::from_usize_lossy(per_axis - 1);
    let cov = h * S::half() * S::from_usize_lossy(n).sqrt();
    let total = per_axis.pow(n as u32);
    let mut pts = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let p = Point(
            (0..n)
                .map(|k| ball.center[k] - ball.radius + h * S::from_usize_lossy(idx[k]))
                .collect(),
        );
        pts.push(ball.project(&p));
        for digit in idx.iter_mut() {
            *digit += 1;
            if *digit < per_axis {
                break;
            }
            *digit = 0;
        }
    }
    (pts, cov)
}

/// Certified bound on `sup |f_i|` over `own x prod(neighbors)`.
///
/// Samples a projected tensor grid per block; the sampled maximum is padded by
/// `L2 * cov_own + L1 * |(cov_j)_j|` so it bounds the supremum over the whole domain.
pub fn sup_bound<S: Scalar>(
    scenario: &Scenario<S>,
    i: usize,
    own: &Ball<S>,
    neighbors: &[Ball<S>],
) -> Result<S, ReachError> {
    let agent = &scenario.agents[i];
    let n = agent.n;
    if agent.dynamics.is_zero() {
        return Ok(S::zero());
    }
    let blocks = neighbors.len() + 1;
    let nm = &scenario.numerics;
    let mut per_axis = nm.sup_samples_per_axis.max(2);
    while per_axis > 2
        && (per_axis as f64).powi((n * blocks) as i32) > nm.sup_sample_cap as f64
    {
        per_axis -= 1;
    }
    let (own_pts, own_cov) = ball_samples(own, per_axis);
    let nb: Vec<(Vec<Point<S>>, S)> = neighbors.iter().map(|b| ball_samples(b, per_axis)).collect();
    let nb_cov = nb.iter().map(|(_, c)| *c * *c).sum::<S>().sqrt();
    let pad = agent.l2 * own_cov + agent.l1 * nb_cov;

    let mut best = S::zero();
    let mut idx = vec![0usize; nb.len()];
    let mut args: Vec<Point<S>> = nb.iter().map(|(p, _)| p[0].clone()).collect();
    loop {
        for x in &own_pts {
            let v = agent.dynamics.eval(x, &args).norm();
            if !v.is_finite() {
                return Err(ReachError::NonFinite { agent: agent.id });
            }
            best = best.max(v);
        }
        let mut k = 0;
        loop {
            if k == nb.len() {
                let sampled = best + pad;
                return Ok(match agent.dynamics.magnitude_bound(n) {
                    Some(b) => sampled.min(b),
                    None => sampled,
                });
            }
            idx[k] += 1;
            if idx[k] < nb[k].0.len() {
                args[k] = nb[k].0[idx[k]].clone();
                break;
            }
            idx[k] = 0;
            args[k] = nb[k].0[0].clone();
            k += 1;
        }
    }
}

/// `M(i) >= sup |f_i|` over `R_i([0,T]) x prod_k R_k([0,T])`.
pub fn dynamics_bound<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
) -> Result<DynamicsBounds<S>, ReachError> {
    let hulls: Vec<Ball<S>> = (0..scenario.agent_count()).map(|i| tube.horizon_hull(i)).collect();
    let m = sup_bounds_for(scenario, &hulls)?;
    Ok(DynamicsBounds { m })
}

fn sup_bounds_for<S: Scalar>(scenario: &Scenario<S>, hulls: &[Ball<S>]) -> Result<Vec<S>, ReachError> {
    (0..scenario.agent_count())
        .into_par_iter()
        .map(|i| {
            let nbs: Vec<Ball<S>> =
                scenario.graph.neighbors[i].iter().map(|&j| hulls[j].clone()).collect();
            sup_bound(scenario, i, &hulls[i], &nbs)
        })
        .collect()
}

fn override_profile<S: Scalar>(o: &TubeOverride<S>) -> RadiusProfile<S> {
    match o {
        TubeOverride::Constant { radius } => RadiusProfile::Constant { radius: *radius },
        TubeOverride::Profile { points } => RadiusProfile::Knots { points: points.clone() },
    }
}

/// Fixed-point construction of the tube together with its dynamics bounds.
///
/// For computed agents `M(i)` is reported as `rate_i - v_max(i)`, which dominates the
/// certified supremum and makes the inflation nesting hold with equality.
pub fn compute_reach_tube<S: Scalar>(
    scenario: &Scenario<S>,
) -> Result<(ReachTube<S>, DynamicsBounds<S>), ReachError> {
    let t_end = scenario.horizon;
    let nm = &scenario.numerics;
    let count = scenario.agent_count();
    let fixed: Vec<Option<RadiusProfile<S>>> =
        scenario.agents.iter().map(|a| a.tube.as_ref().map(override_profile)).collect();
    let hull_of = |i: usize, rho: S| -> Ball<S> {
        let r = match &fixed[i] {
            Some(p) => p.hull_radius(S::zero(), t_end),
            None => rho,
        };
        Ball { center: scenario.agents[i].x0.clone(), radius: r }
    };

    let mut rho: Vec<S> = scenario.agents.iter().map(|a| a.v_max * t_end).collect();
    let mut iterations = 0;
    let any_computed = fixed.iter().any(Option::is_none);
    let huge = S::lit(1e12);
    if any_computed {
        let mut converged = false;
        while iterations < nm.tube_max_iter {
            iterations += 1;
            let hulls: Vec<Ball<S>> = (0..count).map(|i| hull_of(i, rho[i])).collect();
            let m = sup_bounds_for(scenario, &hulls)?;
            let mut change = S::zero();
            for i in 0..count {
                if fixed[i].is_some() {
                    continue;
                }
                let next = (m[i] + scenario.agents[i].v_max) * t_end;
                if !(next.is_finite() && next < huge) {
                    return Err(ReachError::Divergence { agent: scenario.agents[i].id, iterations });
                }
                let rel = (next - rho[i]).abs() / rho[i].max(S::min_positive_value());
                change = change.max(rel);
                rho[i] = next;
            }
            if change < nm.tube_rel_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            let worst = (0..count).find(|&i| fixed[i].is_none()).unwrap_or(0);
            return Err(ReachError::Divergence { agent: scenario.agents[worst].id, iterations });
        }
        // self-consistency: the growth rate over the final tube must not exceed rho / T
        let mut accepted = false;
        let mut trial = rho.clone();
        for k in 1..=6 {
            let hulls: Vec<Ball<S>> = (0..count).map(|i| hull_of(i, trial[i])).collect();
            let m = sup_bounds_for(scenario, &hulls)?;
            let failing: Vec<usize> = (0..count)
                .filter(|&i| {
                    fixed[i].is_none() && (m[i] + scenario.agents[i].v_max) * t_end > trial[i]
                })
                .collect();
            if failing.is_empty() {
                rho = trial;
                accepted = true;
                break;
            }
            let factor = S::one() + nm.tube_rel_tol * S::lit(10f64.powi(k));
            for i in failing {
                trial[i] = rho[i] * factor;
            }
        }
        if !accepted {
            let worst = (0..count).find(|&i| fixed[i].is_none()).unwrap_or(0);
            return Err(ReachError::Divergence { agent: scenario.agents[worst].id, iterations });
        }
    }

    let agents: Vec<AgentTube<S>> = (0..count)
        .map(|i| AgentTube {
            center: scenario.agents[i].x0.clone(),
            profile: fixed[i].clone().unwrap_or(RadiusProfile::Linear { rate: rho[i] / t_end }),
        })
        .collect();
    let tube = ReachTube { horizon: t_end, agents, iterations };
    let mut bounds = dynamics_bound(scenario, &tube)?;
    for (i, a) in tube.agents.iter().enumerate() {
        if let RadiusProfile::Linear { rate } = a.profile {
            bounds.m[i] = bounds.m[i].max(rate - scenario.agents[i].v_max);
        }
    }
    Ok((tube, bounds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingCheck<S> {
    pub sigma: S,
    /// `radius(R_i([0, T - tau])) + c_i(sigma)`
    pub inflated: S,
    /// `radius(R_i([0, T - tau + sigma]))`
    pub required: S,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingReport<S> {
    pub agents: Vec<Vec<NestingCheck<S>>>,
}

impl<S: Scalar> NestingReport<S> {
    pub fn ok(&self) -> bool {
        self.agents.iter().flatten().all(|c| c.ok)
    }

    pub fn failing_agents(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|&i| self.agents[i].iter().any(|c| !c.ok)).collect()
    }
}

/// Checks `R_i^{c_i(sigma)}([0,T-tau]) ⊇ R_i([0,T-tau+sigma])` for `sigma ∈ {dt, tau-dt, tau}`.
pub fn check_nesting<S: Scalar>(
    tube: &ReachTube<S>,
    bounds: &DynamicsBounds<S>,
    v_max: &[S],
    dt: S,
    tau: S,
    eps: S,
) -> NestingReport<S> {
    let t_end = tube.horizon;
    let agents = (0..tube.agents.len())
        .map(|i| {
            [dt, tau - dt, tau]
                .into_iter()
                .map(|sigma| {
                    let inflated = tube.hull(i, S::zero(), t_end - tau).radius
                        + inflation_constant(bounds.m[i], v_max[i], sigma);
                    let required = tube.hull(i, S::zero(), t_end - tau + sigma).radius;
                    // both sides are sums of a few rounded terms; allow a few ulps
                    let tol = eps.max(S::lit(16.0) * S::epsilon() * required.abs());
                    NestingCheck { sigma, inflated, required, ok: inflated + tol >= required }
                })
                .collect()
        })
        .collect();
    NestingReport { agents }
}
