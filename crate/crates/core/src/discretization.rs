//! Joint choice of the time grid and the per-agent cell diameters. The result
//! carries a certificate that re-checks every inequality the well-posedness
//! guarantee depends on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reach::{check_nesting, DynamicsBounds, ReachTube};
use crate::scalar::Scalar;
use crate::scenario::{validate_cycle_condition, CycleViolation, NetworkParameters, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscretizationError {
    #[error("cycle condition violated on {} cycle(s); first: {:?} with product {}", .0.len(), .0[0].cycle, .0[0].product)]
    Cycle(Vec<CycleViolation>),
    #[error("infeasible: agent {agent} binding on `{inequality}` ({detail})")]
    Infeasible { agent: u32, inequality: String, detail: String },
}

/// The per-agent quantities entering the time-step and diameter bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentParams<S> {
    pub l1: S,
    pub l2: S,
    pub lambda: S,
    pub v_max: S,
    pub m_bold: S,
    pub mu_bold: S,
}

impl<S: Scalar> AgentParams<S> {
    pub fn of(scenario: &Scenario<S>, np: &NetworkParameters<S>, i: usize) -> Self {
        let a = &scenario.agents[i];
        AgentParams {
            l1: a.l1,
            l2: a.l2,
            lambda: a.lambda,
            v_max: a.v_max,
            m_bold: np.m_bold[i],
            mu_bold: np.mu_bold[i],
        }
    }
}

/// `(1 - lambda) v / (L1 M_bold + L2 lambda v)`, infinite when the denominator vanishes.
pub fn delta_t_upper_bound<S: Scalar>(p: &AgentParams<S>) -> S {
    let den = p.l1 * p.m_bold + p.l2 * p.lambda * p.v_max;
    if den <= S::zero() {
        return S::infinity();
    }
    (S::one() - p.lambda) * p.v_max / den
}

/// Both terms of the diameter bound at time step `dt`.
pub fn d_max_terms<S: Scalar>(p: &AgentParams<S>, dt: S) -> (S, S) {
    let two = S::two();
    let free = two * (S::one() - p.lambda) * p.v_max * dt;
    let term1 = free / (S::one() + (p.l1 * p.mu_bold + p.l2) * dt);
    let term2 = (free - two * (p.l1 * p.m_bold + p.l2 * p.lambda * p.v_max) * dt * dt)
        / (S::one() + p.l1 * p.mu_bold * dt);
    (term1, term2)
}

/// `min(term1, term2)`; an error when the bound is not positive, i.e. `dt` is too large.
pub fn d_max_upper_bound<S: Scalar>(p: &AgentParams<S>, dt: S) -> Result<S, String> {
    let (t1, t2) = d_max_terms(p, dt);
    let b = t1.min(t2);
    if b > S::zero() {
        Ok(b)
    } else {
        Err(format!("d_max bound {b} is not positive at dt = {dt}"))
    }
}

/// Left-hand side of the controller budget inequality at time `t ∈ [0, dt]`.
pub fn controller_budget<S: Scalar>(p: &AgentParams<S>, d_max: S, dt: S, t: S) -> S {
    let half_d = d_max * S::half();
    p.l1 * (p.mu_bold * half_d + p.m_bold * t)
        + half_d / dt
        + p.l2 * ((dt - t) * half_d / dt + p.lambda * p.v_max * t)
        + p.lambda * p.v_max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    /// Agent id, or `None` for global conditions.
    pub agent: Option<u32>,
    pub inequality: String,
    pub value: f64,
    /// `None` when the inequality imposes no finite bound.
    pub bound: Option<f64>,
    /// Relative slack `(bound - value) / |bound|`; 1 for unbounded entries.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub entries: Vec<CertificateEntry>,
    pub certified: bool,
}

impl Certificate {
    pub fn failures(&self) -> impl Iterator<Item = &CertificateEntry> {
        self.entries.iter().filter(|e| !e.holds)
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<8} {:<34} {:>14} {:>14} {:>9}  ok\n",
            "agent", "inequality", "value", "bound", "margin"
        );
        for e in &self.entries {
            let agent = e.agent.map_or("-".to_string(), |a| a.to_string());
            let bound = e.bound.map_or("inf".to_string(), |b| format!("{b:.9}"));
            out.push_str(&format!(
                "{:<8} {:<34} {:>14.9} {:>14} {:>9.4}  {}\n",
                agent,
                e.inequality,
                e.value,
                bound,
                e.margin,
                if e.holds { "yes" } else { "NO" }
            ));
        }
        out
    }
}

fn entry<S: Scalar>(agent: Option<u32>, inequality: &str, value: S, bound: S, strict: bool) -> CertificateEntry {
    let (v, b) = (value.as_f64(), bound.as_f64());
    let holds = if strict { v < b } else { v <= b + 1e-12 * b.abs().max(1.0) };
    let (bound, margin) = if b.is_finite() {
        (Some(b), if b != 0.0 { (b - v) / b.abs() } else { -v })
    } else {
        (None, 1.0)
    };
    CertificateEntry { agent, inequality: inequality.to_string(), value: v, bound, margin, holds }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeDiscretization<S> {
    /// Stored as `T / ell`.
    pub dt: S,
    pub ell: usize,
    pub tau: S,
    pub d_max: Vec<S>,
    /// Safety factor that produced `dt` (`None` for hand-chosen parameters).
    pub theta: Option<S>,
    pub certificate: Certificate,
}

impl<S: Scalar> SpaceTimeDiscretization<S> {
    /// Hand-chosen parameters. The certificate is computed but not required to hold.
    pub fn manual(
        scenario: &Scenario<S>,
        tube: &ReachTube<S>,
        bounds: &DynamicsBounds<S>,
        np: &NetworkParameters<S>,
        ell: usize,
        tau: S,
        d_max: Vec<S>,
    ) -> Self {
        let dt = scenario.horizon / S::from_usize_lossy(ell);
        let certificate = certify(scenario, tube, bounds, np, dt, ell, tau, &d_max);
        SpaceTimeDiscretization { dt, ell, tau, d_max, theta: None, certificate }
    }

    /// Same time grid with every diameter multiplied by `factor`; recertified.
    pub fn with_scaled_diameters(
        &self,
        scenario: &Scenario<S>,
        tube: &ReachTube<S>,
        bounds: &DynamicsBounds<S>,
        np: &NetworkParameters<S>,
        factor: S,
    ) -> Self {
        let d: Vec<S> = self.d_max.iter().map(|&d| d * factor).collect();
        Self::manual(scenario, tube, bounds, np, self.ell, self.tau, d)
    }

    pub fn is_certified(&self) -> bool {
        self.certificate.certified
    }
}

/// Re-evaluates every condition of the well-posedness guarantee.
#[allow(clippy::too_many_arguments)]
pub fn certify<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
    bounds: &DynamicsBounds<S>,
    np: &NetworkParameters<S>,
    dt: S,
    ell: usize,
    tau: S,
    d_max: &[S],
) -> Certificate {
    let t_end = scenario.horizon;
    let mut entries = Vec::new();
    let mut grid = entry(None, "ell*dt = T", S::from_usize_lossy(ell) * dt, t_end, false);
    grid.holds = (grid.value - t_end.as_f64()).abs() <= 4.0 * S::epsilon().as_f64() * t_end.as_f64();
    entries.push(grid);
    entries.push(entry(None, "dt < tau", dt, tau, true));
    entries.push(entry(None, "tau < T", tau, t_end, true));
    for v in validate_cycle_condition(&scenario.graph, scenario.numerics.eps_geo) {
        let name = format!("cycle {:?} product >= 1", v.cycle);
        entries.push(CertificateEntry {
            agent: None,
            inequality: name,
            value: v.product,
            bound: Some(1.0),
            margin: v.product - 1.0,
            holds: false,
        });
    }
    for (i, a) in scenario.agents.iter().enumerate() {
        let p = AgentParams::of(scenario, np, i);
        let id = Some(a.id);
        entries.push(entry(id, "dt < dt_upper", dt, delta_t_upper_bound(&p), true));
        let (t1, t2) = d_max_terms(&p, dt);
        entries.push(entry(id, "d_max > 0", S::zero(), d_max[i], true));
        entries.push(entry(id, "d_max < term1", d_max[i], t1, true));
        entries.push(entry(id, "d_max < term2", d_max[i], t2, true));
        entries.push(entry(id, "budget(t=0) < v_max", controller_budget(&p, d_max[i], dt, S::zero()), a.v_max, true));
        entries.push(entry(id, "budget(t=dt) < v_max", controller_budget(&p, d_max[i], dt, dt), a.v_max, true));
    }
    for (j, i) in scenario.graph.edges() {
        let name = format!("d_max({}) <= mu*d_max({})", scenario.agents[j].id, scenario.agents[i].id);
        let bound = scenario.graph.mu(j, i) * d_max[i];
        entries.push(entry(Some(scenario.agents[j].id), &name, d_max[j], bound, false));
    }
    let v_max: Vec<S> = scenario.agents.iter().map(|a| a.v_max).collect();
    if tau > dt && tau < t_end {
        let nest = check_nesting(tube, bounds, &v_max, dt, tau, scenario.numerics.eps_geo);
        for (i, checks) in nest.agents.iter().enumerate() {
            for c in checks {
                let name = format!("nesting(sigma={})", c.sigma);
                let mut e = entry(Some(scenario.agents[i].id), &name, c.required, c.inflated, false);
                e.holds = c.ok;
                entries.push(e);
            }
        }
    }
    let certified = entries.iter().all(|e| e.holds);
    Certificate { entries, certified }
}

/// Chooses `(dt, ell, tau, d_max)` by backoff on the safety factor, then certifies.
pub fn solve_discretization<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
    bounds: &DynamicsBounds<S>,
    np: &NetworkParameters<S>,
) -> Result<SpaceTimeDiscretization<S>, DiscretizationError> {
    let nm = &scenario.numerics;
    let violations = validate_cycle_condition(&scenario.graph, nm.eps_geo);
    if !violations.is_empty() {
        return Err(DiscretizationError::Cycle(violations));
    }
    let t_end = scenario.horizon;
    let count = scenario.agent_count();
    let params: Vec<AgentParams<S>> = (0..count).map(|i| AgentParams::of(scenario, np, i)).collect();
    let dt_star = params.iter().map(delta_t_upper_bound).fold(S::infinity(), S::min);
    let theta0 = nm.theta.min(S::one() - nm.margin);
    let mut last_err = None;

    for attempt in 0..=nm.backoff_retries {
        let theta = theta0 / S::lit(2f64.powi(attempt as i32));
        let steps = if dt_star.is_finite() {
            t_end / (theta * dt_star)
        } else {
            // no coupling limit: ten steps, refined by the same backoff
            S::lit(10.0) * theta0 / theta
        };
        let ell = (steps - S::lit(1e-9)).ceil().to_usize().unwrap_or(usize::MAX).max(2);
        let dt = t_end / S::from_usize_lossy(ell);
        let tau = (S::two() * dt).min((dt + t_end) * S::half());

        let mut caps = Vec::with_capacity(count);
        let mut bad = None;
        for (i, p) in params.iter().enumerate() {
            let (t1, t2) = d_max_terms(p, dt);
            let cap = (S::one() - nm.margin) * t1.min(t2);
            if !(cap > S::zero()) {
                let which = if t2 <= t1 { "d_max < term2" } else { "d_max < term1" };
                bad = Some((i, which.to_string(), format!("bound {} at dt = {}", t1.min(t2), dt)));
                break;
            }
            caps.push(cap);
        }
        if let Some((i, inequality, detail)) = bad {
            last_err = Some(DiscretizationError::Infeasible { agent: scenario.agents[i].id, inequality, detail });
            continue;
        }

        let mut d = caps.clone();
        // binding[i] records what last lowered d[i]
        let mut binding: Vec<String> = params
            .iter()
            .map(|p| {
                let (t1, t2) = d_max_terms(p, dt);
                if t2 <= t1 { "d_max < term2" } else { "d_max < term1" }.to_string()
            })
            .collect();
        for _ in 0..=count {
            let mut changed = false;
            for (j, i) in scenario.graph.edges() {
                let lim = scenario.graph.mu(j, i) * d[i];
                if lim < d[j] {
                    d[j] = lim;
                    binding[j] = format!(
                        "d_max({}) <= mu*d_max({})",
                        scenario.agents[j].id, scenario.agents[i].id
                    );
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(i) = (0..count).find(|&i| !(d[i] >= nm.d_max_floor)) {
            last_err = Some(DiscretizationError::Infeasible {
                agent: scenario.agents[i].id,
                inequality: binding[i].clone(),
                detail: format!("d_max = {} below floor {} at dt = {}", d[i], nm.d_max_floor, dt),
            });
            continue;
        }
        let certificate = certify(scenario, tube, bounds, np, dt, ell, tau, &d);
        if let Some(e) = certificate.failures().next() {
            last_err = Some(DiscretizationError::Infeasible {
                agent: e.agent.unwrap_or(u32::MAX),
                inequality: e.inequality.clone(),
                detail: format!("value {} against bound {:?}", e.value, e.bound),
            });
            continue;
        }
        return Ok(SpaceTimeDiscretization { dt, ell, tau, d_max: d, theta: Some(theta), certificate });
    }
    Err(last_err.expect("at least one attempt"))
}
