//! Problem definition: the agents with their bounds, coupled through a neighbor graph over a fixed horizon.
//!
//! A [`ScenarioConfig`] is the JSON document as written by the user. Loading
//! validates it into a [`Scenario`], collecting every violation rather than
//! stopping at the first one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Dynamics, DynamicsSpec};
use crate::geometry::Point;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Explicit tube supplied by the user instead of the fixed-point construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TubeOverride<S> {
    /// `R_i(t) = B(x0; radius)` for every `t`.
    Constant { radius: S },
    /// Piecewise-linear radius through `(t, radius)` knots, sorted by `t`.
    Profile { points: Vec<[S; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig<S> {
    pub id: u32,
    pub n: usize,
    pub dynamics: DynamicsSpec<S>,
    pub v_max: S,
    pub lambda: S,
    #[serde(rename = "L1")]
    pub l1: S,
    #[serde(rename = "L2")]
    pub l2: S,
    pub x0: Vec<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<TubeOverride<S>>,
}

/// Directed edge `from -> to`: `from` is a neighbor of `to`, with ratio `mu(from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig<S> {
    pub from: u32,
    pub to: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "S: Scalar"))]
pub struct Numerics<S> {
    pub eps_geo: S,
    /// RK4 steps per time step.
    pub integrator_divisor: usize,
    pub seed: u64,
    /// Relative margin kept inside every open interval of the feasibility conditions.
    pub margin: S,
    /// Safety factor applied to the time-step upper bound.
    pub theta: S,
    pub r_slack: S,
    pub cell_cap: usize,
    pub layer_cap: usize,
    pub sup_samples_per_axis: usize,
    pub sup_sample_cap: usize,
    pub d_max_floor: S,
    pub tube_max_iter: usize,
    pub tube_rel_tol: S,
    pub backoff_retries: usize,
}

impl<S: Scalar> Default for Numerics<S> {
    fn default() -> Self {
        Numerics {
            eps_geo: S::lit(1e-9),
            integrator_divisor: 128,
            seed: 0,
            margin: S::lit(0.05),
            theta: S::lit(0.5),
            r_slack: S::lit(1e-6),
            cell_cap: 10_000_000,
            layer_cap: 1_000_000,
            sup_samples_per_axis: 9,
            sup_sample_cap: 200_000,
            d_max_floor: S::lit(1e-9),
            tube_max_iter: 50,
            tube_rel_tol: S::lit(1e-6),
            backoff_retries: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Scalar"))]
pub struct ScenarioConfig<S> {
    pub agents: Vec<AgentConfig<S>>,
    #[serde(default)]
    pub edges: Vec<EdgeConfig<S>>,
    pub horizon: S,
    #[serde(default)]
    pub numerics: Numerics<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec<S> {
    pub id: u32,
    pub n: usize,
    pub dynamics: Dynamics<S>,
    pub v_max: S,
    pub lambda: S,
    pub l1: S,
    pub l2: S,
    pub x0: Point<S>,
    pub tube: Option<TubeOverride<S>>,
}

/// Directed neighbor graph; agents are addressed by position `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph<S> {
    /// `neighbors[i]` is the ordered tuple `j(i)`.
    pub neighbors: Vec<Vec<usize>>,
    /// `mu[(j, i)]` for every `j` in `neighbors[i]`.
    pub mu: BTreeMap<(usize, usize), S>,
}

impl<S: Scalar> NetworkGraph<S> {
    pub fn new(neighbors: Vec<Vec<usize>>, mu: BTreeMap<(usize, usize), S>) -> Self {
        NetworkGraph { neighbors, mu }
    }

    pub fn agent_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn mu(&self, j: usize, i: usize) -> S {
        self.mu.get(&(j, i)).copied().unwrap_or_else(S::one)
    }

    /// Edges `(j, i)` with `j` a neighbor of `i`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (j, i)))
    }

    /// Agents that list `j` as a neighbor.
    pub fn dependents(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agent_count()).filter(move |&i| self.neighbors[i].contains(&j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<S> {
    pub agents: Vec<AgentSpec<S>>,
    pub graph: NetworkGraph<S>,
    pub horizon: S,
    pub numerics: Numerics<S>,
    /// The document this scenario was validated from.
    pub config: ScenarioConfig<S>,
}

impl<S: Scalar> Scenario<S> {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Common state dimension of all agents.
    pub fn dim(&self) -> usize {
        self.agents.first().map_or(0, |a| a.n)
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn from_config(config: ScenarioConfig<S>) -> Result<Self, ScenarioError> {
        let mut errs = Vec::new();
        if config.agents.is_empty() {
            errs.push("at least one agent is required".to_string());
        }
        if !(config.horizon > S::zero() && config.horizon.is_finite()) {
            errs.push(format!("horizon must be positive, got {}", config.horizon));
        }
        let mut ids = BTreeMap::new();
        for (k, a) in config.agents.iter().enumerate() {
            if ids.insert(a.id, k).is_some() {
                errs.push(format!("duplicate agent id {}", a.id));
            }
        }
        let n = config.agents.first().map_or(0, |a| a.n);
        for a in &config.agents {
            let tag = format!("agent {}", a.id);
            if a.n == 0 {
                errs.push(format!("{tag}: dimension n must be positive"));
            }
            if a.n != n {
                errs.push(format!("{tag}: dimension {} differs from {}", a.n, n));
            }
            if a.x0.len() != a.n {
                errs.push(format!("{tag}: x0 has length {}, expected {}", a.x0.len(), a.n));
            }
            if a.x0.iter().any(|v| !v.is_finite()) {
                errs.push(format!("{tag}: x0 must be finite"));
            }
            if !(a.v_max > S::zero() && a.v_max.is_finite()) {
                errs.push(format!("{tag}: v_max must be positive, got {}", a.v_max));
            }
            if !(a.lambda > S::zero() && a.lambda < S::one()) {
                errs.push(format!("{tag}: lambda out of (0,1), got {}", a.lambda));
            }
            if !(a.l1 >= S::zero() && a.l1.is_finite()) {
                errs.push(format!("{tag}: L1 must be nonnegative, got {}", a.l1));
            }
            if !(a.l2 >= S::zero() && a.l2.is_finite()) {
                errs.push(format!("{tag}: L2 must be nonnegative, got {}", a.l2));
            }
            match &a.tube {
                Some(TubeOverride::Constant { radius }) if !(*radius > S::zero()) => {
                    errs.push(format!("{tag}: tube radius must be positive"));
                }
                Some(TubeOverride::Profile { points }) => {
                    if points.is_empty() {
                        errs.push(format!("{tag}: tube profile needs at least one knot"));
                    }
                    if points.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                        errs.push(format!("{tag}: tube profile times must be increasing"));
                    }
                    if points.iter().any(|p| !(p[1] >= S::zero())) {
                        errs.push(format!("{tag}: tube profile radii must be nonnegative"));
                    }
                }
                _ => {}
            }
        }

        let count = config.agents.len();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); count];
        let mut mu = BTreeMap::new();
        for e in &config.edges {
            let (Some(&j), Some(&i)) = (ids.get(&e.from), ids.get(&e.to)) else {
                errs.push(format!("edge {} -> {} references an unknown agent", e.from, e.to));
                continue;
            };
            if i == j {
                errs.push(format!("agent {} cannot be its own neighbor", e.from));
                continue;
            }
            if neighbors[i].contains(&j) {
                errs.push(format!("duplicate edge {} -> {}", e.from, e.to));
                continue;
            }
            let m = e.mu.unwrap_or_else(S::one);
            if !(m > S::zero() && m.is_finite()) {
                errs.push(format!("edge {} -> {}: mu must be positive", e.from, e.to));
            }
            neighbors[i].push(j);
            mu.insert((j, i), m);
        }

        let mut agents = Vec::with_capacity(count);
        if errs.is_empty() {
            for (i, a) in config.agents.iter().enumerate() {
                let neighbor_ids: Vec<u32> =
                    neighbors[i].iter().map(|&j| config.agents[j].id).collect();
                match a.dynamics.compile(a.n, &neighbor_ids) {
                    Ok(dynamics) => agents.push(AgentSpec {
                        id: a.id,
                        n: a.n,
                        dynamics,
                        v_max: a.v_max,
                        lambda: a.lambda,
                        l1: a.l1,
                        l2: a.l2,
                        x0: Point(a.x0.clone()),
                        tube: a.tube.clone(),
                    }),
                    Err(e) => errs.push(format!("agent {}: {e}", a.id)),
                }
            }
        }
        let nm = &config.numerics;
        if nm.integrator_divisor == 0 {
            errs.push("numerics.integrator_divisor must be at least 1".into());
        }
        if !(nm.eps_geo >= S::zero()) {
            errs.push("numerics.eps_geo must be nonnegative".into());
        }
        if !(nm.margin >= S::zero() && nm.margin < S::one()) {
            errs.push("numerics.margin must lie in [0,1)".into());
        }
        if !(nm.theta > S::zero() && nm.theta <= S::one()) {
            errs.push("numerics.theta must lie in (0,1]".into());
        }
        if nm.sup_samples_per_axis < 2 {
            errs.push("numerics.sup_samples_per_axis must be at least 2".into());
        }
        if !errs.is_empty() {
            return Err(ScenarioError::Invalid(errs));
        }
        Ok(Scenario {
            agents,
            graph: NetworkGraph::new(neighbors, mu),
            horizon: config.horizon,
            numerics: config.numerics.clone(),
            config,
        })
    }
}

/// Parses and validates a JSON scenario document.
pub fn load_scenario<S: Scalar>(source: &str) -> Result<Scenario<S>, ScenarioError> {
    let config: ScenarioConfig<S> =
        serde_json::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Scenario::from_config(config)
}

/// A cycle `i0 i1 ... im` (with `i0 = im`) whose ratio product falls below one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleViolation {
    pub cycle: Vec<usize>,
    pub product: f64,
}

/// Enumerates all simple cycles, each reported once starting from its smallest agent.
pub fn simple_cycles<S: Scalar>(graph: &NetworkGraph<S>) -> Vec<Vec<usize>> {
    let n = graph.agent_count();
    // successor lists along edge direction j -> i
    let mut succ = vec![Vec::new(); n];
    for (j, i) in graph.edges() {
        succ[j].push(i);
    }
    for s in succ.iter_mut() {
        s.sort_unstable();
    }
    let mut out = Vec::new();
    for start in 0..n {
        let mut path = vec![start];
        let mut on_path = vec![false; n];
        on_path[start] = true;
        extend_cycles(start, &succ, &mut path, &mut on_path, &mut out);
    }
    out
}

fn extend_cycles(
    start: usize,
    succ: &[Vec<usize>],
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().unwrap();
    for &next in &succ[last] {
        if next == start {
            let mut c = path.clone();
            c.push(start);
            out.push(c);
        } else if next > start && !on_path[next] {
            on_path[next] = true;
            path.push(next);
            extend_cycles(start, succ, path, on_path, out);
            path.pop();
            on_path[next] = false;
        }
    }
}

/// Cycles along which the product of diameter ratios is below `1 - eps`.
pub fn validate_cycle_condition<S: Scalar>(graph: &NetworkGraph<S>, eps: S) -> Vec<CycleViolation> {
    simple_cycles(graph)
        .into_iter()
        .filter_map(|cycle| {
            let product = cycle
                .windows(2)
                .map(|w| graph.mu(w[0], w[1]))
                .fold(S::one(), |a, b| a * b);
            (product < S::one() - eps).then(|| CycleViolation { cycle, product: product.as_f64() })
        })
        .collect()
}

/// Per-agent aggregates of the neighbor ratios and neighbor speed bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters<S> {
    pub mu_bold: Vec<S>,
    pub m_bold: Vec<S>,
}

/// `mu_bold(i) = |(mu(j,i))_j|`, `M_bold(i) = |(M(j) + v_max(j))_j|` over neighbors `j`.
pub fn network_parameters<S: Scalar>(scenario: &Scenario<S>, m: &[S]) -> NetworkParameters<S> {
    let g = &scenario.graph;
    let (mu_bold, m_bold) = (0..scenario.agent_count())
        .map(|i| {
            let ns = &g.neighbors[i];
            let mu = ns.iter().map(|&j| g.mu(j, i).powi(2)).sum::<S>().sqrt();
            let mb = ns
                .iter()
                .map(|&j| (m[j] + scenario.agents[j].v_max).powi(2))
                .sum::<S>()
                .sqrt();
            (mu, mb)
        })
        .unzip();
    NetworkParameters { mu_bold, m_bold }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(id: u32, lambda: f64) -> String {
        format!(
            r#"{{"id":{id},"n":1,"dynamics":{{"kind":"zero"}},"v_max":1.0,"lambda":{lambda},"L1":0.0,"L2":0.0,"x0":[0.0]}}"#
        )
    }

    #[test]
    fn minimal_single_agent() {
        let s: Scenario<f64> =
            load_scenario(&format!(r#"{{"agents":[{}],"horizon":1.0}}"#, agent(1, 0.5))).unwrap();
        assert_eq!(s.agent_count(), 1);
        assert!(s.graph.neighbors[0].is_empty());
        assert_eq!(s.numerics.integrator_divisor, 128);
    }

    #[test]
    fn lambda_out_of_range() {
        let err = load_scenario::<f64>(&format!(r#"{{"agents":[{}],"horizon":1.0}}"#, agent(1, 1.2)))
            .unwrap_err();
        assert!(err.to_string().contains("lambda out of (0,1)"), "{err}");
    }

    #[test]
    fn collects_all_violations() {
        let doc = r#"{"agents":[{"id":1,"n":1,"dynamics":{"kind":"zero"},"v_max":-1.0,"lambda":0.5,
            "L1":0.0,"L2":0.0,"x0":[0.0]}],"edges":[{"from":1,"to":4}],"horizon":1.0}"#;
        match load_scenario::<f64>(doc) {
            Err(ScenarioError::Invalid(v)) => {
                assert_eq!(v.len(), 2, "{v:?}");
                assert!(v.iter().any(|m| m.contains("v_max")));
                assert!(v.iter().any(|m| m.contains("unknown agent")));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_scenario::<f64>("{\"agents\":"), Err(ScenarioError::Parse(_))));
        assert!(matches!(load_scenario::<f64>(r#"{"horizon":1.0}"#), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn chain_graph() {
        let doc = format!(
            r#"{{"agents":[{},{},{}],"edges":[{{"from":1,"to":2}},{{"from":2,"to":3}}],"horizon":1.0}}"#,
            agent(1, 0.5),
            agent(2, 0.5),
            agent(3, 0.5)
        );
        let s: Scenario<f64> = load_scenario(&doc).unwrap();
        assert_eq!(s.graph.neighbors, vec![vec![], vec![0], vec![1]]);
        assert!(validate_cycle_condition(&s.graph, 1e-9).is_empty());
    }

    fn two_cycle(a: f64, b: f64) -> NetworkGraph<f64> {
        let mut mu = BTreeMap::new();
        mu.insert((0, 1), a);
        mu.insert((1, 0), b);
        NetworkGraph::new(vec![vec![1], vec![0]], mu)
    }

    #[test]
    fn cycle_condition_examples() {
        assert!(validate_cycle_condition(&two_cycle(1.0, 1.0), 1e-9).is_empty());
        let v = validate_cycle_condition(&two_cycle(0.5, 1.5), 1e-9);
        assert_eq!(v.len(), 1);
        assert!((v[0].product - 0.75).abs() < 1e-12);
        assert_eq!(v[0].cycle, vec![0, 1, 0]);
        assert!(validate_cycle_condition(&two_cycle(0.5, 2.0), 1e-9).is_empty());
    }

    #[test]
    fn network_parameter_examples() {
        let doc = format!(
            r#"{{"agents":[{},{},{}],"edges":[{{"from":1,"to":3}},{{"from":2,"to":3}},{{"from":1,"to":2}}],"horizon":1.0}}"#,
            agent(1, 0.5),
            agent(2, 0.5),
            agent(3, 0.5)
        );
        let s: Scenario<f64> = load_scenario(&doc).unwrap();
        let np = network_parameters(&s, &[0.0, 1.0, 1.0]);
        assert_eq!(np.mu_bold[0], 0.0);
        assert_eq!(np.m_bold[0], 0.0);
        assert_eq!(np.mu_bold[1], 1.0);
        assert_eq!(np.m_bold[1], 1.0);
        let np = network_parameters(&s, &[1.0, 1.0, 1.0]);
        assert_eq!(np.m_bold[1], 2.0);
        assert!((np.mu_bold[2] - 2f64.sqrt()).abs() < 1e-15);
        assert!((np.m_bold[2] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }
}
