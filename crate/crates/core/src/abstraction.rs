//! Individual transition systems and their product, explored layer by layer.
//!
//! Transitions are materialized lazily: an agent's successor set is computed the
//! first time a configuration of its own cell and its neighbors' cells is asked
//! for, and memoized from then on.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use dashmap::DashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ReferenceTrajectory;
use crate::geometry::{Ball, Point, Region};
use crate::grid::{cells_meeting_ball, project_configuration, CellId, DecompositionExport};
use crate::pipeline::Setup;
use crate::scalar::Scalar;

/// Cells of all agents, indexed by agent position.
pub type GlobalConfiguration = Vec<CellId>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbstractionError {
    #[error("agent {agent}: cell {cell} is not marked inside R([0, T - dt]); no outgoing transitions defined here")]
    NotPreMarked { agent: u32, cell: CellId },
    #[error("agent {agent}: reach ball around {center:?} with radius {radius} leaves the extended cell set")]
    ReachballEscapes { agent: u32, center: Vec<f64>, radius: f64 },
    #[error("configuration {config:?} is not in layer {layer}")]
    NotInLayer { layer: usize, config: GlobalConfiguration },
    #[error("layer {layer} has no successors from {config:?}")]
    DeadEnd { layer: usize, config: GlobalConfiguration },
    #[error("requested path length {requested} exceeds the {available} built layers")]
    TooLong { requested: usize, available: usize },
    #[error("configuration has {got} entries, expected {expected}")]
    Arity { got: usize, expected: usize },
}

/// One materialized transition of `TS_i`: the reference trajectory for the
/// configuration and the cells its reach ball meets.
#[derive(Debug, Clone)]
pub struct Transition<S> {
    pub chi: Arc<ReferenceTrajectory<S>>,
    /// Cells of the extended set meeting `B(chi(dt); r - r_slack)`.
    pub meeting: Vec<CellId>,
    /// `meeting` restricted to the cover; the successor set `Post_i`.
    pub targets: Vec<CellId>,
}

/// `TS_i` with its transition relation memoized per configuration.
#[derive(Debug)]
pub struct IndividualTransitionSystem<S> {
    pub agent: usize,
    pub initial: Vec<CellId>,
    memo: DashMap<Vec<CellId>, Arc<Transition<S>>>,
}

impl<S> IndividualTransitionSystem<S> {
    pub fn materialized(&self) -> usize {
        self.memo.len()
    }

    /// Materialized transitions sorted by configuration.
    pub fn transitions(&self) -> Vec<(Vec<CellId>, Arc<Transition<S>>)> {
        let mut v: Vec<_> = self.memo.iter().map(|e| (e.key().clone(), e.value().clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }
}

/// Reachable sets `P^0(Q0), ..., P^k(Q0)` with one recorded predecessor per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layers {
    /// Each layer sorted lexicographically.
    pub layers: Vec<Vec<GlobalConfiguration>>,
    /// `predecessors[k][m]` indexes the predecessor of `layers[k + 1][m]` in `layers[k]`.
    pub predecessors: Vec<Vec<u32>>,
    /// Set when the layer cap stopped the expansion early.
    pub truncated: Option<String>,
}

impl Layers {
    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn index_of(&self, layer: usize, config: &[CellId]) -> Option<usize> {
        self.layers.get(layer)?.binary_search_by(|c| c.as_slice().cmp(config)).ok()
    }

    pub fn contains(&self, layer: usize, config: &[CellId]) -> bool {
        self.index_of(layer, config).is_some()
    }
}

/// A path `l^0 l^1 ... l^m` of the product system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub configs: Vec<GlobalConfiguration>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.configs.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The product transition system over a [`Setup`].
#[derive(Debug)]
pub struct Abstraction<S> {
    pub setup: Arc<Setup<S>>,
    pub systems: Vec<IndividualTransitionSystem<S>>,
}

impl<S: Scalar> Abstraction<S> {
    pub fn new(setup: Arc<Setup<S>>) -> Self {
        let systems = (0..setup.agent_count())
            .map(|i| IndividualTransitionSystem {
                agent: i,
                initial: vec![setup.initial_cell(i)],
                memo: DashMap::new(),
            })
            .collect();
        Abstraction { setup, systems }
    }

    pub fn agent_count(&self) -> usize {
        self.systems.len()
    }

    /// `chi_i` for the configuration `cfg = (own cell, neighbor cells...)`.
    pub fn reference_trajectory(&self, i: usize, cfg: &[CellId]) -> ReferenceTrajectory<S> {
        let s = &*self.setup;
        let x_g = s.decomps[i].reference_point(cfg[0]);
        let refs: Vec<Point<S>> = s.scenario.graph.neighbors[i]
            .iter()
            .zip(&cfg[1..])
            .map(|(&j, &l)| s.decomps[j].reference_point(l))
            .collect();
        ReferenceTrajectory::compute(&s.fields[i], &x_g, &refs, s.disc.dt, s.steps())
    }

    /// The transition of `TS_i` labelled by `cfg`, computed on first use.
    pub fn successors(&self, i: usize, cfg: &[CellId]) -> Result<Arc<Transition<S>>, AbstractionError> {
        if let Some(t) = self.systems[i].memo.get(cfg) {
            return Ok(t.clone());
        }
        let expected = 1 + self.setup.scenario.graph.neighbors[i].len();
        if cfg.len() != expected {
            return Err(AbstractionError::Arity { got: cfg.len(), expected });
        }
        let t = Arc::new(self.compute_transition(i, cfg)?);
        // another worker may have raced us; both values are identical
        Ok(self.systems[i].memo.entry(cfg.to_vec()).or_insert(t).clone())
    }

    fn compute_transition(&self, i: usize, cfg: &[CellId]) -> Result<Transition<S>, AbstractionError> {
        let s = &*self.setup;
        let d = &s.decomps[i];
        if !d.in_pre(cfg[0]) {
            return Err(AbstractionError::NotPreMarked { agent: d.agent, cell: cfg[0] });
        }
        let chi = self.reference_trajectory(i, cfg);
        let end = chi.endpoint().clone();
        let eps = s.scenario.numerics.eps_geo;
        let r = s.reach_radius(i);
        let escapes = || AbstractionError::ReachballEscapes {
            agent: d.agent,
            center: end.coords().iter().map(|v| v.as_f64()).collect(),
            radius: r.as_f64(),
        };
        let ext = s.extended_ball(i);
        if end.dist(&ext.center) + r > ext.radius + eps {
            return Err(escapes());
        }
        let r_eff = (r - s.scenario.numerics.r_slack).max(S::zero());
        let probe = Ball { center: end.clone(), radius: r_eff + eps };
        let lattices = cells_meeting_ball(&d.origin, d.width, &probe, s.scenario.numerics.cell_cap)
            .map_err(|_| escapes())?;
        let mut meeting = Vec::with_capacity(lattices.len());
        for lat in &lattices {
            meeting.push(d.id_of(lat).ok_or_else(escapes)?);
        }
        meeting.sort_unstable();
        let targets = meeting.iter().copied().filter(|&l| d.in_cover(l)).collect();
        Ok(Transition { chi: Arc::new(chi), meeting, targets })
    }

    /// `Post_i(l_i; pr_i(l))`, empty when the own cell has no outgoing transitions.
    pub fn post(&self, i: usize, global: &[CellId]) -> Result<Vec<CellId>, AbstractionError> {
        if !self.setup.decomps[i].in_pre(global[i]) {
            return Ok(Vec::new());
        }
        let cfg = project_configuration(global, i, &self.setup.scenario.graph.neighbors[i]);
        Ok(self.successors(i, &cfg)?.targets.clone())
    }

    /// `P(l)`: the Cartesian product of the per-agent successor sets, sorted.
    pub fn post_operator(&self, global: &[CellId]) -> Result<Vec<GlobalConfiguration>, AbstractionError> {
        if global.len() != self.agent_count() {
            return Err(AbstractionError::Arity { got: global.len(), expected: self.agent_count() });
        }
        let factors = (0..self.agent_count())
            .map(|i| self.post(i, global))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(cartesian_product(&factors))
    }

    /// Whether `to` is a successor of `from` in the product system.
    pub fn is_transition(&self, from: &[CellId], to: &[CellId]) -> Result<bool, AbstractionError> {
        if to.len() != self.agent_count() {
            return Ok(false);
        }
        for (i, l) in to.iter().enumerate() {
            if self.post(i, from)?.binary_search(l).is_err() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn initial_configurations(&self) -> Vec<GlobalConfiguration> {
        let factors: Vec<Vec<CellId>> = self.systems.iter().map(|t| t.initial.clone()).collect();
        cartesian_product(&factors)
    }

    /// Breadth-first layers `P^0(Q0)` up to `P^ell(Q0)`, deduplicated per layer.
    pub fn build_layers(&self, ell: usize) -> Result<Layers, AbstractionError> {
        let cap = self.setup.scenario.numerics.layer_cap;
        let mut out = Layers { layers: vec![self.initial_configurations()], predecessors: Vec::new(), truncated: None };
        for k in 1..=ell {
            let prev = out.layers.last().expect("layer 0");
            let expanded: Vec<Vec<(GlobalConfiguration, u32)>> = prev
                .par_iter()
                .enumerate()
                .map(|(m, cfg)| {
                    Ok(self.post_operator(cfg)?.into_iter().map(|c| (c, m as u32)).collect())
                })
                .collect::<Result<_, AbstractionError>>()?;
            let mut next: Vec<(GlobalConfiguration, u32)> = expanded.into_iter().flatten().collect();
            // sorting by (config, predecessor) keeps the smallest predecessor after dedup
            next.par_sort_unstable();
            next.dedup_by(|a, b| a.0 == b.0);
            if next.len() > cap {
                out.truncated = Some(format!(
                    "layer {k} has {} configurations, above the cap of {cap}; stopped after layer {}",
                    next.len(),
                    k - 1
                ));
                break;
            }
            let (cfgs, preds): (Vec<_>, Vec<_>) = next.into_iter().unzip();
            out.layers.push(cfgs);
            out.predecessors.push(preds);
        }
        Ok(out)
    }

    /// Walks back through recorded predecessors from `config` in layer `layer`.
    pub fn reconstruct_path(
        &self,
        layers: &Layers,
        layer: usize,
        config: &[CellId],
    ) -> Result<Path, AbstractionError> {
        let not_in = || AbstractionError::NotInLayer { layer, config: config.to_vec() };
        let mut idx = layers.index_of(layer, config).ok_or_else(not_in)?;
        let mut configs = vec![layers.layers[layer][idx].clone()];
        for k in (1..=layer).rev() {
            idx = layers.predecessors[k - 1][idx] as usize;
            let prev = &layers.layers[k - 1][idx];
            debug_assert!(layers.contains(k - 1, prev));
            configs.push(prev.clone());
        }
        configs.reverse();
        Ok(Path { configs })
    }

    /// A path of length `m` whose successors are drawn uniformly at random.
    pub fn sample_path(&self, layers: &Layers, m: usize, seed: u64) -> Result<Path, AbstractionError> {
        if m >= layers.layers.len() {
            return Err(AbstractionError::TooLong { requested: m, available: layers.layers.len() - 1 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = &layers.layers[0];
        let mut cur = first[rng.gen_range(0..first.len())].clone();
        let mut configs = vec![cur.clone()];
        for k in 0..m {
            let post = self.post_operator(&cur)?;
            if post.is_empty() {
                return Err(AbstractionError::DeadEnd { layer: k, config: cur });
            }
            cur = post[rng.gen_range(0..post.len())].clone();
            configs.push(cur.clone());
        }
        Ok(Path { configs })
    }

    /// First step `k` such that `configs[k] -> configs[k + 1]` is not a transition.
    pub fn first_invalid_step(&self, path: &Path) -> Result<Option<usize>, AbstractionError> {
        for (k, pair) in path.configs.windows(2).enumerate() {
            if !self.is_transition(&pair[0], &pair[1])? {
                return Ok(Some(k));
            }
        }
        Ok(None)
    }

    /// A point of `cell l' ∩ B(chi(dt); r - r_slack)`, preferring points away from
    /// the cell faces.
    pub fn witness(&self, i: usize, chi_end: &Point<S>, target: CellId) -> Point<S> {
        let s = &*self.setup;
        let d = &s.decomps[i];
        let cell = d.cell(target);
        let r_eff = (s.reach_radius(i) - s.scenario.numerics.r_slack).max(S::zero());
        let mut m = d.width / S::lit(4.0);
        for _ in 0..12 {
            let p = cell.shrunk(m).project(chi_end);
            if p.dist(chi_end) <= r_eff {
                return p;
            }
            m = m * S::half();
        }
        cell.project(chi_end)
    }

    /// Structured export of everything materialized so far, with the given layers.
    pub fn export(&self, layers: &Layers) -> AbstractionExport<S> {
        let s = &*self.setup;
        let agents = self
            .systems
            .iter()
            .map(|ts| AgentExport {
                id: s.scenario.agents[ts.agent].id,
                neighbors: s.scenario.graph.neighbors[ts.agent]
                    .iter()
                    .map(|&j| s.scenario.agents[j].id)
                    .collect(),
                decomposition: s.decomps[ts.agent].export(),
                initial: ts.initial.clone(),
                transitions: ts
                    .transitions()
                    .into_iter()
                    .map(|(configuration, t)| TransitionExport {
                        configuration,
                        chi_end: t.chi.endpoint().clone(),
                        targets: t.targets.clone(),
                    })
                    .collect(),
            })
            .collect();
        AbstractionExport {
            dt: s.disc.dt,
            ell: s.disc.ell,
            tau: s.disc.tau,
            d_max: s.disc.d_max.clone(),
            agents,
            layers: layers.clone(),
        }
    }

    /// DOT digraph of the materialized part of `TS_i`.
    pub fn dot_individual(&self, i: usize) -> String {
        let d = &self.setup.decomps[i];
        let ts = &self.systems[i];
        let mut cells = BTreeSet::new();
        let transitions = ts.transitions();
        for (cfg, t) in &transitions {
            cells.insert(cfg[0]);
            cells.extend(t.targets.iter().copied());
        }
        cells.extend(ts.initial.iter().copied());
        let mut out = format!("digraph ts_{} {{\n", d.agent);
        for c in &cells {
            let shape = if ts.initial.contains(c) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  c{c} [label=\"{:?}\", shape={shape}];", d.lattice(*c));
        }
        for (cfg, t) in &transitions {
            let label = cfg.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            for l in &t.targets {
                let _ = writeln!(out, "  c{} -> c{l} [label=\"{label}\"];", cfg[0]);
            }
        }
        out.push_str("}\n");
        out
    }

    /// DOT digraph of the layered product; nodes are configurations, edges transitions.
    pub fn dot_product(&self, layers: &Layers) -> Result<String, AbstractionError> {
        let name = |k: usize, c: &[CellId]| {
            format!("k{k}_{}", c.iter().map(u32::to_string).collect::<Vec<_>>().join("_"))
        };
        let mut out = String::from("digraph product {\n  rankdir=LR;\n");
        for (k, layer) in layers.layers.iter().enumerate() {
            let _ = writeln!(out, "  subgraph layer_{k} {{\n    rank=same;");
            for c in layer {
                let _ = writeln!(out, "    {} [label=\"{c:?}\"];", name(k, c));
            }
            out.push_str("  }\n");
        }
        for k in 0..layers.layers.len().saturating_sub(1) {
            for c in &layers.layers[k] {
                for next in self.post_operator(c)? {
                    if layers.contains(k + 1, &next) {
                        let _ = writeln!(out, "  {} -> {};", name(k, c), name(k + 1, &next));
                    }
                }
            }
        }
        out.push_str("}\n");
        Ok(out)
    }
}

/// Sorted Cartesian product; empty if any factor is empty.
pub fn cartesian_product(factors: &[Vec<CellId>]) -> Vec<GlobalConfiguration> {
    if factors.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut sorted: Vec<Vec<CellId>> = factors.to_vec();
    for f in &mut sorted {
        f.sort_unstable();
        f.dedup();
    }
    let mut out: Vec<GlobalConfiguration> = vec![Vec::with_capacity(sorted.len())];
    for f in &sorted {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                f.iter().map(move |&l| {
                    let mut c = prefix.clone();
                    c.push(l);
                    c
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct TransitionExport<S> {
    pub configuration: Vec<CellId>,
    pub chi_end: Point<S>,
    pub targets: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct AgentExport<S> {
    pub id: u32,
    pub neighbors: Vec<u32>,
    pub decomposition: DecompositionExport<S>,
    pub initial: Vec<CellId>,
    pub transitions: Vec<TransitionExport<S>>,
}

/// Everything a downstream model checker needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct AbstractionExport<S> {
    pub dt: S,
    pub ell: usize,
    pub tau: S,
    pub d_max: Vec<S>,
    pub agents: Vec<AgentExport<S>>,
    pub layers: Layers,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_two_and_one() {
        assert_eq!(cartesian_product(&[vec![1, 0], vec![7]]), vec![vec![0, 7], vec![1, 7]]);
    }

    #[test]
    fn empty_factor_gives_empty_product() {
        assert!(cartesian_product(&[vec![1, 2], vec![]]).is_empty());
    }

    #[test]
    fn product_cardinality() {
        let f = vec![vec![0, 1, 2], vec![4, 5], vec![9, 8, 7, 6]];
        assert_eq!(cartesian_product(&f).len(), 24);
    }
}
