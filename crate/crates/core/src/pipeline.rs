//! Runs the construction stages in order and keeps their results together.

use std::sync::Arc;

use crate::discretization::{solve_discretization, SpaceTimeDiscretization};
use crate::dynamics::{reach_radius, ExtendedField};
use crate::error::Result;
use crate::geometry::Ball;
use crate::grid::{CellDecomposition, CellId, MarkRegions};
use crate::reach::{compute_reach_tube, inflation_constant, DynamicsBounds, ReachTube};
use crate::scalar::Scalar;
use crate::scenario::{network_parameters, NetworkParameters, Scenario};

/// Everything needed to build and validate the abstraction of one scenario.
#[derive(Debug, Clone)]
pub struct Setup<S> {
    pub scenario: Scenario<S>,
    pub tube: ReachTube<S>,
    pub bounds: DynamicsBounds<S>,
    pub network: NetworkParameters<S>,
    pub disc: SpaceTimeDiscretization<S>,
    pub decomps: Vec<CellDecomposition<S>>,
    pub fields: Vec<Arc<ExtendedField<S>>>,
}

impl<S: Scalar> Setup<S> {
    /// Runs every stage, ending with a certified discretization and its grids.
    pub fn build(scenario: Scenario<S>) -> Result<Self> {
        let (tube, bounds) = compute_reach_tube(&scenario)?;
        let network = network_parameters(&scenario, &bounds.m);
        let disc = solve_discretization(&scenario, &tube, &bounds, &network)?;
        Self::with_discretization(scenario, tube, bounds, disc)
    }

    /// Grids for a given discretization, certified or not.
    pub fn with_discretization(
        scenario: Scenario<S>,
        tube: ReachTube<S>,
        bounds: DynamicsBounds<S>,
        disc: SpaceTimeDiscretization<S>,
    ) -> Result<Self> {
        let network = network_parameters(&scenario, &bounds.m);
        let count = scenario.agent_count();
        let mut budget = scenario.numerics.cell_cap;
        let mut decomps = Vec::with_capacity(count);
        for i in 0..count {
            let regions = mark_regions(&scenario, &tube, &bounds, &disc, i);
            let d = CellDecomposition::build(
                scenario.agents[i].id,
                &scenario.agents[i].x0,
                disc.d_max[i],
                &regions,
                budget,
            )?;
            budget = budget.saturating_sub(d.len());
            decomps.push(d);
        }
        let fields = (0..count)
            .map(|i| {
                let nbs = scenario.graph.neighbors[i].iter().map(|&j| tube.horizon_hull(j)).collect();
                Arc::new(ExtendedField::new(
                    scenario.agents[i].dynamics.clone(),
                    tube.horizon_hull(i),
                    nbs,
                ))
            })
            .collect();
        Ok(Setup { scenario, tube, bounds, network, disc, decomps, fields })
    }

    /// Grids for a hand-picked time grid and diameters. The result carries a
    /// certificate, which may fail.
    pub fn manual(scenario: Scenario<S>, ell: usize, tau: S, d_max: Vec<S>) -> Result<Self> {
        let (tube, bounds) = compute_reach_tube(&scenario)?;
        let network = network_parameters(&scenario, &bounds.m);
        let disc = SpaceTimeDiscretization::manual(&scenario, &tube, &bounds, &network, ell, tau, d_max);
        Self::with_discretization(scenario, tube, bounds, disc)
    }

    /// The same setup with every cell diameter multiplied by `factor`.
    pub fn with_scaled_diameters(&self, factor: S) -> Result<Self> {
        let disc = self.disc.with_scaled_diameters(&self.scenario, &self.tube, &self.bounds, &self.network, factor);
        Self::with_discretization(self.scenario.clone(), self.tube.clone(), self.bounds.clone(), disc)
    }

    pub fn agent_count(&self) -> usize {
        self.scenario.agent_count()
    }

    /// `r_i` for the chosen time step.
    pub fn reach_radius(&self, i: usize) -> S {
        let a = &self.scenario.agents[i];
        reach_radius(a.lambda, self.disc.dt, a.v_max)
    }

    /// `M(i) + v_max(i)`, the growth rate of admissible neighbor signals.
    pub fn growth(&self, i: usize) -> S {
        self.bounds.m[i] + self.scenario.agents[i].v_max
    }

    /// Cell of `I_i` containing `x0_i` (its center by construction).
    pub fn initial_cell(&self, i: usize) -> CellId {
        self.decomps[i]
            .locate(&self.scenario.agents[i].x0, S::zero())
            .expect("x0 lies in its own decomposition")
    }

    pub fn extended_ball(&self, i: usize) -> Ball<S> {
        mark_regions(&self.scenario, &self.tube, &self.bounds, &self.disc, i).extended
    }

    pub fn steps(&self) -> usize {
        self.scenario.numerics.integrator_divisor
    }
}

/// Marking regions of agent `i`.
///
/// The extended ball is `R_i^{c_i(tau)}([0, T - tau])` further dilated by half a cell
/// diameter, so that it also contains the reach balls of cells that only touch the
/// pre region.
pub fn mark_regions<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
    bounds: &DynamicsBounds<S>,
    disc: &SpaceTimeDiscretization<S>,
    i: usize,
) -> MarkRegions<S> {
    let t_end = scenario.horizon;
    let c = inflation_constant(bounds.m[i], scenario.agents[i].v_max, disc.tau);
    MarkRegions {
        pre: tube.hull(i, S::zero(), t_end - disc.dt),
        cover: tube.hull(i, S::zero(), t_end),
        extended: tube.inflated_hull(i, S::zero(), t_end - disc.tau, c + disc.d_max[i] * S::half()),
    }
}
