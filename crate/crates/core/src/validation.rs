//! Simulation oracles for the abstraction: per-transition consistency under
//! sampled neighbor disturbances, closed-loop realization of product paths,
//! and sampled audits of the declared constants and of the reach tube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionError, Abstraction, GlobalConfiguration, Path};
use crate::discretization::{controller_budget, AgentParams};
use crate::dynamics::{
    integrate, sample_disturbance, DisturbanceSignal, DynamicsError, HybridController, TrajectoryRow,
};
use crate::geometry::{Aabb, Ball, Point, Region};
use crate::grid::{project_configuration, CellId};
use crate::reach::{DynamicsBounds, ReachTube};
use crate::scalar::Scalar;
use crate::scenario::Scenario;

/// Endpoint membership tolerance for the consistency harness.
pub const ENDPOINT_TOL: f64 = 1e-6;
/// Closed-cell membership tolerance for path realization.
pub const LANDING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("agent {agent}: target cell {target} is not a successor of configuration {configuration:?}")]
    NotASuccessor { agent: u32, configuration: Vec<CellId>, target: CellId },
    #[error("agent {agent}: start state {state:?} is outside its cell {cell}")]
    StartOutsideCell { agent: u32, cell: CellId, state: Vec<f64> },
}

fn dist_to_box<S: Scalar>(x: &Point<S>, b: &Aabb<S>) -> S {
    b.distance(x).expect("matching dimensions")
}

fn uniform_in_box<S: Scalar, R: Rng>(b: &Aabb<S>, rng: &mut R) -> Point<S> {
    Point(
        (0..b.lower.dim())
            .map(|k| {
                let u: f64 = rng.gen();
                b.lower[k] + S::lit(u) * (b.upper[k] - b.lower[k])
            })
            .collect(),
    )
}

/// Trial `k` starts at vertex `k` of the cell while vertices remain. After
/// that, odd trials start at a random vertex and even ones uniformly inside.
fn start_state<S: Scalar, R: Rng>(cell: &Aabb<S>, k: usize, rng: &mut R) -> Point<S> {
    let n = cell.lower.dim();
    let vertex = |bits: u64| Point((0..n).map(|q| if bits >> (q % 64) & 1 == 1 { cell.upper[q] } else { cell.lower[q] }).collect());
    if n < 64 && (k as u64) < (1u64 << n) {
        return vertex(k as u64);
    }
    if k % 2 == 1 {
        return vertex(rng.gen());
    }
    uniform_in_box(cell, rng)
}

/// Outcome of one disturbance trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    /// `d(x(t), S_l) < (M + v_max) t` at every node.
    pub bounds_ok: bool,
    /// `x(dt)` lies in the target cell.
    pub final_ok: bool,
    /// `|k(t)| < v_max` at every node.
    pub controller_ok: bool,
    /// `|k(t)|` never exceeds the analytic budget envelope.
    pub envelope_ok: bool,
    pub max_bound_excess: f64,
    pub final_distance: f64,
    pub max_k: f64,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.bounds_ok && self.final_ok && self.controller_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub agent: u32,
    pub configuration: Vec<CellId>,
    pub target: CellId,
    pub trials: usize,
    pub seed: u64,
    pub v_max: f64,
    pub outcomes: Vec<TrialOutcome>,
    pub max_bound_excess: f64,
    pub max_final_distance: f64,
    pub max_k: f64,
    pub passed: bool,
}

impl ConsistencyReport {
    pub fn failures(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter(|o| !o.passed())
    }
}

/// Seed of trial `k` in a run seeded with `seed`.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Monte-Carlo check of the consistency condition for one transition of `TS_i`.
///
/// Each trial picks a start state in the own cell and one affine disturbance
/// per neighbor, then integrates `x' = g_i(x, d) + k(t, x, d)`. Odd trials
/// are extreme: the agent starts at a vertex and every neighbor leaves a vertex
/// of its cell at full speed.
pub fn check_consistency<S: Scalar>(
    abs: &Abstraction<S>,
    i: usize,
    cfg: &[CellId],
    target: CellId,
    trials: usize,
    seed: u64,
) -> Result<ConsistencyReport, ValidationError> {
    let s = &*abs.setup;
    let agent = &s.scenario.agents[i];
    let tr = abs.successors(i, cfg)?;
    if tr.targets.binary_search(&target).is_err() {
        return Err(ValidationError::NotASuccessor { agent: agent.id, configuration: cfg.to_vec(), target });
    }
    let chi = tr.chi.clone();
    let x_target = abs.witness(i, chi.endpoint(), target);
    let w = crate::dynamics::target_parameter(&x_target, chi.endpoint(), agent.lambda, s.disc.dt, agent.v_max)?;
    let nbs = &s.scenario.graph.neighbors[i];
    let refs: Vec<Point<S>> = nbs.iter().zip(&cfg[1..]).map(|(&j, &l)| s.decomps[j].reference_point(l)).collect();
    let own_cell = s.decomps[i].cell(cfg[0]);
    let target_cell = s.decomps[i].cell(target);
    let growth = s.growth(i);
    let eps = s.scenario.numerics.eps_geo;
    let dt = s.disc.dt;
    let steps = s.steps();
    let params = AgentParams::of(&s.scenario, &s.network, i);
    let d_i = s.disc.d_max[i];

    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<TrialOutcome, ValidationError> {
            let ts = trial_seed(seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(ts);
            let x0 = start_state(&own_cell, k, &mut rng);
            let signals: Vec<DisturbanceSignal<S>> = nbs
                .iter()
                .zip(&cfg[1..])
                .map(|(&j, &l)| sample_disturbance(&s.decomps[j].cell(l), s.growth(j), &s.tube.horizon_hull(j), k % 2 == 1, &mut rng))
                .collect::<Result<_, _>>()?;
            let ctrl = HybridController::new(s.fields[i].clone(), chi.clone(), refs.clone(), &x0, &w, agent.lambda);
            let dist_at = |t: S| signals.iter().map(|d| d.eval(t)).collect::<Vec<_>>();
            let rhs = |t: S, x: &[S]| {
                let x = Point(x.to_vec());
                let d = dist_at(t);
                let k = ctrl.evaluate(t, &x, &d).expect("integrator stays inside the step");
                (&s.fields[i].eval(&x, &d) + &k).0
            };
            let traj = integrate(rhs, x0.coords(), S::zero(), dt, steps);
            let mut out = TrialOutcome {
                seed: ts,
                bounds_ok: true,
                final_ok: true,
                controller_ok: true,
                envelope_ok: true,
                max_bound_excess: f64::NEG_INFINITY,
                final_distance: 0.0,
                max_k: 0.0,
            };
            for (t, x) in traj.times.iter().zip(&traj.states) {
                let x = Point(x.clone());
                let excess = dist_to_box(&x, &own_cell) - growth * *t;
                out.max_bound_excess = out.max_bound_excess.max(excess.as_f64());
                if *t > S::zero() && excess >= eps {
                    out.bounds_ok = false;
                }
                let k = ctrl.evaluate(*t, &x, &dist_at(*t))?.norm();
                out.max_k = out.max_k.max(k.as_f64());
                if k >= agent.v_max + eps {
                    out.controller_ok = false;
                }
                if k > controller_budget(&params, d_i, dt, *t) + S::lit(ENDPOINT_TOL) {
                    out.envelope_ok = false;
                }
            }
            let end = Point(traj.endpoint().to_vec());
            out.final_distance = dist_to_box(&end, &target_cell).as_f64();
            out.final_ok = out.final_distance <= ENDPOINT_TOL;
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let fold = |f: fn(&TrialOutcome) -> f64| outcomes.iter().map(f).fold(0.0f64, f64::max);
    Ok(ConsistencyReport {
        agent: agent.id,
        configuration: cfg.to_vec(),
        target,
        trials,
        seed,
        v_max: agent.v_max.as_f64(),
        max_bound_excess: outcomes.iter().map(|o| o.max_bound_excess).fold(f64::NEG_INFINITY, f64::max),
        max_final_distance: fold(|o| o.final_distance),
        max_k: fold(|o| o.max_k),
        passed: outcomes.iter().all(TrialOutcome::passed),
        outcomes,
    })
}

/// Per-agent result of one realized step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStepReport {
    pub agent: u32,
    pub claimed: CellId,
    /// Cell containing the endpoint, if any.
    pub landed: Option<CellId>,
    /// Distance from the endpoint to the claimed cell (zero inside).
    pub distance: f64,
    /// Distance from the endpoint to the nearest face of the claimed cell.
    pub boundary_distance: f64,
    pub max_k: f64,
    pub v_max: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub from: GlobalConfiguration,
    pub to: GlobalConfiguration,
    pub agents: Vec<AgentStepReport>,
    pub passed: bool,
}

/// One realized step: final states plus the per-agent report and trajectory rows.
#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    pub state: Vec<Point<S>>,
    pub report: StepReport,
    pub rows: Vec<TrajectoryRow>,
}

fn nearest_face_distance<S: Scalar>(x: &Point<S>, b: &Aabb<S>) -> S {
    (0..x.dim())
        .map(|k| (x[k] - b.lower[k]).abs().min((b.upper[k] - x[k]).abs()))
        .fold(S::infinity(), S::min)
}

/// Simulates the coupled system over one step with every agent running its
/// hybrid controller toward a witness point of its claimed cell.
///
/// Claimed cells that are not successors are still attempted, with the target
/// parameter clamped to the admissible input ball, so that corrupted paths
/// fail on landing rather than before simulation.
pub fn realize_step<S: Scalar>(
    abs: &Abstraction<S>,
    from: &[CellId],
    to: &[CellId],
    state: &[Point<S>],
    t0: S,
) -> Result<StepOutcome<S>, ValidationError> {
    let s = &*abs.setup;
    let n_agents = abs.agent_count();
    let eps = s.scenario.numerics.eps_geo;
    for i in 0..n_agents {
        let cell = s.decomps[i].cell(from[i]);
        if dist_to_box(&state[i], &cell) > eps {
            return Err(ValidationError::StartOutsideCell {
                agent: s.scenario.agents[i].id,
                cell: from[i],
                state: state[i].coords().iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    let dt = s.disc.dt;
    let mut ctrls = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let a = &s.scenario.agents[i];
        let cfg = project_configuration(from, i, &s.scenario.graph.neighbors[i]);
        let tr = abs.successors(i, &cfg)?;
        let chi = tr.chi.clone();
        let x_target = abs.witness(i, chi.endpoint(), to[i]);
        let mut w = (&x_target - chi.endpoint()).scale(S::one() / (a.lambda * dt));
        let wn = w.norm();
        if wn > a.v_max {
            w = w.scale(a.v_max / wn);
        }
        let refs = s.scenario.graph.neighbors[i]
            .iter()
            .zip(&cfg[1..])
            .map(|(&j, &l)| s.decomps[j].reference_point(l))
            .collect();
        ctrls.push(HybridController::new(s.fields[i].clone(), chi, refs, &state[i], &w, a.lambda));
    }
    let dims: Vec<usize> = state.iter().map(Point::dim).collect();
    let split = |x: &[S]| -> Vec<Point<S>> {
        let mut off = 0;
        dims.iter()
            .map(|&n| {
                let p = Point(x[off..off + n].to_vec());
                off += n;
                p
            })
            .collect()
    };
    let nb_states = |xs: &[Point<S>], i: usize| -> Vec<Point<S>> {
        s.scenario.graph.neighbors[i].iter().map(|&j| xs[j].clone()).collect()
    };
    let rhs = |t: S, x: &[S]| {
        let xs = split(x);
        let mut out = Vec::with_capacity(x.len());
        for i in 0..n_agents {
            let nb = nb_states(&xs, i);
            let k = ctrls[i].evaluate(t, &xs[i], &nb).expect("integrator stays inside the step");
            out.extend((&s.fields[i].eval_raw(&xs[i], &nb) + &k).0);
        }
        out
    };
    let x0: Vec<S> = state.iter().flat_map(|p| p.0.iter().copied()).collect();
    let traj = integrate(rhs, &x0, S::zero(), dt, s.steps());

    let mut max_k = vec![S::zero(); n_agents];
    let mut rows = Vec::with_capacity(traj.times.len() * n_agents);
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let xs = split(x);
        for i in 0..n_agents {
            let k = ctrls[i].evaluate(*t, &xs[i], &nb_states(&xs, i))?.norm();
            max_k[i] = max_k[i].max(k);
            rows.push(TrajectoryRow {
                t: (t0 + *t).as_f64(),
                agent: s.scenario.agents[i].id,
                x: xs[i].coords().iter().map(|v| v.as_f64()).collect(),
                k_norm: k.as_f64(),
                cell: s.decomps[i].locate(&xs[i], eps).map_or(-1, i64::from),
            });
        }
    }
    let end = split(traj.endpoint());
    let agents: Vec<AgentStepReport> = (0..n_agents)
        .map(|i| {
            let a = &s.scenario.agents[i];
            let cell = s.decomps[i].cell(to[i]);
            let distance = dist_to_box(&end[i], &cell);
            let ok = distance <= S::lit(LANDING_TOL) && max_k[i] < a.v_max;
            AgentStepReport {
                agent: a.id,
                claimed: to[i],
                landed: s.decomps[i].locate(&end[i], S::lit(LANDING_TOL)).ok(),
                distance: distance.as_f64(),
                boundary_distance: nearest_face_distance(&end[i], &cell).as_f64(),
                max_k: max_k[i].as_f64(),
                v_max: a.v_max.as_f64(),
                passed: ok,
            }
        })
        .collect();
    let passed = agents.iter().all(|a| a.passed);
    Ok(StepOutcome {
        state: end,
        report: StepReport { from: from.to_vec(), to: to.to_vec(), agents, passed },
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationReport {
    pub path: Path,
    pub steps: Vec<StepReport>,
    /// `(configuration index, agent id)` of the first failure: the agent's state
    /// at that index is not in its claimed cell, or no transition leaves it.
    pub first_failure: Option<(usize, u32)>,
    pub passed: bool,
}

/// Chains [`realize_step`] along `path`, starting from the scenario's initial states.
pub fn realize_path<S: Scalar>(
    abs: &Abstraction<S>,
    path: &Path,
) -> Result<(RealizationReport, Vec<TrajectoryRow>), ValidationError> {
    let s = &*abs.setup;
    let mut state: Vec<Point<S>> = s.scenario.agents.iter().map(|a| a.x0.clone()).collect();
    let mut steps = Vec::with_capacity(path.len());
    let mut rows = Vec::new();
    let mut first_failure = None;
    for (k, pair) in path.configs.windows(2).enumerate() {
        let t0 = s.disc.dt * S::from_usize_lossy(k);
        let out = match realize_step(abs, &pair[0], &pair[1], &state, t0) {
            Ok(o) => o,
            Err(ValidationError::StartOutsideCell { agent, .. })
            | Err(ValidationError::Abstraction(AbstractionError::NotPreMarked { agent, .. })) => {
                first_failure.get_or_insert((k, agent));
                break;
            }
            Err(e) => return Err(e),
        };
        if !out.report.passed && first_failure.is_none() {
            let bad = out.report.agents.iter().find(|a| !a.passed).expect("a failing agent");
            first_failure = Some((k + 1, bad.agent));
        }
        rows.extend(out.rows);
        steps.push(out.report);
        state = out.state;
        if first_failure.is_some() {
            break;
        }
    }
    if path.configs.len() == 1 {
        for (i, l) in path.configs[0].iter().enumerate() {
            if dist_to_box(&state[i], &s.decomps[i].cell(*l)) > s.scenario.numerics.eps_geo {
                first_failure = Some((0, s.scenario.agents[i].id));
                break;
            }
        }
    }
    Ok((
        RealizationReport { path: path.clone(), steps, passed: first_failure.is_none(), first_failure },
        rows,
    ))
}

/// Sampled estimates of the constants of one agent next to the declared values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAudit {
    pub agent: u32,
    pub l1_estimate: f64,
    pub l1_declared: f64,
    pub l2_estimate: f64,
    pub l2_declared: f64,
    pub m_estimate: f64,
    pub m_declared: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub agents: Vec<AgentAudit>,
}

impl AuditReport {
    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.agents.iter().flat_map(|a| a.warnings.iter())
    }
}

fn uniform_in_ball<S: Scalar, R: Rng>(b: &Ball<S>, rng: &mut R) -> Point<S> {
    let n = b.center.dim();
    loop {
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return Point((0..n).map(|k| b.center[k] + S::lit(p[k]) * b.radius).collect());
        }
    }
}

fn stacked_dist<S: Scalar>(a: &[Point<S>], b: &[Point<S>]) -> S {
    a.iter().zip(b).map(|(x, y)| x.dist(y).powi(2)).sum::<S>().sqrt()
}

/// Difference-quotient maxima of `f_i` over the tube domains, compared with the
/// declared `L1`, `L2` and the derived bound `M`.
pub fn audit_bounds<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
    bounds: &DynamicsBounds<S>,
    samples: usize,
    seed: u64,
) -> AuditReport {
    let agents = (0..scenario.agent_count())
        .into_par_iter()
        .map(|i| {
            let a = &scenario.agents[i];
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
            let own = tube.horizon_hull(i);
            let nb_balls: Vec<Ball<S>> = scenario.graph.neighbors[i].iter().map(|&j| tube.horizon_hull(j)).collect();
            let draw_nb = |rng: &mut ChaCha8Rng| nb_balls.iter().map(|b| uniform_in_ball(b, rng)).collect::<Vec<_>>();
            let (mut l1, mut l2, mut m) = (S::zero(), S::zero(), S::zero());
            for _ in 0..samples {
                let x = uniform_in_ball(&own, &mut rng);
                let y = uniform_in_ball(&own, &mut rng);
                let nx = draw_nb(&mut rng);
                let ny = draw_nb(&mut rng);
                let fx = a.dynamics.eval(&x, &nx);
                m = m.max(fx.norm());
                let dx = x.dist(&y);
                if dx > S::zero() {
                    l2 = l2.max(fx.dist(&a.dynamics.eval(&y, &nx)) / dx);
                }
                let dn = stacked_dist(&nx, &ny);
                if dn > S::zero() {
                    l1 = l1.max(fx.dist(&a.dynamics.eval(&x, &ny)) / dn);
                }
            }
            let tol = S::one() + S::lit(1e-9);
            let mut warnings = Vec::new();
            for (name, est, decl) in [("L1", l1, a.l1), ("L2", l2, a.l2), ("M", m, bounds.m[i])] {
                if est > decl * tol + S::lit(1e-12) {
                    warnings.push(format!("agent {}: sampled {name} = {est} exceeds declared {decl}", a.id));
                }
            }
            AgentAudit {
                agent: a.id,
                l1_estimate: l1.as_f64(),
                l1_declared: a.l1.as_f64(),
                l2_estimate: l2.as_f64(),
                l2_declared: a.l2.as_f64(),
                m_estimate: m.as_f64(),
                m_declared: bounds.m[i].as_f64(),
                warnings,
            }
        })
        .collect();
    AuditReport { agents }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeAudit {
    pub trials: usize,
    pub seed: u64,
    /// Largest `|x_i(t) - c_i| - radius_i(t)` seen, over all agents and nodes.
    pub max_excess: f64,
    /// `(trial, agent id, t)` of every node outside the tube.
    pub violations: Vec<(usize, u32, f64)>,
}

/// Simulates the free system under random piecewise-constant admissible inputs
/// with `pieces` constant segments over the horizon, checking `x_i(t) ∈ R_i(t)` at
/// every integrator node.
pub fn audit_tube<S: Scalar>(
    scenario: &Scenario<S>,
    tube: &ReachTube<S>,
    trials: usize,
    pieces: usize,
    seed: u64,
) -> TubeAudit {
    let dims: Vec<usize> = scenario.agents.iter().map(|a| a.n).collect();
    let n_agents = dims.len();
    let steps_per_piece = (scenario.numerics.integrator_divisor / pieces.max(1)).max(4);
    let tol = S::lit(1e-9);
    let results: Vec<(S, Vec<(usize, u32, f64)>)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, trial));
            let mut x: Vec<Point<S>> = scenario.agents.iter().map(|a| a.x0.clone()).collect();
            let h = scenario.horizon / S::from_usize_lossy(pieces.max(1));
            let mut excess = S::neg_infinity();
            let mut bad = Vec::new();
            for p in 0..pieces.max(1) {
                let inputs: Vec<Point<S>> = scenario
                    .agents
                    .iter()
                    .map(|a| {
                        let u = uniform_in_ball(&Ball { center: Point::zeros(a.n), radius: a.v_max }, &mut rng);
                        // push some inputs to the boundary of the admissible ball
                        if rng.gen_bool(0.5) && u.norm() > S::zero() {
                            u.scale(a.v_max / u.norm())
                        } else {
                            u
                        }
                    })
                    .collect();
                let split = |v: &[S]| {
                    let mut off = 0;
                    dims.iter()
                        .map(|&n| {
                            let q = Point(v[off..off + n].to_vec());
                            off += n;
                            q
                        })
                        .collect::<Vec<_>>()
                };
                let rhs = |_t: S, v: &[S]| {
                    let xs = split(v);
                    let mut out = Vec::with_capacity(v.len());
                    for i in 0..n_agents {
                        let nb: Vec<Point<S>> = scenario.graph.neighbors[i].iter().map(|&j| xs[j].clone()).collect();
                        out.extend((&scenario.agents[i].dynamics.eval(&xs[i], &nb) + &inputs[i]).0);
                    }
                    out
                };
                let t0 = h * S::from_usize_lossy(p);
                let flat: Vec<S> = x.iter().flat_map(|q| q.0.iter().copied()).collect();
                let traj = integrate(rhs, &flat, t0, t0 + h, steps_per_piece);
                for (t, v) in traj.times.iter().zip(&traj.states) {
                    for (i, xi) in split(v).iter().enumerate() {
                        let b = tube.at(i, *t);
                        let e = xi.dist(&b.center) - b.radius;
                        excess = excess.max(e);
                        if e > tol {
                            bad.push((trial, scenario.agents[i].id, t.as_f64()));
                        }
                    }
                }
                x = split(traj.endpoint());
            }
            (excess, bad)
        })
        .collect();
    TubeAudit {
        trials,
        seed,
        max_excess: results.iter().map(|r| r.0.as_f64()).fold(f64::NEG_INFINITY, f64::max),
        violations: results.into_iter().flat_map(|r| r.1).collect(),
    }
}

/// Re-locates every realized endpoint; equals the claimed path when realization passed.
pub fn landed_sequence(report: &RealizationReport) -> Vec<Vec<Option<CellId>>> {
    report.steps.iter().map(|s| s.agents.iter().map(|a| a.landed).collect()).collect()
}
