mod common;

use netabs::dynamics::{integrate, target_parameter, HybridController};
use netabs::geometry::Point;
use netabs::grid::project_configuration;
use netabs::pipeline::Setup;
use netabs::reach::compute_reach_tube;
use netabs::scenario::load_scenario;
use netabs::validation::{
    audit_bounds, check_consistency, landed_sequence, realize_path, realize_step, ValidationError,
};

use common::{abstraction, decoupled_source, scenario};

#[test]
fn decoupled_transitions_land_on_the_witness() {
    let setup = Setup::manual(load_scenario(&decoupled_source(0.5)).unwrap(), 5, 0.2, vec![0.04]).unwrap();
    let abs = abstraction(setup);
    let l0 = abs.setup.initial_cell(0);
    let tr = abs.successors(0, &[l0]).unwrap();
    for &target in &tr.targets {
        let rep = check_consistency(&abs, 0, &[l0], target, 50, 3).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.max_k < 1.0);
        // with f = 0 the endpoint is the witness whatever the start state
        let x_start = abs.setup.decomps[0].cell(l0).lower.clone();
        let out = realize_step(&abs, &[l0], &[target], &[x_start], 0.0).unwrap();
        let witness = abs.witness(0, tr.chi.endpoint(), target);
        assert!(out.state[0].dist(&witness) < 1e-12);
        assert!(out.report.passed);
    }
}

#[test]
fn certified_consensus_passes_with_analytic_envelope() {
    let abs = abstraction(Setup::build(scenario("consensus2")).unwrap());
    let g = abs.initial_configurations().remove(0);
    for i in 0..2 {
        let cfg = project_configuration(&g, i, &abs.setup.scenario.graph.neighbors[i]);
        for &t in &abs.successors(i, &cfg).unwrap().targets {
            let rep = check_consistency(&abs, i, &cfg, t, 100, 21).unwrap();
            assert!(rep.passed);
            assert!(rep.outcomes.iter().all(|o| o.envelope_ok));
            assert!(rep.max_bound_excess <= 0.0);
        }
    }
}

#[test]
fn consistency_reports_replay_from_their_seed() {
    let abs = abstraction(Setup::build(scenario("consensus2d")).unwrap());
    let g = abs.initial_configurations().remove(0);
    let cfg = project_configuration(&g, 1, &abs.setup.scenario.graph.neighbors[1]);
    let t = abs.successors(1, &cfg).unwrap().targets[2];
    let a = check_consistency(&abs, 1, &cfg, t, 30, 99).unwrap();
    let b = check_consistency(&abs, 1, &cfg, t, 30, 99).unwrap();
    assert_eq!(a, b);
    let c = check_consistency(&abs, 1, &cfg, t, 30, 100).unwrap();
    assert_ne!(a.outcomes, c.outcomes);
}

#[test]
fn non_successor_targets_are_refused() {
    let abs = abstraction(Setup::build(scenario("consensus2")).unwrap());
    let g = abs.initial_configurations().remove(0);
    let cfg = project_configuration(&g, 0, &abs.setup.scenario.graph.neighbors[0]);
    let targets = abs.successors(0, &cfg).unwrap().targets.clone();
    let far = (0..abs.setup.decomps[0].len() as u32).find(|c| !targets.contains(c)).unwrap();
    assert!(matches!(
        check_consistency(&abs, 0, &cfg, far, 5, 0),
        Err(ValidationError::NotASuccessor { agent: 0, .. })
    ));
}

#[test]
fn start_outside_the_cell_is_a_precondition_error() {
    let abs = abstraction(Setup::build(scenario("chain3")).unwrap());
    let g = abs.initial_configurations().remove(0);
    let next = abs.post_operator(&g).unwrap().remove(0);
    let mut x: Vec<Point<f64>> = abs.setup.scenario.agents.iter().map(|a| a.x0.clone()).collect();
    x[2] = x[2].axpy(1.0, &Point(vec![abs.setup.decomps[2].width]));
    assert!(matches!(
        realize_step(&abs, &g, &next, &x, 0.0),
        Err(ValidationError::StartOutsideCell { agent: 2, .. })
    ));
}

#[test]
fn empty_path_realizes_trivially() {
    let abs = abstraction(Setup::build(scenario("chain3")).unwrap());
    let layers = abs.build_layers(0).unwrap();
    let p = abs.sample_path(&layers, 0, 0).unwrap();
    let (rep, rows) = realize_path(&abs, &p).unwrap();
    assert!(rep.passed && rep.steps.is_empty() && rows.is_empty());
}

#[test]
fn landed_cells_reproduce_the_path() {
    let abs = abstraction(Setup::build(scenario("consensus2")).unwrap());
    let ell = abs.setup.disc.ell;
    let layers = abs.build_layers(ell).unwrap();
    for seed in 0..10 {
        let p = abs.sample_path(&layers, ell, seed).unwrap();
        let (rep, rows) = realize_path(&abs, &p).unwrap();
        assert!(rep.passed);
        let landed = landed_sequence(&rep);
        for (k, cells) in landed.iter().enumerate() {
            let expect: Vec<Option<u32>> = p.configs[k + 1].iter().map(|&c| Some(c)).collect();
            assert_eq!(cells, &expect);
        }
        assert_eq!(rows.len(), ell * (abs.setup.steps() + 1) * 2);
        assert!(rows.iter().all(|r| r.k_norm < 1.0));
    }
}

#[test]
fn coupled_simulation_matches_replay_against_recorded_neighbor() {
    // agent 0 of the chain has f = 0, so its closed loop is a straight line and
    // can be replayed exactly as a disturbance for agent 1
    let abs = abstraction(Setup::build(scenario("chain3")).unwrap());
    let s = &abs.setup;
    let g = abs.initial_configurations().remove(0);
    let next = abs.post_operator(&g).unwrap().pop().unwrap();
    let x0: Vec<Point<f64>> = s.scenario.agents.iter().map(|a| a.x0.clone()).collect();
    let out = realize_step(&abs, &g, &next, &x0, 0.0).unwrap();
    let dt = s.disc.dt;
    let (a0, a0_end) = (x0[0].clone(), out.state[0].clone());
    let neighbor = move |t: f64| a0.axpy(t / dt, &(&a0_end - &a0));

    let cfg = project_configuration(&g, 1, &s.scenario.graph.neighbors[1]);
    let tr = abs.successors(1, &cfg).unwrap();
    let witness = abs.witness(1, tr.chi.endpoint(), next[1]);
    let a = &s.scenario.agents[1];
    let w = target_parameter(&witness, tr.chi.endpoint(), a.lambda, dt, a.v_max).unwrap();
    let refs = vec![s.decomps[0].reference_point(cfg[1])];
    let ctrl = HybridController::new(s.fields[1].clone(), tr.chi.clone(), refs, &x0[1], &w, a.lambda);
    let rhs = |t: f64, x: &[f64]| {
        let x = Point(x.to_vec());
        let d = [neighbor(t)];
        (&s.fields[1].eval_raw(&x, &d) + &ctrl.evaluate(t, &x, &d).unwrap()).0
    };
    let replay = integrate(rhs, x0[1].coords(), 0.0, dt, s.steps());
    let coupled: Vec<&Vec<f64>> = out.rows.iter().filter(|r| r.agent == 1).map(|r| &r.x).collect();
    assert_eq!(coupled.len(), replay.states.len());
    for (a, b) in coupled.iter().zip(&replay.states) {
        assert!((a[0] - b[0]).abs() < 1e-9);
    }
}

#[test]
fn audit_of_zero_dynamics_is_zero() {
    let s = scenario("decoupled1d");
    let (tube, bounds) = compute_reach_tube(&s).unwrap();
    let rep = audit_bounds(&s, &tube, &bounds, 500, 1);
    let a = &rep.agents[0];
    assert_eq!((a.l1_estimate, a.l2_estimate, a.m_estimate), (0.0, 0.0, 0.0));
    assert_eq!(rep.warnings().count(), 0);
}

fn linear_scenario(l2: f64) -> netabs::scenario::Scenario<f64> {
    let src = format!(
        r#"{{"agents":[{{"id":0,"n":2,"dynamics":{{"kind":"linear","own":[[-2.0,1.0],[1.0,-2.0]]}},"v_max":1.0,"lambda":0.5,"L1":0.0,"L2":{l2},"x0":[0.5,0.1]}}],"horizon":0.2}}"#
    );
    load_scenario(&src).unwrap()
}

#[test]
fn audit_recovers_the_operator_norm() {
    // symmetric with eigenvalues -1 and -3
    let s = linear_scenario(3.0);
    let (tube, bounds) = compute_reach_tube(&s).unwrap();
    let rep = audit_bounds(&s, &tube, &bounds, 4000, 2);
    let est = rep.agents[0].l2_estimate;
    assert!((est - 3.0).abs() / 3.0 < 0.02, "estimate {est}");
    assert!(est <= 3.0 + 1e-12);
    assert_eq!(rep.warnings().count(), 0);
}

#[test]
fn audit_flags_an_understated_constant() {
    let s = linear_scenario(1.0);
    let (tube, bounds) = compute_reach_tube(&s).unwrap();
    let rep = audit_bounds(&s, &tube, &bounds, 2000, 2);
    let w: Vec<&String> = rep.warnings().collect();
    assert_eq!(w.len(), 1);
    assert!(w[0].contains("L2"));
}
