#![allow(dead_code)]

use std::sync::Arc;

use netabs::abstraction::Abstraction;
use netabs::pipeline::Setup;
use netabs::scenario::{load_scenario, Scenario};

pub fn scenario_source(name: &str) -> String {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn scenario(name: &str) -> Scenario<f64> {
    load_scenario(&scenario_source(name)).expect("bundled scenario parses")
}

pub fn abstraction(setup: Setup<f64>) -> Abstraction<f64> {
    Abstraction::new(Arc::new(setup))
}

/// One 1D agent with `f = 0`, `v_max = 1`, `lambda = 0.5` on horizon `T = ell * dt`.
pub fn decoupled_source(horizon: f64) -> String {
    format!(
        r#"{{"agents":[{{"id":0,"n":1,"dynamics":{{"kind":"zero"}},"v_max":1.0,"lambda":0.5,"L1":0.0,"L2":0.0,"x0":[0.0]}}],"horizon":{horizon}}}"#
    )
}

/// Ring of `n` 1D consensus agents with unit ratios.
pub fn ring_source(n: usize, horizon: f64) -> String {
    let agents: Vec<String> = (0..n)
        .map(|i| {
            format!(
                r#"{{"id":{i},"n":1,"dynamics":{{"kind":"consensus","gain":0.5}},"v_max":1.0,"lambda":0.5,"L1":0.5,"L2":0.5,"x0":[{}]}}"#,
                0.02 * i as f64
            )
        })
        .collect();
    let edges: Vec<String> = (0..n)
        .map(|i| format!(r#"{{"from":{},"to":{i},"mu":1.0}}"#, (i + 1) % n))
        .collect();
    format!(r#"{{"agents":[{}],"edges":[{}],"horizon":{horizon}}}"#, agents.join(","), edges.join(","))
}

/// Chain `0 -> 1 -> ... -> n-1` with ratio `mu` on every edge and mixed dimensions.
pub fn chain_source(n: usize, mu: f64, horizon: f64) -> String {
    let agents: Vec<String> = (0..n)
        .map(|i| {
            let dynamics = if i == 0 { r#"{"kind":"zero"}"# } else { r#"{"kind":"consensus"}"# };
            let (l1, l2) = if i == 0 { (0.0, 0.0) } else { (1.0, 1.0) };
            format!(
                r#"{{"id":{i},"n":2,"dynamics":{dynamics},"v_max":{},"lambda":0.4,"L1":{l1},"L2":{l2},"x0":[{},0.0]}}"#,
                1.0 + 0.25 * i as f64,
                0.03 * i as f64
            )
        })
        .collect();
    let edges: Vec<String> = (1..n).map(|i| format!(r#"{{"from":{},"to":{i},"mu":{mu}}}"#, i - 1)).collect();
    format!(r#"{{"agents":[{}],"edges":[{}],"horizon":{horizon}}}"#, agents.join(","), edges.join(","))
}
