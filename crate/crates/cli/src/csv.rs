//! Flat CSV views of an abstraction for external plotting and inspection.

use std::fmt::Write as _;

use netabs::abstraction::{Abstraction, Layers};

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// `agent,cell,lattice,pre,cover,lower,upper,center`; vector columns are `;`-separated.
pub fn cells(abs: &Abstraction<f64>) -> String {
    let mut out = String::from("agent,cell,lattice,pre,cover,lower,upper,center\n");
    for d in &abs.setup.decomps {
        for c in 0..d.len() as u32 {
            let b = d.cell(c);
            let _ = writeln!(
                out,
                "{},{c},{},{},{},{},{},{}",
                d.agent,
                join(d.lattice(c), ";"),
                u8::from(d.in_pre(c)),
                u8::from(d.in_cover(c)),
                join(b.lower.coords(), ";"),
                join(b.upper.coords(), ";"),
                join(d.reference_point(c).coords(), ";"),
            );
        }
    }
    out
}

/// `agent,configuration,target,chi_end`, one row per materialized successor.
pub fn transitions(abs: &Abstraction<f64>) -> String {
    let mut out = String::from("agent,configuration,target,chi_end\n");
    for ts in &abs.systems {
        let id = abs.setup.scenario.agents[ts.agent].id;
        for (cfg, t) in ts.transitions() {
            for target in &t.targets {
                let _ = writeln!(out, "{id},{},{target},{}", join(&cfg, ";"), join(t.chi.endpoint().coords(), ";"));
            }
        }
    }
    out
}

/// `layer,index,predecessor,configuration`; the predecessor is empty in layer 0.
pub fn layers(layers: &Layers) -> String {
    let mut out = String::from("layer,index,predecessor,configuration\n");
    for (k, layer) in layers.layers.iter().enumerate() {
        for (m, cfg) in layer.iter().enumerate() {
            let pred = if k == 0 { String::new() } else { layers.predecessors[k - 1][m].to_string() };
            let _ = writeln!(out, "{k},{m},{pred},{}", join(cfg, ";"));
        }
    }
    out
}
