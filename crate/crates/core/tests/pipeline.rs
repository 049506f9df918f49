mod common;

use std::sync::Arc;

use netabs::abstraction::Abstraction;
use netabs::scenario::load_scenario;
use netabs::{Error, ErrorClass, Setup32, Setup64};

use common::scenario_source;

#[test]
fn single_precision_pipeline_agrees_with_double() {
    let src = scenario_source("chain3");
    let s64 = Setup64::build(load_scenario(&src).unwrap()).unwrap();
    let s32 = Setup32::build(load_scenario(&src).unwrap()).unwrap();
    assert_eq!(s32.disc.ell, s64.disc.ell);
    assert!(s32.disc.is_certified());
    for i in 0..3 {
        assert!((f64::from(s32.disc.d_max[i]) - s64.disc.d_max[i]).abs() < 1e-5);
        assert_eq!(s32.decomps[i].len(), s64.decomps[i].len());
    }
    let a32 = Abstraction::new(Arc::new(s32));
    let a64 = Abstraction::new(Arc::new(s64));
    let ell = a64.setup.disc.ell;
    assert_eq!(a32.build_layers(ell).unwrap().sizes(), a64.build_layers(ell).unwrap().sizes());
}

#[test]
fn failures_map_to_error_classes() {
    let bad = load_scenario::<f64>(r#"{"agents":[],"horizon":1.0}"#).unwrap_err();
    assert_eq!(Error::from(bad).class(), ErrorClass::Config);
    // a fast linear field makes the tube fixed point diverge over a long horizon
    let src = r#"{"agents":[{"id":0,"n":1,"dynamics":{"kind":"linear","own":[[-1.5]]},"v_max":1.0,"lambda":0.5,"L1":0.0,"L2":1.5,"x0":[0.0]}],"horizon":3.0}"#;
    let err = Setup64::build(load_scenario(src).unwrap()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Infeasible, "{err}");
}
