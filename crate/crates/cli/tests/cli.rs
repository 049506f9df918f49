use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netabs::abstraction::AbstractionExport;
use netabs::discretization::Certificate;
use netabs::persistence::{layers_from_binary, load, sha256_hex, to_bytes};
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn netabs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netabs"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("NETABS_SCENARIO")
        .output()
        .expect("binary runs")
}

fn run(out: &Path, scenario_name: &str, args: &[&str]) -> Output {
    let path = scenario(scenario_name);
    let mut all = vec!["--scenario", path.to_str().unwrap()];
    all.extend_from_slice(args);
    netabs(out, &all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn params_writes_a_loadable_certificate() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "chain3", &["params"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("d_max < term1"));
    let cert: Certificate = load(&dir.path().join("certificate.json"), "certificate").unwrap();
    assert!(cert.certified);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest-params.json")).unwrap()).unwrap();
    let source = fs::read(scenario("chain3")).unwrap();
    assert_eq!(manifest["scenario_sha256"], sha256_hex(&source));
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["ell"], 2);
}

#[test]
fn cycle_violation_is_printed() {
    let dir = TempDir::new().unwrap();
    let zero = r#"{"id":ID,"n":1,"dynamics":{"kind":"zero"},"v_max":1.0,"lambda":0.5,"L1":0.0,"L2":0.0,"x0":[0.0]}"#;
    let body = format!(
        r#"{{"agents":[{},{}],"edges":[{{"from":0,"to":1,"mu":0.5}},{{"from":1,"to":0,"mu":0.5}}],"horizon":0.5}}"#,
        zero.replace("ID", "0"),
        zero.replace("ID", "1")
    );
    let p = write_scenario(dir.path(), &body);
    let o = netabs(dir.path(), &["--scenario", p.to_str().unwrap(), "params"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cycle [0, 1, 0] has ratio product 0.25"), "{}", stderr(&o));
}

#[test]
fn infeasible_run_names_the_binding_inequality() {
    // a diameter floor above anything the bounds allow
    let dir = TempDir::new().unwrap();
    let body = fs::read_to_string(scenario("consensus2")).unwrap().replace(r#""seed": 7"#, r#""seed": 7, "d_max_floor": 1.0"#);
    let p = write_scenario(dir.path(), &body);
    let o = netabs(dir.path(), &["--scenario", p.to_str().unwrap(), "params"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("binding inequality `d_max < term"), "{err}");
}

#[test]
fn configuration_errors_exit_with_four() {
    let dir = TempDir::new().unwrap();
    let o = netabs(dir.path(), &["--scenario", "/nonexistent/scenario.json", "params"]);
    assert_eq!(o.status.code(), Some(4));
    let p = write_scenario(dir.path(), "{\"agents\": []");
    let o = netabs(dir.path(), &["--scenario", p.to_str().unwrap(), "abstract"]);
    assert_eq!(o.status.code(), Some(4));
    let p = write_scenario(dir.path(), r#"{"agents": [], "horizon": 1.0}"#);
    let o = netabs(dir.path(), &["--scenario", p.to_str().unwrap(), "abstract"]);
    assert_eq!(o.status.code(), Some(4));
    let o = netabs(dir.path(), &["params"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn scenario_can_come_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_netabs"))
        .args(["--out", dir.path().to_str().unwrap(), "params"])
        .env("NETABS_SCENARIO", scenario("decoupled1d"))
        .env("NETABS_THETA", "0.25")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest-params.json")).unwrap()).unwrap();
    assert_eq!(manifest["theta"], 0.25);
}

#[test]
fn decoupled_layers_grow_by_two() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "decoupled1d", &["abstract"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sizes: Vec<usize> = stdout(&o)
        .lines()
        .filter_map(|l| l.strip_prefix("layer "))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(sizes.len() > 3);
    for (k, n) in sizes.iter().enumerate() {
        assert_eq!(*n, 2 * k + 1);
    }
}

#[test]
fn structured_exports_are_byte_identical_across_runs_and_thread_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run(a.path(), "consensus2d", &["--jobs", "1", "export", "--format", "structured"]).status.success());
    assert!(run(b.path(), "consensus2d", &["--jobs", "3", "export", "--format", "structured"]).status.success());
    for name in ["abstraction.json", "layers.bin"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn structured_import_reproduces_the_export() {
    let dir = TempDir::new().unwrap();
    assert!(run(dir.path(), "chain3", &["export", "--format", "structured"]).status.success());
    let path = dir.path().join("abstraction.json");
    let bytes = fs::read(&path).unwrap();
    let export: AbstractionExport<f64> = load(&path, "abstraction").unwrap();
    assert_eq!(to_bytes(&export, "abstraction").unwrap(), bytes);
    let (layers, agents) = layers_from_binary(&fs::read(dir.path().join("layers.bin")).unwrap()).unwrap();
    assert_eq!(agents, 3);
    assert_eq!(layers, export.layers);
    assert_eq!(layers.sizes(), vec![1, 27, 125]);
}

#[test]
fn csv_columns_match_the_documentation() {
    let dir = TempDir::new().unwrap();
    assert!(run(dir.path(), "consensus2", &["export", "--format", "csv"]).status.success());
    let header = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("cells.csv"), "agent,cell,lattice,pre,cover,lower,upper,center");
    assert_eq!(header("transitions.csv"), "agent,configuration,target,chi_end");
    assert_eq!(header("layers.csv"), "layer,index,predecessor,configuration");
    let layers = fs::read_to_string(dir.path().join("layers.csv")).unwrap();
    // 1 + 9 + 25 + 46 rows plus the header
    assert_eq!(layers.lines().count(), 82);
    for line in layers.lines().skip(1) {
        assert_eq!(line.split(',').count(), 4);
    }
}

#[test]
fn dot_output_is_well_formed() {
    let dir = TempDir::new().unwrap();
    assert!(run(dir.path(), "chain3", &["export", "--format", "dot"]).status.success());
    for name in ["product.dot", "ts_0.dot", "ts_1.dot", "ts_2.dot"] {
        let dot = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(dot.starts_with("digraph "));
        assert!(dot.trim_end().ends_with('}'));
        assert_eq!(dot.matches('{').count(), dot.matches('}').count());
        assert_eq!(dot.matches('"').count() % 2, 0);
    }
    let product = fs::read_to_string(dir.path().join("product.dot")).unwrap();
    // every transition between consecutive layers is an edge: 27 from the root, 125 into the last layer at least
    assert!(product.matches(" -> ").count() >= 27 + 125);
}

#[test]
fn plan_samples_full_length_paths() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "chain3", &["plan", "--paths", "4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("path ")).count(), 4);
    let paths: Vec<netabs::abstraction::Path> = load(&dir.path().join("paths.json"), "paths").unwrap();
    assert!(paths.iter().all(|p| p.len() == 2));
}

#[test]
fn certified_scenario_validates_and_replays() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["--seed", "5", "validate", "--paths", "4", "--trials", "20"];
    let o = run(a.path(), "chain3", &args);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("0 violations"));
    assert!(run(b.path(), "chain3", &args).status.success());
    for name in ["validation.json", "trajectories.csv"] {
        assert!(fs::read(a.path().join(name)).unwrap() == fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn scaled_diameters_surface_failures() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "consensus2", &["--scale-diameters", "3", "validate", "--paths", "5", "--trials", "100"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stderr(&o).contains("certificate no longer holds"));
    assert!(!stdout(&o).contains(" 0 violations"));
    let o = run(dir.path(), "consensus2", &["--scale-diameters", "3", "params"]);
    assert_eq!(o.status.code(), Some(2));
}
