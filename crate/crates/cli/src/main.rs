//! `netabs`: command-line front end for building and checking network abstractions.

mod csv;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use netabs::abstraction::{Abstraction, AbstractionExport, Layers, Path};
use netabs::discretization::DiscretizationError;
use netabs::dynamics::trajectory_csv;
use netabs::grid::project_configuration;
use netabs::persistence::{self, layers_to_binary, sha256_hex, to_bytes};
use netabs::pipeline::Setup;
use netabs::scenario::{Scenario, ScenarioConfig};
use netabs::validation::{audit_bounds, check_consistency, realize_path, trial_seed, ConsistencyReport, RealizationReport};
use netabs::{Error, ErrorClass};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_CONFIG: u8 = 4;

/// Transitions checked by `validate` beyond those on sampled paths.
const CONSISTENCY_CHECKS: usize = 64;

#[derive(Parser, Debug)]
#[command(name = "netabs", version, about = "Finite abstractions of coupled multi-agent systems")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Each can also be set through a
/// `NETABS_`-prefixed environment variable.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long, global = true, env = "NETABS_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long, global = true, env = "NETABS_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "NETABS_JOBS")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "NETABS_OUT", default_value = "netabs-out")]
    out: PathBuf,
    /// Safety factor applied to the time-step bound.
    #[arg(long, global = true, env = "NETABS_THETA")]
    theta: Option<f64>,
    /// Relative margin kept inside each open interval.
    #[arg(long, global = true, env = "NETABS_MARGIN")]
    margin: Option<f64>,
    /// Multiplies every solved cell diameter, voiding the certificate when above one.
    #[arg(long, global = true, env = "NETABS_SCALE_DIAMETERS")]
    scale_diameters: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve and print the discretization certificate.
    Params,
    /// Build the transition systems and the reachable layers.
    Abstract,
    /// Sample product paths of full length.
    Plan {
        #[arg(long, env = "NETABS_PATHS", default_value_t = 10)]
        paths: usize,
    },
    /// Disturbance-sampled consistency checks and closed-loop path realization.
    Validate {
        #[arg(long, env = "NETABS_PATHS", default_value_t = 20)]
        paths: usize,
        /// Disturbance trials per checked transition.
        #[arg(long, env = "NETABS_TRIALS", default_value_t = 100)]
        trials: usize,
    },
    /// Write the abstraction in one format.
    Export {
        #[arg(long, value_enum, env = "NETABS_FORMAT")]
        format: Format,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Dot,
    Csv,
    Structured,
}

/// A failed run: message and process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Infeasible => EXIT_INFEASIBLE,
            ErrorClass::Validation => EXIT_VALIDATION,
        };
        let message = match &e {
            Error::Discretization(DiscretizationError::Cycle(cycles)) => {
                let mut m = String::from("cycle condition violated:");
                for c in cycles {
                    m.push_str(&format!("\n  cycle {:?} has ratio product {}", c.cycle, c.product));
                }
                m
            }
            Error::Discretization(DiscretizationError::Infeasible { agent, inequality, detail }) => {
                format!("infeasible: binding inequality `{inequality}` for agent {agent} ({detail})")
            }
            other => other.to_string(),
        };
        Failure { code, message }
    }
}

impl From<netabs::abstraction::AbstractionError> for Failure {
    fn from(e: netabs::abstraction::AbstractionError) -> Self {
        Error::from(e).into()
    }
}

impl From<netabs::persistence::PersistenceError> for Failure {
    fn from(e: netabs::persistence::PersistenceError) -> Self {
        Error::from(e).into()
    }
}

/// Everything needed to reproduce a run. Timings make it differ between runs,
/// so it lives apart from the structured outputs.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    scenario: String,
    scenario_sha256: String,
    tool_version: String,
    schema_version: u32,
    seed: u64,
    jobs: usize,
    theta: Option<f64>,
    margin: f64,
    scale_diameters: Option<f64>,
    dt: f64,
    ell: usize,
    tau: f64,
    d_max: Vec<f64>,
    certified: bool,
    timings_ms: BTreeMap<String, f64>,
    outputs: Vec<String>,
    finished_unix_ms: u128,
}

/// State threaded through one invocation.
struct Run {
    common: Common,
    command: String,
    source_hash: String,
    seed: u64,
    jobs: usize,
    timings: BTreeMap<String, f64>,
    outputs: Vec<String>,
}

impl Run {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.common.out)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", self.common.out.display())))?;
        let path = self.common.out.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(path.display().to_string());
        Ok(path)
    }

    fn archive<T: Serialize>(&mut self, name: &str, kind: &str, value: &T) -> Result<PathBuf, Failure> {
        let bytes = to_bytes(value, kind)?;
        self.write(name, &bytes)
    }

    fn finish(mut self, setup: Option<&Setup<f64>>) -> Result<(), Failure> {
        let scenario = self.common.scenario.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let manifest = RunManifest {
            command: self.command.clone(),
            scenario,
            scenario_sha256: self.source_hash.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: persistence::SCHEMA_VERSION,
            seed: self.seed,
            jobs: self.jobs,
            theta: setup.and_then(|s| s.disc.theta),
            margin: setup.map_or(0.0, |s| s.scenario.numerics.margin),
            scale_diameters: self.common.scale_diameters,
            dt: setup.map_or(0.0, |s| s.disc.dt),
            ell: setup.map_or(0, |s| s.disc.ell),
            tau: setup.map_or(0.0, |s| s.disc.tau),
            d_max: setup.map_or_else(Vec::new, |s| s.disc.d_max.clone()),
            certified: setup.is_some_and(|s| s.disc.is_certified()),
            timings_ms: std::mem::take(&mut self.timings),
            outputs: std::mem::take(&mut self.outputs),
            finished_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::config(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.common.out.join(format!("manifest-{}.json", self.command));
        fs::create_dir_all(&self.common.out).map_err(|e| Failure::config(e.to_string()))?;
        fs::write(&path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
    }
}

fn load(common: &Common) -> Result<(Scenario<f64>, String), Failure> {
    let path = common.scenario.as_ref().ok_or_else(|| Failure::config("no scenario given (--scenario or NETABS_SCENARIO)"))?;
    let source =
        fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ScenarioConfig<f64> =
        serde_json::from_str(&source).map_err(|e| Failure::config(format!("malformed scenario document: {e}")))?;
    if let Some(seed) = common.seed {
        config.numerics.seed = seed;
    }
    if let Some(theta) = common.theta {
        config.numerics.theta = theta;
    }
    if let Some(margin) = common.margin {
        config.numerics.margin = margin;
    }
    let scenario = Scenario::from_config(config).map_err(Error::from)?;
    Ok((scenario, sha256_hex(source.as_bytes())))
}

fn build_setup(run: &mut Run, scenario: Scenario<f64>) -> Result<Setup<f64>, Failure> {
    let setup = run.timed("discretization", || Setup::build(scenario))?;
    match run.common.scale_diameters {
        Some(f) if f.is_nan() || f <= 0.0 => Err(Failure::config(format!("--scale-diameters must be positive, got {f}"))),
        Some(f) => {
            let scaled = setup.with_scaled_diameters(f)?;
            if !scaled.disc.is_certified() {
                eprintln!("warning: diameters scaled by {f}; the certificate no longer holds");
            }
            Ok(scaled)
        }
        None => Ok(setup),
    }
}

fn layers(run: &mut Run, abs: &Abstraction<f64>) -> Result<Layers, Failure> {
    let ell = abs.setup.disc.ell;
    let layers = run.timed("layers", || abs.build_layers(ell))?;
    if let Some(why) = &layers.truncated {
        eprintln!("warning: {why}");
    }
    if abs.setup.disc.is_certified() {
        if let Some(k) = layers.layers.iter().position(Vec::is_empty) {
            return Err(Failure::validation(format!("layer {k} is empty under a certified discretization")));
        }
    }
    Ok(layers)
}

fn sample(abs: &Abstraction<f64>, layers: &Layers, count: usize) -> Result<Vec<Path>, Failure> {
    let m = layers.layers.len() - 1;
    let seed = abs.setup.scenario.numerics.seed;
    Ok((0..count).map(|k| abs.sample_path(layers, m, trial_seed(seed, k))).collect::<Result<_, _>>()?)
}

fn cmd_params(run: &mut Run, scenario: Scenario<f64>) -> Result<Setup<f64>, Failure> {
    let setup = build_setup(run, scenario)?;
    let d = &setup.disc;
    println!("dt = {}  ell = {}  tau = {}", d.dt, d.ell, d.tau);
    for (a, dm) in setup.scenario.agents.iter().zip(&d.d_max) {
        println!("agent {}: d_max = {dm}", a.id);
    }
    print!("{}", d.certificate.render());
    run.archive("certificate.json", "certificate", &d.certificate)?;
    if !d.is_certified() {
        let first = d.certificate.failures().next().map_or(String::new(), |e| e.inequality.clone());
        return Err(Failure { code: EXIT_INFEASIBLE, message: format!("certificate fails; first failing inequality `{first}`") });
    }
    Ok(setup)
}

fn cmd_abstract(run: &mut Run, abs: &Abstraction<f64>) -> Result<(), Failure> {
    let layers = layers(run, abs)?;
    for (k, n) in layers.sizes().iter().enumerate() {
        println!("layer {k}: {n} configurations");
    }
    write_structured(run, abs, &layers)?;
    write_dot(run, abs, &layers)?;
    Ok(())
}

fn cmd_plan(run: &mut Run, abs: &Abstraction<f64>, count: usize) -> Result<(), Failure> {
    let layers = layers(run, abs)?;
    let paths = run.timed("sampling", || sample(abs, &layers, count))?;
    for (k, p) in paths.iter().enumerate() {
        println!("path {k}: {:?}", p.configs);
    }
    run.archive("paths.json", "paths", &paths)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ValidationSummary {
    audit_warnings: Vec<String>,
    consistency: Vec<ConsistencyReport>,
    realizations: Vec<RealizationReport>,
    consistency_failures: usize,
    realization_failures: usize,
    passed: bool,
}

fn cmd_validate(run: &mut Run, abs: &Abstraction<f64>, count: usize, trials: usize) -> Result<(), Failure> {
    let s = &*abs.setup;
    let seed = s.scenario.numerics.seed;
    let audit = run.timed("audit", || audit_bounds(&s.scenario, &s.tube, &s.bounds, 2000, seed));
    let audit_warnings: Vec<String> = audit.warnings().cloned().collect();
    for w in &audit_warnings {
        eprintln!("warning: {w}");
    }
    let layers = layers(run, abs)?;
    let paths = sample(abs, &layers, count)?;

    // every transition used by a sampled path, in first-use order
    let mut checks = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for p in &paths {
        for pair in p.configs.windows(2) {
            for i in 0..abs.agent_count() {
                let cfg = project_configuration(&pair[0], i, &s.scenario.graph.neighbors[i]);
                if seen.insert((i, cfg.clone(), pair[1][i])) {
                    checks.push((i, cfg, pair[1][i]));
                }
            }
        }
    }
    // then an even spread over everything the layer expansion materialized
    let mut pool = Vec::new();
    for ts in &abs.systems {
        for (cfg, t) in ts.transitions() {
            pool.extend(t.targets.iter().map(|&l| (ts.agent, cfg.clone(), l)));
        }
    }
    let room = CONSISTENCY_CHECKS.saturating_sub(checks.len());
    if room > 0 && !pool.is_empty() {
        let stride = pool.len().div_ceil(room);
        for c in pool.into_iter().step_by(stride) {
            if seen.insert(c.clone()) {
                checks.push(c);
            }
        }
    }
    let consistency = run.timed("consistency", || {
        checks
            .iter()
            .enumerate()
            .map(|(k, (i, cfg, t))| check_consistency(abs, *i, cfg, *t, trials, trial_seed(seed ^ 0xC0, k)))
            .collect::<Result<Vec<_>, _>>()
    });
    let consistency = consistency.map_err(|e| Failure::validation(e.to_string()))?;

    let mut rows = Vec::new();
    let realizations = run.timed("realization", || {
        paths
            .iter()
            .map(|p| {
                let (rep, r) = realize_path(abs, p)?;
                rows.extend(r);
                Ok(rep)
            })
            .collect::<Result<Vec<_>, netabs::validation::ValidationError>>()
    });
    let realizations = realizations.map_err(|e| Failure::validation(e.to_string()))?;

    let consistency_failures: usize = consistency.iter().map(|c| c.failures().count()).sum();
    let realization_failures = realizations.iter().filter(|r| !r.passed).count();
    let trials_run: usize = consistency.iter().map(|c| c.outcomes.len()).sum();
    println!(
        "consistency: {} transitions, {trials_run} trials, {consistency_failures} violations",
        consistency.len()
    );
    for c in consistency.iter().filter(|c| !c.passed) {
        let bad = c.failures().next().expect("failed report has a failing trial");
        println!(
            "  agent {} configuration {:?} -> {}: trial seed {} (endpoint distance {:.3e}, max |k| {:.4} of {})",
            c.agent, c.configuration, c.target, bad.seed, bad.final_distance, bad.max_k, c.v_max
        );
    }
    println!("realization: {} paths, {realization_failures} failures", realizations.len());
    for (k, r) in realizations.iter().enumerate() {
        if let Some((step, agent)) = r.first_failure {
            println!("  path {k}: first failure at configuration {step}, agent {agent}");
        }
    }
    let passed = consistency_failures == 0 && realization_failures == 0;
    let summary = ValidationSummary {
        audit_warnings,
        consistency,
        realizations,
        consistency_failures,
        realization_failures,
        passed,
    };
    run.archive("validation.json", "validation-report", &summary)?;
    run.write("trajectories.csv", trajectory_csv(&rows).as_bytes())?;
    if passed {
        println!("validation passed");
        Ok(())
    } else {
        Err(Failure::validation("validation failed"))
    }
}

fn write_structured(run: &mut Run, abs: &Abstraction<f64>, layers: &Layers) -> Result<(), Failure> {
    let export = abs.export(layers);
    let path = run.archive("abstraction.json", "abstraction", &export)?;
    // the written file must read back to the same value and the same bytes
    let back: AbstractionExport<f64> = persistence::load(&path, "abstraction")?;
    if back != export || to_bytes(&back, "abstraction")? != fs::read(&path).map_err(|e| Failure::config(e.to_string()))? {
        return Err(Failure::validation(format!("{} does not round-trip", path.display())));
    }
    run.write("layers.bin", &layers_to_binary(layers, abs.agent_count()))?;
    Ok(())
}

fn write_dot(run: &mut Run, abs: &Abstraction<f64>, layers: &Layers) -> Result<(), Failure> {
    for i in 0..abs.agent_count() {
        let id = abs.setup.scenario.agents[i].id;
        run.write(&format!("ts_{id}.dot"), abs.dot_individual(i).as_bytes())?;
    }
    let product = abs.dot_product(layers)?;
    run.write("product.dot", product.as_bytes())?;
    Ok(())
}

fn cmd_export(run: &mut Run, abs: &Abstraction<f64>, format: Format) -> Result<(), Failure> {
    let layers = layers(run, abs)?;
    match format {
        Format::Structured => write_structured(run, abs, &layers)?,
        Format::Dot => write_dot(run, abs, &layers)?,
        Format::Csv => {
            run.write("cells.csv", csv::cells(abs).as_bytes())?;
            run.write("transitions.csv", csv::transitions(abs).as_bytes())?;
            run.write("layers.csv", csv::layers(&layers).as_bytes())?;
        }
    }
    for o in &run.outputs {
        println!("wrote {o}");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let jobs = cli.common.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))?;
    let (scenario, source_hash) = load(&cli.common)?;
    let command = format!("{:?}", cli.command).split_whitespace().next().unwrap_or_default().to_lowercase();
    let seed = scenario.numerics.seed;
    let mut run = Run { common: cli.common, command, source_hash, seed, jobs, timings: BTreeMap::new(), outputs: Vec::new() };

    if let Command::Params = cli.command {
        let setup = cmd_params(&mut run, scenario);
        // the manifest is written even when the certificate fails
        let written = run.finish(setup.as_ref().ok());
        setup?;
        return written;
    }

    let setup = build_setup(&mut run, scenario)?;
    let abs = Abstraction::new(Arc::new(setup));
    let result = match cli.command {
        Command::Params => unreachable!(),
        Command::Abstract => cmd_abstract(&mut run, &abs),
        Command::Plan { paths } => cmd_plan(&mut run, &abs, paths),
        Command::Validate { paths, trials } => cmd_validate(&mut run, &abs, paths, trials),
        Command::Export { format } => cmd_export(&mut run, &abs, format),
    };
    let written = run.finish(Some(&abs.setup));
    result?;
    written
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
