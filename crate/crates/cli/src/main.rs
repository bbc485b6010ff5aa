//! Command-line interface: configuration validation, maximin quantizer
//! design, single-trial tracing, Monte Carlo experiments, summary
//! comparison, and the bundled two-scenario benchmark table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use seqfuse::config::{builtin_config, parse_config, ProjectConfig};
use seqfuse::engine::{PreparedTwoStage, TruthSampler};
use seqfuse::error::Error;
use seqfuse::maximin::{solve_all_states, MaximinResult};
use seqfuse::montecarlo::{
    compare, overall_error, run_experiment, summary_csv, summary_json, Experiment, SimSummary,
    TestSpec, Variant,
};
use seqfuse::quantizers::kl_det_vector;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "seqfuse",
    version,
    about = "Decentralized sequential multihypothesis testing simulator"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    TwoStage,
    Centralized,
    Composite,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    PosteriorThreshold,
    PosteriorCost,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration against every model invariant.
    Validate {
        /// Path to a JSON configuration, or a bundled name (ht1, ht2).
        #[arg(long)]
        config: String,
    },
    /// Design the maximin quantizer for every state.
    Maximin {
        #[arg(long)]
        config: String,
        /// Write the per-state designs as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replicate a homogeneous configuration across this many sensors.
        #[arg(long)]
        sensors: Option<usize>,
    },
    /// Run a single trial, optionally tracing every step.
    Trial {
        #[arg(long)]
        config: String,
        /// True state generating the observations.
        #[arg(long)]
        truth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::TwoStage)]
        variant: VariantArg,
        /// Write a newline-delimited JSON trace of every step.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        cost: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
    },
    /// Estimate expected sample sizes and error rates by Monte Carlo.
    Experiment {
        #[arg(long)]
        config: String,
        #[arg(long, value_enum, default_value_t = VariantArg::TwoStage)]
        variant: VariantArg,
        /// Trials per true state.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cost: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
    },
    /// Compare experiment summaries (JSON sidecars) side by side.
    Compare {
        /// Summary files produced by `experiment --out`.
        files: Vec<PathBuf>,
    },
    /// Reproduce the bundled two-scenario benchmark table.
    Table1 {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-experiment CSV files and the summary table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()
        {
            eprintln!("error: could not configure {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_)
                | Error::Validation { .. }
                | Error::InvalidArgument(_)
                | Error::DomainMismatch(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Maximin { config, out, sensors } => cmd_maximin(&config, out, sensors),
        Command::Trial { config, truth, seed, variant, trace, sensors, cost, u } => {
            cmd_trial(&config, truth, seed, variant, trace, sensors, cost, u)
        }
        Command::Experiment { config, variant, trials, seed, out, cost, u, sensors, rule } => {
            cmd_experiment(&config, variant, trials, seed, out, cost, u, sensors, rule)
        }
        Command::Compare { files } => cmd_compare(&files),
        Command::Table1 { trials, seed, out } => cmd_table1(trials, seed, out),
    }
}

// ---------------------------------------------------------------------------
// Config loading and overrides
// ---------------------------------------------------------------------------

fn load_config(spec: &str) -> Result<ProjectConfig, Error> {
    let text = match builtin_config(spec) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(spec)
            .map_err(|e| Error::Config(format!("cannot read `{spec}`: {e}")))?,
    };
    parse_config(&text)
}

fn apply_overrides(
    mut cfg: ProjectConfig,
    sensors: Option<usize>,
    cost: Option<f64>,
    u: Option<f64>,
    rule: Option<RuleArg>,
) -> Result<ProjectConfig, Error> {
    if let Some(k) = sensors {
        cfg = cfg.replicate_sensors(k)?;
    }
    if let Some(c) = cost {
        cfg.test.cost = Some(c);
    }
    if let Some(v) = u {
        cfg.test.u = Some(seqfuse::config::UConfig::Constant(v));
    }
    if let Some(r) = rule {
        cfg.test.stopping_rule = Some(match r {
            RuleArg::PosteriorThreshold => seqfuse::engine::StoppingRule::PosteriorThreshold,
            RuleArg::PosteriorCost => seqfuse::engine::StoppingRule::PosteriorCost,
        });
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(config: &str) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let mut all_ok = true;
    let mut check = |name: &str, result: Result<(), Error>| match result {
        Ok(()) => println!("[PASS] {name}"),
        Err(e) => {
            println!("[FAIL] {name}: {e}");
            all_ok = false;
        }
    };

    check(
        "density parameters",
        cfg.hypotheses.densities.iter().flatten().try_for_each(|d| d.validate()),
    );

    // Full model construction covers priors, loss structure, grouping, and
    // pairwise distinguishability; attribute a failure to the right check.
    let hs = cfg.hypothesis_set();
    let classify = |needles: &[&str]| -> Result<(), Error> {
        match &hs {
            Ok(_) => Ok(()),
            Err(e) => {
                let msg = e.to_string();
                if needles.iter().any(|n| msg.contains(n)) {
                    Err(e.clone())
                } else {
                    Ok(())
                }
            }
        }
    };
    check("priors (positive, sum to one)", classify(&["priors"]));
    check("loss matrix sign structure", classify(&["loss"]));
    check("composite grouping", classify(&["groups"]));
    check(
        "pairwise distinguishability",
        classify(&["indistinguishable", "divergence", "support mismatch"]),
    );

    if let Ok(hs) = &hs {
        check(
            "first-stage quantizer separates every pair",
            cfg.first_stage_quantizer(hs).and_then(|q0| {
                for m in 0..hs.num_states() {
                    for mp in 0..hs.num_states() {
                        if m != mp && kl_det_vector(&q0, hs, m, mp)? <= 0.0 {
                            return Err(Error::Validation {
                                field: "first_stage".into(),
                                reason: format!("states {m} and {mp} are indistinguishable"),
                            });
                        }
                    }
                }
                Ok(())
            }),
        );
        if cfg.test.centralized_thresholds.is_some() {
            check("centralized thresholds", cfg.centralized(hs).map(|_| ()));
        }
    } else {
        all_ok = false;
    }

    if all_ok {
        println!("configuration is valid");
        Ok(())
    } else {
        Err(Error::Config("validation failed".into()))
    }
}

// ---------------------------------------------------------------------------
// maximin
// ---------------------------------------------------------------------------

fn describe_design(r: &MaximinResult) {
    let certificate = match &r.certificate {
        seqfuse::maximin::Certificate::DominanceShortcut { dominating_competitor } => {
            format!("dominance shortcut vs state {dominating_competitor}")
        }
        seqfuse::maximin::Certificate::SearchOptimum { objective_trace } => {
            format!("pool search, {} milestones", objective_trace.len())
        }
        seqfuse::maximin::Certificate::Oracle => "restricted-family oracle".to_string(),
    };
    let shape = match r.dominant_threshold() {
        Some(t) if r.quantizer.is_deterministic() => format!("threshold {t:+.4}"),
        _ => format!(
            "{} components, weights {:?}",
            r.quantizer.num_components(),
            r.quantizer
                .weights()
                .iter()
                .map(|w| (w * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    };
    println!("state {}: I = {:.5}  quantizer: {shape}  [{certificate}]", r.state, r.info_number);
}

fn cmd_maximin(config: &str, out: Option<PathBuf>, sensors: Option<usize>) -> Result<(), Error> {
    let cfg = apply_overrides(load_config(config)?, sensors, None, None, None)?;
    let hs = cfg.hypothesis_set()?;
    let started = Instant::now();
    let designs = solve_all_states(&hs, &cfg.search_options(), cfg.scope(&hs))?;
    for r in &designs {
        describe_design(r);
    }
    println!("solved {} states in {:.2?}", designs.len(), started.elapsed());
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&designs)
            .map_err(|e| Error::Numerical(format!("serialize designs: {e}")))?;
        fs::write(&path, json)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// trial
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_trial(
    config: &str,
    truth: usize,
    seed: u64,
    variant: VariantArg,
    trace: Option<PathBuf>,
    sensors: Option<usize>,
    cost: Option<f64>,
    u: Option<f64>,
) -> Result<(), Error> {
    let cfg = apply_overrides(load_config(config)?, sensors, cost, u, None)?;
    let hs = cfg.hypothesis_set()?;
    let mut src = TruthSampler::new(&hs, truth, ChaCha8Rng::seed_from_u64(seed))?;

    match variant {
        VariantArg::Centralized => {
            let ccfg = cfg.centralized(&hs)?;
            let (n, d) = seqfuse::engine::run_centralized(&ccfg, &hs, &mut src)?;
            println!("N = {n}, decision = {d}");
        }
        VariantArg::TwoStage | VariantArg::Composite => {
            let test = cfg.assemble_two_stage(&hs)?;
            let prepared = PreparedTwoStage::new(&test, &hs)?;
            let out = prepared.run_trial(&mut src, trace.is_some())?;
            println!(
                "N0 = {}, preliminary = {}, N = {}, decision = {}",
                out.n0, out.preliminary, out.n, out.decision
            );
            println!(
                "final posterior: {:?}",
                out.final_posterior
                    .iter()
                    .map(|p| (p * 1e6).round() / 1e6)
                    .collect::<Vec<_>>()
            );
            if let (Some(path), Some(steps)) = (trace, out.trace) {
                let mut file = fs::File::create(&path).map_err(|e| {
                    Error::Config(format!("cannot write {}: {e}", path.display()))
                })?;
                for step in steps {
                    let line = serde_json::to_string(&step)
                        .map_err(|e| Error::Numerical(format!("serialize trace: {e}")))?;
                    writeln!(file, "{line}")
                        .map_err(|e| Error::Config(format!("write failed: {e}")))?;
                }
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

fn print_summary(s: &SimSummary) {
    println!(
        "variant {}  (R = {} per state, seed {})",
        s.variant.label(),
        s.trials_per_state,
        s.master_seed
    );
    for st in &s.per_state {
        println!(
            "  m={}: E[N] = {:8.2} ± {:5.2}   E[N0] = {:7.2}   err = {:.2e} ± {:.1e}",
            st.truth, st.mean_n, st.stderr_n, st.mean_n0, st.err_rate, st.err_stderr
        );
    }
    println!(
        "  Bayes risk = {:.4e} ± {:.1e}   overall error = {:.2e}",
        s.bayes_risk,
        s.bayes_risk_stderr,
        overall_error(s)
    );
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    config: &str,
    variant: VariantArg,
    trials: u64,
    seed: u64,
    out: Option<PathBuf>,
    cost: Option<f64>,
    u: Option<f64>,
    sensors: Option<usize>,
    rule: Option<RuleArg>,
) -> Result<(), Error> {
    let cfg = apply_overrides(load_config(config)?, sensors, cost, u, rule)?;
    let hs = cfg.hypothesis_set()?;
    let started = Instant::now();
    let experiment = match variant {
        VariantArg::Centralized => {
            let ccfg = cfg.centralized(&hs)?;
            run_experiment(
                &TestSpec::Centralized { cfg: &ccfg, cost: cfg.cost() },
                &hs,
                trials,
                seed,
            )?
        }
        VariantArg::TwoStage | VariantArg::Composite => {
            let label = if variant == VariantArg::Composite || !hs.has_trivial_groups() {
                Variant::Composite
            } else {
                Variant::TwoStage
            };
            let test = cfg.assemble_two_stage(&hs)?;
            run_experiment(&TestSpec::TwoStage { cfg: &test, variant: label }, &hs, trials, seed)?
        }
    };
    print_summary(&experiment.summary);
    println!("elapsed {:.2?}", started.elapsed());
    if let Some(prefix) = out {
        write_outputs(&prefix, &experiment)?;
    }
    Ok(())
}

fn write_outputs(prefix: &Path, experiment: &Experiment) -> Result<(), Error> {
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    fs::write(&csv_path, summary_csv(&experiment.summary))
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", csv_path.display())))?;
    fs::write(&json_path, summary_json(&experiment.summary)?)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", json_path.display())))?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn cmd_compare(files: &[PathBuf]) -> Result<(), Error> {
    if files.len() < 2 {
        return Err(Error::InvalidArgument("need at least two summaries".into()));
    }
    let summaries: Vec<SimSummary> = files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_, Error>>()?;
    let refs: Vec<&SimSummary> = summaries.iter().collect();
    let table = compare(&refs)?;
    print!("{table}");
    println!("(* marks mean sample sizes separated from the first column by more than 3 sigma)");
    Ok(())
}

// ---------------------------------------------------------------------------
// table1
// ---------------------------------------------------------------------------

struct ReferenceRow {
    label: &'static str,
    /// Reference mean sample sizes per state and their reported spread
    /// (zero when the source gives a bare value).
    means: [f64; 3],
    spread: [f64; 3],
}

struct Scenario {
    name: &'static str,
    rows: [ReferenceRow; 3],
}

const TABLE1: [Scenario; 2] = [
    Scenario {
        name: "ht1",
        rows: [
            ReferenceRow {
                label: "centralized",
                means: [46.48, 48.39, 11.90],
                spread: [0.0, 0.0, 0.0],
            },
            ReferenceRow {
                label: "two-stage K=1",
                means: [73.5, 77.7, 19.8],
                spread: [0.9, 0.9, 0.2],
            },
            ReferenceRow {
                label: "two-stage K=2",
                means: [36.8, 38.9, 9.9],
                spread: [0.7, 0.7, 0.1],
            },
        ],
    },
    Scenario {
        name: "ht2",
        rows: [
            ReferenceRow {
                label: "centralized",
                means: [46.59, 69.43, 46.60],
                spread: [0.0, 0.0, 0.0],
            },
            ReferenceRow {
                label: "two-stage K=1",
                means: [73.4, 110.2, 73.4],
                spread: [0.9, 0.9, 0.9],
            },
            ReferenceRow {
                label: "two-stage K=2",
                means: [37.8, 55.2, 37.8],
                spread: [0.6, 0.7, 0.6],
            },
        ],
    },
];

fn cmd_table1(trials: u64, seed: u64, out: Option<PathBuf>) -> Result<(), Error> {
    if let Some(dir) = &out {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    let started = Instant::now();
    let mut report = String::new();
    report.push_str(&format!("expected sample sizes, R = {trials} trials/state, seed {seed}\n"));
    let mut all_contained = true;

    for scenario in &TABLE1 {
        let cfg = parse_config(builtin_config(scenario.name).expect("bundled config"))?;
        report.push_str(&format!("\n=== {} ===\n", scenario.name));
        for row in &scenario.rows {
            let experiment = run_table1_cell(&cfg, row.label, trials, seed)?;
            report.push_str(&format_table1_row(row, &experiment, &mut all_contained));
            if let Some(dir) = &out {
                let path =
                    dir.join(format!("{}_{}.csv", scenario.name, row.label.replace(' ', "_")));
                fs::write(&path, summary_csv(&experiment.summary)).map_err(|e| {
                    Error::Config(format!("cannot write {}: {e}", path.display()))
                })?;
            }
        }
    }
    report.push_str(&format!(
        "\noverall: {}  ({:.1?})\n",
        if all_contained { "all cells contained" } else { "some cells outside reference bands" },
        started.elapsed()
    ));
    print!("{report}");
    if let Some(dir) = &out {
        let path = dir.join("table1.txt");
        fs::write(&path, &report)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_table1_cell(
    cfg: &ProjectConfig,
    label: &str,
    trials: u64,
    seed: u64,
) -> Result<Experiment, Error> {
    match label {
        "centralized" => {
            let hs = cfg.hypothesis_set()?;
            let ccfg = cfg.centralized(&hs)?;
            run_experiment(&TestSpec::Centralized { cfg: &ccfg, cost: cfg.cost() }, &hs, trials, seed)
        }
        "two-stage K=1" => {
            let hs = cfg.hypothesis_set()?;
            let test = cfg.assemble_two_stage(&hs)?;
            run_experiment(&TestSpec::TwoStage { cfg: &test, variant: Variant::TwoStage }, &hs, trials, seed)
        }
        _ => {
            let cfg2 = cfg.replicate_sensors(2)?;
            let hs = cfg2.hypothesis_set()?;
            let test = cfg2.assemble_two_stage(&hs)?;
            run_experiment(&TestSpec::TwoStage { cfg: &test, variant: Variant::TwoStage }, &hs, trials, seed)
        }
    }
}

fn format_table1_row(
    row: &ReferenceRow,
    experiment: &Experiment,
    all_contained: &mut bool,
) -> String {
    let mut line = format!("{:>14}:", row.label);
    for (m, state) in experiment.summary.per_state.iter().enumerate() {
        let tolerance = (3.0 * state.stderr_n).max(row.spread[m]);
        let contained = (state.mean_n - row.means[m]).abs() <= tolerance;
        if !contained {
            *all_contained = false;
        }
        line.push_str(&format!(
            "  {:7.2}±{:.2} (ref {:6.2}{})",
            state.mean_n,
            state.stderr_n,
            row.means[m],
            if contained { ", ok" } else { ", OUT" }
        ));
    }
    line.push('\n');
    line
}
