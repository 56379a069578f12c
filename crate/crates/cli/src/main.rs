//! Command line front end for the endonet toolkit.
//!
//! Seven subcommands cover the workflow end to end. `estimate` runs the
//! instrumented or inverse-probability estimator on one supplied or drawn
//! assignment. `test` runs the randomization and regression diagnostics.
//! `simulate` and `scaling` replicate scenario files across repetitions and
//! sizes. `bias-table` prints the worked small-graph expectations that show
//! why the naive contrast misses. `verify-anchor` checks declared
//! always-present pairs against the edge rules. `enumerate-check` confirms
//! estimator unbiasedness by exact enumeration on scenario instances small
//! enough to enumerate.
//!
//! Every run emits a `RunReport` JSON object: the argv and resolved
//! settings, a SHA-256 digest per input file, the command-specific results,
//! and wall-clock timings. Reports are byte stable across reruns except for
//! the `timing` block. With `--format csv` the tabular commands write plain
//! rows instead of the wrapped report. Exit codes follow one rule: 0 for
//! success, 1 when inputs were well formed but failed validation or a check
//! command found a violation, 2 for unreadable or malformed inputs and
//! usage errors.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use endonet_core::{
    bias_table, edge_shift_ttest, evaluate, exact_expectation_checked, exogeneity_test,
    horvitz_thompson, parse_json, sharp_null_test, to_canonical_json, true_tte, verify_anchor,
    Alternative, AnchorSubgraph, BernoulliDesign, BiasMode, BiasReport, CanonicalExample,
    ConfigFile, EndogenousGraph, Error, EstimatorChoice, GraphFile, OutcomeModel, OutcomesFile,
    ReplicationSummary, Result, ScalingReport, Scenario, TreatmentVector, ValidatedEstimator,
    VerifyMode,
};

/// Environment variable consulted for the default seed when a command that
/// draws randomness is run without an explicit `--seed` or `--draw-seed`.
const SEED_ENV_VAR: &str = "ENDONET_SEED";

/// Largest exact-expectation gap `enumerate-check` accepts as unbiased.
const ENUMERATION_TOLERANCE: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "endonet",
    version,
    about = "Design-based estimation for experiments whose interference network \
             reacts to treatment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the total treatment effect from one assignment.
    Estimate(EstimateArgs),
    /// Run a randomization or regression diagnostic test.
    Test(TestArgs),
    /// Replicate a scenario at one size and summarize the estimates.
    Simulate(SimulateArgs),
    /// Replicate a scenario across sizes and fit the variance decay rate.
    Scaling(ScalingArgs),
    /// Print naive versus instrumented expectations on the worked examples.
    BiasTable(BiasTableArgs),
    /// Check that declared anchor pairs are present under every assignment.
    VerifyAnchor(VerifyAnchorArgs),
    /// Check estimator unbiasedness by exact enumeration on small instances.
    EnumerateCheck(EnumerateCheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    /// Instrumented anchor estimator.
    MuHat,
    /// Inverse-probability contrast of fully treated against fully control.
    Ht,
}

impl EstimatorArg {
    fn choice(self) -> EstimatorChoice {
        match self {
            EstimatorArg::MuHat => EstimatorChoice::AnchorInstrument,
            EstimatorArg::Ht => EstimatorChoice::HorvitzThompson,
        }
    }

    fn label(self) -> &'static str {
        match self {
            EstimatorArg::MuHat => "mu_hat",
            EstimatorArg::Ht => "horvitz_thompson",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestKindArg {
    /// Permutation test of edge exogeneity against the assignment.
    Exogeneity,
    /// Resampling test of the sharp null of no treatment effect.
    SharpNull,
    /// Welch t test of treated against control edge-count shifts.
    EdgeShift,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VerifyModeArg {
    Exhaustive,
    Sampled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlternativeArg {
    TwoSided,
    Greater,
}

impl AlternativeArg {
    fn alternative(self) -> Alternative {
        match self {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Greater => Alternative::Greater,
        }
    }

    fn label(self) -> &'static str {
        match self {
            AlternativeArg::TwoSided => "two_sided",
            AlternativeArg::Greater => "greater",
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Graph file with edge rules.
    #[arg(long)]
    graph: String,
    /// Outcome model file.
    #[arg(long)]
    outcomes: String,
    /// Estimator configuration file with anchor pairs and instrument.
    #[arg(long)]
    config: String,
    /// Assignment bits, leftmost bit for randomization unit 0.
    #[arg(long, conflicts_with = "draw_seed")]
    treatment: Option<String>,
    /// Draw the assignment from the design with this seed instead.
    #[arg(long)]
    draw_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "mu-hat")]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    kind: TestKindArg,
    /// Graph file with edge rules.
    #[arg(long)]
    graph: String,
    /// Outcome model file; required for the sharp-null test.
    #[arg(long)]
    outcomes: Option<String>,
    /// Estimator configuration file; required for the sharp-null test.
    #[arg(long)]
    config: Option<String>,
    /// Treatment probability; required for exogeneity and for drawing an
    /// assignment without a configuration file.
    #[arg(long)]
    p: Option<f64>,
    /// Assignment bits, leftmost bit for randomization unit 0.
    #[arg(long, conflicts_with = "draw_seed")]
    treatment: Option<String>,
    /// Draw the assignment from the design with this seed instead.
    #[arg(long)]
    draw_seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Resamples for the permutation and resampling tests.
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    /// Seed for the resampling draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Tail for the edge-shift test.
    #[arg(long, value_enum, default_value = "greater")]
    alternative: AlternativeArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file describing the graph and outcome distributions.
    #[arg(long)]
    scenario: String,
    /// Number of analysis units to instantiate.
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, value_enum, default_value = "mu-hat")]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Scenario file describing the graph and outcome distributions.
    #[arg(long)]
    scenario: String,
    /// Comma-separated strictly increasing analysis sizes, at least three.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, value_enum, default_value = "mu-hat")]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BiasTableArgs {
    /// Worked example number (1, 2, or 3); repeat for several, default all.
    #[arg(long)]
    example: Vec<usize>,
    /// First outcome value.
    #[arg(long, default_value_t = 1.0)]
    y1: f64,
    /// Second outcome value, where the example has two analysis units.
    #[arg(long, default_value_t = 1.0)]
    y2: f64,
    /// Treatment probability.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Estimate expectations from this many draws instead of enumerating.
    #[arg(long)]
    reps: Option<usize>,
    /// Seed for the Monte Carlo draws.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyAnchorArgs {
    /// Graph file with edge rules.
    #[arg(long)]
    graph: String,
    /// Estimator configuration file whose anchor pairs are checked.
    #[arg(long)]
    config: String,
    #[arg(long, value_enum, default_value = "exhaustive")]
    mode: VerifyModeArg,
    /// Assignments to draw in sampled mode.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Seed for sampled mode.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateCheckArgs {
    /// Scenario file describing the graph and outcome distributions.
    #[arg(long)]
    scenario: String,
    /// Randomization-unit cap; the analysis size is derived from it.
    #[arg(long)]
    nr: usize,
    /// Independent instances to enumerate, varying the scenario seed.
    #[arg(long, default_value_t = 5)]
    instances: usize,
    /// Write the full report here; stdout keeps the one-line verdict.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Path and content digest of one input file.
#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct CommandEcho {
    argv: Vec<String>,
    resolved: Value,
}

#[derive(Serialize)]
struct Timing {
    load_seconds: f64,
    compute_seconds: f64,
}

/// The one output shape every subcommand emits in JSON mode.
#[derive(Serialize)]
struct RunReport {
    command: CommandEcho,
    inputs: Vec<InputDigest>,
    results: Value,
    timing: Timing,
}

/// Reads input files once, recording a SHA-256 digest per file.
#[derive(Default)]
struct InputReader {
    digests: Vec<InputDigest>,
}

impl InputReader {
    fn read(&mut self, path: &str) -> Result<String> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let sha256 = hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut acc, byte| {
                use std::fmt::Write;
                let _ = write!(acc, "{byte:02x}");
                acc
            });
        self.digests.push(InputDigest { path: path.to_string(), sha256 });
        String::from_utf8(bytes)
            .map_err(|e| Error::Schema(format!("{path}: file is not valid UTF-8: {e}")))
    }

    fn graph(&mut self, path: &str) -> Result<(GraphFile, EndogenousGraph)> {
        let text = self.read(path)?;
        let mut file: GraphFile = parse_json(&text, path)?;
        file.canonicalize();
        let graph = file.to_graph()?;
        Ok((file, graph))
    }

    fn outcomes(&mut self, path: &str, graph: &EndogenousGraph) -> Result<OutcomeModel> {
        let text = self.read(path)?;
        let file: OutcomesFile = parse_json(&text, path)?;
        file.to_model(graph)
    }

    fn config(&mut self, path: &str) -> Result<ConfigFile> {
        let text = self.read(path)?;
        let mut file: ConfigFile = parse_json(&text, path)?;
        file.canonicalize();
        Ok(file)
    }

    fn scenario(&mut self, path: &str) -> Result<Scenario> {
        let text = self.read(path)?;
        let scenario: Scenario = parse_json(&text, path)?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Picks the effective seed: explicit flag, then the environment variable,
/// then zero.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    seed_from(flag, std::env::var(SEED_ENV_VAR).ok().as_deref())
}

fn seed_from(flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env {
        Some(text) => text.trim().parse().map_err(|_| {
            Error::Schema(format!(
                "{SEED_ENV_VAR} must be an unsigned 64-bit integer, got {text:?}"
            ))
        }),
        None => Ok(0),
    }
}

/// Resolves the assignment for single-assignment commands: parse the given
/// bits or draw one vector from the design. Returns the vector and an echo
/// of how it was obtained.
fn resolve_treatment(
    bits: &Option<String>,
    draw_seed: Option<u64>,
    n_r: usize,
    p: f64,
) -> Result<(TreatmentVector, Value)> {
    if let Some(text) = bits {
        let t = TreatmentVector::parse_bits(text)?;
        if t.len() != n_r {
            return Err(Error::Dimension(format!(
                "treatment has {} bits, the graph randomizes {} units",
                t.len(),
                n_r
            )));
        }
        return Ok((t, json!({ "source": "given", "bits": text })));
    }
    let seed = resolve_seed(draw_seed)?;
    let t = BernoulliDesign::new(n_r, p, seed)?.draw(0);
    Ok((t, json!({ "source": "drawn", "seed": seed, "p": p })))
}

/// Quotes a CSV field only when it needs quoting.
fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn csv_row(fields: &[String]) -> String {
    let quoted: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
    quoted.join(",")
}

/// Writes finished output to the chosen sink.
fn deliver(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report(
    resolved: Value,
    inputs: InputReader,
    results: Value,
    load: f64,
    compute: f64,
) -> RunReport {
    RunReport {
        command: CommandEcho { argv: std::env::args().collect(), resolved },
        inputs: inputs.digests,
        results,
        timing: Timing { load_seconds: load, compute_seconds: compute },
    }
}

fn emit_report(report: &RunReport, out: &Option<PathBuf>) -> Result<()> {
    deliver(&to_canonical_json(report)?, out)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let (_, graph) = inputs.graph(&args.graph)?;
    let model = inputs.outcomes(&args.outcomes, &graph)?;
    let config_file = inputs.config(&args.config)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let config = config_file.to_config(graph.n_a(), graph.n_r())?;
    let (t, treatment_echo) =
        resolve_treatment(&args.treatment, args.draw_seed, graph.n_r(), config_file.p)?;
    let realized = graph.realize(&t)?;
    let y = evaluate(&model, &realized, &t)?;
    let truth = true_tte(&graph, &model)?;

    let results = match args.estimator {
        EstimatorArg::MuHat => {
            let estimator = ValidatedEstimator::new(&graph, &model.weights, &config)?;
            let estimate = estimator.mu_hat(&realized, &y, &t)?;
            json!({
                "estimator": args.estimator.label(),
                "treatment": t.to_string(),
                "n_treated": t.count_treated(),
                "estimate": estimate.mu_hat,
                "true_effect": truth,
                "d_analysis": estimate.d_analysis,
                "d_randomization": estimate.d_randomization,
                "per_unit": estimate.per_unit,
            })
        }
        EstimatorArg::Ht => {
            let estimate = horvitz_thompson(&realized, &y, &t, config_file.p)?;
            json!({
                "estimator": args.estimator.label(),
                "treatment": t.to_string(),
                "n_treated": t.count_treated(),
                "estimate": estimate,
                "true_effect": truth,
            })
        }
    };
    let compute_seconds = started.elapsed().as_secs_f64();

    match args.format {
        FormatArg::Json => {
            let resolved = json!({
                "graph": args.graph,
                "outcomes": args.outcomes,
                "config": args.config,
                "estimator": args.estimator.label(),
                "p": config_file.p,
                "treatment": treatment_echo,
            });
            emit_report(
                &report(resolved, inputs, results, load_seconds, compute_seconds),
                &args.out,
            )?;
        }
        FormatArg::Csv => {
            let mut lines = Vec::new();
            match results.get("per_unit") {
                Some(Value::Array(rows)) => {
                    lines.push(
                        "unit,beta_hat,w_hat,gamma_hat,contribution,product_bound".to_string(),
                    );
                    for (unit, row) in rows.iter().enumerate() {
                        let cell = |key: &str| match row.get(key) {
                            Some(v) if !v.is_null() => v.to_string(),
                            _ => String::new(),
                        };
                        lines.push(csv_row(&[
                            unit.to_string(),
                            cell("beta_hat"),
                            cell("w_hat"),
                            cell("gamma_hat"),
                            cell("contribution"),
                            cell("product_bound"),
                        ]));
                    }
                }
                _ => {
                    lines.push("estimate,true_effect".to_string());
                    lines.push(csv_row(&[
                        results["estimate"].to_string(),
                        results["true_effect"].to_string(),
                    ]));
                }
            }
            lines.push(String::new());
            deliver(&lines.join("\n"), &args.out)?;
        }
    }
    Ok(0)
}

fn cmd_test(args: &TestArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let (_, graph) = inputs.graph(&args.graph)?;

    let mut model = None;
    let mut config_file = None;
    if args.kind == TestKindArg::SharpNull {
        let outcomes_path = args.outcomes.as_deref().ok_or_else(|| {
            Error::Parameter("the sharp-null test needs --outcomes for the observed data".into())
        })?;
        let config_path = args.config.as_deref().ok_or_else(|| {
            Error::Parameter("the sharp-null test needs --config for the estimator".into())
        })?;
        model = Some(inputs.outcomes(outcomes_path, &graph)?);
        config_file = Some(inputs.config(config_path)?);
    }
    let load_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let p_for_draw = match (&config_file, args.p) {
        (Some(file), _) => Some(file.p),
        (None, p) => p,
    };
    let draw_p = match p_for_draw {
        Some(p) => p,
        None if args.treatment.is_some() => 0.5,
        None => {
            return Err(Error::Parameter(
                "drawing an assignment needs --p for the design".into(),
            ))
        }
    };
    let (t, treatment_echo) = resolve_treatment(&args.treatment, args.draw_seed, graph.n_r(), draw_p)?;
    let realized = graph.realize(&t)?;
    let seed = resolve_seed(args.seed)?;

    let result = match args.kind {
        TestKindArg::Exogeneity => {
            let p = args.p.ok_or_else(|| {
                Error::Parameter("the exogeneity test needs --p, the treatment probability".into())
            })?;
            exogeneity_test(&realized, &t, p, args.alpha, args.resamples, seed)?
        }
        TestKindArg::SharpNull => {
            let model = model.as_ref().expect("loaded above");
            let config_file = config_file.as_ref().expect("loaded above");
            let config = config_file.to_config(graph.n_a(), graph.n_r())?;
            let estimator = ValidatedEstimator::new(&graph, &model.weights, &config)?;
            let y = evaluate(model, &realized, &t)?;
            sharp_null_test(&estimator, &y, &t, args.alpha, args.resamples, seed)?
        }
        TestKindArg::EdgeShift => {
            edge_shift_ttest(&graph, &realized, &t, args.alternative.alternative(), args.alpha)?
        }
    };
    let compute_seconds = started.elapsed().as_secs_f64();

    let kind_label = match args.kind {
        TestKindArg::Exogeneity => "exogeneity",
        TestKindArg::SharpNull => "sharp_null",
        TestKindArg::EdgeShift => "edge_shift",
    };
    let resolved = json!({
        "graph": args.graph,
        "outcomes": args.outcomes,
        "config": args.config,
        "kind": kind_label,
        "alpha": args.alpha,
        "resamples": args.resamples,
        "seed": seed,
        "alternative": args.alternative.label(),
        "treatment": treatment_echo,
    });
    let results = json!({ "kind": kind_label, "test": result });
    emit_report(&report(resolved, inputs, results, load_seconds, compute_seconds), &args.out)?;
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let scenario = inputs.scenario(&args.scenario)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let summary =
        endonet_core::replicate(&scenario, args.size, args.reps, args.estimator.choice())?;
    let compute_seconds = started.elapsed().as_secs_f64();

    match args.format {
        FormatArg::Json => {
            let resolved = json!({
                "scenario": args.scenario,
                "size": args.size,
                "reps": args.reps,
                "estimator": args.estimator.label(),
            });
            let results = serde_json::to_value(&summary)
                .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
            emit_report(
                &report(resolved, inputs, results, load_seconds, compute_seconds),
                &args.out,
            )?;
        }
        FormatArg::Csv => {
            deliver(&replication_csv(&summary), &args.out)?;
        }
    }
    Ok(0)
}

fn replication_csv(summary: &ReplicationSummary) -> String {
    let mut lines = vec!["rep,estimate".to_string()];
    for (rep, estimate) in summary.estimates.iter().enumerate() {
        lines.push(csv_row(&[rep.to_string(), estimate.to_string()]));
    }
    lines.push(String::new());
    lines.join("\n")
}

fn cmd_scaling(args: &ScalingArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let scenario = inputs.scenario(&args.scenario)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let study = endonet_core::variance_scaling_study(
        &scenario,
        &args.sizes,
        args.reps,
        args.estimator.choice(),
    )?;
    let compute_seconds = started.elapsed().as_secs_f64();

    match args.format {
        FormatArg::Json => {
            let resolved = json!({
                "scenario": args.scenario,
                "sizes": args.sizes,
                "reps": args.reps,
                "estimator": args.estimator.label(),
            });
            let results = serde_json::to_value(&study)
                .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
            emit_report(
                &report(resolved, inputs, results, load_seconds, compute_seconds),
                &args.out,
            )?;
        }
        FormatArg::Csv => {
            deliver(&scaling_csv(&study), &args.out)?;
        }
    }
    Ok(0)
}

fn scaling_csv(study: &ScalingReport) -> String {
    let mut lines = vec!["n_a,n_r,mean,bias_vs_truth,variance,envelope".to_string()];
    for row in &study.rows {
        lines.push(csv_row(&[
            row.n_a.to_string(),
            row.n_r.to_string(),
            row.mean.to_string(),
            row.bias_vs_truth.to_string(),
            row.variance.to_string(),
            row.envelope.to_string(),
        ]));
    }
    lines.push(String::new());
    lines.join("\n")
}

fn cmd_bias_table(args: &BiasTableArgs) -> Result<i32> {
    let started = Instant::now();
    let examples = if args.example.is_empty() {
        CanonicalExample::ALL.to_vec()
    } else {
        args.example
            .iter()
            .map(|&i| CanonicalExample::from_index(i))
            .collect::<Result<Vec<_>>>()?
    };
    let mode = match args.reps {
        Some(n_reps) => BiasMode::MonteCarlo { n_reps, seed: resolve_seed(args.seed)? },
        None => BiasMode::Exact,
    };
    let table = bias_table(&examples, [args.y1, args.y2], args.p, mode)?;
    let compute_seconds = started.elapsed().as_secs_f64();

    match args.format {
        FormatArg::Json => {
            let resolved = json!({
                "examples": examples.iter().map(|e| e.index()).collect::<Vec<_>>(),
                "y": [args.y1, args.y2],
                "p": args.p,
                "mode": mode,
            });
            let results = serde_json::to_value(&table)
                .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
            emit_report(
                &report(resolved, InputReader::default(), results, 0.0, compute_seconds),
                &args.out,
            )?;
        }
        FormatArg::Csv => {
            deliver(&bias_csv(&table), &args.out)?;
        }
    }
    Ok(0)
}

fn bias_csv(table: &BiasReport) -> String {
    let mut lines =
        vec!["example,label,naive_expectation,anchored_expectation,anchored_truth".to_string()];
    for row in &table.rows {
        lines.push(csv_row(&[
            row.example.to_string(),
            row.label.to_string(),
            row.naive_expectation.to_string(),
            row.anchored_expectation.to_string(),
            row.anchored_truth.to_string(),
        ]));
    }
    lines.push(String::new());
    lines.join("\n")
}

fn cmd_verify_anchor(args: &VerifyAnchorArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let (_, graph) = inputs.graph(&args.graph)?;
    let config_file = inputs.config(&args.config)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let anchor = AnchorSubgraph::new(graph.n_a(), graph.n_r(), &config_file.anchor)?;
    let (mode, mode_echo) = match args.mode {
        VerifyModeArg::Exhaustive => (VerifyMode::Exhaustive, json!({ "mode": "exhaustive" })),
        VerifyModeArg::Sampled => {
            let seed = resolve_seed(args.seed)?;
            (
                VerifyMode::Sampled { n_samples: args.samples, seed },
                json!({ "mode": "sampled", "samples": args.samples, "seed": seed }),
            )
        }
    };
    let verification = verify_anchor(&graph, &anchor, mode)?;
    let compute_seconds = started.elapsed().as_secs_f64();

    let violations: Vec<Value> = verification
        .violations
        .iter()
        .map(|v| json!({ "a": v.a, "r": v.r, "assignment": v.assignment.to_string() }))
        .collect();
    let results = json!({
        "passed": verification.passed,
        "exhaustive": verification.exhaustive,
        "evaluations": verification.evaluations,
        "truncated": verification.truncated,
        "violations": violations,
    });
    let resolved = json!({
        "graph": args.graph,
        "config": args.config,
        "check": mode_echo,
    });
    emit_report(&report(resolved, inputs, results, load_seconds, compute_seconds), &args.out)?;
    Ok(if verification.passed { 0 } else { 1 })
}

fn cmd_enumerate_check(args: &EnumerateCheckArgs) -> Result<i32> {
    let started = Instant::now();
    let mut inputs = InputReader::default();
    let scenario = inputs.scenario(&args.scenario)?;
    let load_seconds = started.elapsed().as_secs_f64();

    if args.instances == 0 {
        return Err(Error::Parameter("enumerate-check needs at least one instance".into()));
    }

    let started = Instant::now();
    let n_a = scenario.analysis_size_for(args.nr)?;
    let mut rows = Vec::with_capacity(args.instances);
    let mut max_gap = 0.0f64;
    let mut n_r = 0;
    for offset in 0..args.instances {
        let mut varied = scenario.clone();
        varied.seed = scenario.seed.wrapping_add(offset as u64);
        let instance = varied.instantiate(n_a)?;
        let estimator = instance.estimator()?;
        n_r = instance.graph.n_r();
        let expectation = exact_expectation_checked(n_r, instance.p, |t| {
            let realized = instance.graph.realize(t)?;
            let y = evaluate(&instance.model, &realized, t)?;
            Ok(estimator.mu_hat(&realized, &y, t)?.mu_hat)
        })?;
        let gap = (expectation - instance.true_effect).abs();
        max_gap = max_gap.max(gap);
        rows.push(json!({
            "seed": varied.seed,
            "expectation": expectation,
            "true_effect": instance.true_effect,
            "abs_gap": gap,
        }));
    }
    let compute_seconds = started.elapsed().as_secs_f64();

    let passed = max_gap <= ENUMERATION_TOLERANCE;
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!(
        "{verdict} max |E[mu_hat] - mu| = {max_gap:.3e} (tolerance {ENUMERATION_TOLERANCE:.0e}) \
         over {} instances at n_a = {n_a}, n_r = {n_r}",
        args.instances
    );

    if args.out.is_some() {
        let resolved = json!({
            "scenario": args.scenario,
            "nr": args.nr,
            "instances": args.instances,
            "n_a": n_a,
            "n_r": n_r,
        });
        let results = json!({
            "passed": passed,
            "max_abs_gap": max_gap,
            "tolerance": ENUMERATION_TOLERANCE,
            "instances": rows,
        });
        emit_report(
            &report(resolved, inputs, results, load_seconds, compute_seconds),
            &args.out,
        )?;
    }
    Ok(if passed { 0 } else { 1 })
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Scaling(args) => cmd_scaling(args),
        Command::BiasTable(args) => cmd_bias_table(args),
        Command::VerifyAnchor(args) => cmd_verify_anchor(args),
        Command::EnumerateCheck(args) => cmd_enumerate_check(args),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    };
    std::process::exit(code);
}
