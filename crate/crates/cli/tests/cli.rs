//! End-to-end tests of the `endonet` binary: exit codes, report shape,
//! fixture parsing, and byte-stable reruns.

use std::path::PathBuf;
use std::process::{Command, Output};

use endonet_core::{canonical_graph, load_graph, CanonicalExample, TreatmentVector};
use serde_json::Value;

fn fixture(name: &str) -> String {
    let mut path = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    path.pop();
    path.pop();
    path.push("fixtures");
    path.push(name);
    path.to_string_lossy().into_owned()
}

/// Builds a command with the ambient seed variable cleared so tests do not
/// depend on the caller's environment.
fn endonet(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_endonet"));
    cmd.env_remove("ENDONET_SEED");
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    endonet(args).output().expect("binary should run")
}

fn stdout_json(output: &Output) -> Value {
    assert!(
        output.status.success(),
        "expected success, got {:?} with stderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout should be one JSON report")
}

#[test]
fn estimate_reports_the_worked_pair_values() {
    let output = run(&[
        "estimate",
        "--graph",
        &fixture("anchored_pair.json"),
        "--outcomes",
        &fixture("anchored_pair_outcomes.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
        "--treatment",
        "01",
    ]);
    let report = stdout_json(&output);

    let results = &report["results"];
    assert_eq!(results["estimator"], "mu_hat");
    assert_eq!(results["treatment"], "01");
    assert_eq!(results["estimate"], 4.0);
    assert_eq!(results["true_effect"], 0.0);
    assert_eq!(results["per_unit"][0]["beta_hat"], 4.0);
    assert_eq!(results["per_unit"][0]["w_hat"], 1.0);

    let inputs = report["inputs"].as_array().expect("inputs array");
    assert_eq!(inputs.len(), 3);
    for entry in inputs {
        let digest = entry["sha256"].as_str().expect("hex digest");
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    }
    assert!(report["timing"]["compute_seconds"].as_f64().is_some());
    assert!(report["command"]["argv"].as_array().is_some());
}

#[test]
fn estimate_names_the_violated_assumption_and_exits_1() {
    let output = run(&[
        "estimate",
        "--graph",
        &fixture("cross_driven_edge.json"),
        "--outcomes",
        &fixture("anchored_pair_outcomes.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
        "--treatment",
        "01",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("own randomization unit"),
        "stderr should name the violated dependence assumption, got: {stderr}"
    );
}

#[test]
fn unreadable_and_malformed_inputs_exit_2() {
    let missing = run(&[
        "estimate",
        "--graph",
        &fixture("no_such_file.json"),
        "--outcomes",
        &fixture("anchored_pair_outcomes.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let dir = std::env::temp_dir().join("endonet-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("unknown_field.json");
    std::fs::write(
        &bad,
        r#"{"n_a": 1, "n_r": 1, "kind": "r_driven", "edges": [], "typo_field": 3}"#,
    )
    .unwrap();
    let malformed = run(&[
        "verify-anchor",
        "--graph",
        &bad.to_string_lossy(),
        "--config",
        &fixture("anchored_pair_config.json"),
    ]);
    assert_eq!(malformed.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&malformed.stderr);
    assert!(stderr.contains("typo_field"), "schema error should name the field: {stderr}");
}

#[test]
fn usage_errors_exit_2() {
    let unknown_flag = run(&["estimate", "--graph", "x", "--no-such-flag"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    let unknown_subcommand = run(&["no-such-subcommand"]);
    assert_eq!(unknown_subcommand.status.code(), Some(2));
}

#[test]
fn switching_pair_fixture_parses_into_the_two_unit_graph() {
    let (_, from_disk) = load_graph(fixture("example2.json").as_ref()).unwrap();
    let reference = canonical_graph(CanonicalExample::SwitchingEdge);

    assert_eq!(from_disk.n_a(), reference.n_a());
    assert_eq!(from_disk.n_r(), reference.n_r());
    for bits in [vec![0u8], vec![1u8]] {
        let t = TreatmentVector::from_bits(bits).unwrap();
        let ours = from_disk.realize(&t).unwrap();
        let want = reference.realize(&t).unwrap();
        for a in 0..reference.n_a() {
            assert_eq!(ours.has_edge(a, 0), want.has_edge(a, 0), "unit {a} under {t}");
        }
    }
    assert_eq!(from_disk.pre_edge_pairs(), reference.pre_edge_pairs());
}

#[test]
fn verify_anchor_passes_and_fails_with_matching_exit_codes() {
    let passing = run(&[
        "verify-anchor",
        "--graph",
        &fixture("anchored_pair.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
    ]);
    let report = stdout_json(&passing);
    assert_eq!(report["results"]["passed"], true);
    assert_eq!(report["results"]["exhaustive"], true);

    // The switching-pair graph has no always-present edge, so claiming one
    // as an anchor must fail and report a witnessing assignment.
    let dir = std::env::temp_dir().join("endonet-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("switching_anchor.json");
    std::fs::write(&config, r#"{"p": 0.5, "anchor": [[1, 0]], "u": {"kind": "uniform"}}"#)
        .unwrap();
    let failing = endonet(&[
        "verify-anchor",
        "--graph",
        &fixture("example2.json"),
        "--config",
        &config.to_string_lossy(),
    ])
    .output()
    .unwrap();
    assert_eq!(failing.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&failing.stdout).unwrap();
    assert_eq!(report["results"]["passed"], false);
    let violation = &report["results"]["violations"][0];
    assert_eq!(violation["a"], 1);
    assert_eq!(violation["r"], 0);
    assert_eq!(violation["assignment"], "1");
}

#[test]
fn enumerate_check_passes_on_both_scenario_fixtures() {
    for (scenario, nr) in
        [("demo_scenario.json", "6"), ("unipartite_scenario.json", "6")]
    {
        let output = run(&["enumerate-check", "--scenario", &fixture(scenario), "--nr", nr]);
        assert!(output.status.success(), "{scenario} should pass");
        let line = String::from_utf8_lossy(&output.stdout);
        assert!(line.starts_with("PASS"), "wanted a PASS verdict, got: {line}");
        assert!(line.contains("E[mu_hat]"), "verdict should show the checked gap: {line}");
    }
}

#[test]
fn reruns_are_byte_identical_outside_the_timing_block() {
    let args = [
        "estimate",
        "--graph",
        &fixture("anchored_pair.json"),
        "--outcomes",
        &fixture("anchored_pair_outcomes.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
        "--draw-seed",
        "11",
    ];
    let first = run(&args);
    let second = run(&args);
    let mut a = stdout_json(&first);
    let mut b = stdout_json(&second);
    a.as_object_mut().unwrap().remove("timing");
    b.as_object_mut().unwrap().remove("timing");
    assert_eq!(a, b);
    // The underlying texts must agree byte for byte too, once the timing
    // lines are dropped.
    let strip = |out: &Output| -> String {
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .filter(|l| !l.contains("seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn csv_outputs_are_plain_tables() {
    let simulate = run(&[
        "simulate",
        "--scenario",
        &fixture("demo_scenario.json"),
        "--size",
        "40",
        "--reps",
        "10",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8_lossy(&simulate.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rep,estimate"));
    assert_eq!(lines.count(), 10);

    let bias = run(&["bias-table", "--format", "csv"]);
    let text = String::from_utf8_lossy(&bias.stdout);
    assert!(text.starts_with("example,label,naive_expectation"));
    assert_eq!(text.lines().count(), 4, "three examples under the header");
}

#[test]
fn bias_table_defaults_to_all_examples_with_exact_expectations() {
    let output = run(&["bias-table"]);
    let report = stdout_json(&output);
    let rows = report["results"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // With unit outcomes at p = 1/2 the three naive expectations are the
    // worked values y, y_1 - y_2, and y_2 / 16.
    assert_eq!(rows[0]["naive_expectation"], 1.0);
    assert_eq!(rows[1]["naive_expectation"], 0.0);
    assert_eq!(rows[2]["naive_expectation"], 0.0625);
    for row in rows {
        assert_eq!(row["anchored_expectation"], 0.0);
        assert_eq!(row["anchored_truth"], 0.0);
    }
}

#[test]
fn environment_variable_supplies_the_default_seed() {
    let args = [
        "estimate",
        "--graph",
        &fixture("anchored_pair.json"),
        "--outcomes",
        &fixture("anchored_pair_outcomes.json"),
        "--config",
        &fixture("anchored_pair_config.json"),
    ];
    let mut with_env = endonet(&args);
    with_env.env("ENDONET_SEED", "31");
    let output = with_env.output().unwrap();
    let report = stdout_json(&output);
    assert_eq!(report["command"]["resolved"]["treatment"]["seed"], 31);

    let mut malformed = endonet(&args);
    malformed.env("ENDONET_SEED", "not-a-number");
    let output = malformed.output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ENDONET_SEED"), "error should name the variable: {stderr}");
}
