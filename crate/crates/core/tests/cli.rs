mod common;

use std::process::{Command, Output};

use swgee::cli::{fit_report, FitArgs, FitReport, RunManifest, Schema, EXIT_NONCONVERGENCE, EXIT_ORACLE, EXIT_USAGE};
use swgee::inference::Correction;
use swgee::{Adjustment, Link, Structure};

fn swgee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swgee"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("SWGEE_THREADS")
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn fit_output_equals_library_report() {
    let path = common::fixture_path("trial_cp.csv");
    let out = swgee(&["fit", "--input", path.to_str().unwrap(), "--corr", "nested-exch", "--adjust", "maee", "--bc", "1,2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cli: FitReport = serde_json::from_slice(&out.stdout).unwrap();

    let args = FitArgs {
        input: path.clone(),
        schema: Schema::ClusterPeriod,
        link: Link::Logit,
        structure: Structure::NestedExchangeable,
        adjustment: Adjustment::Maee,
        corrections: vec![Correction::BC1, Correction::BC2],
        confidence: 0.95,
        max_iter: 200,
        tol: 1e-8,
        constraint: None,
        strict_uee: false,
    };
    let data = common::fixture("trial_cp.csv");
    let lib = fit_report(&data, &args, cli.manifest.clone()).unwrap();
    assert_eq!(cli, lib);
    assert_eq!(cli.intervals.iter().map(|i| i.estimator.as_str()).collect::<Vec<_>>(), ["model", "BC1", "BC2"]);
    assert_eq!(cli.manifest.timestamp, 1_700_000_000);
    let digest = swgee::cli::sha256_hex(&std::fs::read(&path).unwrap());
    assert_eq!(cli.manifest.input_digests.values().next().unwrap(), &digest);
    let or = cli.odds_ratio.unwrap();
    assert!((or.estimate - cli.theta[5].exp()).abs() < 1e-12);
}

#[test]
fn individual_schema_gives_same_fit_as_collapsed_rows() {
    let ind = common::fixture_path("trial_individual.csv");
    let collapsed = swgee(&["collapse", "--input", ind.to_str().unwrap()]);
    assert_eq!(collapsed.status.code(), Some(0));
    let dir = std::env::temp_dir().join(format!("swgee_cli_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cp = dir.join("collapsed.csv");
    std::fs::write(&cp, &collapsed.stdout).unwrap();
    let a = json(&swgee(&["fit", "--input", ind.to_str().unwrap(), "--schema", "individual", "--corr", "exch"]));
    let b = json(&swgee(&["fit", "--input", cp.to_str().unwrap(), "--corr", "exch"]));
    assert_eq!(a["theta"], b["theta"]);
    assert_eq!(a["parameters"], b["parameters"]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn exit_codes() {
    let path = common::fixture_path("trial_cp.csv");
    let p = path.to_str().unwrap();
    let out = swgee(&["fit", "--input", p, "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(EXIT_NONCONVERGENCE));
    assert_eq!(json(&out)["converged"], false);

    assert_eq!(swgee(&["fit", "--input", "/nonexistent.csv"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(swgee(&["fit", "--input", p, "--corr", "banded"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(swgee(&["simulate", "--preset", "table2-ne-small", "--replicates", "0", "--seed", "1"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(swgee(&["simulate", "--preset", "nope", "--seed", "1"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(swgee(&["are", "--design", "staircase", "22", "5", "--alpha0", "0.1", "--alpha1", "0.2", "--seed", "1"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(swgee(&["fit", "--input", p, "--constraint", "unit-decay", "--corr", "nested-exch"]).status.code(), Some(EXIT_USAGE));

    let ok = swgee(&["oracle-check", "--trials", "20", "--seed", "4"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["report"]["passed"], true);
    let bad = swgee(&["oracle-check", "--trials", "20", "--seed", "4", "--corrupt-v1"]);
    assert_eq!(bad.status.code(), Some(EXIT_ORACLE));
    assert!(json(&bad)["report"]["offending"].is_object());
}

#[test]
fn simulate_writes_replicate_csv_and_reports_seed() {
    let dir = std::env::temp_dir().join(format!("swgee_sim_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("reps.csv");
    let out = swgee(&[
        "simulate", "--preset", "table2-ed-small", "--replicates", "4", "--seed", "5", "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["manifest"]["seed"], 5);
    assert_eq!(v["report"]["replicates"], 4);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 4);
    std::fs::remove_dir_all(dir).unwrap();

    // no seed: one is generated and recorded
    let out = swgee(&["simulate", "--preset", "table2-ne-small", "--replicates", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["manifest"]["seed"].is_u64());
    assert!(String::from_utf8_lossy(&out.stderr).contains("generated seed"));
}

#[test]
fn are_from_design_csv_matches_staircase() {
    let dir = std::env::temp_dir().join(format!("swgee_are_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let design = swgee::efficiency::staircase(8, 5).unwrap();
    let text: String = design
        .iter()
        .map(|r| r.iter().map(u8::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let path = dir.join("design.csv");
    std::fs::write(&path, text).unwrap();
    let common_args = ["--alpha0", "0.1", "--alpha1", "0.05", "-K", "10", "--seed", "3"];
    let a = swgee(&[&["are", "--design", "staircase", "8", "5"][..], &common_args[..]].concat());
    let b = swgee(&[&["are", "--design-csv", path.to_str().unwrap()][..], &common_args[..]].concat());
    assert_eq!(json(&a)["result"], json(&b)["result"]);
    assert_eq!(json(&b)["manifest"]["input_digests"].as_object().unwrap().len(), 1);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn manifest_honours_source_date_epoch() {
    std::env::set_var("SOURCE_DATE_EPOCH", "42");
    let m = RunManifest::new("fit", &serde_json::json!({}), None);
    assert_eq!(m.timestamp, 42);
}
