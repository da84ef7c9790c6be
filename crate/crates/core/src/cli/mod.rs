//! Command-line front end. Every subcommand is a thin wrapper over library
//! calls and prints one JSON document (or a table with `--pretty`).

mod manifest;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationParams, Structure};
use crate::data::{ingest_cluster_period, ingest_individual, validate_design, TrialData};
use crate::efficiency::{are_estimate, interpolated_theta, staircase, AreConfig, AreReport, SizeSampler};
use crate::engine::{fit, Adjustment, Constraint, FitResult, ModelSpec};
use crate::error::SwgeeError;
use crate::inference::{cic_cp, intervals, parameter_names, sandwich_set, Correction, IntervalReport};
use crate::link::Link;
use crate::oracle::{run_oracle, OracleReport};
use crate::sim::{replicates_csv, run_replicates, summarize, ExperimentReport, SimConfig};

pub use manifest::{sha256_hex, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ORACLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "swgee", version, about = "Cluster-period GEE for stepped wedge trials with binary outcomes")]
pub struct Cli {
    /// Render a human-readable table instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a marginal model to trial data.
    Fit(FitArgs),
    /// Run a bias and coverage simulation experiment.
    Simulate(SimulateArgs),
    /// Asymptotic relative efficiency versus working independence.
    Are(AreArgs),
    /// Check cluster-period against individual-level estimating equations.
    OracleCheck(OracleArgs),
    /// Aggregate individual-level rows to cluster-period rows.
    Collapse(CollapseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Individual,
    ClusterPeriod,
}

fn parse_structure(s: &str) -> Result<Structure, String> {
    s.parse()
}

fn parse_link(s: &str) -> Result<Link, String> {
    s.parse()
}

fn parse_adjustment(s: &str) -> Result<Adjustment, String> {
    s.parse()
}

fn parse_correction(s: &str) -> Result<Correction, String> {
    s.parse()
}

fn parse_sizes(s: &str) -> Result<SizeSampler, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got {s:?}"))?;
    let low = a.trim().parse().map_err(|_| format!("bad lower size bound {a:?}"))?;
    let high = b.trim().parse().map_err(|_| format!("bad upper size bound {b:?}"))?;
    let sampler = SizeSampler::DiscreteUniform { low, high };
    sampler.validate().map_err(|e| e.to_string())?;
    Ok(sampler)
}

fn parse_constraint(s: &str) -> Result<Constraint, String> {
    match s {
        "equal-iccs" => Ok(Constraint::EqualIccs),
        "unit-decay" => Ok(Constraint::UnitDecay),
        other => Err(format!("unknown constraint {other:?} (expected equal-iccs or unit-decay)")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "cluster-period")]
    pub schema: Schema,
    #[arg(long, default_value = "logit", value_parser = parse_link)]
    pub link: Link,
    #[arg(long = "corr", default_value = "nested-exch", value_parser = parse_structure)]
    pub structure: Structure,
    #[arg(long = "adjust", default_value = "maee", value_parser = parse_adjustment)]
    pub adjustment: Adjustment,
    /// Variance corrections to report, e.g. `0,1,2,3`.
    #[arg(long = "bc", value_delimiter = ',', default_value = "0,1,2,3", value_parser = parse_correction)]
    pub corrections: Vec<Correction>,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Tie correlation parameters: equal-iccs (nested-exch) or unit-decay (exp-decay).
    #[arg(long, value_parser = parse_constraint)]
    pub constraint: Option<Constraint>,
    /// Use raw residual products in the correlation meat of UEE fits.
    #[arg(long)]
    pub strict_uee: bool,
}

impl FitArgs {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            link: self.link,
            structure: self.structure,
            adjustment: self.adjustment,
            max_outer_iterations: self.max_iter,
            tolerance: self.tol,
            constraint: self.constraint,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// One of table2-ne-small, table2-ne-large, table2-ed-small,
    /// table2-ed-large, coverage-sweep.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truth as `ne:a0,a1`, `ed:a0,rho`, `exch:a0` or `ind`.
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long, value_parser = parse_sizes)]
    pub sizes: Option<SizeSampler>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long = "adjust", value_delimiter = ',', value_parser = parse_adjustment)]
    pub adjustments: Option<Vec<Adjustment>>,
    #[arg(long = "bc", value_delimiter = ',', value_parser = parse_correction)]
    pub corrections: Option<Vec<Correction>>,
    /// Also write per-replicate estimates to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, env = "SWGEE_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AreArgs {
    /// `staircase I J`.
    #[arg(long, num_args = 3, value_names = ["KIND", "I", "J"])]
    pub design: Option<Vec<String>>,
    /// Treatment matrix as CSV: one row per cluster, one 0/1 column per period.
    #[arg(long, conflicts_with = "design")]
    pub design_csv: Option<PathBuf>,
    #[arg(long = "corr", default_value = "nested-exch", value_parser = parse_structure)]
    pub structure: Structure,
    #[arg(long, default_value_t = 0.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Discrete uniform cluster-period sizes `a:b`.
    #[arg(long, value_parser = parse_sizes, default_value = "50:150")]
    pub sizes: SizeSampler,
    /// Empirical cluster-period sizes (whitespace or comma separated), resampled with replacement.
    #[arg(long)]
    pub sizes_file: Option<PathBuf>,
    #[arg(short = 'K', long = "replicates", default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Control-arm prevalence in the first and last period, `p1:pJ`.
    #[arg(long, default_value = "0.25:0.20")]
    pub prevalence: String,
    #[arg(long, default_value_t = 0.75)]
    pub odds_ratio: f64,
    #[arg(long, env = "SWGEE_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleStructure {
    Ne,
    Ed,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub structure: OracleStructure,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perturb the cluster-period covariance (negative control).
    #[arg(long, hide = true)]
    pub corrupt_v1: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CollapseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Failure of a subcommand with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<SwgeeError> for CliError {
    fn from(e: SwgeeError) -> Self {
        let code = match e {
            SwgeeError::NonConvergence { .. } => EXIT_NONCONVERGENCE,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, message: message.into() }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s: u64 = rand::random();
        warn!("no --seed given; using generated seed {s}");
        s
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_data(bytes: &[u8], schema: Schema) -> Result<TrialData, SwgeeError> {
    match schema {
        Schema::Individual => ingest_individual(bytes),
        Schema::ClusterPeriod => ingest_cluster_period(bytes),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub clusters: usize,
    pub periods: usize,
    pub is_stepped_wedge: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    /// Standard error from the default pairing (BC1 for the mean, BC2 for
    /// the correlation parameters).
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorIntervals {
    pub estimator: String,
    pub report: IntervalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub design: DesignSummary,
    pub model: ModelSpec,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub clamped: bool,
    pub projected: bool,
    pub warnings: Vec<String>,
    pub theta: Vec<f64>,
    pub alpha: CorrelationParams,
    pub alpha_raw: Vec<f64>,
    pub parameters: Vec<ParameterRow>,
    pub odds_ratio: Option<OddsRatio>,
    pub intervals: Vec<EstimatorIntervals>,
    pub cic_cp: Option<f64>,
    pub inference_error: Option<String>,
}

fn inference_rows(
    fit: &FitResult,
    data: &TrialData,
    args: &FitArgs,
) -> Result<(Vec<ParameterRow>, Option<OddsRatio>, Vec<EstimatorIntervals>, f64), SwgeeError> {
    let mut wanted = args.corrections.clone();
    for c in [Correction::BC1, Correction::BC2] {
        if !wanted.contains(&c) {
            wanted.push(c);
        }
    }
    let set = sandwich_set(fit, data, &wanted, args.strict_uee)?;
    let i = data.n_clusters();
    let mut reports = vec![EstimatorIntervals {
        estimator: "model".into(),
        report: intervals(fit, i, &set.model_based, args.confidence)?,
    }];
    for &c in &args.corrections {
        reports.push(EstimatorIntervals {
            estimator: c.name().into(),
            report: intervals(fit, i, set.get(c).expect("computed"), args.confidence)?,
        });
    }
    let bc1 = intervals(fit, i, set.get(Correction::BC1).expect("computed"), args.confidence)?;
    let bc2 = intervals(fit, i, set.get(Correction::BC2).expect("computed"), args.confidence)?;
    let p = fit.theta.len();
    let rows = bc1
        .intervals
        .iter()
        .zip(&bc2.intervals)
        .enumerate()
        .map(|(k, (a, b))| {
            let iv = if k < p { a } else { b };
            ParameterRow {
                name: iv.name.clone(),
                estimate: iv.estimate,
                se: Some(iv.se),
                lower: Some(iv.lower),
                upper: Some(iv.upper),
            }
        })
        .collect::<Vec<_>>();
    let odds = (fit.spec.link == Link::Logit).then(|| {
        let d = &rows[p - 1];
        OddsRatio {
            estimate: d.estimate.exp(),
            lower: d.lower.unwrap_or(f64::NAN).exp(),
            upper: d.upper.unwrap_or(f64::NAN).exp(),
        }
    });
    let cic = cic_cp(fit, data)?;
    Ok((rows, odds, reports, cic))
}

/// Fits `data` and assembles the report printed by `fit`.
pub fn fit_report(data: &TrialData, args: &FitArgs, manifest: RunManifest) -> Result<FitReport, SwgeeError> {
    let info = validate_design(data);
    let result = fit(data, &args.spec())?;
    let names = parameter_names(&result);
    let estimates: Vec<f64> = result.theta.iter().copied().chain(result.alpha.values()).collect();
    let bare = || {
        names
            .iter()
            .zip(&estimates)
            .map(|(n, &e)| ParameterRow { name: n.clone(), estimate: e, se: None, lower: None, upper: None })
            .collect::<Vec<_>>()
    };
    let (parameters, odds_ratio, intervals, cic, inference_error) = if result.converged {
        match inference_rows(&result, data, args) {
            Ok((rows, odds, ivs, cic)) => (rows, odds, ivs, Some(cic), None),
            Err(e) => (bare(), None, vec![], None, Some(e.to_string())),
        }
    } else {
        (bare(), None, vec![], None, None)
    };
    Ok(FitReport {
        manifest,
        design: DesignSummary {
            clusters: data.n_clusters(),
            periods: data.n_periods(),
            is_stepped_wedge: info.is_stepped_wedge,
            warnings: info.warnings,
        },
        model: result.spec,
        converged: result.converged,
        iterations: result.iterations,
        score_norm: result.score_norm,
        clamped: result.clamped,
        projected: result.projected,
        warnings: result.warnings.clone(),
        theta: result.theta.clone(),
        alpha: result.alpha,
        alpha_raw: result.alpha_raw.clone(),
        parameters,
        odds_ratio,
        intervals,
        cic_cp: cic,
        inference_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub manifest: RunManifest,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreOutput {
    pub manifest: RunManifest,
    pub config: AreConfig,
    pub result: AreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub manifest: RunManifest,
    pub report: OracleReport,
}

fn parse_truth(s: &str) -> Result<CorrelationParams, CliError> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let values: Vec<f64> = if rest.trim().is_empty() {
        vec![]
    } else {
        rest.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad truth value {v:?}"))))
            .collect::<Result<_, _>>()?
    };
    let structure: Structure = kind.parse().map_err(usage)?;
    CorrelationParams::from_values(structure, &values).map_err(CliError::from)
}

/// Resolves the simulation configuration from a preset and overrides.
pub fn simulation_config(args: &SimulateArgs, seed: u64) -> Result<SimConfig, CliError> {
    let mut cfg = match &args.preset {
        Some(name) => SimConfig::preset(name)?,
        None => {
            let truth = args.truth.as_deref().ok_or_else(|| usage("either --preset or --truth is required"))?;
            SimConfig::new(
                12,
                parse_truth(truth)?,
                SizeSampler::DiscreteUniform { low: 50, high: 150 },
                3000,
                seed,
            )
        }
    };
    if args.preset.is_some() {
        if let Some(t) = &args.truth {
            cfg.truth = parse_truth(t)?;
        }
    }
    cfg.seed = seed;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = &args.sizes {
        cfg.sizes = s.clone();
    }
    if let Some(i) = args.clusters {
        cfg.clusters = i;
    }
    if let Some(j) = args.periods {
        cfg.periods = j;
    }
    if let Some(a) = &args.adjustments {
        cfg.adjustments = a.clone();
    }
    if let Some(c) = &args.corrections {
        cfg.corrections = c.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_treatment_csv(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CliError> {
    let mut rows = Vec::new();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(bytes);
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("design row {}: {e}", k + 1)))?;
        let row = rec
            .iter()
            .map(|v| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(usage(format!("design row {}: expected 0 or 1, got {other:?}", k + 1))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(usage("design CSV must be a non-empty rectangular 0/1 matrix"));
    }
    Ok(rows)
}

fn read_sizes_file(bytes: &[u8]) -> Result<SizeSampler, CliError> {
    let text = String::from_utf8_lossy(bytes);
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| usage(format!("bad size {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let sampler = SizeSampler::Empirical { values };
    sampler.validate()?;
    Ok(sampler)
}

/// Resolves the efficiency configuration; returns it with the digests of
/// any files read.
pub fn are_config(args: &AreArgs, seed: u64) -> Result<(AreConfig, Vec<(String, Vec<u8>)>), CliError> {
    let mut inputs = Vec::new();
    let treatment = match (&args.design, &args.design_csv) {
        (Some(d), _) => {
            if d[0] != "staircase" {
                return Err(usage(format!("unknown design kind {:?} (expected staircase)", d[0])));
            }
            let i = d[1].parse().map_err(|_| usage("design I must be an integer"))?;
            let j = d[2].parse().map_err(|_| usage("design J must be an integer"))?;
            staircase(i, j)?
        }
        (None, Some(path)) => {
            let bytes = read_input(path)?;
            let t = read_treatment_csv(&bytes)?;
            inputs.push((path.display().to_string(), bytes));
            t
        }
        (None, None) => return Err(usage("either --design or --design-csv is required")),
    };
    let sizes = match &args.sizes_file {
        Some(path) => {
            let bytes = read_input(path)?;
            let s = read_sizes_file(&bytes)?;
            inputs.push((path.display().to_string(), bytes));
            s
        }
        None => args.sizes.clone(),
    };
    let (p1, pj) = args
        .prevalence
        .split_once(':')
        .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
        .filter(|(a, b)| *a > 0.0 && *a < 1.0 && *b > 0.0 && *b < 1.0)
        .ok_or_else(|| usage(format!("bad --prevalence {:?}", args.prevalence)))?;
    if !(args.odds_ratio > 0.0) {
        return Err(usage("--odds-ratio must be positive"));
    }
    let periods = treatment[0].len();
    let truth = match args.structure {
        Structure::Independence => CorrelationParams::Independence,
        Structure::Exchangeable => CorrelationParams::Exchangeable { alpha0: args.alpha0 },
        Structure::NestedExchangeable => {
            CorrelationParams::NestedExchangeable { alpha0: args.alpha0, alpha1: args.alpha1 }
        }
        Structure::ExponentialDecay => {
            CorrelationParams::ExponentialDecay { alpha0: args.alpha0, rho: args.rho }
        }
    };
    let config = AreConfig {
        treatment,
        link: Link::Logit,
        theta: interpolated_theta(periods, p1, pj, args.odds_ratio.ln()),
        truth,
        sizes,
        replicates: args.replicates,
        seed,
    };
    config.validate()?;
    Ok((config, inputs))
}

fn emit<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| usage(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| usage(e.to_string()))
}

fn print_fit_table(r: &FitReport) {
    println!(
        "{} / {} / {}: converged = {} after {} iterations",
        r.model.link.name(),
        r.model.structure.name(),
        format!("{:?}", r.model.adjustment).to_uppercase(),
        r.converged,
        r.iterations
    );
    println!("{:<10} {:>12} {:>10} {:>12} {:>12}", "parameter", "estimate", "se", "lower", "upper");
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.5}"));
    for p in &r.parameters {
        println!("{:<10} {:>12.5} {:>10} {:>12} {:>12}", p.name, p.estimate, f(p.se), f(p.lower), f(p.upper));
    }
    if let Some(or) = &r.odds_ratio {
        println!("odds ratio {:.4} ({:.4}, {:.4})", or.estimate, or.lower, or.upper);
    }
    if let Some(c) = r.cic_cp {
        println!("CIC_cp {c:.4}");
    }
    for w in r.warnings.iter().chain(&r.design.warnings) {
        println!("warning: {w}");
    }
}

fn print_sim_table(r: &ExperimentReport) {
    println!("{} replicates ({} generation failures)", r.replicates, r.generation_failures);
    for s in &r.summaries {
        println!(
            "{:?}: {} converged, {} not converged{}",
            s.adjustment,
            s.converged,
            s.non_converged,
            if s.unreliable { " (unreliable)" } else { "" }
        );
        for b in &s.bias {
            let rb = b.relative_bias_pct.map_or("-".to_string(), |v| format!("{v:.2}%"));
            println!("  {:<8} truth {:>9.4} mean {:>9.4} bias {rb}", b.parameter, b.truth, b.mean_estimate);
        }
        for c in s.coverage.iter().filter(|c| c.coverage.is_some()) {
            println!("  coverage {:<6} {:<8} {:.3}", c.estimator, c.parameter, c.coverage.unwrap_or(f64::NAN));
        }
    }
}

fn cmd_fit(args: &FitArgs, pretty: bool) -> Result<i32, CliError> {
    let bytes = read_input(&args.input)?;
    let data = load_data(&bytes, args.schema)?;
    let manifest = RunManifest::new("fit", args, None).with_input(&args.input.display().to_string(), &bytes);
    let report = fit_report(&data, args, manifest)?;
    if pretty {
        print_fit_table(&report);
    } else {
        emit(&report)?;
    }
    if let Some(e) = &report.inference_error {
        eprintln!("error: {e}");
        return Ok(EXIT_USAGE);
    }
    Ok(if report.converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
}

fn cmd_simulate(args: &SimulateArgs, pretty: bool) -> Result<i32, CliError> {
    let seed = resolve_seed(args.seed);
    let cfg = simulation_config(args, seed)?;
    let outcomes = with_threads(args.threads, || run_replicates(&cfg))??;
    let report = summarize(&cfg, &outcomes);
    if let Some(path) = &args.csv {
        let text = replicates_csv(&cfg, &outcomes)?;
        fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    if pretty {
        print_sim_table(&report);
    } else {
        let manifest = RunManifest::new("simulate", args, Some(seed));
        emit(&SimulateOutput { manifest, report })?;
    }
    Ok(EXIT_OK)
}

fn cmd_are(args: &AreArgs, pretty: bool) -> Result<i32, CliError> {
    let seed = resolve_seed(args.seed);
    let (config, inputs) = are_config(args, seed)?;
    let result = with_threads(args.threads, || are_estimate(&config))??;
    if pretty {
        println!("mean ARE {:.4} (MC SE {:.4}) over {} replicates", result.mean, result.mc_se, result.replicates);
        for q in &result.quantiles {
            println!("  q{:<6} {:.4}", q.p, q.value);
        }
    } else {
        let mut manifest = RunManifest::new("are", args, Some(seed));
        for (name, bytes) in &inputs {
            manifest = manifest.with_input(name, bytes);
        }
        emit(&AreOutput { manifest, config, result })?;
    }
    Ok(EXIT_OK)
}

fn cmd_oracle(args: &OracleArgs, pretty: bool) -> Result<i32, CliError> {
    let seed = resolve_seed(args.seed);
    let structures = match args.structure {
        OracleStructure::Ne => vec![Structure::NestedExchangeable],
        OracleStructure::Ed => vec![Structure::ExponentialDecay],
        OracleStructure::Both => vec![Structure::NestedExchangeable, Structure::ExponentialDecay],
    };
    let report = run_oracle(&structures, args.trials, seed, args.corrupt_v1)?;
    let passed = report.passed;
    if pretty {
        println!(
            "{} instances, max discrepancy {:e} (tolerance {:e}): {}",
            report.trials,
            report.max_discrepancy,
            report.tolerance,
            if passed { "ok" } else { "VIOLATION" }
        );
        if let Some(inst) = &report.offending {
            println!("{}", serde_json::to_string(inst).unwrap_or_default());
        }
    } else {
        let manifest = RunManifest::new("oracle-check", args, Some(seed));
        emit(&OracleOutput { manifest, report })?;
    }
    Ok(if passed { EXIT_OK } else { EXIT_ORACLE })
}

fn cmd_collapse(args: &CollapseArgs) -> Result<i32, CliError> {
    let bytes = read_input(&args.input)?;
    let data = ingest_individual(bytes.as_slice())?;
    let text = data.to_cluster_period_csv()?;
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.pretty),
        Command::Simulate(a) => cmd_simulate(a, cli.pretty),
        Command::Are(a) => cmd_are(a, cli.pretty),
        Command::OracleCheck(a) => cmd_oracle(a, cli.pretty),
        Command::Collapse(a) => cmd_collapse(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
