//! Command-line front end.
//!
//! Every subcommand prints one JSON report on stdout. Exit codes: 0 success,
//! 1 usage error, 2 consistency failure (an internal error, or any report
//! check that did not pass).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    best_static_backend, compare_stats, estimate_cabello, nonlocality_witness_with, run_monte_carlo, Backend,
    Execution, MeasurementPlan, Simulator, WitnessSearch, REPORTED_EXPERIMENTAL_VALUE,
};
use crate::hvmodels::{EpsilonAssignment, ModelKind};
use crate::kscheck::{self, NONCONTEXTUAL_BOUND};
use crate::pmsquare::{grid_contexts, Cell, GridIndex, PmSquare, TripleSpec};
use crate::qcore::{expectation, Sign, StateVector, NORMALIZATION_TOL};
use crate::report::{Check, Config, Report};

/// Environment variable supplying the default `--seed`.
pub const SEED_ENV: &str = "PMLAB_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONSISTENCY: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pmlab", version, about = "Sequential-measurement hidden-variable laboratory for the Peres-Mermin square")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a measurement plan and report outcome statistics.
    Simulate(SimulateArgs),
    /// Estimate the Cabello functional from sequential context measurements.
    Inequality(InequalityArgs),
    /// Exhaustive check of all static valuations.
    KsCheck,
    /// Print the Bell eigenbasis table, the grid, its commutation map and context signs.
    Tables,
    /// Search for a Model C jump that flips a distant cell's predetermined value.
    Witness(WitnessArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// qm | a | b | c | static | static:<code>
    #[arg(long, default_value = "c")]
    model: String,
    /// state:00|01|10|11|singlet, bell:+-+|-++|++-|---, or amps:re,im;re,im;re,im;re,im
    #[arg(long, default_value = "state:singlet")]
    state: String,
    /// Base seed; defaults to $PMLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Run trials on a single thread. Results are identical either way.
    #[arg(long)]
    serial: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// r1..r3, c1..c3, triple, or cells such as "1,1;2,2" / "11,22,13" / "t1 t2 t3".
    #[arg(long, default_value = "c3")]
    steps: String,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Only propagate the exact distribution; skip Monte Carlo.
    #[arg(long)]
    exact: bool,
    /// Also write the outcome table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InequalityArgs {
    #[command(flatten)]
    common: Common,
    /// Trials per context.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
}

#[derive(Debug, Args)]
struct WitnessArgs {
    #[arg(long, default_value = "state:00")]
    state: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling attempts per candidate.
    #[arg(long, default_value_t = 1000)]
    budget: u64,
}

/// Result of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Parses a state specifier into a normalized state.
pub fn parse_state(spec: &str) -> Result<StateVector> {
    let bad = || Error::usage(format!("malformed state specifier {spec:?}"));
    let (kind, body) = spec.split_once(':').ok_or_else(bad)?;
    match kind {
        "state" => {
            let amps = match body {
                "00" => [1.0, 0.0, 0.0, 0.0],
                "01" => [0.0, 1.0, 0.0, 0.0],
                "10" => [0.0, 0.0, 1.0, 0.0],
                "11" => [0.0, 0.0, 0.0, 1.0],
                "singlet" => [0.0, 1.0, -1.0, 0.0],
                _ => return Err(bad()),
            };
            StateVector::from_real(amps)
        }
        "bell" => {
            let signs: Vec<Sign> = body
                .chars()
                .map(|c| match c {
                    '+' => Ok(Sign::Plus),
                    '-' => Ok(Sign::Minus),
                    _ => Err(bad()),
                })
                .collect::<Result<_>>()?;
            let pattern: [Sign; 3] = signs.try_into().map_err(|_| bad())?;
            TripleSpec::new().bell(pattern).copied().ok_or_else(bad)
        }
        "amps" => {
            let parts: Vec<&str> = body.split(';').collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let mut amps = [Complex64::new(0.0, 0.0); 4];
            for (slot, part) in amps.iter_mut().zip(parts) {
                let (re, im) = part.split_once(',').ok_or_else(bad)?;
                let re: f64 = re.trim().parse().map_err(|_| bad())?;
                let im: f64 = im.trim().parse().map_err(|_| bad())?;
                *slot = Complex64::new(re, im);
            }
            StateVector::new(amps).map_err(|e| Error::usage(format!("state specifier {spec:?}: {e}")))
        }
        _ => Err(bad()),
    }
}

fn parse_cell_token(token: &str) -> Result<Cell> {
    let bad = || Error::usage(format!("malformed cell {token:?}"));
    if let Some(k) = token.strip_prefix('t') {
        return Cell::triple(k.parse().map_err(|_| bad())?).map_err(|_| bad());
    }
    let digits: Vec<u8> = match token.split_once(',') {
        Some((r, c)) => vec![r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?],
        None if token.len() == 2 => token.chars().map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(bad)).collect::<Result<_>>()?,
        None => return Err(bad()),
    };
    Cell::grid(digits[0], digits[1]).map_err(|_| bad())
}

/// Expands a step specifier into cells.
pub fn parse_steps(spec: &str) -> Result<Vec<Cell>> {
    let spec = spec.trim();
    let context = |k: usize| grid_contexts()[k].members.to_vec();
    match spec {
        "r1" => return Ok(context(0)),
        "r2" => return Ok(context(1)),
        "r3" => return Ok(context(2)),
        "c1" => return Ok(context(3)),
        "c2" => return Ok(context(4)),
        "c3" => return Ok(context(5)),
        "triple" => return Ok(TripleSpec::new().context().members.to_vec()),
        _ => {}
    }
    let mut cells = Vec::new();
    for token in spec.split(|c: char| c == ';' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = token.split(',').collect();
        let compact_list = parts.len() > 1 && parts.iter().all(|p| p.len() == 2 || p.starts_with('t'));
        if compact_list {
            for p in parts {
                cells.push(parse_cell_token(p)?);
            }
        } else {
            cells.push(parse_cell_token(token)?);
        }
    }
    if cells.is_empty() {
        return Err(Error::usage("empty step list"));
    }
    Ok(cells)
}

/// Parses `--model`.
pub fn parse_backend(spec: &str) -> Result<Backend> {
    match spec {
        "qm" => Ok(Backend::Qm),
        "a" => Ok(Backend::Model(ModelKind::A)),
        "b" => Ok(Backend::Model(ModelKind::B)),
        "c" => Ok(Backend::Model(ModelKind::C)),
        "static" => Ok(best_static_backend()),
        other => {
            let code = other
                .strip_prefix("static:")
                .and_then(|c| c.parse::<u16>().ok())
                .ok_or_else(|| Error::usage(format!("unknown model {other:?}")))?;
            Ok(Backend::Static(EpsilonAssignment::new(9, code).map_err(|e| Error::usage(e.to_string()))?))
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::usage(format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

fn execution(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

#[derive(Serialize)]
struct SimulateResults {
    steps: Vec<String>,
    context: Option<String>,
    context_sign: Option<i8>,
    exact: crate::qcore::OutcomeDistribution,
    quantum_exact: crate::qcore::OutcomeDistribution,
    stats: Option<crate::harness::StatsReport>,
    comparison: Option<crate::harness::Comparison>,
}

fn simulate(args: &SimulateArgs) -> Result<Report> {
    let backend = parse_backend(&args.common.model)?;
    let state = parse_state(&args.common.state)?;
    let steps = parse_steps(&args.steps)?;
    let seed = resolve_seed(args.common.seed)?;
    let plan = MeasurementPlan::new(state, steps.clone(), backend, args.trials, seed).map_err(|e| match e {
        Error::Validation(m) => Error::Usage(m),
        other => other,
    })?;
    let context = plan.context();

    let quantum_exact = Simulator::new(Backend::Qm).run_ensemble_exact(&state, &steps)?;
    let mut checks = Vec::new();
    let (exact, stats, comparison) = if args.exact {
        (Simulator::new(backend).run_ensemble_exact(&state, &steps)?, None, None)
    } else {
        let (stats, exact) = run_monte_carlo(&plan, execution(args.common.serial))?;
        let cmp = compare_stats(&stats, &exact)?;
        checks.push(Check::new(
            "monte_carlo_within_5_sigma",
            cmp.pass,
            format!("{} outcome(s) flagged; max |freq - exact| = {:.3e}", cmp.flagged.len(), cmp.max_abs_deviation),
        ));
        if let (Some(ctx), Some(mean), Backend::Qm | Backend::Model(ModelKind::C)) = (context, stats.mean_product, backend) {
            checks.push(Check::new(
                "context_product_deterministic",
                mean == ctx.sign.as_f64(),
                format!("mean outcome product {mean}, context sign {}", ctx.sign.value()),
            ));
        }
        (exact, Some(stats), Some(cmp))
    };
    let diff = exact.max_abs_diff(&quantum_exact);
    checks.insert(
        0,
        Check::new(
            "exact_matches_quantum",
            diff <= NORMALIZATION_TOL,
            format!("max |p_model - p_qm| = {diff:.3e} over {} outcome sequences", quantum_exact.len()),
        ),
    );

    if let (Some(path), Some(stats)) = (&args.csv, &stats) {
        write_csv(path, stats)?;
    }

    let results = SimulateResults {
        steps: steps.iter().map(|c| c.name()).collect(),
        context: context.map(|c| c.kind.to_string()),
        context_sign: context.map(|c| c.sign.value()),
        exact,
        quantum_exact,
        stats,
        comparison,
    };
    let config = Config {
        model: Some(backend.name()),
        state: Some(args.common.state.clone()),
        plan: Some(results.steps.clone()),
        trials: (!args.exact).then_some(args.trials),
        seed: (!args.exact).then_some(seed),
        ..Config::new()
    };
    Report::new("simulate", config, &results, checks)
}

fn write_csv(path: &PathBuf, stats: &crate::harness::StatsReport) -> Result<()> {
    let io = |e: csv::Error| Error::usage(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["outcomes", "count", "frequency", "exact", "stderr"]).map_err(io)?;
    for r in &stats.rows {
        w.write_record([
            crate::qcore::sign_string(&r.outcomes),
            r.count.to_string(),
            r.frequency.to_string(),
            r.exact.to_string(),
            r.stderr.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::usage(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct LiteratureNote {
    experimental_singlet_value: f64,
    note: &'static str,
}

#[derive(Serialize)]
struct InequalityResults {
    estimate: crate::harness::CabelloEstimate,
    exact_quantum_value: f64,
    noncontextual_bound: i32,
    literature: LiteratureNote,
}

fn inequality(args: &InequalityArgs) -> Result<Report> {
    let backend = parse_backend(&args.common.model)?;
    let state = parse_state(&args.common.state)?;
    let seed = resolve_seed(args.common.seed)?;
    if args.trials == 0 {
        return Err(Error::usage("--trials must be at least 1"));
    }
    let estimate = estimate_cabello(backend, &state, args.trials, seed, execution(args.common.serial))?;
    let exact = PmSquare::build().cabello_value_exact(&state);
    let bound = f64::from(NONCONTEXTUAL_BOUND);
    let mut checks = vec![Check::new(
        "exact_quantum_value_is_6",
        (exact - 6.0).abs() <= NORMALIZATION_TOL,
        format!("exact value {exact}"),
    )];
    match backend {
        Backend::Static(_) => checks.push(Check::new(
            "respects_noncontextual_bound",
            estimate.value <= bound,
            format!("estimate {} <= {bound}", estimate.value),
        )),
        _ => {
            let tol = 5.0 * estimate.stderr + NORMALIZATION_TOL;
            checks.push(Check::new(
                "estimate_matches_exact",
                (estimate.value - exact).abs() <= tol,
                format!("|{} - {exact}| <= {tol:.3e}", estimate.value),
            ));
            checks.push(Check::new(
                "violates_noncontextual_bound",
                estimate.value > bound,
                format!("estimate {} > {bound}", estimate.value),
            ));
        }
    }
    let results = InequalityResults {
        estimate,
        exact_quantum_value: exact,
        noncontextual_bound: NONCONTEXTUAL_BOUND,
        literature: LiteratureNote {
            experimental_singlet_value: REPORTED_EXPERIMENTAL_VALUE,
            note: "published trapped-ion measurement, shown for context only; the simulator has no noise model",
        },
    };
    let config = Config {
        model: Some(backend.name()),
        state: Some(args.common.state.clone()),
        plan: Some(grid_contexts().iter().map(|c| c.kind.to_string()).collect()),
        trials: Some(args.trials),
        seed: Some(seed),
        ..Config::new()
    };
    Report::new("inequality", config, &results, checks)
}

fn ks_check() -> Result<Report> {
    let r = kscheck::ks_contradiction_check();
    let checks = vec![
        Check::new("max_functional_is_4", r.max_functional == NONCONTEXTUAL_BOUND, format!("max = {}", r.max_functional)),
        Check::new(
            "no_valuation_satisfies_all_contexts",
            !r.exists_satisfying_all,
            format!("{} of {} satisfy all six", r.satisfying_count, r.valuations_checked),
        ),
        Check::new(
            "max_constraints_satisfied_is_5",
            r.max_constraints_satisfied == 5,
            format!("max satisfied = {}", r.max_constraints_satisfied),
        ),
        Check::new(
            "parity_argument",
            r.parity_holds_for_all && r.parity_sign_product == -1,
            "every valuation's six context products multiply to +1; required signs multiply to -1",
        ),
    ];
    Report::new("ks-check", Config::new(), &r, checks)
}

#[derive(Serialize)]
struct GridCell {
    cell: String,
    row: u8,
    col: u8,
    operator: String,
}

#[derive(Serialize)]
struct ContextRow {
    context: String,
    members: Vec<String>,
    sign: i8,
    cabello_coefficient: i8,
}

#[derive(Serialize)]
struct TablesResults {
    eigenbasis: Vec<crate::pmsquare::BellEntry>,
    grid: Vec<GridCell>,
    commutation: Vec<Vec<bool>>,
    commuting_pairs: usize,
    contexts: Vec<ContextRow>,
}

fn tables() -> Result<Report> {
    let square = PmSquare::build();
    let triple = TripleSpec::new();
    let contexts = square.contexts()?;
    let map = square.commutation_map();

    let mut eigen_ok = true;
    for e in &triple.eigenbasis {
        for (obs, s) in triple.observables.iter().zip(e.eigenvalues) {
            eigen_ok &= (expectation(&e.vector, obs) - s.as_f64()).abs() <= crate::qcore::STRUCTURAL_TOL;
        }
    }
    let mut pattern_ok = true;
    let mut pairs = 0;
    for a in GridIndex::all() {
        for b in GridIndex::all().filter(|b| b.bit() > a.bit()) {
            let commute = map[a.bit()][b.bit()];
            pattern_ok &= commute == a.shares_context_with(b);
            pairs += usize::from(commute);
        }
    }
    let checks = vec![
        Check::new("eigenbasis_table_verified", eigen_ok, "each Bell vector has the tabulated eigenvalues"),
        Check::new("commute_iff_same_row_or_column", pattern_ok, format!("{pairs} commuting unordered pairs")),
        Check::new("context_signs_verified", contexts.len() == 6, "row products +I; column products +I, +I, -I"),
    ];
    let results = TablesResults {
        eigenbasis: triple.eigenbasis.to_vec(),
        grid: GridIndex::all()
            .map(|g| {
                let (a, b) = g.factors();
                GridCell { cell: g.name(), row: g.row(), col: g.col(), operator: format!("{}⊗{}", a.symbol(), b.symbol()) }
            })
            .collect(),
        commutation: map.iter().map(|r| r.to_vec()).collect(),
        commuting_pairs: pairs,
        contexts: contexts
            .iter()
            .map(|c| ContextRow {
                context: c.kind.to_string(),
                members: c.members.iter().map(|m| m.name()).collect(),
                sign: c.sign.value(),
                cabello_coefficient: c.cabello_coefficient().value(),
            })
            .collect(),
    };
    Report::new("tables", Config::new(), &results, checks)
}

fn witness(args: &WitnessArgs) -> Result<Report> {
    let state = parse_state(&args.state)?;
    let seed = resolve_seed(args.seed)?;
    if args.budget == 0 {
        return Err(Error::usage("--budget must be at least 1"));
    }
    let search = WitnessSearch { budget: args.budget, seed, ..WitnessSearch::default() };
    let r = nonlocality_witness_with(&state, &search)?;
    let detail = match &r.instance {
        Some(i) => format!(
            "measuring {} -> {} flipped {:?}",
            i.candidate.measured.name(),
            i.candidate.outcome,
            i.distant_changed_cells.iter().map(|c| c.name()).collect::<Vec<_>>()
        ),
        None => format!("no flip observed among {} candidates", r.candidates.len()),
    };
    let checks = vec![Check::new("witness_found", r.found, detail)];
    let config = Config { model: Some("c".into()), state: Some(args.state.clone()), seed: Some(seed), ..Config::new() };
    Report::new("witness", config, &r, checks)
}

fn dispatch(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Inequality(a) => inequality(a),
        Command::KsCheck => ks_check(),
        Command::Tables => tables(),
        Command::Witness(a) => witness(a),
    }
}

/// Runs the CLI on `argv` (including the program name).
pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code: EXIT_USAGE, stdout: String::new(), stderr: text }
            } else {
                Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
            };
        }
    };
    match dispatch(&cli) {
        Ok(report) => {
            let code = if report.all_pass() { EXIT_OK } else { EXIT_CONSISTENCY };
            let stderr = report
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("check failed: {}: {}\n", c.name, c.detail))
                .collect();
            Outcome { code, stdout: report.to_json(), stderr }
        }
        Err(e @ (Error::Usage(_) | Error::Validation(_))) => {
            Outcome { code: EXIT_USAGE, stdout: String::new(), stderr: format!("pmlab: {e}\n") }
        }
        Err(e) => Outcome { code: EXIT_CONSISTENCY, stdout: String::new(), stderr: format!("pmlab: {e}\n") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_specs() {
        let s = parse_state("state:singlet").unwrap();
        let singlet = StateVector::from_real([0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!((s.overlap_sqr(&singlet) - 1.0).abs() < 1e-15);
        let phi = StateVector::from_real([1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((parse_state("bell:+-+").unwrap().overlap_sqr(&phi) - 1.0).abs() < 1e-15);
        assert!((parse_state("amps:1,0;0,0;0,0;1,0").unwrap().overlap_sqr(&phi) - 1.0).abs() < 1e-15);
        assert!((parse_state("bell:---").unwrap().overlap_sqr(&singlet) - 1.0).abs() < 1e-15);
        for bad in ["", "state:2", "bell:+++", "bell:+-", "amps:1,0;0,0", "amps:0,0;0,0;0,0;0,0", "amps:x,0;0,0;0,0;1,0", "foo:00"] {
            assert!(matches!(parse_state(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn step_specs() {
        let c3 = parse_steps("c3").unwrap();
        assert_eq!(c3.iter().map(|c| c.name()).collect::<Vec<_>>(), ["A13", "A23", "A33"]);
        assert_eq!(parse_steps("r2").unwrap()[0].name(), "A21");
        assert_eq!(parse_steps("triple").unwrap(), vec![Cell::Triple(1), Cell::Triple(2), Cell::Triple(3)]);
        let a = parse_steps("1,1;2,2;1,1").unwrap();
        let b = parse_steps("11,22,11").unwrap();
        let c = parse_steps("11 22 11").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(parse_steps("t1,t3").unwrap(), vec![Cell::Triple(1), Cell::Triple(3)]);
        for bad in ["", "4,1", "x", "1,1,1", "t4", "123"] {
            assert!(parse_steps(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn backend_specs() {
        assert_eq!(parse_backend("qm").unwrap(), Backend::Qm);
        assert_eq!(parse_backend("c").unwrap(), Backend::Model(ModelKind::C));
        assert!(matches!(parse_backend("static").unwrap(), Backend::Static(_)));
        assert_eq!(parse_backend("static:511").unwrap().name(), "static:511");
        assert!(parse_backend("static:512").is_err());
        assert!(parse_backend("d").is_err());
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["pmlab"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "bogus"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "simulate", "--state", "state:zz"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "simulate", "--trials", "0"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "simulate", "--model", "a", "--steps", "r1"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "inequality", "--model", "b"]).code, EXIT_USAGE);
        assert_eq!(run(["pmlab", "--help"]).code, EXIT_OK);
    }

    #[test]
    fn ks_check_report() {
        let out = run(["pmlab", "ks-check"]);
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
        let r = Report::from_json(&out.stdout).unwrap();
        assert_eq!(r.results["max_functional"], 4);
        assert_eq!(r.results["exists_satisfying_all"], false);
    }
}
