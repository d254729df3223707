//! Acceptance suite, run without the libtest harness so its output is never
//! captured. Criteria run in sequence (wall-clock limits are not distorted by
//! concurrent tests), print one PASS/FAIL line each, and the process exits
//! nonzero if any failed.

use std::time::{Duration, Instant};

use pmlab::cli::{run, EXIT_OK};
use pmlab::harness::{
    compare_stats, nonlocality_witness, run_monte_carlo, trial_rng, Backend, Execution, MeasurementPlan, Simulator,
    REPORTED_EXPERIMENTAL_VALUE,
};
use pmlab::hvmodels::{EpsilonAssignment, HiddenState, HvModel, ModelKind};
use pmlab::kscheck::ks_contradiction_check;
use pmlab::pmsquare::{cabello_value_exact, grid_contexts, Cell, TripleSpec};
use pmlab::qcore::{Sign, StateVector, C64};
use pmlab::report::Report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: Sign = Sign::Plus;
const M: Sign = Sign::Minus;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn generic_state() -> StateVector {
    StateVector::new([C64::new(0.6, 0.1), C64::new(0.5, 0.0), C64::new(0.4, 0.2), C64::new(0.3, -0.1)]).unwrap()
}

fn singlet() -> StateVector {
    StateVector::from_real([0.0, 1.0, -1.0, 0.0]).unwrap()
}

fn named_states() -> Vec<(String, StateVector)> {
    let t = TripleSpec::new();
    let mut v = vec![("singlet".to_string(), singlet()), ("|00>".to_string(), StateVector::basis(0))];
    for e in &t.eigenbasis {
        v.push((e.name.to_string(), e.vector));
    }
    v
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    o.detail = format!("{} [{:.3}s]", o.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed >= limit {
            o.pass = false;
            o.detail = format!("{} exceeds {:.1}s limit", o.detail, limit.as_secs_f64());
        }
    }
    o
}

fn quantum_value_is_six() -> Outcome {
    let mut worst: f64 = 0.0;
    for (_, s) in named_states() {
        worst = worst.max((cabello_value_exact(&s) - 6.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        worst = worst.max((cabello_value_exact(&StateVector::random(&mut rng)) - 6.0).abs());
    }
    outcome(worst <= 1e-9, format!("max |value - 6| = {worst:.2e} over 6 named + 1000 random states"))
}

fn noncontextual_bound() -> Outcome {
    let r = ks_contradiction_check();
    let pass = r.valuations_checked == 512 && r.max_functional == 4 && !r.exists_satisfying_all && r.max_constraints_satisfied == 5;
    outcome(
        pass,
        format!(
            "{} valuations, max functional {}, max constraints satisfied {}, any satisfying all: {}",
            r.valuations_checked, r.max_functional, r.max_constraints_satisfied, r.exists_satisfying_all
        ),
    )
}

fn model_c_adequacy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let states = [
        ("singlet", singlet()),
        ("|00>", StateVector::basis(0)),
        ("Psi^+-+", *TripleSpec::new().bell([P, M, P]).unwrap()),
        ("generic", generic_state()),
        ("random", StateVector::random(&mut rng)),
    ];
    let qm = Simulator::new(Backend::Qm);
    let c = Simulator::new(Backend::Model(ModelKind::C));
    let mut worst_exact: f64 = 0.0;
    let mut failures = Vec::new();
    let mut plans = 0;
    for (si, (name, psi)) in states.iter().enumerate() {
        for (ci, ctx) in grid_contexts().iter().enumerate() {
            let steps = ctx.members.to_vec();
            let exact_c = c.run_ensemble_exact(psi, &steps).unwrap();
            let exact_qm = qm.run_ensemble_exact(psi, &steps).unwrap();
            worst_exact = worst_exact.max(exact_c.max_abs_diff(&exact_qm));
            let plan = MeasurementPlan::new(*psi, steps, Backend::Model(ModelKind::C), 100_000, (si * 10 + ci) as u64).unwrap();
            let (stats, exact) = run_monte_carlo(&plan, Execution::Parallel).unwrap();
            let cmp = compare_stats(&stats, &exact).unwrap();
            if !cmp.pass {
                failures.push(format!("{name}/{}", ctx.kind));
            }
            plans += 1;
        }
    }
    outcome(
        worst_exact <= 1e-9 && failures.is_empty(),
        format!(
            "{plans} (context, state) plans x 1e5 trials; max |p_C - p_QM| = {worst_exact:.2e}; 5-sigma failures: {failures:?}"
        ),
    )
}

fn sequential_structure() -> Outcome {
    let t = TripleSpec::new();
    let s00 = StateVector::basis(0);
    let orders = [[1u8, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]];
    let allowed = t.allowed_patterns();
    let mut worst: f64 = 0.0;
    let mut forbidden_mass: f64 = 0.0;
    for backend in [Backend::Qm, Backend::Model(ModelKind::A), Backend::Model(ModelKind::B), Backend::Model(ModelKind::C)] {
        let sim = Simulator::new(backend);
        for order in orders {
            let steps: Vec<Cell> = order.iter().map(|&k| Cell::triple(k).unwrap()).collect();
            let dist = sim.run_ensemble_exact(&s00, &steps).unwrap();
            for code in 0u8..8 {
                // Pattern indexed by A1, A2, A3 regardless of measurement order.
                let pattern = [0, 1, 2].map(|k| Sign::from_bool(code >> k & 1 == 1));
                let seq: Vec<Sign> = order.iter().map(|&k| pattern[usize::from(k - 1)]).collect();
                let p = dist.prob(&seq);
                match t.bell(pattern) {
                    Some(v) => worst = worst.max((p - s00.overlap_sqr(v)).abs()),
                    None => forbidden_mass += p,
                }
            }
        }
    }
    outcome(
        allowed.len() == 4 && worst <= 1e-12 && forbidden_mass == 0.0,
        format!("6 orders x 4 backends; max |p - |<00|Psi>|^2| = {worst:.2e}; forbidden mass {forbidden_mass}"),
    )
}

fn model_b_quarter() -> Outcome {
    let m = HvModel::new(ModelKind::B);
    let d = m.init_distribution(&StateVector::basis(0)).unwrap();
    let p = d.prob(EpsilonAssignment::from_signs(&[P, P, P]).unwrap());
    outcome(p == 0.25, format!("p(+++) = {p}"))
}

fn worked_trajectory() -> Outcome {
    let m = HvModel::new(ModelKind::B);
    let t = TripleSpec::new();
    let psi = generic_state();
    let ppp = EpsilonAssignment::from_signs(&[P, P, P]).unwrap();
    let ppm = EpsilonAssignment::from_signs(&[P, P, M]).unwrap();
    let overlaps = (psi.overlap_sqr(t.bell([P, M, P]).unwrap()), psi.overlap_sqr(t.bell([P, P, M]).unwrap()));
    let start = HiddenState::new(ppp, psi);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut kept, mut exceptions, mut attempts) = (0, 0, 0);
    while kept < 1000 && attempts < 1_000_000 {
        attempts += 1;
        let o1 = start.outcome_of(Cell::Triple(1)).unwrap();
        let h1 = m.update_hidden(&start, Cell::Triple(1), o1, &mut rng).unwrap();
        if o1 != P || h1.eps != ppp {
            continue;
        }
        kept += 1;
        let o2 = h1.outcome_of(Cell::Triple(2)).unwrap();
        let h2 = m.update_hidden(&h1, Cell::Triple(2), o2, &mut rng).unwrap();
        let o3 = h2.outcome_of(Cell::Triple(3)).unwrap();
        if o2 != P || h2.eps != ppm || o3 != M {
            exceptions += 1;
        }
    }
    outcome(
        kept == 1000 && exceptions == 0 && overlaps.0 > 0.0 && overlaps.1 > 0.0,
        format!(
            "{kept} conditioned trajectories ({attempts} attempts), {exceptions} exceptions; overlaps with +-+ / ++-: {:.3} / {:.3}",
            overlaps.0, overlaps.1
        ),
    )
}

fn repeatability_and_washout() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let contexts_c = grid_contexts();
    let triple_ctx = TripleSpec::new().context();
    let (mut repeat_fail, mut washout_fail, mut washout_checks) = (0, 0, 0);
    for trial in 0..10_000u64 {
        let kind = if trial % 2 == 0 { ModelKind::B } else { ModelKind::C };
        let model = HvModel::new(kind);
        let psi = StateVector::random(&mut rng);
        let len = rng.random_range(2..=8);
        let steps: Vec<Cell> = (0..len)
            .map(|_| match kind {
                ModelKind::C => Cell::grid(rng.random_range(1..=3), rng.random_range(1..=3)).unwrap(),
                _ => Cell::triple(rng.random_range(1..=3)).unwrap(),
            })
            .collect();
        let mut local = trial_rng(8, trial);
        let mut h = model.prepare(&psi, &mut local).unwrap();
        let mut prev: Option<Cell> = None;
        for &cell in &steps {
            let o = h.outcome_of(cell).unwrap();
            h = model.update_hidden(&h, cell, o, &mut local).unwrap();
            if h.outcome_of(cell).unwrap() != o {
                repeat_fail += 1;
            }
            if let Some(p) = prev.filter(|&p| p != cell) {
                let ctxs: Vec<_> = match kind {
                    ModelKind::C => contexts_c.iter().filter(|c| c.contains(p) && c.contains(cell)).collect(),
                    _ => vec![&triple_ctx],
                };
                for ctx in ctxs {
                    washout_checks += 1;
                    let j = h.would_be_joint(ctx).unwrap();
                    if j[0] * j[1] * j[2] != ctx.sign {
                        washout_fail += 1;
                    }
                }
            }
            prev = Some(cell);
        }
    }
    outcome(
        repeat_fail == 0 && washout_fail == 0 && washout_checks > 0,
        format!("10000 trajectories; repeat failures {repeat_fail}; washout failures {washout_fail} of {washout_checks} checks"),
    )
}

fn noncontextual_outcomes() -> Outcome {
    let states = [generic_state(), singlet(), StateVector::basis(0)];
    let mut checks = 0u64;
    let mut failures = 0u64;
    let triple_ctx = TripleSpec::new().context();
    for (arity, contexts) in [(9usize, grid_contexts().to_vec()), (3, vec![triple_ctx])] {
        for eps in EpsilonAssignment::all(arity) {
            for ctx in &contexts {
                for psi in &states {
                    let h = HiddenState::new(eps, *psi);
                    let joint = h.would_be_joint(ctx).unwrap();
                    for (k, &cell) in ctx.members.iter().enumerate() {
                        let a = h.outcome_of(cell).unwrap();
                        let b = h.outcome_of(cell).unwrap();
                        let reference = HiddenState::new(eps, states[0]).outcome_of(cell).unwrap();
                        checks += 1;
                        if a != b || a != joint[k] || a != reference {
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(failures == 0, format!("{checks} (type, context, cell, state) checks, {failures} disagreements"))
}

fn witness() -> Outcome {
    let r = nonlocality_witness(&StateVector::basis(0)).unwrap();
    match &r.instance {
        Some(i) if r.found && !i.distant_changed_cells.is_empty() => outcome(
            true,
            format!(
                "measuring {} flipped {:?} (support-disjoint); {} candidate(s)",
                i.candidate.measured.name(),
                i.distant_changed_cells.iter().map(|c| c.name()).collect::<Vec<_>>(),
                r.candidates.len()
            ),
        ),
        _ => outcome(false, "no distant flip found"),
    }
}

fn literature_value_is_context_only() -> Outcome {
    let out = run(["pmlab", "inequality", "--model", "qm", "--state", "state:singlet", "--trials", "10000"]);
    let report = Report::from_json(&out.stdout).unwrap();
    let printed = report.results["literature"]["experimental_singlet_value"].as_f64();
    let estimate = report.results["estimate"]["value"].as_f64().unwrap_or(f64::NAN);
    let no_check_targets_it = report.checks.iter().all(|c| !c.detail.contains("5.46"));
    outcome(
        out.code == EXIT_OK && printed == Some(REPORTED_EXPERIMENTAL_VALUE) && no_check_targets_it && estimate == 6.0,
        format!(
            "report lists {REPORTED_EXPERIMENTAL_VALUE} under literature only; noiseless estimate {estimate}; not a reproduction target"
        ),
    )
}

fn reproducibility() -> Outcome {
    let commands: [&[&str]; 5] = [
        &["simulate", "--model", "c", "--state", "state:00", "--steps", "r2", "--trials", "50000", "--seed", "5"],
        &["simulate", "--model", "b", "--state", "bell:++-", "--steps", "t2,t1,t3", "--trials", "50000", "--seed", "6"],
        &["simulate", "--model", "qm", "--state", "amps:0.6,0.1;0.5,0;0.4,0.2;0.3,-0.1", "--steps", "11,21,12", "--trials", "50000"],
        &["inequality", "--model", "c", "--state", "state:singlet", "--trials", "5000", "--seed", "9"],
        &["witness", "--state", "state:00", "--seed", "3"],
    ];
    let mut mismatches = Vec::new();
    for args in commands {
        let argv = |serial: bool| {
            let mut v = vec!["pmlab"];
            v.extend_from_slice(args);
            if serial && args[0] != "witness" {
                v.push("--serial");
            }
            v
        };
        let a = run(argv(false));
        let b = run(argv(false));
        let c = run(argv(true));
        if a.code != EXIT_OK || a.stdout.is_empty() || a.stdout != b.stdout || a.stdout != c.stdout {
            mismatches.push(args[0]);
        }
    }
    outcome(mismatches.is_empty(), format!("5 commands x (parallel, parallel, serial); mismatches: {mismatches:?}"))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("1 quantum value is 6 for every state", Box::new(|| timed(Some(Duration::from_secs(1)), quantum_value_is_six))),
        ("2 noncontextual bound is 4", Box::new(|| timed(Some(Duration::from_millis(100)), noncontextual_bound))),
        ("3 Model C reproduces quantum statistics", Box::new(|| timed(Some(Duration::from_secs(10)), model_c_adequacy))),
        ("4 triple on |00> has four patterns in any order", Box::new(|| timed(None, sequential_structure))),
        ("5 Model B gives p(+++) = 1/4 on |00>", Box::new(|| timed(None, model_b_quarter))),
        ("6 worked Model B trajectory", Box::new(|| timed(None, worked_trajectory))),
        ("7 repeatability and washout", Box::new(|| timed(None, repeatability_and_washout))),
        ("8 outcomes are context independent", Box::new(|| timed(None, noncontextual_outcomes))),
        ("9 nonlocality witness on |00>", Box::new(|| timed(None, witness))),
        ("10 experimental 5.46 is context only", Box::new(|| timed(None, literature_value_is_context_only))),
        ("11 byte-identical reports, serial or parallel", Box::new(|| timed(None, reproducibility))),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
