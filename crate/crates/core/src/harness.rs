//! Sequential-measurement experiment runner.
//!
//! A plan fixes a preparation, an ordered list of cells, a backend, a trial
//! count and a seed. Trial `t` always draws from its own ChaCha stream derived
//! from (seed, t), so serial and parallel execution agree bit for bit and
//! aggregation is by counting only.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hvmodels::{EpsilonAssignment, HiddenDistribution, HiddenState, HvModel, ModelKind};
use crate::kscheck::{self, Valuation};
use crate::pmsquare::{Cell, Context, GridIndex, PmSquare, TripleSpec};
use crate::qcore::{born, collapse, OutcomeDistribution, Sign, StateVector, BRANCH_TOL};

/// Number of binomial standard errors tolerated per outcome.
pub const SIGMA_THRESHOLD: f64 = 5.0;
/// Longest plan accepted by the exact ensemble propagation.
pub const MAX_EXACT_STEPS: usize = 16;
/// Experimental singlet value reported for the trapped-ion realization. Shown
/// for context only; the simulator has no noise model.
pub const REPORTED_EXPERIMENTAL_VALUE: f64 = 5.46;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Born-rule sampling with projection-postulate collapse.
    Qm,
    Model(ModelKind),
    /// A fixed, non-updating valuation of the nine grid cells.
    Static(Valuation),
}

impl Backend {
    pub fn name(&self) -> String {
        match self {
            Backend::Qm => "qm".into(),
            Backend::Model(k) => k.name().into(),
            Backend::Static(v) => format!("static:{}", v.code()),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for Backend {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementPlan {
    pub preparation: StateVector,
    pub steps: Vec<Cell>,
    pub backend: Backend,
    pub trials: u64,
    pub seed: u64,
}

impl MeasurementPlan {
    pub fn new(preparation: StateVector, steps: Vec<Cell>, backend: Backend, trials: u64, seed: u64) -> Result<Self> {
        let plan = MeasurementPlan { preparation, steps, backend, trials, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::validation("measurement plan has no steps"));
        }
        if self.trials == 0 {
            return Err(Error::validation("measurement plan needs at least one trial"));
        }
        if let Backend::Model(kind) = self.backend {
            for &cell in &self.steps {
                kind.site_of(cell)?;
            }
        }
        Ok(())
    }

    /// The context these steps measure, if they are exactly one context's members.
    pub fn context(&self) -> Option<Context> {
        steps_context(&self.steps)
    }
}

fn steps_context(steps: &[Cell]) -> Option<Context> {
    if steps.len() != 3 {
        return None;
    }
    let mut grid: Vec<GridIndex> = steps.iter().map(|c| c.to_grid()).collect();
    grid.sort();
    grid.dedup();
    if grid.len() != 3 {
        return None;
    }
    let all_triple = steps.iter().all(|c| matches!(c, Cell::Triple(_)));
    if all_triple {
        return Some(TripleSpec::new().context());
    }
    crate::pmsquare::grid_contexts().into_iter().find(|ctx| {
        let mut members: Vec<GridIndex> = ctx.members.iter().map(|c| c.to_grid()).collect();
        members.sort();
        members == grid
    })
}

/// Independent random stream for one trial.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub cell: Cell,
    pub outcome: Sign,
    /// Quantum state after the projection-postulate update.
    pub state: StateVector,
    /// Hidden assignment after the jump, for hidden-variable backends.
    pub eps: Option<EpsilonAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTranscript {
    pub initial_eps: Option<EpsilonAssignment>,
    pub records: Vec<StepRecord>,
}

impl RunTranscript {
    pub fn outcomes(&self) -> Vec<Sign> {
        self.records.iter().map(|r| r.outcome).collect()
    }
}

/// Executes steps against one backend.
#[derive(Debug, Clone)]
pub struct Simulator {
    backend: Backend,
    square: PmSquare,
    model: Option<HvModel>,
}

impl Simulator {
    pub fn new(backend: Backend) -> Self {
        let model = match backend {
            Backend::Model(kind) => Some(HvModel::new(kind)),
            _ => None,
        };
        Simulator { backend, square: PmSquare::build(), model }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn square(&self) -> &PmSquare {
        &self.square
    }

    fn check_cells(&self, steps: &[Cell]) -> Result<()> {
        if let Backend::Model(kind) = self.backend {
            for &c in steps {
                kind.site_of(c)?;
            }
        }
        Ok(())
    }

    pub fn run_trajectory<R: Rng + ?Sized>(&self, psi: &StateVector, steps: &[Cell], rng: &mut R) -> Result<RunTranscript> {
        self.check_cells(steps)?;
        let mut records = Vec::with_capacity(steps.len());
        match (&self.backend, &self.model) {
            (Backend::Qm, _) => {
                let mut state = *psi;
                for &cell in steps {
                    let p_plus = self.square.plus_probability(cell, &state);
                    let outcome = if p_plus <= BRANCH_TOL {
                        Sign::Minus
                    } else if p_plus >= 1.0 - BRANCH_TOL {
                        Sign::Plus
                    } else {
                        Sign::from_bool(rng.random::<f64>() < p_plus)
                    };
                    state = collapse(&state, self.square.projector(cell, outcome))?;
                    records.push(StepRecord { cell, outcome, state, eps: None });
                }
                Ok(RunTranscript { initial_eps: None, records })
            }
            (Backend::Model(_), Some(model)) => {
                let mut hidden = model.prepare(psi, rng)?;
                let initial_eps = Some(hidden.eps);
                for &cell in steps {
                    let outcome = hidden.outcome_of(cell)?;
                    hidden = model.update_hidden(&hidden, cell, outcome, rng)?;
                    records.push(StepRecord { cell, outcome, state: hidden.psi, eps: Some(hidden.eps) });
                }
                Ok(RunTranscript { initial_eps, records })
            }
            (Backend::Static(v), _) => {
                for &cell in steps {
                    let outcome = v.at(Cell::Grid(cell.to_grid()))?;
                    records.push(StepRecord { cell, outcome, state: *psi, eps: Some(*v) });
                }
                Ok(RunTranscript { initial_eps: Some(*v), records })
            }
            (Backend::Model(_), None) => unreachable!("model backends always carry an engine"),
        }
    }

    /// Exact distribution over outcome sequences, by branching over both
    /// outcomes at every step. Hidden-variable backends propagate their
    /// ensemble with `update_distribution`; they never consult QM directly.
    pub fn run_ensemble_exact(&self, psi: &StateVector, steps: &[Cell]) -> Result<OutcomeDistribution> {
        self.check_cells(steps)?;
        if steps.len() > MAX_EXACT_STEPS {
            return Err(Error::validation(format!(
                "exact propagation supports at most {MAX_EXACT_STEPS} steps, plan has {}",
                steps.len()
            )));
        }
        let mut out = BTreeMap::new();
        let mut prefix = Vec::with_capacity(steps.len());
        match (&self.backend, &self.model) {
            (Backend::Qm, _) => self.branch_qm(psi, steps, 1.0, &mut prefix, &mut out)?,
            (Backend::Model(_), Some(model)) => {
                let dist = model.init_distribution(psi)?;
                Self::branch_hv(model, &dist, steps, 1.0, &mut prefix, &mut out)?
            }
            (Backend::Static(v), _) => {
                let outcomes = steps.iter().map(|&c| v.at(Cell::Grid(c.to_grid()))).collect::<Result<Vec<_>>>()?;
                out.insert(outcomes, 1.0);
            }
            (Backend::Model(_), None) => unreachable!("model backends always carry an engine"),
        }
        OutcomeDistribution::new(out)
    }

    fn branch_qm(
        &self,
        psi: &StateVector,
        steps: &[Cell],
        weight: f64,
        prefix: &mut Vec<Sign>,
        out: &mut BTreeMap<Vec<Sign>, f64>,
    ) -> Result<()> {
        let Some((&cell, rest)) = steps.split_first() else {
            out.insert(prefix.clone(), weight);
            return Ok(());
        };
        for s in Sign::BOTH {
            let proj = self.square.projector(cell, s);
            let p = born(psi, proj);
            if p <= BRANCH_TOL {
                continue;
            }
            let next = collapse(psi, proj)?;
            prefix.push(s);
            self.branch_qm(&next, rest, weight * p, prefix, out)?;
            prefix.pop();
        }
        Ok(())
    }

    fn branch_hv(
        model: &HvModel,
        dist: &HiddenDistribution,
        steps: &[Cell],
        weight: f64,
        prefix: &mut Vec<Sign>,
        out: &mut BTreeMap<Vec<Sign>, f64>,
    ) -> Result<()> {
        let Some((&cell, rest)) = steps.split_first() else {
            out.insert(prefix.clone(), weight);
            return Ok(());
        };
        for s in Sign::BOTH {
            let p = model.marginal(dist, cell, s)?;
            if p <= BRANCH_TOL {
                continue;
            }
            let next = model.update_distribution(dist, cell, s)?;
            prefix.push(s);
            Self::branch_hv(model, &next, rest, weight * p, prefix, out)?;
            prefix.pop();
        }
        Ok(())
    }

    /// Outcome-sequence counts over `trials` trajectories; trial t uses
    /// stream `stream_base + t`.
    pub fn count_outcomes(
        &self,
        psi: &StateVector,
        steps: &[Cell],
        trials: u64,
        seed: u64,
        stream_base: u64,
        exec: Execution,
    ) -> Result<BTreeMap<Vec<Sign>, u64>> {
        self.check_cells(steps)?;
        let one = |t: u64| -> Result<Vec<Sign>> {
            let mut rng = trial_rng(seed, stream_base + t);
            Ok(self.run_trajectory(psi, steps, &mut rng)?.outcomes())
        };
        let add = |mut acc: BTreeMap<Vec<Sign>, u64>, key: Vec<Sign>| {
            *acc.entry(key).or_insert(0) += 1;
            acc
        };
        match exec {
            Execution::Serial => (0..trials).try_fold(BTreeMap::new(), |acc, t| Ok(add(acc, one(t)?))),
            Execution::Parallel => (0..trials)
                .into_par_iter()
                .try_fold(BTreeMap::new, |acc, t| Ok(add(acc, one(t)?)))
                .try_reduce(BTreeMap::new, |mut a, b| {
                    for (k, v) in b {
                        *a.entry(k).or_insert(0) += v;
                    }
                    Ok(a)
                }),
        }
    }
}

pub fn run_trajectory<R: Rng + ?Sized>(plan: &MeasurementPlan, rng: &mut R) -> Result<RunTranscript> {
    plan.validate()?;
    Simulator::new(plan.backend).run_trajectory(&plan.preparation, &plan.steps, rng)
}

pub fn run_ensemble_exact(plan: &MeasurementPlan) -> Result<OutcomeDistribution> {
    plan.validate()?;
    Simulator::new(plan.backend).run_ensemble_exact(&plan.preparation, &plan.steps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub outcomes: Vec<Sign>,
    pub count: u64,
    pub frequency: f64,
    pub exact: f64,
    /// Binomial standard error sqrt(p(1-p)/N) at the exact probability.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub trials: u64,
    pub rows: Vec<OutcomeRow>,
    pub max_abs_deviation: f64,
    /// Pearson statistic over outcomes with nonzero exact probability.
    pub chi_square: f64,
    pub chi_square_dof: usize,
    /// Observed count on outcomes the exact distribution forbids.
    pub forbidden_count: u64,
    /// Mean of the product of all outcomes, for plans that measure one context.
    pub mean_product: Option<f64>,
}

impl StatsReport {
    pub fn new(counts: &BTreeMap<Vec<Sign>, u64>, trials: u64, exact: &OutcomeDistribution, context_plan: bool) -> Result<Self> {
        if trials == 0 {
            return Err(Error::validation("statistics need at least one trial"));
        }
        let observed: u64 = counts.values().sum();
        if observed != trials {
            return Err(Error::consistency(format!("counted {observed} outcomes for {trials} trials")));
        }
        let n = trials as f64;
        let mut keys: Vec<&Vec<Sign>> = counts.keys().chain(exact.iter().map(|(k, _)| k)).collect();
        keys.sort();
        keys.dedup();
        let rows: Vec<OutcomeRow> = keys
            .into_iter()
            .map(|k| {
                let count = counts.get(k).copied().unwrap_or(0);
                let p = exact.prob(k);
                OutcomeRow {
                    outcomes: k.clone(),
                    count,
                    frequency: count as f64 / n,
                    exact: p,
                    stderr: (p * (1.0 - p) / n).max(0.0).sqrt(),
                }
            })
            .collect();
        let max_abs_deviation = rows.iter().map(|r| (r.frequency - r.exact).abs()).fold(0.0, f64::max);
        let positive: Vec<&OutcomeRow> = rows.iter().filter(|r| r.exact > BRANCH_TOL).collect();
        let chi_square = positive
            .iter()
            .map(|r| {
                let expected = r.exact * n;
                (r.count as f64 - expected).powi(2) / expected
            })
            .sum();
        let chi_square_dof = positive.len().saturating_sub(1);
        let forbidden_count = rows.iter().filter(|r| r.exact <= BRANCH_TOL).map(|r| r.count).sum();
        let mean_product = context_plan.then(|| {
            rows.iter().map(|r| Sign::product(r.outcomes.iter().copied()).as_f64() * r.count as f64).sum::<f64>() / n
        });
        Ok(StatsReport {
            trials,
            rows,
            max_abs_deviation,
            chi_square,
            chi_square_dof,
            forbidden_count,
            mean_product,
        })
    }
}

/// Monte Carlo run of a plan, compared row by row with its exact distribution.
pub fn run_monte_carlo(plan: &MeasurementPlan, exec: Execution) -> Result<(StatsReport, OutcomeDistribution)> {
    plan.validate()?;
    let sim = Simulator::new(plan.backend);
    let exact = sim.run_ensemble_exact(&plan.preparation, &plan.steps)?;
    let counts = sim.count_outcomes(&plan.preparation, &plan.steps, plan.trials, plan.seed, 0, exec)?;
    let report = StatsReport::new(&counts, plan.trials, &exact, plan.context().is_some())?;
    Ok((report, exact))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedOutcome {
    pub outcomes: Vec<Sign>,
    pub frequency: f64,
    pub exact: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub pass: bool,
    pub sigma_threshold: f64,
    pub max_abs_deviation: f64,
    pub flagged: Vec<FlaggedOutcome>,
}

/// Flags every outcome whose empirical frequency is more than five binomial
/// standard errors from its exact probability.
pub fn compare_stats(report: &StatsReport, exact: &OutcomeDistribution) -> Result<Comparison> {
    if report.trials == 0 {
        return Err(Error::validation("cannot compare statistics from zero trials"));
    }
    let n = report.trials as f64;
    let mut keys: Vec<&Vec<Sign>> = report.rows.iter().map(|r| &r.outcomes).chain(exact.iter().map(|(k, _)| k)).collect();
    keys.sort();
    keys.dedup();
    let mut flagged = Vec::new();
    let mut max_abs_deviation: f64 = 0.0;
    for k in keys {
        let frequency = report.rows.iter().find(|r| &r.outcomes == k).map_or(0.0, |r| r.frequency);
        let p = exact.prob(k);
        let stderr = (p * (1.0 - p) / n).max(0.0).sqrt();
        let dev = (frequency - p).abs();
        max_abs_deviation = max_abs_deviation.max(dev);
        if dev > SIGMA_THRESHOLD * stderr + 1e-12 {
            flagged.push(FlaggedOutcome { outcomes: k.clone(), frequency, exact: p, stderr });
        }
    }
    Ok(Comparison { pass: flagged.is_empty(), sigma_threshold: SIGMA_THRESHOLD, max_abs_deviation, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextTerm {
    pub context: String,
    pub coefficient: i8,
    pub mean_product: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CabelloEstimate {
    pub value: f64,
    pub stderr: f64,
    pub trials_per_context: u64,
    pub terms: Vec<ContextTerm>,
}

/// Sequential estimate of the Cabello functional: each context is measured in
/// grid order on `trials` fresh preparations.
pub fn estimate_cabello(backend: Backend, state: &StateVector, trials: u64, seed: u64, exec: Execution) -> Result<CabelloEstimate> {
    if trials == 0 {
        return Err(Error::validation("cabello estimate needs at least one trial"));
    }
    if let Backend::Model(kind @ (ModelKind::A | ModelKind::B)) = backend {
        return Err(Error::usage(format!("model {kind} covers only the triple, not the full square")));
    }
    let sim = Simulator::new(backend);
    let contexts = sim.square.contexts()?;
    let n = trials as f64;
    let mut terms = Vec::with_capacity(contexts.len());
    let mut value = 0.0;
    let mut variance = 0.0;
    for (k, ctx) in contexts.iter().enumerate() {
        let counts = sim.count_outcomes(state, &ctx.members, trials, seed, (k as u64) << 32, exec)?;
        let mean = counts
            .iter()
            .map(|(o, &c)| Sign::product(o.iter().copied()).as_f64() * c as f64)
            .sum::<f64>()
            / n;
        let var = (1.0 - mean * mean).max(0.0) / n;
        let coefficient = ctx.cabello_coefficient();
        value += coefficient.as_f64() * mean;
        variance += var;
        terms.push(ContextTerm {
            context: ctx.kind.to_string(),
            coefficient: coefficient.value(),
            mean_product: mean,
            stderr: var.sqrt(),
        });
    }
    Ok(CabelloEstimate { value, stderr: variance.sqrt(), trials_per_context: trials, terms })
}

/// Static backend using the lowest-code valuation that attains the bound.
pub fn best_static_backend() -> Backend {
    Backend::Static(kscheck::best_valuation())
}

/// Which cells the witness search measures and watches.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessSearch {
    pub measured: Vec<GridIndex>,
    pub targets: Vec<GridIndex>,
    /// Only count targets acting on qubits disjoint from the measured cell.
    pub require_disjoint_support: bool,
    /// Sampling attempts per candidate.
    pub budget: u64,
    pub seed: u64,
}

impl Default for WitnessSearch {
    fn default() -> Self {
        WitnessSearch {
            measured: GridIndex::all().collect(),
            targets: GridIndex::all().collect(),
            require_disjoint_support: true,
            budget: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessCandidate {
    pub measured: GridIndex,
    pub outcome: Sign,
    pub target: GridIndex,
    /// Exact probability that the jump flips the target's predetermined value.
    pub flip_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessInstance {
    pub candidate: WitnessCandidate,
    pub transcript: RunTranscript,
    pub eps_before: EpsilonAssignment,
    pub eps_after: EpsilonAssignment,
    /// Every cell whose value changed in the jump.
    pub changed_cells: Vec<Cell>,
    /// Changed cells acting only on qubits the measured cell does not touch.
    pub distant_changed_cells: Vec<Cell>,
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub found: bool,
    pub candidates: Vec<WitnessCandidate>,
    pub instance: Option<WitnessInstance>,
}

fn disjoint(a: GridIndex, b: GridIndex) -> bool {
    let (sa, sb) = (a.qubit_support(), b.qubit_support());
    !(sa[0] && sb[0]) && !(sa[1] && sb[1])
}

/// Model C search for a jump that changes the predetermined outcome of a cell
/// acting on the other qubit than the one just measured.
pub fn nonlocality_witness(state: &StateVector) -> Result<WitnessReport> {
    nonlocality_witness_with(state, &WitnessSearch::default())
}

pub fn nonlocality_witness_with(state: &StateVector, search: &WitnessSearch) -> Result<WitnessReport> {
    let model = HvModel::new(ModelKind::C);
    let square = model.square();
    let plus_before = model.plus_marginals(state);
    let mut candidates = Vec::new();
    for &x in &search.measured {
        let cx = Cell::Grid(x);
        for s in Sign::BOTH {
            if born(state, square.projector(cx, s)) <= BRANCH_TOL {
                continue;
            }
            let after = collapse(state, square.projector(cx, s))?;
            let plus_after = model.plus_marginals(&after);
            for &y in &search.targets {
                if y == x || (search.require_disjoint_support && !disjoint(x, y)) {
                    continue;
                }
                let (b, a) = (plus_before[y.bit()], plus_after[y.bit()]);
                let flip = b * (1.0 - a) + (1.0 - b) * a;
                if flip > BRANCH_TOL {
                    candidates.push(WitnessCandidate { measured: x, outcome: s, target: y, flip_probability: flip });
                }
            }
        }
    }

    for (index, cand) in candidates.iter().enumerate() {
        let mut rng = trial_rng(search.seed, index as u64);
        let cx = Cell::Grid(cand.measured);
        for attempt in 1..=search.budget {
            let before: HiddenState = model.prepare(state, &mut rng)?;
            if before.outcome_of(cx)? != cand.outcome {
                continue;
            }
            let after = model.update_hidden(&before, cx, cand.outcome, &mut rng)?;
            let changed = before.eps.diff(after.eps);
            if !changed.contains(&Cell::Grid(cand.target)) {
                continue;
            }
            let distant_changed_cells =
                changed.iter().copied().filter(|c| disjoint(cand.measured, c.to_grid())).collect();
            let transcript = RunTranscript {
                initial_eps: Some(before.eps),
                records: vec![StepRecord { cell: cx, outcome: cand.outcome, state: after.psi, eps: Some(after.eps) }],
            };
            let instance = WitnessInstance {
                candidate: cand.clone(),
                transcript,
                eps_before: before.eps,
                eps_after: after.eps,
                changed_cells: changed,
                distant_changed_cells,
                attempts: attempt,
            };
            return Ok(WitnessReport { found: true, candidates, instance: Some(instance) });
        }
    }
    Ok(WitnessReport { found: false, candidates, instance: None })
}
