//! Value-definite noncontextual hidden-variable models under sequential
//! measurement.
//!
//! * Model A: the triple with four hidden types, one per Bell vector. A
//!   measurement never changes the hidden type, it only filters the ensemble.
//! * Model B: the triple with all eight sign patterns, weighted by the product
//!   of Born marginals. After each measurement the hidden type is redrawn from
//!   the product measure of the collapsed state.
//! * Model C: the same construction over all nine grid cells (512 types).
//!
//! A hidden state is the pair (ε, ψ). The ψ part drives the jumps; the ε part
//! alone fixes every outcome.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pmsquare::{Cell, Context, GridIndex, PmSquare, TripleSpec};
use crate::qcore::{collapse, sign_string, Sign, StateVector, BRANCH_TOL, NORMALIZATION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Four Bell-pattern types on the triple, no jumps.
    A,
    /// Eight product-measure types on the triple, stochastic jump.
    B,
    /// 512 product-measure types on the full grid, stochastic jump.
    C,
}

impl ModelKind {
    pub fn arity(self) -> usize {
        match self {
            ModelKind::A | ModelKind::B => 3,
            ModelKind::C => 9,
        }
    }

    pub fn jumps(self) -> bool {
        !matches!(self, ModelKind::A)
    }

    /// Site index of `cell` in this model's assignments.
    pub fn site_of(self, cell: Cell) -> Result<usize> {
        site_of(self.arity(), cell)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::A => "a",
            ModelKind::B => "b",
            ModelKind::C => "c",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn site_of(arity: usize, cell: Cell) -> Result<usize> {
    match arity {
        3 => cell.triple_index().map(|k| usize::from(k - 1)).ok_or_else(|| {
            Error::usage(format!("cell {} is outside the triple; triple models only cover column 3", cell.name()))
        }),
        9 => Ok(cell.to_grid().bit()),
        other => Err(Error::validation(format!("unsupported arity {other}"))),
    }
}

fn cell_of(arity: usize, site: usize) -> Cell {
    match arity {
        3 => Cell::Triple(site as u8 + 1),
        _ => Cell::Grid(GridIndex::from_bit(site)),
    }
}

/// One ±1 value per site. Bit k set means site k is +1; for the grid, site k
/// is cell (row-1)*3 + (col-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpsilonAssignment {
    arity: u8,
    bits: u16,
}

impl EpsilonAssignment {
    pub fn new(arity: usize, code: u16) -> Result<Self> {
        if arity != 3 && arity != 9 {
            return Err(Error::validation(format!("assignment arity must be 3 or 9, got {arity}")));
        }
        if usize::from(code) >= 1 << arity {
            return Err(Error::validation(format!("code {code} out of range for arity {arity}")));
        }
        Ok(EpsilonAssignment { arity: arity as u8, bits: code })
    }

    pub fn from_signs(signs: &[Sign]) -> Result<Self> {
        let code = signs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_plus())
            .fold(0u16, |acc, (k, _)| acc | (1 << k));
        Self::new(signs.len(), code)
    }

    pub fn uniform(arity: usize, sign: Sign) -> Result<Self> {
        Self::from_signs(&vec![sign; arity])
    }

    /// Every assignment of the given arity, ascending by code.
    pub fn all(arity: usize) -> impl Iterator<Item = EpsilonAssignment> {
        let arity8 = arity as u8;
        (0..(1u16 << arity)).map(move |bits| EpsilonAssignment { arity: arity8, bits })
    }

    pub fn arity(self) -> usize {
        usize::from(self.arity)
    }

    pub fn code(self) -> u16 {
        self.bits
    }

    pub fn get(self, site: usize) -> Sign {
        assert!(site < self.arity(), "site {site} out of range");
        Sign::from_bool(self.bits & (1 << site) != 0)
    }

    pub fn with(self, site: usize, sign: Sign) -> Self {
        assert!(site < self.arity(), "site {site} out of range");
        let bits = if sign.is_plus() { self.bits | (1 << site) } else { self.bits & !(1 << site) };
        EpsilonAssignment { bits, ..self }
    }

    pub fn signs(self) -> Vec<Sign> {
        (0..self.arity()).map(|k| self.get(k)).collect()
    }

    /// The value at `cell`.
    pub fn at(self, cell: Cell) -> Result<Sign> {
        Ok(self.get(site_of(self.arity(), cell)?))
    }

    /// Sites where the two assignments differ, as cells.
    pub fn diff(self, other: EpsilonAssignment) -> Vec<Cell> {
        let arity = self.arity();
        (0..arity).filter(|&k| self.get(k) != other.get(k)).map(|k| cell_of(arity, k)).collect()
    }
}

impl fmt::Display for EpsilonAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&sign_string(&self.signs()))
    }
}

impl Serialize for EpsilonAssignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

/// The Ψ-ontic hidden state {ε, ψ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenState {
    pub eps: EpsilonAssignment,
    pub psi: StateVector,
}

impl HiddenState {
    pub fn new(eps: EpsilonAssignment, psi: StateVector) -> Self {
        HiddenState { eps, psi }
    }

    /// The predetermined outcome for `cell`: a function of (ε, cell) only.
    pub fn outcome_of(&self, cell: Cell) -> Result<Sign> {
        self.eps.at(cell)
    }

    /// Joint values the context members would show if read off together.
    pub fn would_be_joint(&self, context: &Context) -> Result<[Sign; 3]> {
        let [a, b, c] = context.members;
        Ok([self.outcome_of(a)?, self.outcome_of(b)?, self.outcome_of(c)?])
    }
}

pub fn outcome_of(hidden: &HiddenState, cell: Cell) -> Result<Sign> {
    hidden.outcome_of(cell)
}

pub fn would_be_joint(hidden: &HiddenState, context: &Context) -> Result<[Sign; 3]> {
    hidden.would_be_joint(context)
}

/// Ensemble over hidden types for a fixed ψ. `probs` is indexed by assignment
/// code and has length 2^arity; Model A keeps zeros off its four Bell patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenDistribution {
    kind: ModelKind,
    psi: StateVector,
    probs: Vec<f64>,
}

impl HiddenDistribution {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn psi(&self) -> &StateVector {
        &self.psi
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, eps: EpsilonAssignment) -> f64 {
        self.probs[usize::from(eps.code())]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Assignments carrying probability above `BRANCH_TOL`.
    pub fn support(&self) -> Vec<EpsilonAssignment> {
        EpsilonAssignment::all(self.kind.arity()).filter(|&e| self.prob(e) > BRANCH_TOL).collect()
    }
}

/// Snap round-off near 0 or 1 so that certain outcomes stay certain.
fn snap(p: f64) -> f64 {
    if p <= BRANCH_TOL {
        0.0
    } else if p >= 1.0 - BRANCH_TOL {
        1.0
    } else {
        p
    }
}

/// Engine for one model kind; holds the operator tables it needs.
#[derive(Debug, Clone)]
pub struct HvModel {
    kind: ModelKind,
    square: PmSquare,
    triple: TripleSpec,
}

impl HvModel {
    pub fn new(kind: ModelKind) -> Self {
        HvModel { kind, square: PmSquare::build(), triple: TripleSpec::new() }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn square(&self) -> &PmSquare {
        &self.square
    }

    fn cell(&self, site: usize) -> Cell {
        cell_of(self.kind.arity(), site)
    }

    /// Born probabilities of the + outcome at every site.
    pub fn plus_marginals(&self, psi: &StateVector) -> Vec<f64> {
        (0..self.kind.arity())
            .map(|s| snap(self.square.plus_probability(self.cell(s), psi)))
            .collect()
    }

    /// Product measure ∏ ⟨ψ|P^{ε_k}|ψ⟩ over all assignments.
    fn product_measure(&self, psi: &StateVector) -> Vec<f64> {
        let plus = self.plus_marginals(psi);
        EpsilonAssignment::all(self.kind.arity())
            .map(|e| {
                plus.iter()
                    .enumerate()
                    .map(|(k, &p)| if e.get(k).is_plus() { p } else { 1.0 - p })
                    .product()
            })
            .collect()
    }

    pub fn init_distribution(&self, psi: &StateVector) -> Result<HiddenDistribution> {
        let probs = match self.kind {
            ModelKind::A => {
                let mut probs = vec![0.0; 8];
                for entry in &self.triple.eigenbasis {
                    let code = EpsilonAssignment::from_signs(&entry.eigenvalues)?.code();
                    probs[usize::from(code)] = psi.overlap_sqr(&entry.vector);
                }
                probs
            }
            ModelKind::B | ModelKind::C => self.product_measure(psi),
        };
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::consistency(format!("hidden distribution sums to {total}")));
        }
        Ok(HiddenDistribution { kind: self.kind, psi: *psi, probs })
    }

    /// Probability that the ensemble shows `sign` at `cell`.
    pub fn marginal(&self, dist: &HiddenDistribution, cell: Cell, sign: Sign) -> Result<f64> {
        let site = self.kind.site_of(cell)?;
        Ok(EpsilonAssignment::all(self.kind.arity())
            .filter(|e| e.get(site) == sign)
            .map(|e| dist.prob(e))
            .sum())
    }

    /// Draws ε from `dist`; ψ is copied over.
    pub fn sample_hidden<R: Rng + ?Sized>(&self, dist: &HiddenDistribution, rng: &mut R) -> Result<HiddenState> {
        let index = WeightedIndex::new(&dist.probs)
            .map_err(|e| Error::consistency(format!("cannot sample hidden distribution: {e}")))?;
        let code = index.sample(rng) as u16;
        Ok(HiddenState::new(EpsilonAssignment::new(self.kind.arity(), code)?, dist.psi))
    }

    /// Draws ε site by site from the product of Born marginals of ψ. Same law
    /// as `sample_hidden` on the Model B/C distribution, without building it.
    pub fn sample_product<R: Rng + ?Sized>(&self, psi: &StateVector, rng: &mut R) -> EpsilonAssignment {
        let arity = self.kind.arity();
        let code = self
            .plus_marginals(psi)
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| rng.random::<f64>() < p)
            .fold(0u16, |acc, (k, _)| acc | (1 << k));
        EpsilonAssignment { arity: arity as u8, bits: code }
    }

    /// Initial hidden state for a trajectory prepared in `psi`.
    pub fn prepare<R: Rng + ?Sized>(&self, psi: &StateVector, rng: &mut R) -> Result<HiddenState> {
        match self.kind {
            ModelKind::A => self.sample_hidden(&self.init_distribution(psi)?, rng),
            ModelKind::B | ModelKind::C => Ok(HiddenState::new(self.sample_product(psi, rng), *psi)),
        }
    }

    /// Ensemble update after observing `sign` at `cell`.
    pub fn update_distribution(&self, dist: &HiddenDistribution, cell: Cell, sign: Sign) -> Result<HiddenDistribution> {
        let site = self.kind.site_of(cell)?;
        let psi = collapse(&dist.psi, self.square.projector(cell, sign))?;
        match self.kind {
            ModelKind::A => {
                let mass = self.marginal(dist, cell, sign)?;
                if mass <= BRANCH_TOL {
                    return Err(Error::ImpossibleBranch { probability: mass });
                }
                let probs = EpsilonAssignment::all(3)
                    .map(|e| if e.get(site) == sign { dist.prob(e) / mass } else { 0.0 })
                    .collect();
                Ok(HiddenDistribution { kind: self.kind, psi, probs })
            }
            ModelKind::B | ModelKind::C => self.init_distribution(&psi),
        }
    }

    /// Trajectory update after observing `sign` at `cell`: ψ collapses; in
    /// Models B and C, ε is redrawn from the product measure of the new ψ
    /// independently of the old ε.
    pub fn update_hidden<R: Rng + ?Sized>(
        &self,
        hidden: &HiddenState,
        cell: Cell,
        sign: Sign,
        rng: &mut R,
    ) -> Result<HiddenState> {
        let site = self.kind.site_of(cell)?;
        let psi = collapse(&hidden.psi, self.square.projector(cell, sign))?;
        let eps = match self.kind {
            ModelKind::A => hidden.eps,
            ModelKind::B | ModelKind::C => self.sample_product(&psi, rng),
        };
        if self.kind.jumps() && eps.get(site) != sign {
            return Err(Error::consistency(format!(
                "post-jump assignment {eps} does not repeat outcome {sign} at {}",
                cell.name()
            )));
        }
        Ok(HiddenState::new(eps, psi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmsquare::{grid_contexts, triple_spec};
    use crate::qcore::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Sign::{Minus as M, Plus as P};

    fn g(r: u8, c: u8) -> Cell {
        Cell::grid(r, c).unwrap()
    }

    fn generic_state() -> StateVector {
        StateVector::new([C64::new(0.6, 0.1), C64::new(0.5, 0.0), C64::new(0.4, 0.2), C64::new(0.3, -0.1)]).unwrap()
    }

    fn eps3(s: [Sign; 3]) -> EpsilonAssignment {
        EpsilonAssignment::from_signs(&s).unwrap()
    }

    #[test]
    fn assignment_encoding() {
        let all: Vec<_> = EpsilonAssignment::all(9).collect();
        assert_eq!(all.len(), 512);
        assert!(all[0].signs().iter().all(|&s| s == M));
        assert!(all[511].signs().iter().all(|&s| s == P));
        let e = EpsilonAssignment::new(9, 1 << GridIndex::new(2, 3).unwrap().bit()).unwrap();
        assert_eq!(e.at(g(2, 3)).unwrap(), P);
        assert_eq!(e.at(Cell::Triple(1)).unwrap(), P);
        assert_eq!(e.at(g(1, 1)).unwrap(), M);
        assert!(EpsilonAssignment::new(3, 8).is_err());
        assert!(EpsilonAssignment::new(4, 0).is_err());
        assert_eq!(eps3([P, M, P]).to_string(), "+-+");
        assert_eq!(eps3([P, M, P]).with(1, P), eps3([P, P, P]));
        assert_eq!(eps3([P, M, P]).diff(eps3([P, P, M])), vec![Cell::Triple(2), Cell::Triple(3)]);
    }

    #[test]
    fn model_b_example_quarter() {
        let m = HvModel::new(ModelKind::B);
        let d = m.init_distribution(&StateVector::basis(0)).unwrap();
        assert!((d.prob(eps3([P, P, P])) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn model_a_eigenstate_point_mass() {
        let m = HvModel::new(ModelKind::A);
        let t = triple_spec();
        let d = m.init_distribution(t.bell([P, M, P]).unwrap()).unwrap();
        assert!((d.prob(eps3([P, M, P])) - 1.0).abs() < 1e-12);
        assert_eq!(d.support(), vec![eps3([P, M, P])]);
    }

    #[test]
    fn model_a_support_is_four_patterns() {
        let m = HvModel::new(ModelKind::A);
        let allowed = triple_spec().allowed_patterns().map(eps3);
        let d = m.init_distribution(&generic_state()).unwrap();
        for e in EpsilonAssignment::all(3) {
            if !allowed.contains(&e) {
                assert_eq!(d.prob(e), 0.0);
            }
        }
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_c_zz_marginal_on_00() {
        let m = HvModel::new(ModelKind::C);
        let d = m.init_distribution(&StateVector::basis(0)).unwrap();
        assert!((m.marginal(&d, g(1, 3), P).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.marginal(&d, g(1, 3), M).unwrap(), 0.0);
    }

    #[test]
    fn marginals_match_born() {
        let psi = generic_state();
        for kind in [ModelKind::A, ModelKind::B, ModelKind::C] {
            let m = HvModel::new(kind);
            let d = m.init_distribution(&psi).unwrap();
            let cells: Vec<Cell> = match kind {
                ModelKind::C => GridIndex::all().map(Cell::Grid).collect(),
                _ => (1..=3).map(Cell::Triple).collect(),
            };
            for cell in cells {
                for s in Sign::BOTH {
                    let expected = crate::qcore::born(&psi, m.square().projector(cell, s));
                    assert!((m.marginal(&d, cell, s).unwrap() - expected).abs() < 1e-9, "{kind} {cell} {s}");
                }
                let sum = m.marginal(&d, cell, P).unwrap() + m.marginal(&d, cell, M).unwrap();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        let m = HvModel::new(ModelKind::B);
        let d = m.init_distribution(&StateVector::basis(0)).unwrap();
        assert!((m.marginal(&d, Cell::Triple(1), P).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn triple_models_reject_grid_cells_off_column_three() {
        for kind in [ModelKind::A, ModelKind::B] {
            let m = HvModel::new(kind);
            let d = m.init_distribution(&StateVector::basis(0)).unwrap();
            assert!(matches!(m.marginal(&d, g(1, 1), P), Err(Error::Usage(_))));
            // Column-3 grid cells are the triple observables.
            assert_eq!(m.marginal(&d, g(1, 3), P).unwrap(), m.marginal(&d, Cell::Triple(3), P).unwrap());
        }
    }

    #[test]
    fn sample_point_mass() {
        let m = HvModel::new(ModelKind::A);
        let t = triple_spec();
        let d = m.init_distribution(t.bell([M, M, M]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(m.sample_hidden(&d, &mut rng).unwrap().eps, eps3([M, M, M]));
        }
    }

    #[test]
    fn sample_model_c_zz_always_plus_on_00() {
        let m = HvModel::new(ModelKind::C);
        let psi = StateVector::basis(0);
        let d = m.init_distribution(&psi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            assert_eq!(m.sample_hidden(&d, &mut rng).unwrap().outcome_of(g(1, 3)).unwrap(), P);
            assert_eq!(m.sample_product(&psi, &mut rng).at(g(1, 3)).unwrap(), P);
        }
    }

    #[test]
    fn sample_frequencies_within_five_sigma() {
        let m = HvModel::new(ModelKind::B);
        let d = m.init_distribution(&generic_state()).unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 8];
        let mut counts_product = [0usize; 8];
        for _ in 0..n {
            counts[usize::from(m.sample_hidden(&d, &mut rng).unwrap().eps.code())] += 1;
            counts_product[usize::from(m.sample_product(d.psi(), &mut rng).code())] += 1;
        }
        for (k, &p) in d.probs().iter().enumerate() {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            for c in [counts[k], counts_product[k]] {
                let f = c as f64 / n as f64;
                assert!((f - p).abs() <= 5.0 * sigma + 1e-12, "code {k}: {f} vs {p}");
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = HvModel::new(ModelKind::C);
        let psi = generic_state();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| m.prepare(&psi, &mut rng).unwrap().eps).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn would_be_joint_forbidden_pattern_in_model_b() {
        let t = triple_spec();
        let h = HiddenState::new(eps3([P, P, P]), StateVector::basis(0));
        assert_eq!(h.would_be_joint(&t.context()).unwrap(), [P, P, P]);
        assert_ne!(Sign::product([P, P, P]), t.context().sign);
        assert_eq!(h.outcome_of(Cell::Triple(1)).unwrap(), P);

        let ha = HiddenState::new(eps3([P, P, M]), StateVector::basis(0));
        assert_eq!(ha.would_be_joint(&t.context()).unwrap(), [P, P, M]);
    }

    #[test]
    fn would_be_joint_rejects_grid_context_for_triple_model() {
        let h = HiddenState::new(eps3([P, P, P]), StateVector::basis(0));
        assert!(h.would_be_joint(&grid_contexts()[0]).is_err());
        // Column 3 is the triple (in grid order A3, A1, A2).
        assert_eq!(h.would_be_joint(&grid_contexts()[5]).unwrap(), [P, P, P]);
    }

    #[test]
    fn model_c_update_makes_outcome_certain() {
        let m = HvModel::new(ModelKind::C);
        let psi = generic_state();
        let d = m.init_distribution(&psi).unwrap();
        for cell in GridIndex::all().map(Cell::Grid) {
            for s in Sign::BOTH {
                let u = m.update_distribution(&d, cell, s).unwrap();
                assert!((m.marginal(&u, cell, s).unwrap() - 1.0).abs() < 1e-12);
                assert!((u.total() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn model_a_conditioning_matches_reevaluation() {
        let m = HvModel::new(ModelKind::A);
        let d = m.init_distribution(&StateVector::basis(0)).unwrap();
        let u = m.update_distribution(&d, Cell::Triple(3), P).unwrap();
        assert!((u.prob(eps3([P, M, P])) - 0.5).abs() < 1e-12);
        assert!((u.prob(eps3([M, P, P])) - 0.5).abs() < 1e-12);
        let fresh = m.init_distribution(u.psi()).unwrap();
        for e in EpsilonAssignment::all(3) {
            assert!((u.prob(e) - fresh.prob(e)).abs() < 1e-9);
        }
        let psi = generic_state();
        let d = m.init_distribution(&psi).unwrap();
        for k in 1..=3 {
            for s in Sign::BOTH {
                let u = m.update_distribution(&d, Cell::Triple(k), s).unwrap();
                let fresh = m.init_distribution(u.psi()).unwrap();
                for e in EpsilonAssignment::all(3) {
                    assert!((u.prob(e) - fresh.prob(e)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn impossible_updates_are_errors() {
        let psi = StateVector::basis(0);
        for kind in [ModelKind::A, ModelKind::B, ModelKind::C] {
            let m = HvModel::new(kind);
            let d = m.init_distribution(&psi).unwrap();
            assert!(matches!(
                m.update_distribution(&d, Cell::Triple(3), M),
                Err(Error::ImpossibleBranch { .. })
            ));
            let h = HiddenState::new(EpsilonAssignment::uniform(kind.arity(), M).unwrap(), psi);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            assert!(matches!(
                m.update_hidden(&h, Cell::Triple(3), M, &mut rng),
                Err(Error::ImpossibleBranch { .. })
            ));
        }
    }

    #[test]
    fn model_a_trajectory_keeps_eps() {
        let m = HvModel::new(ModelKind::A);
        let psi = generic_state();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut h = m.prepare(&psi, &mut rng).unwrap();
            let start = h.eps;
            for k in [3, 1, 2, 1] {
                let cell = Cell::Triple(k);
                let s = h.outcome_of(cell).unwrap();
                h = m.update_hidden(&h, cell, s, &mut rng).unwrap();
                assert_eq!(h.eps, start);
            }
        }
    }

    #[test]
    fn model_b_worked_trajectory() {
        let m = HvModel::new(ModelKind::B);
        let t = triple_spec();
        let psi = generic_state();
        assert!(psi.overlap_sqr(t.bell([P, M, P]).unwrap()) > 0.01);
        assert!(psi.overlap_sqr(t.bell([P, P, M]).unwrap()) > 0.01);
        let start = HiddenState::new(eps3([P, P, P]), psi);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut kept = 0;
        while kept < 200 {
            let o1 = start.outcome_of(Cell::Triple(1)).unwrap();
            assert_eq!(o1, P);
            let h1 = m.update_hidden(&start, Cell::Triple(1), o1, &mut rng).unwrap();
            if h1.eps != eps3([P, P, P]) {
                continue;
            }
            kept += 1;
            let o2 = h1.outcome_of(Cell::Triple(2)).unwrap();
            assert_eq!(o2, P);
            let h2 = m.update_hidden(&h1, Cell::Triple(2), o2, &mut rng).unwrap();
            assert_eq!(h2.eps, eps3([P, P, M]));
            assert!((h2.psi.overlap_sqr(t.bell([P, P, M]).unwrap()) - 1.0).abs() < 1e-12);
            assert_eq!(h2.outcome_of(Cell::Triple(3)).unwrap(), M);
        }
    }

    #[test]
    fn jump_ignores_old_eps() {
        // Same ψ, two different pre-jump ε: the post-jump ε is the same draw
        // for the same random stream.
        let m = HvModel::new(ModelKind::C);
        let psi = generic_state();
        let a = HiddenState::new(EpsilonAssignment::uniform(9, P).unwrap(), psi);
        let b = HiddenState::new(EpsilonAssignment::new(9, 0b101010101).unwrap().with(0, P), psi);
        for seed in 0..50 {
            let ja = m.update_hidden(&a, g(1, 1), P, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let jb = m.update_hidden(&b, g(1, 1), P, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(ja, jb);
        }
    }
}
