//! Exact two-qubit quantum mechanics.
//!
//! Everything here lives in the fixed four-dimensional space spanned by
//! |00⟩, |01⟩, |10⟩, |11⟩ (first tensor factor is the high bit). Observables
//! are Hermitian involutions, so their eigenprojections have the closed form
//! P± = (I ± A)/2 and no eigensolver is ever needed.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Index, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for exact algebraic identities (Hermiticity, involution, idempotence).
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Tolerance for normalization and probability sums.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Outcome probabilities at or below this are treated as impossible.
pub const BRANCH_TOL: f64 = 1e-12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// A measurement outcome, or the sign of an eigenvalue: +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_bool(plus: bool) -> Self {
        if plus {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    /// Sign of a product of signs.
    pub fn product<I: IntoIterator<Item = Sign>>(signs: I) -> Sign {
        signs.into_iter().fold(Sign::Plus, |acc, s| acc * s)
    }
}

impl Neg for Sign {
    type Output = Sign;
    fn neg(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl Mul for Sign {
    type Output = Sign;
    fn mul(self, rhs: Sign) -> Sign {
        Sign::from_bool(self == rhs)
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Sign {
    type Error = Error;
    fn try_from(v: i8) -> Result<Sign> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(Error::validation(format!("sign must be +1 or -1, got {other}"))),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Renders a sign sequence as e.g. `+-+`.
pub fn sign_string(signs: &[Sign]) -> String {
    signs.iter().map(|s| s.symbol()).collect()
}

pub type Matrix2 = [[C64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Single-qubit Pauli factor, including the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> Matrix2 {
        match self {
            Pauli::I => identity2(),
            Pauli::X => pauli(Axis::X),
            Pauli::Y => pauli(Axis::Y),
            Pauli::Z => pauli(Axis::Z),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Pauli::I => "I",
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        }
    }
}

pub fn pauli(axis: Axis) -> Matrix2 {
    let i = C64::new(0.0, 1.0);
    match axis {
        Axis::X => [[ZERO, ONE], [ONE, ZERO]],
        Axis::Y => [[ZERO, -i], [i, ZERO]],
        Axis::Z => [[ONE, ZERO], [ZERO, -ONE]],
    }
}

pub fn identity2() -> Matrix2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

/// Dense 4×4 complex matrix acting on the two-qubit space.
#[derive(Clone, Copy, PartialEq)]
pub struct Matrix4(pub [[C64; 4]; 4]);

impl Matrix4 {
    pub fn zero() -> Self {
        Matrix4([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for k in 0..4 {
            m.0[k][k] = ONE;
        }
        m
    }

    pub fn diag(d: [f64; 4]) -> Self {
        let mut m = Self::zero();
        for k in 0..4 {
            m.0[k][k] = C64::new(d[k], 0.0);
        }
        m
    }

    /// Kronecker product a ⊗ b.
    pub fn kron(a: &Matrix2, b: &Matrix2) -> Self {
        let mut m = Self::zero();
        for (r, c) in (0..4).flat_map(|r| (0..4).map(move |c| (r, c))) {
            m.0[r][c] = a[r / 2][c / 2] * b[r % 2][c % 2];
        }
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|z| *z *= s);
        m
    }

    pub fn dagger(&self) -> Self {
        let mut m = Self::zero();
        for r in 0..4 {
            for c in 0..4 {
                m.0[r][c] = self.0[c][r].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|k| self.0[k][k]).sum()
    }

    pub fn apply(&self, v: &[C64; 4]) -> [C64; 4] {
        let mut out = [ZERO; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|c| self.0[r][c] * v[c]).sum();
        }
        out
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix4) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs_diff(&Self::zero())
    }

    pub fn approx_eq(&self, other: &Matrix4, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    pub fn commutator(&self, other: &Matrix4) -> Matrix4 {
        *self * *other - *other * *self
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.approx_eq(&self.dagger(), tol)
    }
}

impl fmt::Debug for Matrix4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix4[")?;
        for row in &self.0 {
            let cells: Vec<String> = row.iter().map(|z| format!("{:+.3}{:+.3}i", z.re, z.im)).collect();
            writeln!(f, "  {}", cells.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Mul for Matrix4 {
    type Output = Matrix4;
    fn mul(self, rhs: Matrix4) -> Matrix4 {
        let mut m = Matrix4::zero();
        for r in 0..4 {
            for c in 0..4 {
                m.0[r][c] = (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        m
    }
}

impl Add for Matrix4 {
    type Output = Matrix4;
    fn add(self, rhs: Matrix4) -> Matrix4 {
        let mut m = self;
        m.0.iter_mut().flatten().zip(rhs.0.iter().flatten()).for_each(|(a, b)| *a += b);
        m
    }
}

impl Sub for Matrix4 {
    type Output = Matrix4;
    fn sub(self, rhs: Matrix4) -> Matrix4 {
        self + rhs.scale(-ONE)
    }
}

/// Normalized two-qubit state. Amplitudes are stored raw; global phase is never
/// compared, only overlaps |⟨a|b⟩|².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    amps: [C64; 4],
}

impl StateVector {
    /// Normalizes `amps`; fails on the zero vector.
    pub fn new(amps: [C64; 4]) -> Result<Self> {
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !norm_sqr.is_finite() {
            return Err(Error::validation("state amplitudes must be finite"));
        }
        if norm_sqr <= f64::MIN_POSITIVE {
            return Err(Error::validation("state amplitudes are all zero"));
        }
        let inv = 1.0 / norm_sqr.sqrt();
        Ok(StateVector { amps: amps.map(|a| a * inv) })
    }

    pub fn from_real(amps: [f64; 4]) -> Result<Self> {
        Self::new(amps.map(|a| C64::new(a, 0.0)))
    }

    /// Computational basis state |index⟩, index in 0..4 (|00⟩, |01⟩, |10⟩, |11⟩).
    pub fn basis(index: usize) -> Self {
        assert!(index < 4, "basis index out of range");
        let mut amps = [ZERO; 4];
        amps[index] = ONE;
        StateVector { amps }
    }

    /// Haar-random state: normalized vector of i.i.d. complex Gaussians.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let amps = [(); 4].map(|_| {
                C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            });
            if let Ok(s) = Self::new(amps) {
                return s;
            }
        }
    }

    pub fn amps(&self) -> &[C64; 4] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(other.amps.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// |⟨self|other⟩|².
    pub fn overlap_sqr(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// ⟨ψ|M|ψ⟩ for an arbitrary matrix.
    pub fn sandwich(&self, m: &Matrix4) -> C64 {
        let mv = m.apply(&self.amps);
        self.amps.iter().zip(mv.iter()).map(|(a, b)| a.conj() * b).sum()
    }
}

impl Index<usize> for StateVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.amps[i]
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(4))?;
        for a in &self.amps {
            seq.serialize_element(&[a.re, a.im])?;
        }
        seq.end()
    }
}

pub fn make_state(amps: [C64; 4]) -> Result<StateVector> {
    StateVector::new(amps)
}

/// Whether observable construction accepts a nonzero trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRule {
    RequireTraceless,
    AllowTrace,
}

/// A Hermitian involution (A² = I, eigenvalues ±1).
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    matrix: Matrix4,
    label: Option<String>,
}

impl Observable {
    pub fn new(matrix: Matrix4, label: Option<String>) -> Result<Self> {
        Self::with_rule(matrix, label, TraceRule::RequireTraceless)
    }

    pub fn with_rule(matrix: Matrix4, label: Option<String>, rule: TraceRule) -> Result<Self> {
        if !matrix.is_hermitian(STRUCTURAL_TOL) {
            return Err(Error::validation("observable matrix is not Hermitian"));
        }
        if !(matrix * matrix).approx_eq(&Matrix4::identity(), STRUCTURAL_TOL) {
            return Err(Error::validation("observable matrix is not an involution"));
        }
        if rule == TraceRule::RequireTraceless && matrix.trace().norm() > STRUCTURAL_TOL {
            return Err(Error::validation("observable matrix has nonzero trace"));
        }
        Ok(Observable { matrix, label })
    }

    /// Observable a ⊗ b built from two Pauli factors, labelled like `Z⊗I`.
    pub fn pauli_product(a: Pauli, b: Pauli) -> Result<Self> {
        let mut obs = tensor(&a.matrix(), &b.matrix())?;
        obs.label = Some(format!("{}⊗{}", a.symbol(), b.symbol()));
        Ok(obs)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.matrix
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn commutes_with(&self, other: &Observable) -> bool {
        self.matrix.commutator(&other.matrix).max_abs() <= STRUCTURAL_TOL
    }

    /// The eigenprojection for eigenvalue `sign`.
    pub fn projector(&self, sign: Sign) -> Projector {
        let half = C64::new(0.5, 0.0);
        let signed = self.matrix.scale(C64::new(sign.as_f64(), 0.0));
        Projector { matrix: (Matrix4::identity() + signed).scale(half), sign }
    }

    /// (P⁺, P⁻).
    pub fn projectors(&self) -> (Projector, Projector) {
        (self.projector(Sign::Plus), self.projector(Sign::Minus))
    }
}

/// a ⊗ b as a traceless observable.
pub fn tensor(a: &Matrix2, b: &Matrix2) -> Result<Observable> {
    tensor_with(a, b, TraceRule::RequireTraceless)
}

pub fn tensor_with(a: &Matrix2, b: &Matrix2, rule: TraceRule) -> Result<Observable> {
    Observable::with_rule(Matrix4::kron(a, b), None, rule)
}

/// Eigenprojection of an involution for one eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: Matrix4,
    sign: Sign,
}

impl Projector {
    pub fn matrix(&self) -> &Matrix4 {
        &self.matrix
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }
}

/// (I ± A)/2 for a raw matrix, rejecting anything that is not a Hermitian involution.
pub fn projectors(matrix: &Matrix4) -> Result<(Projector, Projector)> {
    let obs = Observable::with_rule(*matrix, None, TraceRule::AllowTrace)?;
    Ok(obs.projectors())
}

/// Born probability ⟨ψ|P|ψ⟩, clamped into [0, 1].
pub fn born(state: &StateVector, proj: &Projector) -> f64 {
    state.sandwich(&proj.matrix).re.clamp(0.0, 1.0)
}

/// Projection-postulate update P|ψ⟩ / ‖P|ψ⟩‖.
pub fn collapse(state: &StateVector, proj: &Projector) -> Result<StateVector> {
    let p = born(state, proj);
    if p <= BRANCH_TOL {
        return Err(Error::ImpossibleBranch { probability: p });
    }
    StateVector::new(proj.matrix.apply(&state.amps))
}

/// ⟨ψ|A|ψ⟩.
pub fn expectation(state: &StateVector, obs: &Observable) -> f64 {
    state.sandwich(&obs.matrix).re
}

/// Probability of obtaining the given projector outcomes in sequence, with
/// collapse between steps. An empty sequence has probability 1.
pub fn seq_prob<'a, I>(state: &StateVector, projs: I) -> f64
where
    I: IntoIterator<Item = &'a Projector>,
{
    let mut current = *state;
    let mut total = 1.0;
    for proj in projs {
        let p = born(&current, proj);
        if p <= BRANCH_TOL {
            return 0.0;
        }
        total *= p;
        current = match collapse(&current, proj) {
            Ok(s) => s,
            Err(_) => return 0.0,
        };
    }
    total
}

/// Probability distribution over outcome sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    probs: BTreeMap<Vec<Sign>, f64>,
}

impl OutcomeDistribution {
    pub fn new(probs: BTreeMap<Vec<Sign>, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (seq, &p) in &probs {
            if !(-NORMALIZATION_TOL..=1.0 + NORMALIZATION_TOL).contains(&p) {
                return Err(Error::validation(format!(
                    "probability {p} for {} outside [0,1]",
                    sign_string(seq)
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation(format!("outcome probabilities sum to {total}")));
        }
        Ok(OutcomeDistribution { probs })
    }

    pub fn point(outcomes: Vec<Sign>) -> Self {
        OutcomeDistribution { probs: BTreeMap::from([(outcomes, 1.0)]) }
    }

    /// Probability of a sequence; 0 if absent.
    pub fn prob(&self, outcomes: &[Sign]) -> f64 {
        self.probs.get(outcomes).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Sign>, f64)> {
        self.probs.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    /// Support: sequences with probability above `BRANCH_TOL`.
    pub fn support(&self) -> Vec<&Vec<Sign>> {
        self.probs.iter().filter(|(_, &p)| p > BRANCH_TOL).map(|(k, _)| k).collect()
    }

    /// Largest absolute probability difference over the union of both supports.
    pub fn max_abs_diff(&self, other: &OutcomeDistribution) -> f64 {
        self.probs
            .keys()
            .chain(other.probs.keys())
            .map(|k| (self.prob(k) - other.prob(k)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Serialize)]
struct OutcomeEntry<'a> {
    outcomes: &'a [Sign],
    probability: f64,
}

impl Serialize for OutcomeDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.probs.len()))?;
        for (k, &p) in &self.probs {
            seq.serialize_element(&OutcomeEntry { outcomes: k, probability: p })?;
        }
        seq.end()
    }
}
