//! The Peres-Mermin operator grid, its six contexts, the commuting Bell triple
//! and the exact Cabello functional.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::qcore::{Matrix4, Observable, Pauli, Projector, Sign, StateVector, C64, STRUCTURAL_TOL};

/// Position in the 3×3 grid, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridIndex {
    row: u8,
    col: u8,
}

impl GridIndex {
    pub fn new(row: u8, col: u8) -> Result<Self> {
        if !(1..=3).contains(&row) || !(1..=3).contains(&col) {
            return Err(Error::validation(format!("grid index ({row},{col}) out of range 1..=3")));
        }
        Ok(GridIndex { row, col })
    }

    pub(crate) const fn raw(row: u8, col: u8) -> Self {
        GridIndex { row, col }
    }

    pub fn row(self) -> u8 {
        self.row
    }

    pub fn col(self) -> u8 {
        self.col
    }

    /// Canonical bit position (row-1)*3 + (col-1).
    pub fn bit(self) -> usize {
        usize::from(self.row - 1) * 3 + usize::from(self.col - 1)
    }

    pub fn from_bit(bit: usize) -> Self {
        assert!(bit < 9, "grid bit out of range");
        GridIndex::raw((bit / 3) as u8 + 1, (bit % 3) as u8 + 1)
    }

    /// All nine cells in grid (row-major) order.
    pub fn all() -> impl Iterator<Item = GridIndex> {
        (0..9).map(GridIndex::from_bit)
    }

    pub fn name(self) -> String {
        format!("A{}{}", self.row, self.col)
    }

    /// Pauli factors of the grid observable at this cell.
    pub fn factors(self) -> (Pauli, Pauli) {
        GRID_FACTORS[usize::from(self.row - 1)][usize::from(self.col - 1)]
    }

    /// Which qubits the observable acts on nontrivially.
    pub fn qubit_support(self) -> [bool; 2] {
        let (a, b) = self.factors();
        [a != Pauli::I, b != Pauli::I]
    }

    pub fn shares_context_with(self, other: GridIndex) -> bool {
        self.row == other.row || self.col == other.col
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

impl Serialize for GridIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.row, self.col].serialize(serializer)
    }
}

const GRID_FACTORS: [[(Pauli, Pauli); 3]; 3] = [
    [(Pauli::Z, Pauli::I), (Pauli::I, Pauli::Z), (Pauli::Z, Pauli::Z)],
    [(Pauli::I, Pauli::X), (Pauli::X, Pauli::I), (Pauli::X, Pauli::X)],
    [(Pauli::Z, Pauli::X), (Pauli::X, Pauli::Z), (Pauli::Y, Pauli::Y)],
];

/// Grid positions of the triple observables A1 = X⊗X, A2 = Y⊗Y, A3 = Z⊗Z.
const TRIPLE_IN_GRID: [GridIndex; 3] = [GridIndex::raw(2, 3), GridIndex::raw(3, 3), GridIndex::raw(1, 3)];

/// A measurement site: a grid cell, or one of the three triple observables
/// (1-based, `Triple(1)` is X⊗X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cell {
    Grid(GridIndex),
    Triple(u8),
}

impl Cell {
    pub fn triple(k: u8) -> Result<Self> {
        if (1..=3).contains(&k) {
            Ok(Cell::Triple(k))
        } else {
            Err(Error::validation(format!("triple index {k} out of range 1..=3")))
        }
    }

    pub fn grid(row: u8, col: u8) -> Result<Self> {
        GridIndex::new(row, col).map(Cell::Grid)
    }

    /// The grid cell carrying the same operator. The triple is column 3.
    pub fn to_grid(self) -> GridIndex {
        match self {
            Cell::Grid(g) => g,
            Cell::Triple(k) => TRIPLE_IN_GRID[usize::from(k - 1)],
        }
    }

    /// 1-based triple index, if this cell carries one of the triple observables.
    pub fn triple_index(self) -> Option<u8> {
        match self {
            Cell::Triple(k) => Some(k),
            Cell::Grid(g) => TRIPLE_IN_GRID.iter().position(|&t| t == g).map(|p| p as u8 + 1),
        }
    }

    pub fn name(self) -> String {
        match self {
            Cell::Grid(g) => g.name(),
            Cell::Triple(k) => format!("A{k}"),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Grid(g) => write!(f, "{g}"),
            Cell::Triple(k) => write!(f, "t{k}"),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Row(u8),
    Col(u8),
    /// The X⊗X, Y⊗Y, Z⊗Z triple measured as A1, A2, A3.
    Triple,
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextKind::Row(i) => write!(f, "r{i}"),
            ContextKind::Col(j) => write!(f, "c{j}"),
            ContextKind::Triple => write!(f, "triple"),
        }
    }
}

/// A mutually commuting triple whose ordered product is `sign`·I.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context {
    pub kind: ContextKind,
    pub members: [Cell; 3],
    pub sign: Sign,
}

impl Context {
    /// Coefficient of this context's term in the Cabello functional: -1 for
    /// column 3, +1 otherwise.
    pub fn cabello_coefficient(&self) -> Sign {
        match self.kind {
            ContextKind::Col(3) => Sign::Minus,
            _ => Sign::Plus,
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.members.iter().any(|m| m.to_grid() == cell.to_grid())
    }

    fn row(i: u8, sign: Sign) -> Self {
        let members = [1, 2, 3].map(|j| Cell::Grid(GridIndex::raw(i, j)));
        Context { kind: ContextKind::Row(i), members, sign }
    }

    fn col(j: u8, sign: Sign) -> Self {
        let members = [1, 2, 3].map(|i| Cell::Grid(GridIndex::raw(i, j)));
        Context { kind: ContextKind::Col(j), members, sign }
    }
}

/// Expected context signs: rows, then columns.
const CONTEXT_SIGNS: [Sign; 6] = [Sign::Plus, Sign::Plus, Sign::Plus, Sign::Plus, Sign::Plus, Sign::Minus];

/// The six grid contexts (three rows then three columns) with their expected signs.
pub fn grid_contexts() -> [Context; 6] {
    [
        Context::row(1, CONTEXT_SIGNS[0]),
        Context::row(2, CONTEXT_SIGNS[1]),
        Context::row(3, CONTEXT_SIGNS[2]),
        Context::col(1, CONTEXT_SIGNS[3]),
        Context::col(2, CONTEXT_SIGNS[4]),
        Context::col(3, CONTEXT_SIGNS[5]),
    ]
}

#[derive(Debug, Clone)]
pub struct PmSquare {
    cells: Vec<Observable>,
    projectors: Vec<(Projector, Projector)>,
    /// Each Pauli product has one nonzero entry per row: (column, value).
    monomials: Vec<[(usize, C64); 4]>,
}

fn monomial(m: &Matrix4) -> [(usize, C64); 4] {
    std::array::from_fn(|r| {
        let c = (0..4).find(|&c| m.0[r][c].norm() > STRUCTURAL_TOL).expect("Pauli product rows are nonzero");
        (c, m.0[r][c])
    })
}

impl PmSquare {
    pub fn build() -> Self {
        let cells: Vec<Observable> = GridIndex::all()
            .map(|g| {
                let (a, b) = g.factors();
                Observable::pauli_product(a, b)
                    .expect("Pauli products are traceless Hermitian involutions")
                    .with_label(g.name())
            })
            .collect();
        let projectors = cells.iter().map(Observable::projectors).collect();
        let monomials = cells.iter().map(|o| monomial(o.matrix())).collect();
        PmSquare { cells, projectors, monomials }
    }

    pub fn observable(&self, cell: Cell) -> &Observable {
        &self.cells[cell.to_grid().bit()]
    }

    pub fn projector(&self, cell: Cell, sign: Sign) -> &Projector {
        let (p, m) = &self.projectors[cell.to_grid().bit()];
        match sign {
            Sign::Plus => p,
            Sign::Minus => m,
        }
    }

    /// ⟨ψ|P⁺|ψ⟩ = (1 + ⟨ψ|A|ψ⟩)/2, evaluated on the sparse form of A.
    pub fn plus_probability(&self, cell: Cell, psi: &StateVector) -> f64 {
        let m = &self.monomials[cell.to_grid().bit()];
        let a = psi.amps();
        let mean: f64 = (0..4).map(|r| (a[r].conj() * m[r].1 * a[m[r].0]).re).sum();
        ((1.0 + mean) / 2.0).clamp(0.0, 1.0)
    }

    pub fn commutes(&self, a: Cell, b: Cell) -> bool {
        self.observable(a).commutes_with(self.observable(b))
    }

    /// `map[a][b]` is true iff cells with bits a and b commute.
    pub fn commutation_map(&self) -> [[bool; 9]; 9] {
        let mut map = [[false; 9]; 9];
        for a in GridIndex::all() {
            for b in GridIndex::all() {
                map[a.bit()][b.bit()] = self.commutes(Cell::Grid(a), Cell::Grid(b));
            }
        }
        map
    }

    /// Ordered product of the members' matrices.
    pub fn context_product(&self, members: &[Cell]) -> Matrix4 {
        members
            .iter()
            .fold(Matrix4::identity(), |acc, &c| acc * *self.observable(c).matrix())
    }

    /// Sign s with product = s·I, if the product is ±I.
    pub fn product_sign(&self, members: &[Cell]) -> Option<Sign> {
        let prod = self.context_product(members);
        let id = Matrix4::identity();
        if prod.approx_eq(&id, STRUCTURAL_TOL) {
            Some(Sign::Plus)
        } else if prod.approx_eq(&id.scale((-1.0).into()), STRUCTURAL_TOL) {
            Some(Sign::Minus)
        } else {
            None
        }
    }

    /// The six grid contexts, each with its sign checked against the
    /// numerically computed operator product.
    pub fn contexts(&self) -> Result<Vec<Context>> {
        grid_contexts()
            .into_iter()
            .map(|ctx| {
                match self.product_sign(&ctx.members) {
                    Some(s) if s == ctx.sign => Ok(ctx),
                    Some(s) => Err(Error::consistency(format!(
                        "context {} has product {s}I, expected {}I",
                        ctx.kind, ctx.sign
                    ))),
                    None => Err(Error::consistency(format!("context {} product is not ±I", ctx.kind))),
                }
            })
            .collect()
    }

    /// ⟨A11A12A13⟩+⟨A21A22A23⟩+⟨A31A32A33⟩+⟨A11A21A31⟩+⟨A12A22A32⟩−⟨A13A23A33⟩,
    /// each term the expectation of the literal 4×4 operator product.
    pub fn cabello_value_exact(&self, state: &StateVector) -> f64 {
        grid_contexts()
            .iter()
            .map(|ctx| ctx.cabello_coefficient().as_f64() * state.sandwich(&self.context_product(&ctx.members)).re)
            .sum()
    }
}

impl Default for PmSquare {
    fn default() -> Self {
        Self::build()
    }
}

pub fn build_square() -> PmSquare {
    PmSquare::build()
}

pub fn cabello_value_exact(state: &StateVector) -> f64 {
    PmSquare::build().cabello_value_exact(state)
}

/// One row of the Bell eigenbasis table.
#[derive(Debug, Clone, Serialize)]
pub struct BellEntry {
    pub name: String,
    pub vector: StateVector,
    pub eigenvalues: [Sign; 3],
}

/// The commuting triple A1 = X⊗X, A2 = Y⊗Y, A3 = Z⊗Z and its common eigenbasis.
#[derive(Debug, Clone)]
pub struct TripleSpec {
    pub observables: [Observable; 3],
    pub eigenbasis: [BellEntry; 4],
}

impl TripleSpec {
    pub fn new() -> Self {
        let mk = |a, b, name: &str| {
            Observable::pauli_product(a, b).expect("Pauli product is valid").with_label(name)
        };
        let observables = [mk(Pauli::X, Pauli::X, "A1"), mk(Pauli::Y, Pauli::Y, "A2"), mk(Pauli::Z, Pauli::Z, "A3")];
        use Sign::{Minus as M, Plus as P};
        let entry = |amps: [f64; 4], eigenvalues: [Sign; 3]| BellEntry {
            name: format!("Psi^{}", crate::qcore::sign_string(&eigenvalues)),
            vector: StateVector::from_real(amps).expect("nonzero"),
            eigenvalues,
        };
        let eigenbasis = [
            entry([1.0, 0.0, 0.0, 1.0], [P, M, P]),
            entry([1.0, 0.0, 0.0, -1.0], [M, P, P]),
            entry([0.0, 1.0, 1.0, 0.0], [P, P, M]),
            entry([0.0, 1.0, -1.0, 0.0], [M, M, M]),
        ];
        TripleSpec { observables, eigenbasis }
    }

    /// The Bell vector with the given eigenvalue pattern, if it is one of the four.
    pub fn bell(&self, pattern: [Sign; 3]) -> Option<&StateVector> {
        self.eigenbasis.iter().find(|e| e.eigenvalues == pattern).map(|e| &e.vector)
    }

    pub fn allowed_patterns(&self) -> [[Sign; 3]; 4] {
        self.eigenbasis.each_ref().map(|e| e.eigenvalues)
    }

    pub fn projector(&self, k: u8, sign: Sign) -> Projector {
        self.observables[usize::from(k - 1)].projector(sign)
    }

    /// The triple as a context; A1·A2·A3 = -I.
    pub fn context(&self) -> Context {
        Context {
            kind: ContextKind::Triple,
            members: [Cell::Triple(1), Cell::Triple(2), Cell::Triple(3)],
            sign: Sign::Minus,
        }
    }
}

impl Default for TripleSpec {
    fn default() -> Self {
        Self::new()
    }
}

pub fn triple_spec() -> TripleSpec {
    TripleSpec::new()
}
