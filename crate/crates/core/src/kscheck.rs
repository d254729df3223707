//! Exhaustive analysis of static ±1 valuations of the nine grid observables.
//!
//! Integer arithmetic only. A valuation v satisfies context k when the product
//! of its three values equals the context sign; the Cabello functional is
//! Σ_k c_k·∏v with c = (+1,+1,+1,+1,+1,-1).

use serde::Serialize;

use crate::hvmodels::EpsilonAssignment;
use crate::pmsquare::GridIndex;

pub type Valuation = EpsilonAssignment;

/// Bit positions of each context: rows 1..3 then columns 1..3.
const CONTEXT_BITS: [[usize; 3]; 6] = [[0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 3, 6], [1, 4, 7], [2, 5, 8]];
/// Required operator-product signs per context.
pub const CONTEXT_SIGNS: [i32; 6] = [1, 1, 1, 1, 1, -1];
/// Coefficients of the six context terms in the Cabello functional.
pub const CABELLO_COEFFICIENTS: [i32; 6] = [1, 1, 1, 1, 1, -1];
pub const NONCONTEXTUAL_BOUND: i32 = 4;

/// All 2⁹ valuations in ascending code order.
pub fn enumerate_valuations() -> impl Iterator<Item = Valuation> {
    EpsilonAssignment::all(9)
}

fn value(v: Valuation, bit: usize) -> i32 {
    i32::from(v.get(bit).value())
}

/// Product of the valuation over each context, rows then columns.
pub fn context_products(v: Valuation) -> [i32; 6] {
    assert_eq!(v.arity(), 9, "valuation must cover the nine grid cells");
    CONTEXT_BITS.map(|bits| bits.iter().map(|&b| value(v, b)).product())
}

pub fn cabello_functional(v: Valuation) -> i32 {
    context_products(v).iter().zip(CABELLO_COEFFICIENTS).map(|(p, c)| p * c).sum()
}

pub fn satisfied_constraints(v: Valuation) -> usize {
    context_products(v).iter().zip(CONTEXT_SIGNS).filter(|(p, s)| *p == s).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KsReport {
    pub valuations_checked: usize,
    pub max_functional: i32,
    pub maximizer_count: usize,
    /// Codes of the valuations reaching `max_functional`.
    pub maximizers: Vec<u16>,
    pub exists_satisfying_all: bool,
    pub satisfying_count: usize,
    pub max_constraints_satisfied: usize,
    /// `histogram[k]` = number of valuations satisfying exactly k constraints.
    pub constraint_histogram: [usize; 7],
    /// Constraints satisfied by each valuation, indexed by code.
    pub per_valuation_satisfied: Vec<u8>,
    /// Product of the six required signs (-1) against the product of the six
    /// triple products, which is +1 for every valuation.
    pub parity_sign_product: i32,
    pub parity_holds_for_all: bool,
}

pub fn ks_contradiction_check() -> KsReport {
    let mut report = KsReport {
        valuations_checked: 0,
        max_functional: i32::MIN,
        maximizer_count: 0,
        maximizers: Vec::new(),
        exists_satisfying_all: false,
        satisfying_count: 0,
        max_constraints_satisfied: 0,
        constraint_histogram: [0; 7],
        per_valuation_satisfied: Vec::with_capacity(512),
        parity_sign_product: CONTEXT_SIGNS.iter().product(),
        parity_holds_for_all: true,
    };
    for v in enumerate_valuations() {
        report.valuations_checked += 1;
        let f = cabello_functional(v);
        if f > report.max_functional {
            report.max_functional = f;
            report.maximizers.clear();
        }
        if f == report.max_functional {
            report.maximizers.push(v.code());
        }
        let sat = satisfied_constraints(v);
        report.constraint_histogram[sat] += 1;
        report.per_valuation_satisfied.push(sat as u8);
        report.max_constraints_satisfied = report.max_constraints_satisfied.max(sat);
        if sat == 6 {
            report.satisfying_count += 1;
        }
        if context_products(v).iter().product::<i32>() != 1 {
            report.parity_holds_for_all = false;
        }
    }
    report.maximizer_count = report.maximizers.len();
    report.exists_satisfying_all = report.satisfying_count > 0;
    report
}

/// A valuation attaining the maximum functional value (lowest code).
pub fn best_valuation() -> Valuation {
    enumerate_valuations()
        .max_by_key(|&v| (cabello_functional(v), std::cmp::Reverse(v.code())))
        .expect("512 valuations")
}

/// Value at a grid cell, as ±1.
pub fn valuation_at(v: Valuation, cell: GridIndex) -> i32 {
    value(v, cell.bit())
}
