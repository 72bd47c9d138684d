//! The best-of-both-worlds allocation pipeline.
//!
//! Phase 1 allocates exceptional items (items worth at least an agent's
//! TPS) through an exact LP over an extended instance with one auxiliary
//! item per agent, then rounds the fractional optimum into a small lottery
//! over matchings. Phase 2 completes each matching so every agent holds
//! one item she weakly prefers to everything still unallocated. Phase 3
//! distributes the remaining items by a second LP and faithful rounding.
//! Phase 4 shrinks the combined lottery to at most `n` allocations while
//! keeping it ex-ante proportional.
//!
//! Every theorem the construction relies on is asserted at runtime, and
//! the final lottery is re-certified by the audit checkers before being
//! returned.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};
use thiserror::Error;

use crate::audit;
use crate::faithful::{faithful_implement, faithful_implement_mapped, FaithfulError};
use crate::lp::{basic_feasible_point, solve_lp, LpError, LpProblem, LpStatus, Relation};
use crate::matching::{max_weight_matching, MatchingError, WeightedBipartiteGraph};
use crate::model::{Allocation, FractionalAllocation, Instance, Lottery, ModelError};
use crate::rational::{rat, rational_to_json, sum, Rational};
use crate::shares::{exceptional_items, proportional_share, tps, SharesError};
use num::traits::{One, Zero};

#[derive(Debug, Error)]
pub enum BobwError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shares(#[from] SharesError),
    #[error(transparent)]
    Faithful(#[from] FaithfulError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error("output failed certification: {0}")]
    Certification(String),
}

/// The extended unit-demand instance of Phase 1: real items keep their
/// value when exceptional (zero otherwise) and agent `i`'s auxiliary item
/// (column `m + i`) is worth her TPS.
pub struct Phase1Instance {
    pub utilities: Instance,
    pub real_items: usize,
    pub ps: Vec<Rational>,
    pub tps: Vec<Rational>,
    pub exceptional: Vec<BTreeSet<usize>>,
}

pub fn build_phase1_instance(inst: &Instance) -> Result<Phase1Instance, BobwError> {
    let n = inst.agents();
    let m = inst.items();
    let mut ps = Vec::with_capacity(n);
    let mut tps_values = Vec::with_capacity(n);
    let mut exceptional = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        ps.push(proportional_share(inst, i)?);
        tps_values.push(tps(inst, i)?);
        exceptional.push(exceptional_items(inst, i)?);
        let mut row = vec![Rational::zero(); m + n];
        for &j in &exceptional[i] {
            row[j] = inst.value(i, j).clone();
        }
        row[m + i] = tps_values[i].clone();
        rows.push(row);
    }
    Ok(Phase1Instance {
        utilities: Instance::new(rows).expect("utilities are nonnegative"),
        real_items: m,
        ps,
        tps: tps_values,
        exceptional,
    })
}

/// Variable layout of LP1. Only the pairs an agent can meaningfully hold
/// are modeled: her exceptional items and her own auxiliary item. Any LP1
/// solution over the full variable set can be normalized onto this support
/// without losing objective value, so the optimum is unchanged.
struct Lp1Layout {
    pairs: Vec<(usize, usize)>, // variable index -> (agent, extended column)
    s_offset: usize,
    constrained_cols: Vec<usize>, // real columns that appear in some pair
    n: usize,
}

fn lp1_layout(p1: &Phase1Instance) -> Lp1Layout {
    let n = p1.ps.len();
    let m = p1.real_items;
    let mut pairs = Vec::new();
    let mut cols = BTreeSet::new();
    for (i, exc) in p1.exceptional.iter().enumerate() {
        for &j in exc {
            pairs.push((i, j));
            cols.insert(j);
        }
        pairs.push((i, m + i));
    }
    let s_offset = pairs.len();
    Lp1Layout {
        pairs,
        s_offset,
        constrained_cols: cols.into_iter().collect(),
        n,
    }
}

fn lp1_problem(p1: &Phase1Instance) -> (LpProblem, Lp1Layout) {
    let layout = lp1_layout(p1);
    let n = layout.n;
    let num_vars = layout.s_offset + n;
    let mut objective = vec![Rational::zero(); num_vars];
    for i in 0..n {
        objective[layout.s_offset + i] = Rational::one();
    }
    let mut lp = LpProblem::new(num_vars, true, objective);
    // each allocated real item at most once
    for &col in &layout.constrained_cols {
        let mut row = vec![Rational::zero(); num_vars];
        for (v, &(_, j)) in layout.pairs.iter().enumerate() {
            if j == col {
                row[v] = Rational::one();
            }
        }
        lp.add_constraint(row, Relation::Le, Rational::one());
    }
    // unit of fractional mass per agent
    for i in 0..n {
        let mut row = vec![Rational::zero(); num_vars];
        for (v, &(agent, _)) in layout.pairs.iter().enumerate() {
            if agent == i {
                row[v] = Rational::one();
            }
        }
        lp.add_constraint(row, Relation::Eq, Rational::one());
    }
    // s_i equals the utility of the fractional bundle
    for i in 0..n {
        let mut row = vec![Rational::zero(); num_vars];
        for (v, &(agent, j)) in layout.pairs.iter().enumerate() {
            if agent == i {
                row[v] = p1.utilities.value(i, j).clone();
            }
        }
        row[layout.s_offset + i] = -Rational::one();
        lp.add_constraint(row, Relation::Eq, Rational::zero());
    }
    // proportionality floor
    for i in 0..n {
        let mut row = vec![Rational::zero(); num_vars];
        row[layout.s_offset + i] = Rational::one();
        lp.add_constraint(row, Relation::Ge, p1.ps[i].clone());
    }
    (lp, layout)
}

fn lp1_point_to_fa(
    layout: &Lp1Layout,
    p1: &Phase1Instance,
    values: &[Rational],
) -> FractionalAllocation {
    let n = layout.n;
    let cols = p1.real_items + n;
    let mut rows = vec![vec![Rational::zero(); cols]; n];
    for (v, &(i, j)) in layout.pairs.iter().enumerate() {
        rows[i][j] = values[v].clone();
    }
    FractionalAllocation::new(rows).expect("LP1 constraints keep the allocation valid")
}

/// Solves LP1 to an optimal vertex. Feasibility is a theorem (spreading
/// `1/n` of each exceptional item and topping up with the auxiliary item
/// achieves `s_i = PS_i`), so infeasibility panics.
pub fn solve_lp1(p1: &Phase1Instance) -> FractionalAllocation {
    let (lp, layout) = lp1_problem(p1);
    let sol = solve_lp(&lp);
    assert_eq!(
        sol.status,
        LpStatus::Optimal,
        "LP1 must be feasible and bounded"
    );
    lp1_point_to_fa(&layout, p1, &sol.values)
}

/// Consolidates an optimal LP1 solution: (i) no agent keeps fractions of
/// two distinct partly-allocated real items (mass shifts toward the
/// higher-utility item, ties toward the lower index, until the target
/// column fills or the donor empties), and (ii) no agent keeps auxiliary
/// mass while a real item she values at exactly her TPS is unfilled.
/// Both moves preserve every constraint and every `s_i`, and afterwards at
/// most `2n - 1` real items carry positive mass.
pub fn consolidate(a: &FractionalAllocation, p1: &Phase1Instance) -> FractionalAllocation {
    let n = p1.ps.len();
    let m = p1.real_items;
    let one = Rational::one();
    let mut x: Vec<Vec<Rational>> = a.rows().to_vec();
    let col_sum =
        |x: &Vec<Vec<Rational>>, j: usize| -> Rational { sum(x.iter().map(|row| &row[j])) };

    loop {
        let mut changed = false;
        // rule (i): merge two partly-allocated holdings of one agent
        'merge: loop {
            for i in 0..n {
                let mut partly: Vec<usize> = (0..m)
                    .filter(|&j| !x[i][j].is_zero() && col_sum(&x, j) < one)
                    .collect();
                if partly.len() < 2 {
                    continue;
                }
                // target: highest utility, then lowest index
                partly.sort_by(|&a_, &b_| {
                    p1.utilities
                        .value(i, b_)
                        .cmp(p1.utilities.value(i, a_))
                        .then(a_.cmp(&b_))
                });
                let target = partly[0];
                let donor = *partly.last().unwrap();
                assert_eq!(
                    p1.utilities.value(i, target),
                    p1.utilities.value(i, donor),
                    "optimal LP1 solutions cannot split across unequal partly-allocated items"
                );
                let room = &one - col_sum(&x, target);
                let shift = x[i][donor].clone().min(room);
                x[i][donor] -= &shift;
                x[i][target] += &shift;
                changed = true;
                continue 'merge;
            }
            break;
        }
        // rule (ii): auxiliary mass yields to unfilled real items of value
        // exactly TPS
        let mut shifted = false;
        for i in 0..n {
            if x[i][m + i].is_zero() {
                continue;
            }
            let candidate = p1.exceptional[i]
                .iter()
                .copied()
                .find(|&j| *p1.utilities.value(i, j) == p1.tps[i] && col_sum(&x, j) < one);
            if let Some(j) = candidate {
                let room = &one - col_sum(&x, j);
                let shift = x[i][m + i].clone().min(room);
                x[i][m + i] -= &shift;
                x[i][j] += &shift;
                shifted = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // keep iterating: rule (ii) can reopen rule (i) situations
        if !shifted {
            break;
        }
    }

    let allocated_real = (0..m).filter(|&j| !col_sum(&x, j).is_zero()).count();
    assert!(
        allocated_real < 2 * n,
        "{allocated_real} real items allocated after consolidation, bound is {}",
        2 * n - 1
    );
    FractionalAllocation::new(x).expect("consolidation preserves validity")
}

/// What an agent ends up holding after Phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchedItem {
    Real(usize),
    Aux,
}

/// Phase-1 outcome: a lottery over per-agent single-item assignments, the
/// vertex it implements, and the per-agent expected utilities `s_i`.
pub struct Phase1Result {
    pub lottery: Vec<(Rational, Vec<MatchedItem>)>,
    pub fractional: FractionalAllocation,
    pub s: Vec<Rational>,
}

/// Rounds the consolidated solution into at most `4n` matchings. The
/// solution is first pushed back to a vertex of LP1 (consolidation moves
/// along faces and may leave the basic point); the crossover only ever
/// shrinks the support, so consolidation's structure is kept and the
/// strictly-fractional count at a vertex, at most `3n`, drives the support
/// bound through the faithful-implementation lemma.
pub fn round_phase1(a: &FractionalAllocation, p1: &Phase1Instance) -> Phase1Result {
    let n = p1.ps.len();
    let m = p1.real_items;
    let (lp, layout) = lp1_problem(p1);
    let mut hint = vec![Rational::zero(); lp.num_vars];
    for (v, &(i, j)) in layout.pairs.iter().enumerate() {
        hint[v] = a.get(i, j).clone();
    }
    for i in 0..n {
        hint[layout.s_offset + i] = sum(layout
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, &(agent, _))| agent == i)
            .map(|(v, &(_, j))| &hint[v] * p1.utilities.value(i, j))
            .collect::<Vec<_>>()
            .iter());
    }
    let vertex = match basic_feasible_point(&lp, &hint) {
        Ok(sol) => sol,
        Err(LpError::HintInfeasible(w)) => {
            panic!("consolidated LP1 solution left the feasible region: {w}")
        }
    };
    assert_eq!(vertex.status, LpStatus::Optimal);
    assert_eq!(
        vertex.objective_value,
        lp.objective_value(&hint),
        "crossover must preserve the LP1 optimum"
    );
    let fractional = lp1_point_to_fa(&layout, p1, &vertex.values);
    let s: Vec<Rational> = (0..n)
        .map(|i| vertex.values[layout.s_offset + i].clone())
        .collect();

    let (lottery, _) = faithful_implement(&fractional, &p1.utilities)
        .expect("extended fractional allocation is valid");
    assert!(
        lottery.len() <= 4 * n,
        "phase 1 support {} exceeds 4n = {}",
        lottery.len(),
        4 * n
    );

    let mut assignments = Vec::with_capacity(lottery.len());
    for (prob, alloc) in lottery.support() {
        let mut per_agent = Vec::with_capacity(n);
        for i in 0..n {
            let bundle = alloc.bundle(i);
            assert_eq!(bundle.len(), 1, "agent {i} must hold exactly one item");
            let &item = bundle.iter().next().unwrap();
            if item < m {
                assert!(
                    p1.exceptional[i].contains(&item),
                    "agent {i} matched to a non-exceptional real item"
                );
                per_agent.push(MatchedItem::Real(item));
            } else {
                assert_eq!(item, m + i, "agent {i} holds a foreign auxiliary item");
                per_agent.push(MatchedItem::Aux);
            }
        }
        assignments.push((prob.clone(), per_agent));
    }
    // expectation in utility units equals s_i
    for i in 0..n {
        let expected = sum(assignments
            .iter()
            .map(|(p, assignment)| {
                let col = match assignment[i] {
                    MatchedItem::Real(j) => j,
                    MatchedItem::Aux => m + i,
                };
                p * p1.utilities.value(i, col)
            })
            .collect::<Vec<_>>()
            .iter());
        assert_eq!(expected, s[i], "agent {i} expectation drifted from s_i");
        assert!(s[i] >= p1.ps[i], "agent {i} fell below her PS in LP1");
    }
    Phase1Result {
        lottery: assignments,
        fractional,
        s,
    }
}

/// State after Phases 1-2 for one support matching.
pub struct MatchingState {
    pub n1: BTreeSet<usize>,
    pub n2: BTreeSet<usize>,
    /// `e_i`: the single item each agent holds (degenerate agents with no
    /// positive value left may hold nothing)
    pub matched: BTreeMap<usize, usize>,
    pub m2: BTreeSet<usize>,
    pub m3: BTreeSet<usize>,
    pub b_sets: BTreeMap<usize, Vec<usize>>,
    pub w_values: BTreeMap<usize, Rational>,
    pub f_values: BTreeMap<usize, Rational>,
}

/// Splits agents by what Phase 1 gave them and promotes agents out of `N2`
/// while any unallocated item is exceptional for them (with respect to the
/// original instance's TPS). Lowest agent index, then lowest item index.
pub fn partition_and_promote(assignment: &[MatchedItem], p1: &Phase1Instance) -> MatchingState {
    let n = p1.ps.len();
    let mut n1 = BTreeSet::new();
    let mut n2 = BTreeSet::new();
    let mut matched = BTreeMap::new();
    let mut m2: BTreeSet<usize> = (0..p1.real_items).collect();
    for (i, what) in assignment.iter().enumerate() {
        match what {
            MatchedItem::Real(j) => {
                n1.insert(i);
                matched.insert(i, *j);
                m2.remove(j);
            }
            MatchedItem::Aux => {
                n2.insert(i);
            }
        }
    }
    debug_assert_eq!(n1.len() + n2.len(), n);
    loop {
        let promotion = n2.iter().find_map(|&i| {
            m2.iter()
                .find(|&&j| p1.exceptional[i].contains(&j))
                .map(|&j| (i, j))
        });
        match promotion {
            Some((i, j)) => {
                n2.remove(&i);
                n1.insert(i);
                matched.insert(i, j);
                m2.remove(&j);
            }
            None => break,
        }
    }
    MatchingState {
        n1,
        n2,
        matched,
        m2,
        m3: BTreeSet::new(),
        b_sets: BTreeMap::new(),
        w_values: BTreeMap::new(),
        f_values: BTreeMap::new(),
    }
}

/// Phase 2 completion: every `N2` agent is matched to one of her
/// `|N2|`-best unallocated items by a maximum-weight matching under the
/// weights `w_i(j) = v_i(j) / (v_i(M2) - W_i)`. Agents with no value left
/// in `M2` take the lowest-index free item of their candidate set (or
/// nothing) and get `f_i = 0`.
pub fn complete_matching(
    mut state: MatchingState,
    p1: &Phase1Instance,
    inst: &Instance,
) -> Result<MatchingState, BobwError> {
    let n2: Vec<usize> = state.n2.iter().copied().collect();
    if n2.is_empty() {
        state.m3 = state.m2.clone();
        assert_first_item_priority(&state, inst);
        return Ok(state);
    }
    let m2: Vec<usize> = state.m2.iter().copied().collect();
    let k = n2.len();

    // TPS can only grow when an agent leaves together with one item.
    for &i in &n2 {
        let values: Vec<Rational> = m2.iter().map(|&j| inst.value(i, j).clone()).collect();
        let reduced_tps = crate::shares::tps_for_values(&values, k);
        assert!(
            reduced_tps >= p1.tps[i],
            "TPS monotonicity violated for agent {i}"
        );
    }

    let b_size = k.min(m2.len());
    let mut degenerate = Vec::new();
    let mut weighted = Vec::new();
    for &i in &n2 {
        let mut ranked: Vec<usize> = m2.clone();
        ranked.sort_by(|&a, &b| inst.value(i, b).cmp(inst.value(i, a)).then(a.cmp(&b)));
        let b_i: Vec<usize> = ranked.into_iter().take(b_size).collect();
        let total = sum(m2.iter().map(|&j| inst.value(i, j)));
        let w_i = sum(b_i.iter().map(|&j| inst.value(i, j)));
        if total.is_zero() {
            degenerate.push(i);
        } else {
            assert!(
                w_i < total,
                "agent {i} has at most |N2| positive items left; promotion was incomplete"
            );
            weighted.push((i, b_i.clone(), total.clone(), w_i.clone()));
        }
        state.b_sets.insert(i, b_i);
        state.w_values.insert(i, w_i);
    }

    // max-weight matching over the non-degenerate agents
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    if !weighted.is_empty() {
        let col_of: BTreeMap<usize, usize> = m2.iter().enumerate().map(|(c, &j)| (j, c)).collect();
        let mut edges = Vec::new();
        for (row, (i, b_i, total, w_i)) in weighted.iter().enumerate() {
            let denom = total - w_i;
            for &j in b_i {
                edges.push((row, col_of[&j], inst.value(*i, j) / &denom));
            }
        }
        let graph = WeightedBipartiteGraph::new(weighted.len(), m2.len(), edges)?;
        let matching = max_weight_matching(&graph)?;
        for (row, col) in matching {
            let (i, _, _, _) = &weighted[row];
            state.matched.insert(*i, m2[col]);
            taken.insert(m2[col]);
        }
    }
    // degenerate agents pick up any remaining candidate item
    for &i in &degenerate {
        let free = state.b_sets[&i]
            .iter()
            .copied()
            .find(|j| !taken.contains(j));
        if let Some(j) = free {
            state.matched.insert(i, j);
            taken.insert(j);
        }
        state.f_values.insert(i, Rational::zero());
    }

    // f_i from the matching
    let mut f_total = Rational::zero();
    for (i, _, total, w_i) in &weighted {
        let e_i = state.matched[i];
        let f = (total / rat(k as i64) - inst.value(*i, e_i)) / (total - w_i);
        f_total += &f;
        state.f_values.insert(*i, f);
    }
    assert!(
        f_total <= Rational::one(),
        "sum of f_i exceeded 1, contradicting the feasibility argument for LP3"
    );

    state.m3 = state
        .m2
        .iter()
        .copied()
        .filter(|j| !taken.contains(j))
        .collect();
    assert_first_item_priority(&state, inst);
    Ok(state)
}

/// Every agent weakly prefers her matched item to everything left in `M3`.
fn assert_first_item_priority(state: &MatchingState, inst: &Instance) {
    for i in 0..inst.agents() {
        let own = state
            .matched
            .get(&i)
            .map(|&j| inst.value(i, j).clone())
            .unwrap_or_else(Rational::zero);
        for &j in &state.m3 {
            assert!(
                own >= *inst.value(i, j),
                "agent {i} prefers unallocated item {j} to her matched item"
            );
        }
    }
}

/// LP3: welfare-maximizing fractional allocation of the unmatched items,
/// subject to every `N2` agent receiving at least `f_i * v_i(M3)`.
/// Returns the optimum, the per-agent values, and the column-to-item map.
pub fn solve_lp3(
    state: &MatchingState,
    inst: &Instance,
) -> (FractionalAllocation, Vec<Rational>, Vec<usize>) {
    let n = inst.agents();
    let item_map: Vec<usize> = state.m3.iter().copied().collect();
    let m3 = item_map.len();
    let var = |i: usize, c: usize| i * m3 + c;
    let s_offset = n * m3;
    let num_vars = s_offset + n;
    let mut objective = vec![Rational::zero(); num_vars];
    for i in 0..n {
        objective[s_offset + i] = Rational::one();
    }
    let mut lp = LpProblem::new(num_vars, true, objective);
    for c in 0..m3 {
        let mut row = vec![Rational::zero(); num_vars];
        for i in 0..n {
            row[var(i, c)] = Rational::one();
        }
        lp.add_constraint(row, Relation::Le, Rational::one());
    }
    for i in 0..n {
        let mut row = vec![Rational::zero(); num_vars];
        for (c, &j) in item_map.iter().enumerate() {
            row[var(i, c)] = inst.value(i, j).clone();
        }
        row[s_offset + i] = -Rational::one();
        lp.add_constraint(row, Relation::Eq, Rational::zero());
    }
    let m3_value = |i: usize| -> Rational { sum(item_map.iter().map(|&j| inst.value(i, j))) };
    for (&i, f) in &state.f_values {
        let mut row = vec![Rational::zero(); num_vars];
        row[s_offset + i] = Rational::one();
        lp.add_constraint(row, Relation::Ge, f * m3_value(i));
    }
    let sol = solve_lp(&lp);
    assert_eq!(sol.status, LpStatus::Optimal, "LP3 must be feasible");
    let rows: Vec<Vec<Rational>> = (0..n)
        .map(|i| (0..m3).map(|c| sol.values[var(i, c)].clone()).collect())
        .collect();
    let fa = if m3 == 0 {
        FractionalAllocation::new(vec![vec![]; n]).expect("empty allocation")
    } else {
        FractionalAllocation::new(rows).expect("LP3 constraints keep the allocation valid")
    };
    let s = (0..n).map(|i| sol.values[s_offset + i].clone()).collect();
    (fa, s, item_map)
}

/// Rounds LP3's optimum faithfully, merges each support allocation with the
/// matched items, and hands any still-unallocated item to the agent who
/// values it most (lowest index on ties). Support stays within `m + 1`.
pub fn round_phase3(
    c_star: &FractionalAllocation,
    item_map: &[usize],
    state: &MatchingState,
    inst: &Instance,
) -> Result<Vec<(Rational, Allocation)>, BobwError> {
    let n = inst.agents();
    let (lottery, _) = faithful_implement_mapped(c_star, inst, item_map)?;
    assert!(
        lottery.len() <= inst.items() + 1,
        "phase 3 support {} exceeds m + 1 = {}",
        lottery.len(),
        inst.items() + 1
    );
    let mut out = Vec::with_capacity(lottery.len());
    for (prob, alloc) in lottery.support() {
        let mut full = alloc.clone();
        for (&i, &j) in &state.matched {
            full.bundle_mut(i).insert(j);
        }
        for &j in item_map {
            let owned = (0..n).any(|i| full.bundle(i).contains(&j));
            if !owned {
                let best = (0..n)
                    .max_by(|&a, &b| inst.value(a, j).cmp(inst.value(b, j)).then(b.cmp(&a)))
                    .expect("n >= 1");
                full.bundle_mut(best).insert(j);
            }
        }
        out.push((prob.clone(), full));
    }
    Ok(out)
}

/// Phase 4: LP4 reduces an ex-ante proportional lottery to at most `n`
/// allocations drawn from its support. With the value variables
/// substituted out, LP4 has one row per agent, so a basic optimum has at
/// most `n` positive weights; dividing by their sum `z* <= 1` restores a
/// distribution and only raises the ex-ante values.
pub fn reduce_to_n(
    assembled: Vec<(Rational, Allocation)>,
    inst: &Instance,
) -> Result<Lottery, BobwError> {
    let n = inst.agents();
    // merge duplicate allocations across branches
    let mut merged: BTreeMap<Allocation, Rational> = BTreeMap::new();
    for (p, alloc) in assembled {
        *merged.entry(alloc).or_insert_with(Rational::zero) += &p;
    }
    let supports: Vec<(Rational, Allocation)> = merged.into_iter().map(|(a, p)| (p, a)).collect();
    let k = supports.len();
    let values: Vec<Vec<Rational>> = (0..n)
        .map(|i| {
            supports
                .iter()
                .map(|(_, a)| inst.bundle_value(i, a.bundle(i)).expect("valid bundle"))
                .collect()
        })
        .collect();

    let mut lp = LpProblem::new(k, false, vec![Rational::one(); k]);
    for (i, row) in values.iter().enumerate() {
        lp.add_constraint(row.clone(), Relation::Ge, proportional_share(inst, i)?);
    }
    // the incoming probabilities witness feasibility with objective 1
    let witness: Vec<Rational> = supports.iter().map(|(p, _)| p.clone()).collect();
    assert!(
        lp.is_feasible(&witness),
        "assembled lottery is not ex-ante proportional"
    );
    let sol = solve_lp(&lp);
    assert_eq!(sol.status, LpStatus::Optimal);
    let z_star = sol.objective_value.clone();
    assert!(z_star <= Rational::one(), "z* must not exceed 1");

    if z_star.is_zero() {
        // every PS_i is 0; any single support allocation certifies
        let (_, alloc) = supports.into_iter().next().expect("nonempty support");
        return Ok(Lottery::new(vec![(Rational::one(), alloc)]).expect("unit mass"));
    }
    let mut out = Vec::new();
    for (z, (_, alloc)) in sol.values.iter().zip(supports) {
        if !z.is_zero() {
            out.push((z / &z_star, alloc));
        }
    }
    assert!(
        out.len() <= n,
        "phase 4 support {} exceeds n = {n}",
        out.len()
    );
    Ok(Lottery::new(out)?)
}

/// Per-agent certificate attached to a best-of-both-worlds lottery.
#[derive(Debug, Clone)]
pub struct AgentCertificate {
    pub agent: usize,
    pub ps: Rational,
    pub tps: Rational,
    pub half_tps: Rational,
    pub ex_ante: Rational,
    pub min_ex_post: Rational,
    /// Prop1 flag per support allocation (order matches the lottery)
    pub prop1: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BobwResult {
    pub lottery: Lottery,
    pub certificate: Vec<AgentCertificate>,
}

impl BobwResult {
    pub fn to_json(&self) -> Value {
        json!({
            "lottery": self.lottery.to_json(),
            "certificate": self.certificate.iter().map(|c| json!({
                "agent": c.agent,
                "ps": rational_to_json(&c.ps),
                "tps": rational_to_json(&c.tps),
                "tps_half": rational_to_json(&c.half_tps),
                "ex_ante": rational_to_json(&c.ex_ante),
                "min_ex_post": rational_to_json(&c.min_ex_post),
                "prop1": c.prop1.clone(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// The full pipeline. The result is certified before being returned:
/// support at most `n`, exact ex-ante proportionality, at least half the
/// TPS and Prop1 in every support allocation, and every item allocated.
pub fn bobw_allocate(inst: &Instance) -> Result<BobwResult, BobwError> {
    let p1 = build_phase1_instance(inst)?;
    let a_star = solve_lp1(&p1);
    let consolidated = consolidate(&a_star, &p1);
    let phase1 = round_phase1(&consolidated, &p1);

    let mut assembled: Vec<(Rational, Allocation)> = Vec::new();
    for (p_branch, assignment) in &phase1.lottery {
        let state = partition_and_promote(assignment, &p1);
        let state = complete_matching(state, &p1, inst)?;
        let (c_star, _, item_map) = solve_lp3(&state, inst);
        let branch = round_phase3(&c_star, &item_map, &state, inst)?;
        for (q, alloc) in branch {
            assembled.push((p_branch * &q, alloc));
        }
    }
    let lottery = reduce_to_n(assembled, inst)?;
    certify(lottery, inst)
}

/// Builds the per-agent certificate, failing rather than returning an
/// uncertified lottery.
fn certify(lottery: Lottery, inst: &Instance) -> Result<BobwResult, BobwError> {
    let n = inst.agents();
    if lottery.len() > n {
        return Err(BobwError::Certification(format!(
            "support size {} exceeds n = {n}",
            lottery.len()
        )));
    }
    for (k, (_, alloc)) in lottery.support().iter().enumerate() {
        if !alloc.is_complete(inst.items()) {
            return Err(BobwError::Certification(format!(
                "allocation {k} leaves items unallocated"
            )));
        }
    }
    let ex_ante = audit::check_ex_ante_proportional(&lottery, inst);
    if !ex_ante.pass {
        return Err(BobwError::Certification(
            "ex-ante proportionality failed".into(),
        ));
    }
    let half = audit::check_ex_post_half_tps(&lottery, inst);
    if !half.pass {
        return Err(BobwError::Certification(format!(
            "half-TPS failed at witness {:?}",
            half.witness
        )));
    }
    let prop1_all = audit::check_support_prop1(&lottery, inst);
    if !prop1_all.pass {
        return Err(BobwError::Certification(format!(
            "Prop1 failed at witness {:?}",
            prop1_all.witness
        )));
    }

    let mut certificate = Vec::with_capacity(n);
    for i in 0..n {
        let ps = proportional_share(inst, i)?;
        let t = tps(inst, i)?;
        let half_tps = &t / rat(2);
        let ex_ante_value = lottery.expected_value(inst, i);
        let min_ex_post = lottery
            .support()
            .iter()
            .map(|(_, a)| inst.bundle_value(i, a.bundle(i)).expect("valid bundle"))
            .min()
            .expect("nonempty support");
        let prop1 = lottery
            .support()
            .iter()
            .map(|(_, a)| audit::check_prop1(a, inst).margins[i].1 >= Rational::zero())
            .collect();
        certificate.push(AgentCertificate {
            agent: i,
            ps,
            tps: t,
            half_tps,
            ex_ante: ex_ante_value,
            min_ex_post,
            prop1,
        });
    }
    Ok(BobwResult {
        lottery,
        certificate,
    })
}
