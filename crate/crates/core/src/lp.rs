//! Exact rational linear programming.
//!
//! A dense two-phase simplex over [`Rational`] with Bland's anti-cycling
//! pivot rule. Optimal solutions are always basic feasible (vertices),
//! which is what the support-size bounds downstream rely on: a vertex has
//! at most as many positive variables as constraints.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::rational::{sum, Rational};
use num::traits::{One, Signed, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize/minimize c.x  s.t.  rows, x >= 0`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub num_vars: usize,
    pub maximize: bool,
    pub objective: Vec<Rational>,
    pub constraints: Vec<(Vec<Rational>, Relation, Rational)>,
}

impl LpProblem {
    pub fn new(num_vars: usize, maximize: bool, objective: Vec<Rational>) -> Self {
        assert_eq!(objective.len(), num_vars);
        LpProblem {
            num_vars,
            maximize,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn add_constraint(&mut self, row: Vec<Rational>, rel: Relation, rhs: Rational) {
        assert_eq!(row.len(), self.num_vars);
        self.constraints.push((row, rel, rhs));
    }

    /// Exact check that `point >= 0` satisfies every constraint.
    pub fn is_feasible(&self, point: &[Rational]) -> bool {
        if point.len() != self.num_vars || point.iter().any(|v| v.is_negative()) {
            return false;
        }
        self.constraints.iter().all(|(row, rel, rhs)| {
            let lhs = dot(row, point);
            match rel {
                Relation::Le => lhs <= *rhs,
                Relation::Eq => lhs == *rhs,
                Relation::Ge => lhs >= *rhs,
            }
        })
    }

    pub fn objective_value(&self, point: &[Rational]) -> Rational {
        dot(&self.objective, point)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. For `Optimal`, `values` is a vertex of the feasible
/// region projected to the original variables, and `basis` holds the
/// original-variable indices that are basic.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<Rational>,
    pub basis: BTreeSet<usize>,
    pub objective_value: Rational,
}

impl LpSolution {
    fn status_only(status: LpStatus) -> Self {
        LpSolution {
            status,
            values: Vec::new(),
            basis: BTreeSet::new(),
            objective_value: Rational::zero(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LpError {
    #[error("hint is not feasible: {0}")]
    HintInfeasible(String),
}

fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Rational::zero();
    for (x, y) in a.iter().zip(b) {
        if !x.is_zero() && !y.is_zero() {
            acc += x * y;
        }
    }
    acc
}

/// Standard-form expansion: rows `A y = b` with `b >= 0` over
/// `y = (x, slack/surplus)`, plus bookkeeping for artificial columns.
struct StandardForm {
    rows: Vec<Vec<Rational>>,
    rhs: Vec<Rational>,
    total_vars: usize, // originals + slacks/surpluses, artificials excluded
    num_orig: usize,
}

fn standard_form(p: &LpProblem) -> StandardForm {
    let m = p.constraints.len();
    let mut extra = 0usize;
    for (_, rel, _) in &p.constraints {
        if *rel != Relation::Eq {
            extra += 1;
        }
    }
    let total = p.num_vars + extra;
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut next_extra = p.num_vars;
    for (row, rel, b) in &p.constraints {
        let mut r = vec![Rational::zero(); total];
        let flip = b.is_negative();
        for (j, c) in row.iter().enumerate() {
            r[j] = if flip { -c } else { c.clone() };
        }
        let b = if flip { -b } else { b.clone() };
        let rel = match (rel, flip) {
            (Relation::Eq, _) => Relation::Eq,
            (Relation::Le, false) | (Relation::Ge, true) => Relation::Le,
            (Relation::Ge, false) | (Relation::Le, true) => Relation::Ge,
        };
        match rel {
            Relation::Le => {
                r[next_extra] = Rational::one();
                next_extra += 1;
            }
            Relation::Ge => {
                r[next_extra] = -Rational::one();
                next_extra += 1;
            }
            Relation::Eq => {}
        }
        rows.push(r);
        rhs.push(b);
    }
    StandardForm {
        rows,
        rhs,
        total_vars: total,
        num_orig: p.num_vars,
    }
}

/// Dense simplex tableau. `cols` = structural variables then artificials;
/// the last column is the rhs.
struct Tableau {
    a: Vec<Vec<Rational>>,
    rhs: Vec<Rational>,
    basis: Vec<usize>,
    num_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[row][col].clone();
        debug_assert!(!piv.is_zero());
        for x in self.a[row].iter_mut() {
            *x /= &piv;
        }
        self.rhs[row] /= &piv;
        for r in 0..self.a.len() {
            if r == row || self.a[r][col].is_zero() {
                continue;
            }
            let factor = self.a[r][col].clone();
            for c in 0..self.num_cols {
                if !self.a[row][c].is_zero() {
                    let delta = &factor * &self.a[row][c];
                    self.a[r][c] -= delta;
                }
            }
            let delta = &factor * &self.rhs[row];
            self.rhs[r] -= delta;
        }
        self.basis[row] = col;
    }

    /// Minimizes `cost . y` from the current basis using Bland's rule.
    /// `allowed` masks columns that may enter. Returns false on
    /// unboundedness.
    fn run_simplex(&mut self, cost: &[Rational], allowed: &[bool]) -> bool {
        loop {
            let reduced = self.reduced_costs(cost);
            // Bland: entering variable is the lowest-index improving column.
            let entering = (0..self.num_cols)
                .find(|&j| allowed[j] && !self.basis.contains(&j) && reduced[j].is_negative());
            let Some(col) = entering else {
                return true;
            };
            // Ratio test; ties broken by the lowest basic-variable index.
            let mut leave: Option<(usize, Rational)> = None;
            for r in 0..self.a.len() {
                if self.a[r][col].is_positive() {
                    let ratio = &self.rhs[r] / &self.a[r][col];
                    let better = match &leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < *lratio || (ratio == *lratio && self.basis[r] < self.basis[*lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }

    fn reduced_costs(&self, cost: &[Rational]) -> Vec<Rational> {
        // r_j = c_j - c_B . B^{-1} A_j, read off the maintained tableau
        let basic_cost: Vec<&Rational> = self.basis.iter().map(|&b| &cost[b]).collect();
        (0..self.num_cols)
            .map(|j| {
                let mut r = cost[j].clone();
                for (row, bc) in basic_cost.iter().enumerate() {
                    if !bc.is_zero() && !self.a[row][j].is_zero() {
                        r -= *bc * &self.a[row][j];
                    }
                }
                r
            })
            .collect()
    }

    fn solution(&self, total_vars: usize) -> Vec<Rational> {
        let mut y = vec![Rational::zero(); total_vars];
        for (row, &b) in self.basis.iter().enumerate() {
            if b < total_vars {
                y[b] = self.rhs[row].clone();
            }
        }
        y
    }
}

/// Solves an LP exactly. The returned `Optimal` point is always a vertex.
pub fn solve_lp(p: &LpProblem) -> LpSolution {
    let sf = standard_form(p);
    let m = sf.rows.len();
    let num_cols = sf.total_vars + m; // one artificial per row
    let mut a = Vec::with_capacity(m);
    for (r, row) in sf.rows.iter().enumerate() {
        let mut full = row.clone();
        full.resize(num_cols, Rational::zero());
        full[sf.total_vars + r] = Rational::one();
        a.push(full);
    }
    let mut t = Tableau {
        a,
        rhs: sf.rhs.clone(),
        basis: (sf.total_vars..sf.total_vars + m).collect(),
        num_cols,
    };

    // Phase 1: minimize the sum of artificials.
    let mut phase1_cost = vec![Rational::zero(); num_cols];
    for c in phase1_cost.iter_mut().skip(sf.total_vars) {
        *c = Rational::one();
    }
    let allowed = vec![true; num_cols];
    let ok = t.run_simplex(&phase1_cost, &allowed);
    debug_assert!(ok, "phase 1 is bounded below by 0");
    let artificial_sum = sum(t
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= sf.total_vars)
        .map(|(row, _)| &t.rhs[row]));
    if !artificial_sum.is_zero() {
        return LpSolution::status_only(LpStatus::Infeasible);
    }
    // Drive any degenerate artificial out of the basis; an all-zero row is
    // a redundant constraint and can stay (its rhs is 0 and nothing will
    // pivot on it once artificials are disallowed).
    for row in 0..m {
        if t.basis[row] >= sf.total_vars {
            if let Some(col) = (0..sf.total_vars).find(|&j| !t.a[row][j].is_zero()) {
                t.pivot(row, col);
            }
        }
    }

    // Phase 2 on the real objective, artificial columns frozen.
    let mut cost = vec![Rational::zero(); num_cols];
    for (c, obj) in cost.iter_mut().zip(&p.objective) {
        *c = if p.maximize { -obj } else { obj.clone() };
    }
    let mut allowed = vec![true; num_cols];
    for flag in allowed.iter_mut().skip(sf.total_vars) {
        *flag = false;
    }
    if !t.run_simplex(&cost, &allowed) {
        return LpSolution::status_only(LpStatus::Unbounded);
    }

    let y = t.solution(sf.total_vars);
    let values: Vec<Rational> = y[..sf.num_orig].to_vec();
    let basis: BTreeSet<usize> = t
        .basis
        .iter()
        .copied()
        .filter(|&b| b < sf.num_orig)
        .collect();
    let objective_value = dot(&p.objective, &values);
    debug_assert!(p.is_feasible(&values));
    LpSolution {
        status: LpStatus::Optimal,
        values,
        basis,
        objective_value,
    }
}

/// Converts a feasible point into a basic feasible one without lowering the
/// objective (for maximization; without raising it for minimization): a
/// crossover. While the columns of the positive support are linearly
/// dependent, move along a null direction chosen not to hurt the objective
/// until some variable hits zero. Positive support only ever shrinks.
pub fn basic_feasible_point(p: &LpProblem, hint: &[Rational]) -> Result<LpSolution, LpError> {
    if hint.len() != p.num_vars {
        return Err(LpError::HintInfeasible(format!(
            "hint has {} entries, expected {}",
            hint.len(),
            p.num_vars
        )));
    }
    if !p.is_feasible(hint) {
        let witness = p
            .constraints
            .iter()
            .position(|(row, rel, rhs)| {
                let lhs = dot(row, hint);
                !match rel {
                    Relation::Le => lhs <= *rhs,
                    Relation::Eq => lhs == *rhs,
                    Relation::Ge => lhs >= *rhs,
                }
            })
            .map(|i| format!("constraint {i} violated"))
            .unwrap_or_else(|| "negative variable".into());
        return Err(LpError::HintInfeasible(witness));
    }

    let sf = standard_form(p);
    // Extend the hint with slack values.
    let mut y = vec![Rational::zero(); sf.total_vars];
    y[..p.num_vars].clone_from_slice(hint);
    for (row, b) in sf.rows.iter().zip(&sf.rhs) {
        // each non-Eq row has exactly one +-1 slack column
        if let Some(j) = (p.num_vars..sf.total_vars).find(|&j| !row[j].is_zero()) {
            let partial = dot(&row[..p.num_vars], hint);
            y[j] = (b - partial) / &row[j];
            debug_assert!(!y[j].is_negative());
        }
    }

    let sign = if p.maximize {
        Rational::one()
    } else {
        -Rational::one()
    };
    let mut cost = vec![Rational::zero(); sf.total_vars];
    for (c, obj) in cost.iter_mut().zip(&p.objective) {
        *c = &sign * obj;
    }

    loop {
        let support: Vec<usize> = (0..sf.total_vars).filter(|&j| !y[j].is_zero()).collect();
        match null_vector(&sf.rows, &support) {
            None => break, // support columns independent: basic
            Some(mut d_support) => {
                let mut d = vec![Rational::zero(); sf.total_vars];
                let gain = dot(
                    &support.iter().map(|&j| cost[j].clone()).collect::<Vec<_>>(),
                    &d_support,
                );
                if gain.is_negative()
                    || (gain.is_zero() && d_support.iter().all(|v| !v.is_negative()))
                {
                    for v in d_support.iter_mut() {
                        *v = -v.clone();
                    }
                }
                for (k, &j) in support.iter().enumerate() {
                    d[j] = d_support[k].clone();
                }
                // step to the first variable hitting zero
                let mut step: Option<Rational> = None;
                for &j in &support {
                    if d[j].is_negative() {
                        let t = -(&y[j] / &d[j]);
                        if step.as_ref().is_none_or(|s| t < *s) {
                            step = Some(t);
                        }
                    }
                }
                let Some(t) = step else {
                    // strictly improving ray with no blocking variable
                    return Ok(LpSolution::status_only(LpStatus::Unbounded));
                };
                for &j in &support {
                    if !d[j].is_zero() {
                        let delta = &t * &d[j];
                        y[j] += delta;
                    }
                }
            }
        }
    }

    let values: Vec<Rational> = y[..p.num_vars].to_vec();
    let basis: BTreeSet<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_zero())
        .map(|(j, _)| j)
        .collect();
    let objective_value = dot(&p.objective, &values);
    debug_assert!(p.is_feasible(&values));
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        basis,
        objective_value,
    })
}

/// A nonzero vector `d` with `A[:, support] d = 0`, or `None` when those
/// columns are linearly independent. Gaussian elimination over rationals.
fn null_vector(rows: &[Vec<Rational>], support: &[usize]) -> Option<Vec<Rational>> {
    let m = rows.len();
    let k = support.len();
    if k == 0 {
        return None;
    }
    // mat[r][c] = rows[r][support[c]]
    let mut mat: Vec<Vec<Rational>> = (0..m)
        .map(|r| support.iter().map(|&j| rows[r][j].clone()).collect())
        .collect();
    let mut pivot_col_of_row = Vec::new();
    let mut r = 0;
    for c in 0..k {
        if let Some(pr) = (r..m).find(|&i| !mat[i][c].is_zero()) {
            mat.swap(r, pr);
            let piv = mat[r][c].clone();
            for x in mat[r].iter_mut() {
                *x /= &piv;
            }
            let pivot_row = mat[r].clone();
            for (i, row) in mat.iter_mut().enumerate() {
                if i != r && !row[c].is_zero() {
                    let f = row[c].clone();
                    for (x, pv) in row.iter_mut().zip(&pivot_row) {
                        if !pv.is_zero() {
                            let delta = &f * pv;
                            *x -= delta;
                        }
                    }
                }
            }
            pivot_col_of_row.push(c);
            r += 1;
            if r == m {
                break;
            }
        }
    }
    let pivot_cols: BTreeSet<usize> = pivot_col_of_row.iter().copied().collect();
    let free = (0..k).find(|c| !pivot_cols.contains(c))?;
    // d[free] = 1, pivots balance it
    let mut d = vec![Rational::zero(); k];
    d[free] = Rational::one();
    for (row, &pc) in pivot_col_of_row.iter().enumerate() {
        d[pc] = -mat[row][free].clone();
    }
    Some(d)
}
