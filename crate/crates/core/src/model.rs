//! Domain types for allocation instances, allocations, fractional
//! allocations and lotteries, plus the instance generators used by the
//! test families.
//!
//! Agents and items are 0-indexed everywhere, including external JSON.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::rational::{is_nonnegative, rat, rational_from_json, rational_to_json, sum, Rational};
use num::traits::{One, Zero};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("negative value at agent {0}, item {1}")]
    NegativeValue(usize, usize),
    #[error("instance must have at least one agent")]
    EmptyAgents,
    #[error("value matrix is not rectangular (row {0} has length {1}, expected {2})")]
    RaggedMatrix(usize, usize, usize),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid fractional allocation: {0}")]
    InvalidFraction(String),
    #[error("invalid lottery: {0}")]
    InvalidLottery(String),
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// A fair-allocation instance: `n` agents, `m` items, and a nonnegative
/// additive valuation matrix (`values[i][j]` = value of item `j` to agent
/// `i`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    n: usize,
    m: usize,
    values: Vec<Vec<Rational>>,
}

impl Instance {
    /// Validates and builds an instance from a rectangular matrix of
    /// nonnegative values.
    pub fn new(values: Vec<Vec<Rational>>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyAgents);
        }
        let m = values[0].len();
        for (i, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::RaggedMatrix(i, row.len(), m));
            }
            for (j, v) in row.iter().enumerate() {
                if !is_nonnegative(v) {
                    return Err(ModelError::NegativeValue(i, j));
                }
            }
        }
        Ok(Instance {
            n: values.len(),
            m,
            values,
        })
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    pub fn items(&self) -> usize {
        self.m
    }

    pub fn value(&self, agent: usize, item: usize) -> &Rational {
        &self.values[agent][item]
    }

    pub fn row(&self, agent: usize) -> &[Rational] {
        &self.values[agent]
    }

    /// `v_i(S)`, the exact additive value of a bundle.
    pub fn bundle_value<'a>(
        &self,
        agent: usize,
        bundle: impl IntoIterator<Item = &'a usize>,
    ) -> Result<Rational, ModelError> {
        if agent >= self.n {
            return Err(ModelError::IndexOutOfRange(format!("agent {agent}")));
        }
        let mut total = Rational::zero();
        for &j in bundle {
            if j >= self.m {
                return Err(ModelError::IndexOutOfRange(format!("item {j}")));
            }
            total += &self.values[agent][j];
        }
        Ok(total)
    }

    /// `v_i(M)`: value of the whole item set to one agent.
    pub fn total_value(&self, agent: usize) -> Rational {
        sum(self.values[agent].iter())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "agents": self.n,
            "items": self.m,
            "values": self.values.iter()
                .map(|row| Value::Array(row.iter().map(rational_to_json).collect()))
                .collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, ModelError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ModelError::Json("instance must be an object".into()))?;
        let values = obj
            .get("values")
            .and_then(Value::as_array)
            .ok_or_else(|| ModelError::Json("missing \"values\" array".into()))?;
        let mut matrix = Vec::with_capacity(values.len());
        for row in values {
            let row = row
                .as_array()
                .ok_or_else(|| ModelError::Json("values rows must be arrays".into()))?;
            let mut out = Vec::with_capacity(row.len());
            for cell in row {
                out.push(rational_from_json(cell).map_err(ModelError::Json)?);
            }
            matrix.push(out);
        }
        let inst = Instance::new(matrix)?;
        // "agents"/"items" are redundant but must agree when present.
        if let Some(n) = obj.get("agents").and_then(Value::as_u64) {
            if n as usize != inst.n {
                return Err(ModelError::Json(format!(
                    "\"agents\" is {n} but values has {} rows",
                    inst.n
                )));
            }
        }
        if let Some(m) = obj.get("items").and_then(Value::as_u64) {
            if m as usize != inst.m {
                return Err(ModelError::Json(format!(
                    "\"items\" is {m} but values has {} columns",
                    inst.m
                )));
            }
        }
        Ok(inst)
    }
}

/// An integral allocation: `n` pairwise disjoint bundles of item indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Allocation {
    bundles: Vec<BTreeSet<usize>>,
}

impl Allocation {
    pub fn new(bundles: Vec<BTreeSet<usize>>, items: usize) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for (i, bundle) in bundles.iter().enumerate() {
            for &j in bundle {
                if j >= items {
                    return Err(ModelError::IndexOutOfRange(format!(
                        "item {j} in bundle {i}"
                    )));
                }
                if !seen.insert(j) {
                    return Err(ModelError::InvalidLottery(format!(
                        "item {j} appears in two bundles"
                    )));
                }
            }
        }
        Ok(Allocation { bundles })
    }

    pub fn empty(agents: usize) -> Self {
        Allocation {
            bundles: vec![BTreeSet::new(); agents],
        }
    }

    pub fn agents(&self) -> usize {
        self.bundles.len()
    }

    pub fn bundle(&self, agent: usize) -> &BTreeSet<usize> {
        &self.bundles[agent]
    }

    pub fn bundle_mut(&mut self, agent: usize) -> &mut BTreeSet<usize> {
        &mut self.bundles[agent]
    }

    pub fn bundles(&self) -> &[BTreeSet<usize>] {
        &self.bundles
    }

    /// True when every item of `0..items` appears in some bundle.
    pub fn is_complete(&self, items: usize) -> bool {
        let assigned: usize = self.bundles.iter().map(|b| b.len()).sum();
        assigned == items
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.bundles
                .iter()
                .map(|b| Value::Array(b.iter().map(|&j| json!(j)).collect()))
                .collect(),
        )
    }

    pub fn from_json(v: &Value, items: usize) -> Result<Self, ModelError> {
        let rows = v
            .as_array()
            .ok_or_else(|| ModelError::Json("allocation must be an array of bundles".into()))?;
        let mut bundles = Vec::with_capacity(rows.len());
        for row in rows {
            let row = row
                .as_array()
                .ok_or_else(|| ModelError::Json("bundle must be an array".into()))?;
            let mut set = BTreeSet::new();
            for x in row {
                let j = x
                    .as_u64()
                    .ok_or_else(|| ModelError::Json("item indices must be integers".into()))?;
                set.insert(j as usize);
            }
            bundles.push(set);
        }
        Allocation::new(bundles, items)
    }
}

/// A fractional allocation: `x[i][j]` in `[0, 1]` with every column summing
/// to at most 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractionalAllocation {
    x: Vec<Vec<Rational>>,
}

impl FractionalAllocation {
    pub fn new(x: Vec<Vec<Rational>>) -> Result<Self, ModelError> {
        if x.is_empty() {
            return Err(ModelError::EmptyAgents);
        }
        let m = x[0].len();
        let one = Rational::one();
        for (i, row) in x.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::RaggedMatrix(i, row.len(), m));
            }
            for (j, f) in row.iter().enumerate() {
                if !is_nonnegative(f) || *f > one {
                    return Err(ModelError::InvalidFraction(format!(
                        "x[{i}][{j}] = {f} outside [0, 1]"
                    )));
                }
            }
        }
        for j in 0..m {
            let col = sum(x.iter().map(|row| &row[j]));
            if col > one {
                return Err(ModelError::InvalidFraction(format!(
                    "column {j} sums to {col} > 1"
                )));
            }
        }
        Ok(FractionalAllocation { x })
    }

    pub fn agents(&self) -> usize {
        self.x.len()
    }

    pub fn items(&self) -> usize {
        self.x[0].len()
    }

    pub fn get(&self, agent: usize, item: usize) -> &Rational {
        &self.x[agent][item]
    }

    pub fn rows(&self) -> &[Vec<Rational>] {
        &self.x
    }

    pub fn column_sum(&self, item: usize) -> Rational {
        sum(self.x.iter().map(|row| &row[item]))
    }

    /// Pairs `(agent, item)` with a fraction strictly between 0 and 1.
    pub fn strictly_fractional(&self) -> Vec<(usize, usize)> {
        let one = Rational::one();
        let mut out = Vec::new();
        for (i, row) in self.x.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                if !f.is_zero() && *f < one {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Ex-ante value of agent `i` under valuations `inst`, where column `j`
    /// of `self` corresponds to item `item_map[j]` of the instance.
    pub fn agent_value(&self, inst: &Instance, agent: usize, item_map: &[usize]) -> Rational {
        let mut total = Rational::zero();
        for (j, f) in self.x[agent].iter().enumerate() {
            if !f.is_zero() {
                total += f * inst.value(agent, item_map[j]);
            }
        }
        total
    }

    pub fn to_json(&self) -> Value {
        json!({
            "agents": self.agents(),
            "items": self.items(),
            "x": self.x.iter()
                .map(|row| Value::Array(row.iter().map(rational_to_json).collect()))
                .collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, ModelError> {
        let rows = v
            .get("x")
            .and_then(Value::as_array)
            .ok_or_else(|| ModelError::Json("missing \"x\" matrix".into()))?;
        let mut x = Vec::with_capacity(rows.len());
        for row in rows {
            let row = row
                .as_array()
                .ok_or_else(|| ModelError::Json("x rows must be arrays".into()))?;
            let mut out = Vec::with_capacity(row.len());
            for cell in row {
                out.push(rational_from_json(cell).map_err(ModelError::Json)?);
            }
            x.push(out);
        }
        FractionalAllocation::new(x)
    }
}

/// A lottery: a finite distribution over integral allocations. Probabilities
/// are strictly positive and sum to exactly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lottery {
    support: Vec<(Rational, Allocation)>,
}

impl Lottery {
    pub fn new(support: Vec<(Rational, Allocation)>) -> Result<Self, ModelError> {
        if support.is_empty() {
            return Err(ModelError::InvalidLottery("empty support".into()));
        }
        for (p, _) in &support {
            if !is_nonnegative(p) || p.is_zero() {
                return Err(ModelError::InvalidLottery(format!(
                    "probability {p} is not positive"
                )));
            }
        }
        let total = sum(support.iter().map(|(p, _)| p));
        if !total.is_one() {
            return Err(ModelError::InvalidLottery(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Lottery { support })
    }

    pub fn support(&self) -> &[(Rational, Allocation)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Exact ex-ante value of agent `i`.
    pub fn expected_value(&self, inst: &Instance, agent: usize) -> Rational {
        let mut total = Rational::zero();
        for (p, alloc) in &self.support {
            total += p * inst.bundle_value(agent, alloc.bundle(agent)).unwrap();
        }
        total
    }

    pub fn to_json(&self) -> Value {
        json!({
            "support": self.support.iter().map(|(p, a)| json!({
                "prob": rational_to_json(p),
                "bundles": a.to_json(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value, items: usize) -> Result<Self, ModelError> {
        let entries = v
            .get("support")
            .and_then(Value::as_array)
            .ok_or_else(|| ModelError::Json("missing \"support\" array".into()))?;
        let mut support: Vec<(Rational, Allocation)> = Vec::with_capacity(entries.len());
        for entry in entries {
            let p = entry
                .get("prob")
                .ok_or_else(|| ModelError::Json("support entry missing \"prob\"".into()))?;
            let p = rational_from_json(p).map_err(ModelError::Json)?;
            let bundles = entry
                .get("bundles")
                .ok_or_else(|| ModelError::Json("support entry missing \"bundles\"".into()))?;
            let alloc = Allocation::from_json(bundles, items)?;
            if let Some((_, first)) = support.first() {
                if first.agents() != alloc.agents() {
                    return Err(ModelError::Json(
                        "support allocations disagree on the number of agents".into(),
                    ));
                }
            }
            support.push((p, alloc));
        }
        Lottery::new(support)
    }
}

/// Expectation of a lottery as a fractional allocation:
/// `x[i][j] = sum of prob over support allocations that give j to i`.
pub fn expected_allocation(
    lot: &Lottery,
    items: usize,
) -> Result<FractionalAllocation, ModelError> {
    let n = lot.support()[0].1.agents();
    let mut x = vec![vec![Rational::zero(); items]; n];
    for (p, alloc) in lot.support() {
        if alloc.agents() != n {
            return Err(ModelError::InvalidLottery(
                "allocations in support disagree on agent count".into(),
            ));
        }
        for (i, bundle) in alloc.bundles().iter().enumerate() {
            for &j in bundle {
                if j >= items {
                    return Err(ModelError::IndexOutOfRange(format!("item {j}")));
                }
                x[i][j] += p;
            }
        }
    }
    FractionalAllocation::new(x)
}

/// The lower-bound family: `2n-1` items where `s_i` is worth `1+eps` to
/// agent `i`, other small items `1 - eps/(n-1)`, and the `n-1` big items `n`
/// to everyone. MMS and PS of every agent equal `n`.
pub fn gen_not_mms(n: usize, eps: &Rational) -> Result<Instance, ModelError> {
    if n < 2 {
        return Err(ModelError::InvalidParameter(format!(
            "gen_not_mms needs n >= 2, got {n}"
        )));
    }
    if eps.is_zero() || !is_nonnegative(eps) || *eps >= Rational::one() {
        return Err(ModelError::InvalidParameter(format!(
            "gen_not_mms needs 0 < eps < 1, got {eps}"
        )));
    }
    let one = Rational::one();
    let small_other = &one - eps / rat((n - 1) as i64);
    let big = rat(n as i64);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(2 * n - 1);
        for j in 0..n {
            row.push(if i == j {
                &one + eps
            } else {
                small_other.clone()
            });
        }
        for _ in 0..n - 1 {
            row.push(big.clone());
        }
        values.push(row);
    }
    Instance::new(values)
}

/// `n` agents, `2n-1` unit-value items. The TPS of every agent is
/// `(2n-1)/n` while the MMS is 1, making the `n/(2n-1)` ratio tight.
pub fn gen_identical_units(n: usize) -> Result<Instance, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptyAgents);
    }
    let values = vec![vec![Rational::one(); 2 * n - 1]; n];
    Instance::new(values)
}

/// Deterministic random instance: integer values drawn uniformly from
/// `[0, max_value]` using ChaCha8 seeded with `seed`.
pub fn gen_random(n: usize, m: usize, max_value: u64, seed: u64) -> Result<Instance, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptyAgents);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(m);
        for _ in 0..m {
            let v = if max_value == 0 {
                0
            } else {
                rng.random_range(0..=max_value)
            };
            row.push(rat(v as i64));
        }
        values.push(row);
    }
    Instance::new(values)
}
