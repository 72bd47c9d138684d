//! Share computations: proportional share, truncated proportional share
//! and maximin share, plus exceptional-item sets.
//!
//! The TPS is computed twice by independent routes (recursive removal and a
//! fixed-point scan); the audit and test suites cross-check them on every
//! instance they touch.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use thiserror::Error;

use crate::model::Instance;
use crate::rational::{rat, rational_to_json, sum, Rational};
use num::traits::Zero;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SharesError {
    #[error("agent index {0} out of range")]
    AgentOutOfRange(usize),
    #[error("enumeration budget of {0} assignments exceeded")]
    BudgetExceeded(u64),
}

/// Default cap on the number of partition-enumeration steps for MMS.
pub const DEFAULT_MMS_BUDGET: u64 = 10_000_000;

/// `PS_i = v_i(M) / n`.
pub fn proportional_share(inst: &Instance, agent: usize) -> Result<Rational, SharesError> {
    if agent >= inst.agents() {
        return Err(SharesError::AgentOutOfRange(agent));
    }
    Ok(inst.total_value(agent) / rat(inst.agents() as i64))
}

/// Truncated proportional share by recursive removal: while the largest
/// remaining value exceeds the proportional share of the reduced instance,
/// drop one maximum-value item together with one agent. Ties are broken
/// toward the lowest item index.
pub fn tps(inst: &Instance, agent: usize) -> Result<Rational, SharesError> {
    if agent >= inst.agents() {
        return Err(SharesError::AgentOutOfRange(agent));
    }
    Ok(tps_for_values(inst.row(agent), inst.agents()))
}

/// Recursive-removal TPS on a raw value row with `n` agents.
pub(crate) fn tps_for_values(values: &[Rational], n: usize) -> Rational {
    let mut remaining: Vec<&Rational> = values.iter().collect();
    let mut agents = n;
    loop {
        let total = sum(remaining.iter().copied());
        let ps = &total / rat(agents as i64);
        if agents == 1 {
            return total;
        }
        let max_idx = match remaining
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        {
            Some((idx, max)) if **max > ps => idx,
            _ => return ps,
        };
        remaining.remove(max_idx);
        agents -= 1;
    }
}

/// Independent TPS route: scan truncation counts `k = 0..=min(m, n-1)`,
/// testing the fixed point `t = (sum of the m-k smallest values) / (n-k)`
/// against the sorted value profile, and return the largest valid `t`.
pub fn tps_fixed_point(inst: &Instance, agent: usize) -> Result<Rational, SharesError> {
    if agent >= inst.agents() {
        return Err(SharesError::AgentOutOfRange(agent));
    }
    let n = inst.agents();
    let mut sorted: Vec<&Rational> = inst.row(agent).iter().collect();
    sorted.sort_by(|a, b| b.cmp(a)); // descending, stable
    let m = sorted.len();
    let mut best: Option<Rational> = None;
    for k in 0..=m.min(n - 1) {
        let untruncated = sum(sorted[k..].iter().copied());
        let t = untruncated / rat((n - k) as i64);
        let top_ok = k == 0 || *sorted[k - 1] >= t;
        let rest_ok = k == m || *sorted[k] <= t;
        if top_ok && rest_ok && best.as_ref().is_none_or(|b| t > *b) {
            best = Some(t);
        }
    }
    Ok(best.expect("t = 0 with all items truncated is always a fixed point"))
}

/// Exact MMS by exhaustive partition enumeration. Items are assigned in
/// index order and an item may only open bundle `u+1` when bundles `0..=u`
/// are already in use, which enumerates unordered partitions once. Returns
/// `BudgetExceeded` when more than `budget` assignment steps are explored.
pub fn mms(inst: &Instance, agent: usize, budget: u64) -> Result<Rational, SharesError> {
    if agent >= inst.agents() {
        return Err(SharesError::AgentOutOfRange(agent));
    }
    let n = inst.agents();
    let values = inst.row(agent);
    let m = values.len();
    if n == 1 {
        return Ok(inst.total_value(agent));
    }
    if m < n {
        // some bundle is empty in every partition
        return Ok(Rational::zero());
    }
    let mut suffix = vec![Rational::zero(); m + 1];
    for j in (0..m).rev() {
        suffix[j] = &suffix[j + 1] + &values[j];
    }
    let mut search = MmsSearch {
        values,
        suffix: &suffix,
        n,
        bundles: vec![Rational::zero(); n],
        used: 0,
        best: None,
        steps: 0,
        budget,
    };
    search.assign(0)?;
    Ok(search.best.expect("at least one partition exists"))
}

struct MmsSearch<'a> {
    values: &'a [Rational],
    suffix: &'a [Rational],
    n: usize,
    bundles: Vec<Rational>,
    used: usize,
    best: Option<Rational>,
    steps: u64,
    budget: u64,
}

impl MmsSearch<'_> {
    fn assign(&mut self, item: usize) -> Result<(), SharesError> {
        self.steps += 1;
        if self.steps > self.budget {
            return Err(SharesError::BudgetExceeded(self.budget));
        }
        if item == self.values.len() {
            let min = self.bundles.iter().min().unwrap().clone();
            if self.best.as_ref().is_none_or(|b| min > *b) {
                self.best = Some(min);
            }
            return Ok(());
        }
        // Even if all remaining mass lands on the poorest bundle the minimum
        // cannot beat `best`: prune.
        if let Some(best) = &self.best {
            let reachable = self.bundles.iter().min().unwrap() + &self.suffix[item];
            if self.used == self.n && reachable <= *best {
                return Ok(());
            }
        }
        let limit = (self.used + 1).min(self.n);
        for b in 0..limit {
            self.bundles[b] += &self.values[item];
            let opened = b == self.used;
            if opened {
                self.used += 1;
            }
            self.assign(item + 1)?;
            if opened {
                self.used -= 1;
            }
            self.bundles[b] -= &self.values[item];
        }
        Ok(())
    }
}

/// Items exceptional for an agent: `v_i(j) >= TPS_i` and `v_i(j) > 0`. The
/// positivity requirement keeps the set meaningful when `TPS_i = 0`, where
/// the raw comparison would mark every zero-value item.
pub fn exceptional_items(inst: &Instance, agent: usize) -> Result<BTreeSet<usize>, SharesError> {
    let t = tps(inst, agent)?;
    let set: BTreeSet<usize> = inst
        .row(agent)
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_zero() && **v >= t)
        .map(|(j, _)| j)
        .collect();
    if set.len() == inst.agents() {
        log::warn!(
            "agent {agent} has exactly n = {} exceptional items",
            inst.agents()
        );
    }
    Ok(set)
}

/// Per-agent share summary. `mms` is `None` when the enumeration budget was
/// exhausted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareReport {
    pub agent: usize,
    pub ps: Rational,
    pub tps: Rational,
    pub mms: Option<Rational>,
}

impl ShareReport {
    pub fn compute(
        inst: &Instance,
        agent: usize,
        mms_budget: Option<u64>,
    ) -> Result<Self, SharesError> {
        let ps = proportional_share(inst, agent)?;
        let t = tps(inst, agent)?;
        let mms_val = match mms_budget {
            Some(budget) => match mms(inst, agent, budget) {
                Ok(v) => Some(v),
                Err(SharesError::BudgetExceeded(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(ShareReport {
            agent,
            ps,
            tps: t,
            mms: mms_val,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "agent": self.agent,
            "ps": rational_to_json(&self.ps),
            "tps": rational_to_json(&self.tps),
            "mms": match &self.mms {
                Some(v) => rational_to_json(v),
                None => Value::String("unknown".into()),
            },
        })
    }
}
