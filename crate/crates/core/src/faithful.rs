//! Faithful implementation of fractional allocations: any fractional
//! allocation can be realized as a lottery over integral allocations whose
//! expectation reproduces it exactly, supported on at most `f + 1`
//! allocations (`f` = number of strictly fractional entries), with every
//! agent's ex-post value within one fractionally-held item of her ex-ante
//! value.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lp::{basic_feasible_point, LpError, LpProblem, LpStatus, Relation};
use crate::matching::{bvn_decompose, FractionalMatching, MatchingError};
use crate::model::{expected_allocation, Allocation, FractionalAllocation, Instance, Lottery};
use crate::rational::Rational;
use num::traits::{One, Zero};

#[derive(Debug, Error)]
pub enum FaithfulError {
    #[error("instance has {0} items but the fractional allocation has {1}")]
    DimensionMismatch(usize, usize),
    #[error("lottery does not satisfy the preserved targets: {0}")]
    TargetsNotMet(String),
    #[error("matching layer failed: {0}")]
    Matching(#[from] MatchingError),
}

/// Clone-level fractional matching produced by the eating procedure. Clone
/// `k` of agent `i` consumes the `k`-th unit of `i`'s fractions in order of
/// decreasing value, so each clone's items form a contiguous window of that
/// order.
#[derive(Debug, Clone)]
pub struct CloneMatching {
    /// number of clones per agent (`ceil` of her total fraction mass)
    pub clone_counts: Vec<usize>,
    /// agent owning each global clone index
    pub clone_owner: Vec<usize>,
    pub matching: FractionalMatching,
}

/// Runs the eating procedure on every entry of `fa` (integral entries
/// included). Equal-value items are consumed in ascending item order.
pub fn clone_eating(
    fa: &FractionalAllocation,
    inst: &Instance,
) -> Result<CloneMatching, FaithfulError> {
    if fa.items() != inst.items() || fa.agents() != inst.agents() {
        return Err(FaithfulError::DimensionMismatch(inst.items(), fa.items()));
    }
    let item_map: Vec<usize> = (0..inst.items()).collect();
    Ok(eat(fa, inst, &item_map))
}

/// Eating over an arbitrary column subset: column `j` of `fa` is item
/// `item_map[j]` of the instance (values are only used for ordering).
fn eat(fa: &FractionalAllocation, inst: &Instance, item_map: &[usize]) -> CloneMatching {
    let one = Rational::one();
    let mut clone_counts = Vec::with_capacity(fa.agents());
    let mut clone_owner = Vec::new();
    let mut entries: Vec<(usize, usize, Rational)> = Vec::new();
    for agent in 0..fa.agents() {
        let mut portions: Vec<(usize, &Rational)> = (0..fa.items())
            .filter(|&j| !fa.get(agent, j).is_zero())
            .map(|j| (j, fa.get(agent, j)))
            .collect();
        portions.sort_by(|a, b| {
            inst.value(agent, item_map[b.0])
                .cmp(inst.value(agent, item_map[a.0]))
                .then(a.0.cmp(&b.0))
        });
        let first_clone = clone_owner.len();
        let mut capacity = Rational::zero(); // left in the current clone
        let mut clones_here = 0usize;
        for (j, fraction) in portions {
            let mut left = fraction.clone();
            while !left.is_zero() {
                if capacity.is_zero() {
                    clone_owner.push(agent);
                    clones_here += 1;
                    capacity = one.clone();
                }
                let bite = left.clone().min(capacity.clone());
                let clone = first_clone + clones_here - 1;
                entries.push((clone, j, bite.clone()));
                capacity -= &bite;
                left -= &bite;
            }
        }
        clone_counts.push(clones_here);
    }
    let total_clones = clone_owner.len();
    let matching = FractionalMatching::new(total_clones.max(1), fa.items().max(1), entries)
        .expect("eating preserves row capacities and column sums");
    CloneMatching {
        clone_counts,
        clone_owner,
        matching,
    }
}

/// Per-agent ex-post value range over a lottery's support, together with
/// the bound it must satisfy: the largest value of an item she holds
/// strictly fractionally.
#[derive(Debug, Clone)]
pub struct SpreadCertificate {
    pub per_agent: Vec<AgentSpread>,
}

#[derive(Debug, Clone)]
pub struct AgentSpread {
    pub min_value: Rational,
    pub max_value: Rational,
    pub bound: Rational,
}

/// Faithfully implements `fa`: returns a lottery whose expectation equals
/// `fa` entrywise, supported on at most `f + 1` allocations, with per-agent
/// spread at most the value of her largest strictly fractional item.
pub fn faithful_implement(
    fa: &FractionalAllocation,
    inst: &Instance,
) -> Result<(Lottery, SpreadCertificate), FaithfulError> {
    if fa.items() != inst.items() || fa.agents() != inst.agents() {
        return Err(FaithfulError::DimensionMismatch(inst.items(), fa.items()));
    }
    let item_map: Vec<usize> = (0..inst.items()).collect();
    faithful_implement_mapped(fa, inst, &item_map)
}

/// Same as [`faithful_implement`] but with columns of `fa` naming instance
/// items through `item_map`; the returned allocations use instance item
/// indices.
pub(crate) fn faithful_implement_mapped(
    fa: &FractionalAllocation,
    inst: &Instance,
    item_map: &[usize],
) -> Result<(Lottery, SpreadCertificate), FaithfulError> {
    let n = fa.agents();
    let one = Rational::one();

    // Fully allocated items ride along in every support allocation; only
    // the strictly fractional part goes through clones and peeling.
    let mut integral = Allocation::empty(n);
    let mut fractional_rows = vec![vec![Rational::zero(); fa.items()]; n];
    let mut preserved: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
    for (i, row) in fractional_rows.iter_mut().enumerate() {
        for (j, &item) in item_map.iter().enumerate() {
            let x = fa.get(i, j);
            if x.is_one() {
                integral.bundle_mut(i).insert(item);
            } else if !x.is_zero() {
                row[j] = x.clone();
                preserved.insert((i, item), x.clone());
            }
        }
    }
    let f = preserved.len();

    let lottery = if f == 0 {
        Lottery::new(vec![(one.clone(), integral)]).expect("single unit-probability entry")
    } else {
        let frac = FractionalAllocation::new(fractional_rows)
            .expect("submatrix of a valid fractional allocation");
        let clones = eat(&frac, inst, item_map);
        let terms = bvn_decompose(&clones.matching)?;
        let mut merged: BTreeMap<Allocation, Rational> = BTreeMap::new();
        for (coef, matching) in terms {
            let mut alloc = integral.clone();
            for (clone, j) in matching {
                alloc
                    .bundle_mut(clones.clone_owner[clone])
                    .insert(item_map[j]);
            }
            *merged.entry(alloc).or_insert_with(Rational::zero) += coef;
        }
        let support: Vec<(Rational, Allocation)> =
            merged.into_iter().map(|(a, p)| (p, a)).collect();
        let raw = Lottery::new(support).expect("BvN coefficients are positive and sum to 1");
        reduce_support(&raw, &preserved)?
    };

    // Certify: exact implementation, support bound, small spread.
    let expectation =
        expected_allocation(&lottery, inst.items()).expect("support allocations fit the instance");
    for i in 0..n {
        for (j, &item) in item_map.iter().enumerate() {
            assert_eq!(
                expectation.get(i, item),
                fa.get(i, j),
                "expectation mismatch at agent {i}, column {j}"
            );
        }
    }
    assert!(
        lottery.len() <= f + 1,
        "support {} exceeds f + 1 = {}",
        lottery.len(),
        f + 1
    );
    let mut per_agent = Vec::with_capacity(n);
    for i in 0..n {
        let values: Vec<Rational> = lottery
            .support()
            .iter()
            .map(|(_, a)| inst.bundle_value(i, a.bundle(i)).expect("valid bundle"))
            .collect();
        let min_value = values.iter().min().unwrap().clone();
        let max_value = values.iter().max().unwrap().clone();
        let bound = preserved
            .keys()
            .filter(|(agent, _)| *agent == i)
            .map(|&(_, item)| inst.value(i, item).clone())
            .max()
            .unwrap_or_else(Rational::zero);
        assert!(
            max_value.clone() - &min_value <= bound,
            "spread of agent {i} exceeds her largest fractional item"
        );
        per_agent.push(AgentSpread {
            min_value,
            max_value,
            bound,
        });
    }
    Ok((lottery, SpreadCertificate { per_agent }))
}

/// Shrinks a lottery's support to at most `|preserved| + 1` allocations
/// drawn from the input support, preserving each preserved expectation
/// target exactly. Entries not named in `preserved` must be integral across
/// the input support for the full expectation to survive; callers pass the
/// strictly fractional entries.
pub fn reduce_support(
    lot: &Lottery,
    preserved: &BTreeMap<(usize, usize), Rational>,
) -> Result<Lottery, FaithfulError> {
    let k = lot.len();
    let mut p = LpProblem::new(k, true, vec![Rational::zero(); k]);
    p.add_constraint(vec![Rational::one(); k], Relation::Eq, Rational::one());
    for (&(agent, item), target) in preserved {
        let row: Vec<Rational> = lot
            .support()
            .iter()
            .map(|(_, a)| {
                if a.bundle(agent).contains(&item) {
                    Rational::one()
                } else {
                    Rational::zero()
                }
            })
            .collect();
        p.add_constraint(row, Relation::Eq, target.clone());
    }
    let hint: Vec<Rational> = lot.support().iter().map(|(prob, _)| prob.clone()).collect();
    let solution = match basic_feasible_point(&p, &hint) {
        Ok(s) => s,
        Err(LpError::HintInfeasible(w)) => return Err(FaithfulError::TargetsNotMet(w)),
    };
    assert_eq!(
        solution.status,
        LpStatus::Optimal,
        "reduction LP is bounded"
    );
    let support: Vec<(Rational, Allocation)> = solution
        .values
        .iter()
        .zip(lot.support())
        .filter(|(prob, _)| !prob.is_zero())
        .map(|(prob, (_, alloc))| (prob.clone(), alloc.clone()))
        .collect();
    Ok(Lottery::new(support).expect("reduction keeps a unit-mass distribution"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_random, Instance};
    use crate::rational::{rat, ratio};
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn inst(values: Vec<Vec<i64>>) -> Instance {
        Instance::new(
            values
                .into_iter()
                .map(|row| row.into_iter().map(rat).collect())
                .collect(),
        )
        .unwrap()
    }

    fn fa(rows: Vec<Vec<Rational>>) -> FractionalAllocation {
        FractionalAllocation::new(rows).unwrap()
    }

    #[test]
    fn eating_integral_allocation() {
        let inst = inst(vec![vec![3, 1], vec![2, 2]]);
        let full = fa(vec![vec![rat(1), rat(0)], vec![rat(0), rat(1)]]);
        let cm = clone_eating(&full, &inst).unwrap();
        assert_eq!(cm.clone_counts, vec![1, 1]);
        let entries: Vec<_> = cm.matching.entries().collect();
        assert_eq!(entries.len(), 2);
        for (_, f) in entries {
            assert!(f.is_one());
        }
    }

    #[test]
    fn eating_order_splits_across_clones() {
        // x = {a: 1/2, b: 1}, v(a) = 4 > v(b) = 2:
        // clone 1 eats a:1/2 then b:1/2, clone 2 eats b:1/2
        let inst = inst(vec![vec![4, 2]]);
        let x = fa(vec![vec![ratio(1, 2), rat(1)]]);
        let cm = clone_eating(&x, &inst).unwrap();
        assert_eq!(cm.clone_counts, vec![2]);
        let entries: Vec<_> = cm
            .matching
            .entries()
            .map(|(&(c, j), f)| (c, j, f.clone()))
            .collect();
        assert_eq!(
            entries,
            vec![
                (0, 0, ratio(1, 2)),
                (0, 1, ratio(1, 2)),
                (1, 1, ratio(1, 2)),
            ]
        );
    }

    #[test]
    fn eating_zero_mass_agent() {
        let inst = inst(vec![vec![1], vec![1]]);
        let x = fa(vec![vec![rat(1)], vec![rat(0)]]);
        let cm = clone_eating(&x, &inst).unwrap();
        assert_eq!(cm.clone_counts, vec![1, 0]);
    }

    #[test]
    fn implement_integral_is_singleton() {
        let inst = inst(vec![vec![3, 1], vec![2, 2]]);
        let full = fa(vec![vec![rat(1), rat(0)], vec![rat(0), rat(1)]]);
        let (lot, spread) = faithful_implement(&full, &inst).unwrap();
        assert_eq!(lot.len(), 1);
        assert!(lot.support()[0].0.is_one());
        assert!(spread.per_agent.iter().all(|s| s.bound.is_zero()));
    }

    #[test]
    fn implement_symmetric_half() {
        let inst = inst(vec![vec![1, 1], vec![1, 1]]);
        let half = fa(vec![
            vec![ratio(1, 2), ratio(1, 2)],
            vec![ratio(1, 2), ratio(1, 2)],
        ]);
        let (lot, spread) = faithful_implement(&half, &inst).unwrap();
        assert_eq!(lot.len(), 2);
        for s in &spread.per_agent {
            assert_eq!(s.min_value, rat(1));
            assert_eq!(s.max_value, rat(1));
        }
    }

    /// Random fractional allocation with column sums <= 1 and denominators
    /// <= `max_den`.
    pub(crate) fn random_fa(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        m: usize,
        max_den: i64,
    ) -> FractionalAllocation {
        let mut rows = vec![vec![Rational::zero(); m]; n];
        for j in 0..m {
            let den = rng.random_range(1..=max_den);
            let mut left = den;
            for row in rows.iter_mut() {
                if left == 0 {
                    break;
                }
                let take = rng.random_range(0..=left);
                left -= take;
                row[j] = ratio(take, den);
            }
        }
        FractionalAllocation::new(rows).unwrap()
    }

    #[test]
    fn implement_random_allocations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=6);
            let instance = gen_random(n, m, 9, trial).unwrap();
            let x = random_fa(&mut rng, n, m, 12);
            let f = x.strictly_fractional().len();
            // exactness, support and spread are asserted inside
            let (lot, _) = faithful_implement(&x, &instance).unwrap();
            assert!(lot.len() <= f + 1);
        }
    }

    #[test]
    fn reduce_support_no_targets() {
        let a0 = Allocation::new(vec![BTreeSet::from([0]), BTreeSet::new()], 1).unwrap();
        let a1 = Allocation::new(vec![BTreeSet::new(), BTreeSet::from([0])], 1).unwrap();
        let lot = Lottery::new(vec![(ratio(1, 2), a0), (ratio(1, 2), a1)]).unwrap();
        let reduced = reduce_support(&lot, &BTreeMap::new()).unwrap();
        assert_eq!(reduced.len(), 1);
    }

    #[test]
    fn reduce_support_preserves_targets() {
        // six allocations over three agents; preserve two expectations;
        // support must drop to <= 3
        let mut support = Vec::new();
        for k in 0..6 {
            let mut bundles = vec![BTreeSet::new(); 3];
            bundles[k % 3].insert(0);
            if k % 2 == 0 {
                bundles[(k + 1) % 3].insert(1);
            } else {
                bundles[k % 3].insert(1);
            }
            support.push((ratio(1, 6), Allocation::new(bundles, 2).unwrap()));
        }
        let lot = Lottery::new(support).unwrap();
        let fa = expected_allocation(&lot, 2).unwrap();
        let preserved: BTreeMap<(usize, usize), Rational> = [(0usize, 0usize), (1, 0)]
            .into_iter()
            .map(|(i, j)| ((i, j), fa.get(i, j).clone()))
            .collect();
        let reduced = reduce_support(&lot, &preserved).unwrap();
        assert!(reduced.len() <= 3);
        let after = expected_allocation(&reduced, 2).unwrap();
        for ((i, j), target) in &preserved {
            assert_eq!(after.get(*i, *j), target);
        }
    }

    #[test]
    fn reduce_support_rejects_bad_targets() {
        let a0 = Allocation::new(vec![BTreeSet::from([0])], 1).unwrap();
        let lot = Lottery::new(vec![(rat(1), a0)]).unwrap();
        let preserved: BTreeMap<(usize, usize), Rational> =
            [((0usize, 0usize), ratio(1, 2))].into_iter().collect();
        assert!(matches!(
            reduce_support(&lot, &preserved),
            Err(FaithfulError::TargetsNotMet(_))
        ));
    }
}
