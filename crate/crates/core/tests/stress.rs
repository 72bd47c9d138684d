//! Long-running stress batteries, excluded from the default run:
//!
//! ```sh
//! cargo test -p fairshare --test stress -- --ignored
//! ```

use fairshare::audit;
use fairshare::bobw::bobw_allocate;
use fairshare::model::{gen_identical_units, gen_random, Instance};
use fairshare::rational::{rat, Rational};
use fairshare::shares::{mms, proportional_share, tps, tps_fixed_point};
use num::traits::Zero;

/// Independent MMS route for two agents: enumerate bundles of agent 0 as
/// bitmasks and take the best worst side.
fn mms_two_agents_by_subsets(inst: &Instance, agent: usize) -> Rational {
    let m = inst.items();
    assert!(inst.agents() == 2 && m <= 20);
    let mut best: Option<Rational> = None;
    for mask in 0..(1u32 << m) {
        let mut side = Rational::zero();
        for j in 0..m {
            if mask & (1 << j) != 0 {
                side += inst.value(agent, j);
            }
        }
        let other = inst.total_value(agent) - &side;
        let worst = side.min(other);
        if best.as_ref().is_none_or(|b| worst > *b) {
            best = Some(worst);
        }
    }
    best.unwrap()
}

#[test]
#[ignore]
fn mms_cross_check_two_agents() {
    for seed in 0..400u64 {
        let m = 1 + (seed as usize % 12);
        let inst = gen_random(2, m, 25, seed * 17 + 3).unwrap();
        for agent in 0..2 {
            assert_eq!(
                mms(&inst, agent, 100_000_000).unwrap(),
                mms_two_agents_by_subsets(&inst, agent),
                "seed {seed} agent {agent}"
            );
        }
    }
}

#[test]
#[ignore]
fn bobw_wide_battery() {
    // broader than the acceptance corpus: more agents, more items, value
    // ranges from tie-heavy to spread-out
    for t in 0..1500u64 {
        let n = 2 + (t % 5) as usize;
        let m = (t % 16) as usize;
        let max_v = [2, 5, 20, 100, 1000][(t % 5) as usize];
        let inst = gen_random(n, m, max_v, t.wrapping_mul(0x517c_c1b7_2722_0a95)).unwrap();
        let result = bobw_allocate(&inst).unwrap_or_else(|e| panic!("seed {t}: {e}"));
        assert!(result.lottery.len() <= n, "seed {t}");
    }
}

#[test]
#[ignore]
fn bobw_tie_heavy_families() {
    for n in 2..=6 {
        let inst = gen_identical_units(n).unwrap();
        let result = bobw_allocate(&inst).unwrap();
        // everyone clears half of (2n-1)/n, which integer values round to 1
        for c in &result.certificate {
            assert!(c.min_ex_post >= rat(1));
        }
    }
    // all agents identical over identical items
    for n in 2..=5usize {
        let inst = Instance::new(vec![vec![rat(7); n]; n]).unwrap();
        let result = bobw_allocate(&inst).unwrap();
        for c in &result.certificate {
            assert!(c.min_ex_post >= rat(7));
        }
    }
}

#[test]
#[ignore]
fn share_routes_wide_agreement() {
    for t in 0..4000u64 {
        let n = 1 + (t % 6) as usize;
        let m = (t % 14) as usize;
        let inst = gen_random(n, m, 50, t * 29 + 11).unwrap();
        for i in 0..n {
            assert_eq!(
                tps(&inst, i).unwrap(),
                tps_fixed_point(&inst, i).unwrap(),
                "seed {t} agent {i}"
            );
            assert!(tps(&inst, i).unwrap() <= proportional_share(&inst, i).unwrap());
        }
    }
}

#[test]
#[ignore]
fn uniform_baseline_wide_battery() {
    use fairshare::baselines::uniform_prop1;
    for t in 0..800u64 {
        let n = 1 + (t % 5) as usize;
        let m = (t % 12) as usize;
        let inst = gen_random(n, m, 30, t * 7 + 5).unwrap();
        let lot = uniform_prop1(&inst).unwrap();
        for i in 0..n {
            assert_eq!(
                lot.expected_value(&inst, i),
                proportional_share(&inst, i).unwrap()
            );
        }
        assert!(audit::check_support_prop1(&lot, &inst).pass, "seed {t}");
    }
}
