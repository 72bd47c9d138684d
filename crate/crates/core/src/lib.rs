//! Exact-arithmetic fair division of indivisible items.
//!
//! The crate computes best-of-both-worlds lotteries over allocations: every
//! agent receives her proportional share in expectation, and in every
//! realized allocation at least half of her truncated proportional share
//! (hence at least half of her maximin share) together with
//! proportionality up to one item. Everything is computed over
//! arbitrary-precision rationals, so all guarantees are certified exactly.
//!
//! ```
//! use fairshare::{bobw, shares, Instance};
//! use fairshare::rational::rat;
//!
//! // two agents, three items
//! let inst = Instance::new(vec![
//!     vec![rat(6), rat(1), rat(1)],
//!     vec![rat(2), rat(3), rat(3)],
//! ])
//! .unwrap();
//!
//! let result = bobw::bobw_allocate(&inst).unwrap();
//! assert!(result.lottery.len() <= 2);
//! for agent in 0..2 {
//!     let ps = shares::proportional_share(&inst, agent).unwrap();
//!     assert!(result.lottery.expected_value(&inst, agent) >= ps);
//!     let half_tps = shares::tps(&inst, agent).unwrap() / rat(2);
//!     for (_, alloc) in result.lottery.support() {
//!         assert!(inst.bundle_value(agent, alloc.bundle(agent)).unwrap() >= half_tps);
//!     }
//! }
//! ```

pub mod audit;
pub mod baselines;
pub mod bobw;
pub mod cli;
pub mod faithful;
pub mod lp;
pub mod matching;
pub mod model;
pub mod rational;
pub mod shares;

pub use model::{
    expected_allocation, gen_identical_units, gen_not_mms, gen_random, Allocation,
    FractionalAllocation, Instance, Lottery,
};
pub use rational::Rational;
