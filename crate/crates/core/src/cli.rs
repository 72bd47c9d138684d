//! Command-line surface.
//!
//! Exit codes: 0 success with all certificates passing, 1 usage or parse
//! error, 2 audit failure, 3 enumeration budget exceeded.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::audit;
use crate::baselines::{envy_cycle_elimination, uniform_prop1, HalfFairReport};
use crate::bobw::bobw_allocate;
use crate::faithful::faithful_implement;
use crate::model::{
    gen_identical_units, gen_not_mms, gen_random, FractionalAllocation, Instance, Lottery,
};
use crate::rational::{parse_rational, ratio, rational_to_json};
use crate::shares::{self, ShareReport, SharesError};
use num::traits::Zero;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_AUDIT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fairshare",
    version,
    about = "Exact best-of-both-worlds fair allocation of indivisible items",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print PS and TPS (optionally MMS) for every agent
    Shares {
        #[arg(short, long)]
        input: PathBuf,
        /// also compute the MMS by exhaustive enumeration
        #[arg(long)]
        mms: bool,
        /// enumeration budget (overrides FAIRSHARE_BUDGET)
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Exact maximin share of every agent
    Mms {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Run the full best-of-both-worlds pipeline
    Bobw {
        #[arg(short, long)]
        input: PathBuf,
        /// write lottery + certificate JSON here (stdout otherwise)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Faithfully implement a fractional allocation
    Faithful {
        /// fractional allocation JSON ({"x": [[...]]})
        #[arg(short, long)]
        input: PathBuf,
        /// instance JSON providing the valuations
        #[arg(long)]
        inst: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a baseline mechanism
    Baseline {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mech: Mechanism,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Audit a lottery against an instance
    Check {
        /// lottery JSON
        #[arg(short, long)]
        input: PathBuf,
        /// instance JSON
        #[arg(long)]
        inst: PathBuf,
    },
    /// Generate an instance from a named family
    Gen {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        m: usize,
        /// epsilon for the notmms family, as "p/q"
        #[arg(long, default_value = "1/100")]
        eps: String,
        #[arg(long, default_value_t = 20)]
        max_value: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Random property battery over seeded instances
    Suite {
        #[arg(long, default_value_t = 25)]
        seeds: u64,
        #[arg(long)]
        budget: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    Uniform,
    Envycycle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Notmms,
    Units,
    Random,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
    fn audit(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_AUDIT,
            message: msg.into(),
        }
    }
}

impl From<SharesError> for Failure {
    fn from(e: SharesError) -> Self {
        match e {
            SharesError::BudgetExceeded(_) => Failure {
                code: EXIT_BUDGET,
                message: e.to_string(),
            },
            other => Failure::usage(other.to_string()),
        }
    }
}

/// Entry point used by both the binary and the tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with code 0
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let kind = match f.code {
                EXIT_AUDIT => "audit_failure",
                EXIT_BUDGET => "budget_exceeded",
                _ => "usage",
            };
            eprintln!(
                "{}",
                json!({"error": {"kind": kind, "code": f.code, "message": f.message}})
            );
            f.code
        }
    }
}

fn default_budget(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("FAIRSHARE_BUDGET")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(shares::DEFAULT_MMS_BUDGET)
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("invalid JSON in {}: {e}", path.display())))
}

fn read_instance(path: &Path) -> Result<Instance, Failure> {
    Instance::from_json(&read_json(path)?)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(value: &Value, output: Option<&PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match output {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Shares { input, mms, budget } => {
            let inst = read_instance(&input)?;
            let budget = mms.then(|| default_budget(budget));
            for i in 0..inst.agents() {
                let report = ShareReport::compute(&inst, i, budget)?;
                let mut line = format!("agent {i}: PS={} TPS={}", report.ps, report.tps);
                if mms {
                    match &report.mms {
                        Some(v) => line.push_str(&format!(" MMS={v}")),
                        None => line.push_str(" MMS=unknown(budget)"),
                    }
                }
                println!("{line}");
            }
            Ok(())
        }
        Command::Mms { input, budget } => {
            let inst = read_instance(&input)?;
            let budget = default_budget(budget);
            for i in 0..inst.agents() {
                let v = shares::mms(&inst, i, budget)?;
                println!("agent {i}: MMS={v}");
            }
            Ok(())
        }
        Command::Bobw { input, output } => {
            let inst = read_instance(&input)?;
            let result = bobw_allocate(&inst).map_err(|e| Failure::audit(e.to_string()))?;
            emit(&result.to_json(), output.as_ref())?;
            Ok(())
        }
        Command::Faithful {
            input,
            inst,
            output,
        } => {
            let instance = read_instance(&inst)?;
            let fa = FractionalAllocation::from_json(&read_json(&input)?)
                .map_err(|e| Failure::usage(e.to_string()))?;
            let (lottery, spread) =
                faithful_implement(&fa, &instance).map_err(|e| Failure::usage(e.to_string()))?;
            let value = json!({
                "lottery": lottery.to_json(),
                "spread": spread.per_agent.iter().enumerate().map(|(i, s)| json!({
                    "agent": i,
                    "min": rational_to_json(&s.min_value),
                    "max": rational_to_json(&s.max_value),
                    "bound": rational_to_json(&s.bound),
                })).collect::<Vec<_>>(),
            });
            emit(&value, output.as_ref())?;
            Ok(())
        }
        Command::Baseline {
            input,
            mech,
            output,
        } => {
            let inst = read_instance(&input)?;
            match mech {
                Mechanism::Uniform => {
                    let lottery =
                        uniform_prop1(&inst).map_err(|e| Failure::audit(e.to_string()))?;
                    let ex_ante = audit::check_ex_ante_proportional(&lottery, &inst);
                    let prop1 = audit::check_support_prop1(&lottery, &inst);
                    let value = json!({
                        "lottery": lottery.to_json(),
                        "audits": [ex_ante.to_json(), prop1.to_json()],
                    });
                    emit(&value, output.as_ref())?;
                    if !(ex_ante.pass && prop1.pass) {
                        return Err(Failure::audit("uniform lottery failed its audits"));
                    }
                }
                Mechanism::Envycycle => {
                    let alloc = envy_cycle_elimination(&inst);
                    let half_fair = HalfFairReport::compute(&alloc, &inst);
                    let ef1 = audit::check_ef1(&alloc, &inst);
                    let value = json!({
                        "allocation": alloc.to_json(),
                        "half_fair": half_fair.to_json(),
                        "ef1": ef1.to_json(),
                    });
                    emit(&value, output.as_ref())?;
                    if !(half_fair.pass && ef1.pass) {
                        return Err(Failure::audit(
                            "envy-cycle output failed EF1 or half-fairness",
                        ));
                    }
                }
            }
            Ok(())
        }
        Command::Check { input, inst } => {
            let instance = read_instance(&inst)?;
            let lottery = Lottery::from_json(&read_json(&input)?, instance.items())
                .map_err(|e| Failure::usage(e.to_string()))?;
            let lottery_agents = lottery.support()[0].1.agents();
            if lottery_agents != instance.agents() {
                return Err(Failure::usage(format!(
                    "lottery has {lottery_agents} agents but the instance has {}",
                    instance.agents()
                )));
            }
            let gating = [
                audit::check_ex_ante_proportional(&lottery, &instance),
                audit::check_ex_post_half_tps(&lottery, &instance),
                audit::check_support_prop1(&lottery, &instance),
            ];
            // informational only: the pipeline does not promise envy bounds
            let informational: Vec<Value> = lottery
                .support()
                .iter()
                .map(|(_, a)| audit::check_ef1(a, &instance).to_json())
                .collect();
            let value = json!({
                "audits": gating.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
                "ef1_per_allocation": informational,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("serializable")
            );
            if let Some(failed) = gating.iter().find(|r| !r.pass) {
                return Err(Failure::audit(format!(
                    "{} failed with witness {:?}",
                    failed.name, failed.witness
                )));
            }
            Ok(())
        }
        Command::Gen {
            family,
            n,
            m,
            eps,
            max_value,
            seed,
            output,
        } => {
            let inst = match family {
                Family::Notmms => {
                    let eps = parse_rational(&eps).map_err(Failure::usage)?;
                    gen_not_mms(n, &eps).map_err(|e| Failure::usage(e.to_string()))?
                }
                Family::Units => {
                    gen_identical_units(n).map_err(|e| Failure::usage(e.to_string()))?
                }
                Family::Random => {
                    gen_random(n, m, max_value, seed).map_err(|e| Failure::usage(e.to_string()))?
                }
            };
            emit(&inst.to_json(), output.as_ref())?;
            Ok(())
        }
        Command::Suite { seeds, budget } => run_suite(seeds, default_budget(budget)),
    }
}

/// Deterministic instance for suite/acceptance seed `t`.
pub fn corpus_instance(t: u64, max_value: u64) -> Instance {
    let n = 2 + (t % 3) as usize;
    let m = 2 + (t % 9) as usize;
    gen_random(
        n,
        m,
        max_value,
        t.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t),
    )
    .expect("generator parameters are valid")
}

fn run_suite(seeds: u64, budget: u64) -> Result<(), Failure> {
    let mut rows: Vec<(String, usize, usize)> = Vec::new(); // name, pass, fail
    let bump = |rows: &mut Vec<(String, usize, usize)>, name: &str, ok: bool| {
        if let Some(row) = rows.iter_mut().find(|(n, _, _)| n == name) {
            if ok {
                row.1 += 1;
            } else {
                row.2 += 1;
            }
        } else {
            rows.push((name.to_string(), ok as usize, !ok as usize));
        }
    };
    let mut hard_failure = false;
    for t in 0..seeds {
        let inst = corpus_instance(t, 20);
        let chain_ok = audit::check_share_chain(&inst, budget)
            .map(|r| r.pass)
            .unwrap_or(false);
        bump(&mut rows, "share_chain", chain_ok);
        hard_failure |= !chain_ok;

        match bobw_allocate(&inst) {
            Ok(result) => {
                bump(&mut rows, "bobw_certified", true);
                bump(
                    &mut rows,
                    "bobw_support_le_n",
                    result.lottery.len() <= inst.agents(),
                );
            }
            Err(e) => {
                eprintln!("seed {t}: bobw failed: {e}");
                bump(&mut rows, "bobw_certified", false);
                hard_failure = true;
            }
        }

        match uniform_prop1(&inst) {
            Ok(lottery) => {
                let exact_ps = audit::check_ex_ante_proportional(&lottery, &inst)
                    .margins
                    .iter()
                    .all(|(_, margin)| margin.is_zero());
                let prop1 = audit::check_support_prop1(&lottery, &inst).pass;
                bump(&mut rows, "uniform_exact_ps", exact_ps);
                bump(&mut rows, "uniform_prop1", prop1);
                hard_failure |= !(exact_ps && prop1);
            }
            Err(_) => {
                bump(&mut rows, "uniform_exact_ps", false);
                hard_failure = true;
            }
        }

        let alloc = envy_cycle_elimination(&inst);
        let ef1 = audit::check_ef1(&alloc, &inst).pass;
        bump(&mut rows, "envycycle_ef1", ef1);
        hard_failure |= !ef1;
        let hf = HalfFairReport::compute(&alloc, &inst).pass;
        bump(&mut rows, "envycycle_half_fair", hf);
        let tps_ok = (0..inst.agents()).all(|i| {
            let own = inst.bundle_value(i, alloc.bundle(i)).expect("valid");
            let n = inst.agents() as i64;
            let bound = ratio(n, 2 * n - 1) * shares::tps(&inst, i).expect("valid");
            own >= bound
        });
        bump(&mut rows, "envycycle_tps_bound", tps_ok);
        hard_failure |= !(hf && tps_ok);
    }
    println!("{:<24} {:>6} {:>6}", "check", "pass", "fail");
    for (name, pass, fail) in &rows {
        println!("{name:<24} {pass:>6} {fail:>6}");
    }
    if hard_failure {
        Err(Failure::audit("suite detected failures"))
    } else {
        Ok(())
    }
}
