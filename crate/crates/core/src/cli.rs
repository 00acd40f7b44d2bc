//! Command-line surface. Every command returns its exit code and output so
//! tests can drive it without spawning a process.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, SolveError};
use crate::instance::{parse_instance, GroupDoc, Instance, InstanceDoc, ValueDoc};
use crate::io::{allocation_to_doc, parse_allocation, print_allocation, print_trace};
use crate::oracle::{enumerate_efx, verify_allocation};
use crate::solver::{solve, AssertionLevel, Config};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_STEP_CAP: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
/// `verify` on a well-formed allocation that is not EFX.
pub const EXIT_REJECTED: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "efx3",
    version,
    about = "Complete EFX allocations for three valuation types"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a random instance document.
    Gen {
        /// Group sizes as p,q,r.
        #[arg(long, value_parser = parse_sizes)]
        agents: [usize; 3],
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        goods: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max_value: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve an instance and print the allocation document.
    Solve {
        instance: PathBuf,
        /// Write the trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Micro-step cap; defaults to $EFX3_MAX_STEPS or 1000000.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, value_enum, default_value_t = AssertionLevel::Progress)]
        assertions: AssertionLevel,
    },
    /// Check an allocation document against an instance.
    Verify {
        instance: PathBuf,
        allocation: PathBuf,
    },
    /// Enumerate every EFX allocation of a small instance.
    Oracle {
        instance: PathBuf,
        #[arg(long)]
        complete_only: bool,
        /// How many allocations to print.
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
}

fn parse_sizes(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated sizes".into());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad size {p:?}"))?;
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            code: EXIT_OK,
            stdout,
            stderr: String::new(),
        }
    }

    fn fail(code: i32, stderr: impl Into<String>) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: stderr.into(),
        }
    }
}

/// Instance document with values drawn from ChaCha8 seeded by `seed`: for
/// each nonempty group in order A, B, C and each good in order, the value is
/// `next_u64() % (max_value + 1)`.
pub fn generate(agents: [usize; 3], goods: usize, max_value: u64, seed: u64) -> InstanceDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = ["A", "B", "C"]
        .into_iter()
        .zip(agents)
        .filter(|&(_, size)| size > 0)
        .map(|(name, size)| GroupDoc {
            name: name.to_string(),
            size,
            values: (0..goods)
                .map(|_| ValueDoc::Int(rng.next_u64() % (max_value + 1)))
                .collect(),
        })
        .collect();
    InstanceDoc { goods, groups }
}

pub fn cmd_gen(agents: [usize; 3], goods: usize, max_value: u64, seed: u64) -> Outcome {
    if agents.iter().sum::<usize>() == 0 {
        return Outcome::fail(EXIT_USAGE, "error: at least one agent is required\n");
    }
    let doc = generate(agents, goods, max_value, seed);
    let mut s = serde_json::to_string(&doc).expect("serializable");
    s.push('\n');
    Outcome::ok(s)
}

fn load_instance(path: &Path) -> Result<Instance, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_instance(&text)?)
}

fn usage_error(e: Error) -> Outcome {
    Outcome::fail(EXIT_USAGE, format!("error: {e}\n"))
}

pub fn cmd_solve(instance: &Path, trace: Option<&Path>, config: &Config) -> Outcome {
    let inst = match load_instance(instance) {
        Ok(i) => i,
        Err(e) => return usage_error(e),
    };
    let (result, events) = match solve(&inst, config) {
        Ok(sol) => (Ok(sol.allocation), sol.trace),
        Err(f) => (Err((f.error, f.allocation)), f.trace),
    };
    let mut stderr = String::new();
    if let Some(path) = trace {
        if let Err(e) = std::fs::write(path, print_trace(&events)) {
            return usage_error(e.into());
        }
    }
    match result {
        Ok(x) => {
            let report = verify_allocation(&inst, &x);
            if !(report.accepted() && report.complete && report.efx_perturbed) {
                return Outcome::fail(
                    EXIT_VIOLATION,
                    format!("error: output failed verification: {}\n", json!(report)),
                );
            }
            Outcome::ok(print_allocation(&inst, &x))
        }
        Err((err, partial)) => {
            stderr.push_str(&format!("error: {err}\n"));
            if trace.is_none() {
                // Without a trace file, show the tail of the trace.
                let tail = events.len().saturating_sub(20);
                stderr.push_str(&print_trace(&events[tail..]));
            }
            stderr.push_str(&format!(
                "partial allocation: {}\n",
                serde_json::to_string(&allocation_to_doc(&inst, &partial)).expect("serializable")
            ));
            let code = match err {
                SolveError::StepCapExceeded { .. } => EXIT_STEP_CAP,
                SolveError::ProofViolation { .. } => EXIT_VIOLATION,
            };
            Outcome {
                code,
                stdout: String::new(),
                stderr,
            }
        }
    }
}

pub fn cmd_verify(instance: &Path, allocation: &Path) -> Outcome {
    let inst = match load_instance(instance) {
        Ok(i) => i,
        Err(e) => return usage_error(e),
    };
    let x = match std::fs::read_to_string(allocation)
        .map_err(Error::from)
        .and_then(|t| parse_allocation(&inst, &t))
    {
        Ok(x) => x,
        Err(e) => return usage_error(e),
    };
    let report = verify_allocation(&inst, &x);
    let mut s = serde_json::to_string_pretty(&report).expect("serializable");
    s.push('\n');
    Outcome {
        code: if report.accepted() {
            EXIT_OK
        } else {
            EXIT_REJECTED
        },
        stdout: s,
        stderr: String::new(),
    }
}

pub fn cmd_oracle(instance: &Path, complete_only: bool, limit: usize) -> Outcome {
    let inst = match load_instance(instance) {
        Ok(i) => i,
        Err(e) => return usage_error(e),
    };
    match enumerate_efx(&inst, complete_only, limit) {
        Ok(en) => {
            let allocations: Vec<_> = en
                .allocations
                .iter()
                .map(|x| allocation_to_doc(&inst, x))
                .collect();
            let doc = json!({
                "count": en.count,
                "complete_only": complete_only,
                "allocations": allocations,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            Outcome::ok(s)
        }
        Err(e) => Outcome::fail(EXIT_USAGE, format!("error: {e}\n")),
    }
}

/// Parses arguments (the first one is the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome::ok(text)
            } else {
                Outcome::fail(code, text)
            };
        }
    };
    match cli.command {
        Command::Gen {
            agents,
            goods,
            max_value,
            seed,
        } => cmd_gen(agents, goods as usize, max_value, seed),
        Command::Solve {
            instance,
            trace,
            max_steps,
            assertions,
        } => {
            let mut config = Config::from_env();
            if let Some(m) = max_steps {
                config.max_steps = m;
            }
            config.assertions = assertions;
            config.trace = trace.is_some();
            cmd_solve(&instance, trace.as_deref(), &config)
        }
        Command::Verify {
            instance,
            allocation,
        } => cmd_verify(&instance, &allocation),
        Command::Oracle {
            instance,
            complete_only,
            limit,
        } => cmd_oracle(&instance, complete_only, limit),
    }
}
