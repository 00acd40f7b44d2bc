//! The master loop: bootstrap, then dispatch until the pool is empty, with
//! progress and invariant checks at every checkpoint.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde_json::json;

use crate::allocation::{assert_progress, Allocation, Claim, ProgressMeasure, TraceEvent};
use crate::bundle::GoodId;
use crate::cases::{dispatch, dispatch_follow_up, Step};
use crate::champion::check_champion_structure;
use crate::competition::RoundRecord;
use crate::envy::{efx_violations, envies, EnvyGraph};
use crate::error::SolveError;
use crate::instance::{Instance, Scale};
use crate::rewrite::Witness;

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
pub const MAX_STEPS_ENV: &str = "EFX3_MAX_STEPS";

/// How much checking happens at each checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum AssertionLevel {
    /// Only the final allocation is checked.
    Off,
    /// Partition, ordering and the declared progress claim.
    #[default]
    Progress,
    /// Also EFX and the structural checks at every dispatch.
    Full,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub max_steps: u64,
    pub trace: bool,
    pub assertions: AssertionLevel,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            trace: true,
            assertions: AssertionLevel::Progress,
        }
    }
}

impl Config {
    /// Default config with the step cap taken from the environment if set.
    pub fn from_env() -> Self {
        let max_steps = std::env::var(MAX_STEPS_ENV)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(DEFAULT_MAX_STEPS);
        Self {
            max_steps,
            ..Self::default()
        }
    }
}

/// One run of the iterated competition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompetitionStats {
    pub step: u64,
    pub rounds: u64,
    pub bound: u64,
    pub phi_entry: BigUint,
    /// Potential when the competition's gain was realized, either right at
    /// finalize or after the follow-up steps.
    pub phi_resolved: Option<BigUint>,
}

#[derive(Clone, Debug, Default)]
pub struct Stats {
    /// Micro-steps: dispatches plus competition rounds.
    pub steps: u64,
    pub checkpoints: u64,
    pub rules: BTreeMap<String, u64>,
    pub competitions: Vec<CompetitionStats>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub allocation: Allocation,
    pub trace: Vec<TraceEvent>,
    pub stats: Stats,
}

/// A failed run keeps whatever was built so far.
#[derive(Clone, Debug)]
pub struct Failure {
    pub error: SolveError,
    pub allocation: Allocation,
    pub trace: Vec<TraceEvent>,
    pub stats: Stats,
}

/// Hooks for watching a run from outside.
pub trait Observer {
    /// Called before each dispatch with the state, the good to place and
    /// whether a hand-off is awaiting its follow-up.
    fn dispatch(&mut self, _x: &Allocation, _g: GoodId, _follow_up: bool) {}
    /// Called for each competition round.
    fn round(&mut self, _record: &RoundRecord) {}
}

impl Observer for () {}

/// A hand-off waiting for its potential gain.
struct Pending {
    rule: String,
    step: u64,
    before: ProgressMeasure,
    pool_before: usize,
    competition: Option<usize>,
}

struct Runner<'a> {
    inst: &'a Instance,
    config: &'a Config,
    x: Allocation,
    trace: Vec<TraceEvent>,
    stats: Stats,
    pending: Vec<Pending>,
    observer: &'a mut dyn Observer,
}

#[allow(clippy::too_many_arguments)]
fn measure_event(
    inst: &Instance,
    step: u64,
    rule: String,
    depth: u32,
    claim: Claim,
    before: (&ProgressMeasure, usize),
    after: &Allocation,
    witness: Witness,
) -> TraceEvent {
    let m = after.measure(inst);
    TraceEvent {
        step,
        rule,
        depth,
        phi_before: before.0.phi.clone(),
        phi_after: m.phi,
        claim,
        utilities_before: before.0.utilities.clone(),
        utilities_after: m.utilities,
        pool_before: before.1,
        pool_after: after.pool().len(),
        witness,
    }
}

/// Structural facts that hold at every dispatch state.
pub fn check_structure(inst: &Instance, x: &Allocation, g: GoodId) -> Result<(), String> {
    check_champion_structure(inst, x, g)?;
    let graph = EnvyGraph::build(inst, x);
    let agents = x.agents();
    // Same type: the lower-valued bundle's owner envies the higher one.
    for &i in &agents {
        for &j in &agents {
            if i.group == j.group && i.rank < j.rank {
                let (vi, vj) = (
                    inst.value(i.group, x.bundle(i)),
                    inst.value(i.group, x.bundle(j)),
                );
                if vi < vj && !envies(inst, x, i, j) {
                    return Err(format!("{i} does not envy {j} despite sharing a valuation"));
                }
            }
        }
    }
    // A non-leading envier implies its leader envies the same agent.
    for (i, t) in graph.edges() {
        let l = i.group.leader();
        if !i.is_leading() && l != t && !graph.has_edge(l, t) {
            return Err(format!("{i} envies {t} but {l} does not"));
        }
    }
    // A non-leading agent with goods is envied by its own leader.
    if let Some(s) = graph
        .sources()
        .into_iter()
        .find(|&s| !s.is_leading() && !x.bundle(s).is_empty())
    {
        return Err(format!("non-leading source {s} holds goods"));
    }
    Ok(())
}

impl<'a> Runner<'a> {
    fn tick(&mut self) -> Result<(), SolveError> {
        self.stats.steps += 1;
        if self.stats.steps > self.config.max_steps {
            return Err(SolveError::StepCapExceeded {
                cap: self.config.max_steps,
            });
        }
        Ok(())
    }

    fn record(&mut self, event: TraceEvent) {
        if self.config.trace {
            self.trace.push(event);
        }
    }

    fn check_state(&self, y: &Allocation, rule: &str) -> Result<(), SolveError> {
        if self.config.assertions == AssertionLevel::Off {
            return Ok(());
        }
        if !y.partition_ok(self.inst) {
            return Err(SolveError::violation(
                rule,
                "bundles and pool do not partition the goods",
            ));
        }
        if !y.ordering_ok(self.inst) {
            return Err(SolveError::violation(rule, "ordering invariant broken"));
        }
        if self.config.assertions == AssertionLevel::Full {
            if let Some(v) = efx_violations(self.inst, y, Scale::Perturbed).first() {
                return Err(SolveError::violation(
                    rule,
                    format!(
                        "{} strongly envies {} (drop {})",
                        v.envier, v.target, v.good
                    ),
                ));
            }
        }
        Ok(())
    }

    fn apply(&mut self, g: GoodId) -> Result<(), SolveError> {
        let inst = self.inst;
        if self.config.assertions == AssertionLevel::Full {
            check_structure(inst, &self.x, g).map_err(|e| SolveError::violation("structure", e))?;
        }
        let step_no = self.stats.steps;
        let before = self.x.measure(inst);
        let pool_before = self.x.pool().len();
        let depth = self.pending.len() as u32;
        self.observer.dispatch(&self.x, g, !self.pending.is_empty());
        let Step {
            allocation,
            rule,
            claim,
            witness,
            rounds,
            round_bound,
        } = if self.pending.is_empty() {
            dispatch(inst, &self.x, g)?
        } else {
            dispatch_follow_up(inst, &self.x, g)?
        };

        for r in &rounds {
            self.tick()?;
            self.observer.round(r);
            let rb = r.before.measure(inst);
            let ev = measure_event(
                inst,
                self.stats.steps,
                format!("competition/{}", r.case),
                depth + 1,
                Claim::Neutral,
                (&rb, r.before.pool().len()),
                &r.after,
                r.witness.clone(),
            );
            self.check_claim(&ev)?;
            self.record(ev);
        }
        self.check_state(&allocation, &rule)?;
        let ev = measure_event(
            inst,
            step_no,
            rule.clone(),
            depth,
            claim,
            (&before, pool_before),
            &allocation,
            witness,
        );
        self.check_claim(&ev)?;
        self.record(ev);
        *self.stats.rules.entry(rule.clone()).or_default() += 1;
        self.stats.checkpoints += 1;

        let competition = round_bound.map(|bound| {
            self.stats.competitions.push(CompetitionStats {
                step: step_no,
                rounds: rounds.len() as u64,
                bound,
                phi_entry: before.phi.clone(),
                phi_resolved: None,
            });
            self.stats.competitions.len() - 1
        });
        self.x = allocation;
        if claim == Claim::Neutral {
            self.pending.push(Pending {
                rule,
                step: step_no,
                before,
                pool_before,
                competition,
            });
        } else if let Some(i) = competition {
            self.stats.competitions[i].phi_resolved = Some(self.x.phi(inst));
        }
        self.close_pending(false)
    }

    fn check_claim(&self, ev: &TraceEvent) -> Result<(), SolveError> {
        if self.config.assertions == AssertionLevel::Off {
            return Ok(());
        }
        ev.check().map_err(|e| SolveError::violation(&ev.rule, e))
    }

    /// Emits the composite checkpoint for every hand-off whose gain has now
    /// been realized. At the end of the run the remaining ones close as
    /// `Neutral`.
    fn close_pending(&mut self, finished: bool) -> Result<(), SolveError> {
        let phi = self.x.phi(self.inst);
        while let Some(p) = self.pending.last() {
            let gained = phi > p.before.phi;
            if !gained && !finished {
                break;
            }
            let p = self.pending.pop().expect("nonempty");
            let claim = if gained { Claim::Phi } else { Claim::Neutral };
            let mut w = Witness::new();
            w.insert("opened_at".into(), json!(p.step));
            let ev = measure_event(
                self.inst,
                self.stats.steps,
                format!("{}/follow_up", p.rule),
                self.pending.len() as u32,
                claim,
                (&p.before, p.pool_before),
                &self.x,
                w,
            );
            assert_progress(&p.before, &self.x.measure(self.inst), claim)
                .map_err(|e| SolveError::violation(&ev.rule, e))?;
            self.record(ev);
            if let Some(i) = p.competition {
                self.stats.competitions[i].phi_resolved = Some(phi.clone());
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), SolveError> {
        if !self.x.partition_ok(self.inst) || !self.x.ordering_ok(self.inst) {
            return Err(SolveError::violation(
                "start",
                "not a partition with sorted groups",
            ));
        }
        if let Some(v) = efx_violations(self.inst, &self.x, Scale::Perturbed).first() {
            return Err(SolveError::violation(
                "start",
                format!("{} strongly envies {}", v.envier, v.target),
            ));
        }
        while let Some(g) = self.x.next_pool_good() {
            self.tick()?;
            self.apply(g)?;
        }
        self.close_pending(true)?;
        let v = efx_violations(self.inst, &self.x, Scale::Perturbed);
        if let Some(v) = v.first() {
            return Err(SolveError::violation(
                "final",
                format!("{} strongly envies {}", v.envier, v.target),
            ));
        }
        if let Some(v) = efx_violations(self.inst, &self.x, Scale::Base).first() {
            return Err(SolveError::violation(
                "final",
                format!(
                    "{} strongly envies {} under base values",
                    v.envier, v.target
                ),
            ));
        }
        Ok(())
    }
}

/// Computes a complete EFX allocation.
#[allow(clippy::result_large_err)]
pub fn solve(inst: &Instance, config: &Config) -> Result<Solution, Failure> {
    solve_from(inst, Allocation::bootstrap(inst), config, &mut ())
}

/// Runs the master loop from a given partial EFX allocation, which must be a
/// partition with sorted groups.
#[allow(clippy::result_large_err)]
pub fn solve_from(
    inst: &Instance,
    start: Allocation,
    config: &Config,
    observer: &mut dyn Observer,
) -> Result<Solution, Failure> {
    let mut runner = Runner {
        inst,
        config,
        x: start,
        trace: Vec::new(),
        stats: Stats::default(),
        pending: Vec::new(),
        observer,
    };
    match runner.run() {
        Ok(()) => Ok(Solution {
            allocation: runner.x,
            trace: runner.trace,
            stats: runner.stats,
        }),
        Err(error) => Err(Failure {
            error,
            allocation: runner.x,
            trace: runner.trace,
            stats: runner.stats,
        }),
    }
}
