//! Iterated competition between `b1` and the group `C` over bundles, used when
//! `a1` is a source, envies nobody outside `A`, and g-champions `b1`.
//!
//! `b1` temporarily holds the reserved bundle (the top of its own bundle as cut
//! by `a1`, plus `g`). Groups are not re-sorted until the competition ends.

use num_bigint::BigUint;
use serde_json::json;

use crate::allocation::{Allocation, Claim};
use crate::bundle::{Bundle, GoodId};
use crate::champion::{decompose, g_champion, mes_above};
use crate::envy::{efx_violations, envies, EnvyGraph};
use crate::error::SolveError;
use crate::instance::{AgentId, GroupId, Instance, Scale};
use crate::rewrite::{
    ensure, reassign, resolve_all_intra_group, resolve_internal_envies, violation, Witness,
};

const RULE: &str = "competition";

/// An entry of a comparison set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompEntry {
    Real(AgentId),
    /// The owner's bundle minus its least valued good for the `B` valuation.
    Virtual(AgentId, GoodId),
    /// The bundle held by `b1` during the competition.
    Reserved,
}

impl CompEntry {
    pub fn label(&self) -> String {
        match self {
            CompEntry::Real(a) => format!("X_{a}"),
            CompEntry::Virtual(a, h) => format!("X_{a}-{}", h.0),
            CompEntry::Reserved => "R".into(),
        }
    }

    fn owner(&self) -> Option<AgentId> {
        match self {
            CompEntry::Real(a) | CompEntry::Virtual(a, _) => Some(*a),
            CompEntry::Reserved => None,
        }
    }
}

/// Which groups play the roles of `B` and `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roles {
    pub b: GroupId,
    pub c: GroupId,
}

#[derive(Clone, Debug)]
pub struct CompetitionState {
    pub x: Allocation,
    pub roles: Roles,
    pub reserved: Bundle,
    pub ob: Vec<CompEntry>,
    pub oc: Vec<CompEntry>,
    pub virtual_count: usize,
}

impl CompetitionState {
    fn b1(&self) -> AgentId {
        self.roles.b.leader()
    }

    pub fn entry_bundle(&self, e: CompEntry) -> Bundle {
        match e {
            CompEntry::Real(a) => self.x.bundle(a).clone(),
            CompEntry::Virtual(a, h) => self.x.bundle(a).without(h),
            CompEntry::Reserved => self.reserved.clone(),
        }
    }

    fn rebuild(&mut self, inst: &Instance) {
        let Roles { b, c } = self.roles;
        let a_agents = || inst.agents_in(GroupId::A).map(CompEntry::Real);
        self.ob = a_agents()
            .chain(inst.agents_in(c).map(CompEntry::Real))
            .chain(std::iter::once(CompEntry::Reserved))
            .collect();
        self.oc = a_agents()
            .chain(
                inst.agents_in(b)
                    .filter(|a| !a.is_leading())
                    .map(CompEntry::Real),
            )
            .chain(std::iter::once(CompEntry::Reserved))
            .collect();
        self.virtual_count = 0;
    }

    /// Best entry of `set` for group `g`, first on ties.
    fn best(&self, inst: &Instance, g: GroupId, set: &[CompEntry]) -> Option<(CompEntry, BigUint)> {
        let mut best: Option<(CompEntry, BigUint)> = None;
        for &e in set {
            let v = inst.value(g, &self.entry_bundle(e));
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((e, v));
            }
        }
        best
    }

    /// Invariant 1: every strong envy comes from `b1`.
    fn check_invariant(&self, inst: &Instance) -> Result<(), SolveError> {
        let b1 = self.b1();
        match efx_violations(inst, &self.x, Scale::Perturbed)
            .into_iter()
            .find(|v| v.envier != b1)
        {
            Some(v) => Err(violation(
                RULE,
                format!(
                    "invariant broken: {} strongly envies {}",
                    v.envier, v.target
                ),
            )),
            None => Ok(()),
        }
    }
}

/// Sets up the competition: `b1` takes the reserved bundle and its bottom
/// half is pooled.
pub fn init_competition(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    roles: Roles,
) -> Result<CompetitionState, SolveError> {
    let a1 = GroupId::A.leader();
    let b1 = roles.b.leader();
    let graph = EnvyGraph::build(inst, x);
    ensure(graph.is_source(a1), RULE, || "a1 is not a source".into())?;
    ensure(
        x.agents()
            .into_iter()
            .all(|t| t.group == GroupId::A || !envies(inst, x, a1, t)),
        RULE,
        || "a1 envies someone outside its group".into(),
    )?;
    ensure(g_champion(inst, x, g, b1).champion == a1, RULE, || {
        "a1 does not champion b1".into()
    })?;
    let d = decompose(inst, x, g, a1, b1).map_err(|e| violation(RULE, e.to_string()))?;
    let reserved = d.top.with(g);
    let y = reassign(inst, x, &[(b1, reserved.clone())], RULE)?;
    let mut state = CompetitionState {
        x: y,
        roles,
        reserved,
        ob: Vec::new(),
        oc: Vec::new(),
        virtual_count: 0,
    };
    state.rebuild(inst);
    state.check_invariant(inst)?;
    Ok(state)
}

/// Outcome of one round.
#[derive(Clone, Debug)]
pub enum RoundOutcome {
    Continue {
        case: &'static str,
        witness: Witness,
    },
    /// `P` is an `A` bundle or the reserved bundle.
    FinalizeB { p: CompEntry },
    /// `P` comes from a `C` agent and `Q` is an `A` bundle or the reserved one.
    FinalizeC { p: CompEntry, q: CompEntry },
}

fn virtual_update(
    inst: &Instance,
    s: &mut CompetitionState,
    p: CompEntry,
) -> Result<(), SolveError> {
    let owner = p.owner().expect("virtual updates apply to owned bundles");
    let h = inst
        .cheapest(s.roles.b, s.x.bundle(owner))
        .ok_or_else(|| violation(RULE, format!("{owner} holds nothing")))?;
    let slot = s.ob.iter().position(|e| *e == p).expect("entry present");
    s.ob[slot] = CompEntry::Virtual(owner, h);
    s.virtual_count += 1;
    Ok(())
}

pub fn run_round(inst: &Instance, s: &mut CompetitionState) -> Result<RoundOutcome, SolveError> {
    let Roles { b, c } = s.roles;
    let (p, _) = s.best(inst, b, &s.ob).expect("comparison set is nonempty");
    if p.owner().is_none_or(|o| o.group == GroupId::A) {
        return Ok(RoundOutcome::FinalizeB { p });
    }
    let mut with_p = s.oc.clone();
    with_p.push(p);
    let (q, _) = s.best(inst, c, &with_p).expect("nonempty");
    if q == CompEntry::Reserved || q.owner().is_some_and(|o| o.group == GroupId::A) {
        return Ok(RoundOutcome::FinalizeC { p, q });
    }
    let mut w = Witness::new();
    w.insert("P".into(), json!(p.label()));
    w.insert("Q".into(), json!(q.label()));
    match p {
        CompEntry::Real(_) if q != p => {
            virtual_update(inst, s, p)?;
            Ok(RoundOutcome::Continue {
                case: "3a",
                witness: w,
            })
        }
        CompEntry::Real(ci) => {
            // Both want X_ci: compare minimal preferred subsets.
            let xci = s.x.bundle(ci).clone();
            let rest_b: Vec<CompEntry> = s.ob.iter().copied().filter(|&e| e != p).collect();
            let tb = s.best(inst, b, &rest_b).map(|p| p.1).unwrap_or_default();
            let tc = s.best(inst, c, &s.oc).map(|p| p.1).unwrap_or_default();
            let pb = mes_above(inst, b, &xci, &tb).map_err(|e| violation(RULE, e.to_string()))?;
            let pc = mes_above(inst, c, &xci, &tc).map_err(|e| violation(RULE, e.to_string()))?;
            w.insert("P_b".into(), json!(pb.indices()));
            w.insert("P_c".into(), json!(pc.indices()));
            if pc.len() <= pb.len() && pc.len() < xci.len() {
                s.x = reassign(inst, &s.x, &[(ci, pc)], RULE)?;
                s.x = resolve_internal_envies(inst, &s.x, ci)?;
                s.rebuild(inst);
                Ok(RoundOutcome::Continue {
                    case: "3b/i",
                    witness: w,
                })
            } else {
                virtual_update(inst, s, p)?;
                Ok(RoundOutcome::Continue {
                    case: "3b/ii",
                    witness: w,
                })
            }
        }
        CompEntry::Virtual(ci, _) => {
            let pb = s.entry_bundle(p);
            if q == p {
                s.x = reassign(inst, &s.x, &[(ci, pb)], RULE)?;
                s.x = resolve_internal_envies(inst, &s.x, ci)?;
                s.rebuild(inst);
                Ok(RoundOutcome::Continue {
                    case: "3c/Q=P",
                    witness: w,
                })
            } else {
                let bj = q.owner().expect("a B bundle");
                ensure(bj.group == b && !bj.is_leading(), RULE, || {
                    format!("unexpected Q {}", q.label())
                })?;
                let xbj = s.x.bundle(bj).clone();
                s.x = reassign(inst, &s.x, &[(bj, pb), (ci, xbj)], RULE)?;
                s.x = resolve_internal_envies(inst, &s.x, bj)?;
                s.x = resolve_internal_envies(inst, &s.x, ci)?;
                s.rebuild(inst);
                Ok(RoundOutcome::Continue {
                    case: "3c/Q=Xbj",
                    witness: w,
                })
            }
        }
        CompEntry::Reserved => unreachable!("handled above"),
    }
}

/// Bound on the number of rounds.
pub fn round_bound(inst: &Instance, roles: Roles) -> u64 {
    let m = inst.goods() as u64;
    m * (inst.size(roles.c) as u64 + 1) + m
}

/// One round as recorded in the trace.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub case: &'static str,
    pub roles: Roles,
    pub before: Allocation,
    pub after: Allocation,
    pub witness: Witness,
}

#[derive(Clone, Debug)]
pub struct CompetitionRun {
    pub allocation: Allocation,
    pub case: String,
    pub claim: Claim,
    pub witness: Witness,
    pub rounds: Vec<RoundRecord>,
    pub bound: u64,
}

/// Runs rounds until a finalizing case, then applies it and resolves
/// intra-group envy. The claim is `Phi` when the potential already went up and
/// `Neutral` when `a1` now envies someone and the master loop must follow up.
pub fn iterated_competition(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    roles: Roles,
) -> Result<CompetitionRun, SolveError> {
    let mut s = init_competition(inst, x, g, roles)?;
    let bound = round_bound(inst, roles);
    let mut rounds = Vec::new();
    let outcome = loop {
        if rounds.len() as u64 >= bound {
            return Err(violation(RULE, format!("round bound {bound} exceeded")));
        }
        let before = s.x.clone();
        let pool_before = before.pool().len();
        let virtual_before = s.virtual_count;
        match run_round(inst, &mut s)? {
            RoundOutcome::Continue { case, witness } => {
                ensure(
                    s.x.pool().len() > pool_before
                        || (s.x.pool().len() == pool_before && s.virtual_count > virtual_before),
                    RULE,
                    || format!("round {case} made no progress"),
                )?;
                ensure(s.x.phi(inst) == x.phi(inst), RULE, || {
                    "potential moved mid-competition".into()
                })?;
                s.check_invariant(inst)?;
                rounds.push(RoundRecord {
                    case,
                    roles,
                    before,
                    after: s.x.clone(),
                    witness,
                });
            }
            done => break done,
        }
    };
    let (a1, b1) = (GroupId::A.leader(), roles.b.leader());
    let r = s.reserved.clone();
    let mut w = Witness::new();
    let (case, changes) = match outcome {
        RoundOutcome::FinalizeB { p } => {
            w.insert("P".into(), json!(p.label()));
            match p {
                CompEntry::Reserved => ("case1/P=R".to_string(), vec![]),
                CompEntry::Real(a) if a == a1 => (
                    "case1/P=Xa1".into(),
                    vec![(b1, s.x.bundle(a).clone()), (a, r)],
                ),
                CompEntry::Real(a) => (
                    "case1/P=Xai".into(),
                    vec![(b1, s.x.bundle(a).clone()), (a, r)],
                ),
                CompEntry::Virtual(..) => unreachable!("virtual entries come from C"),
            }
        }
        RoundOutcome::FinalizeC { p, q } => {
            w.insert("P".into(), json!(p.label()));
            w.insert("Q".into(), json!(q.label()));
            let ci = p.owner().expect("P comes from C");
            let pb = s.entry_bundle(p);
            match q {
                CompEntry::Reserved => ("case2/Q=R".into(), vec![(b1, pb), (ci, r)]),
                CompEntry::Real(a) => {
                    let name = if a == a1 {
                        "case2/Q=Xa1"
                    } else {
                        "case2/Q=Xaj"
                    };
                    (
                        name.into(),
                        vec![(b1, pb), (ci, s.x.bundle(a).clone()), (a, r)],
                    )
                }
                CompEntry::Virtual(..) => unreachable!("O_c has no virtual entries"),
            }
        }
        RoundOutcome::Continue { .. } => unreachable!(),
    };
    let y = reassign(inst, &s.x, &changes, RULE)?;
    let y = resolve_all_intra_group(inst, &y)?;
    let claim = if y.phi(inst) > x.phi(inst) {
        Claim::Phi
    } else {
        Claim::Neutral
    };
    w.insert("b".into(), json!(roles.b.to_string()));
    w.insert("rounds".into(), json!(rounds.len()));
    w.insert("reserved".into(), json!(s.reserved.indices()));
    Ok(CompetitionRun {
        allocation: y,
        case,
        claim,
        witness: w,
        rounds,
        bound,
    })
}
