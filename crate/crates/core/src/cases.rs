//! Dispatch and case procedures. Every procedure returns one checkpoint: the
//! new allocation, the rule that fired and the progress it claims.

use serde_json::json;

use crate::allocation::{Allocation, Claim};
use crate::bundle::GoodId;
use crate::champion::{
    decompose, g_champion, g_champion_self_first, mes, mes_above, ChampionEdge, Decomposition,
};
use crate::competition::{iterated_competition, Roles, RoundRecord};
use crate::envy::{envies, is_efx, strongly_prefers, EnvyGraph};
use crate::error::SolveError;
use crate::instance::{AgentId, GroupId, Instance};
use crate::rewrite::{
    champion_path_improvement, eliminate_envy_cycle, eliminate_pseudo_cycle, ensure, reassign,
    resolve_all_intra_group, three_sources_exchange, two_cycle_top_swap, violation, PseudoEdge,
    Witness,
};

/// Result of one dispatch.
#[derive(Clone, Debug)]
pub struct Step {
    pub allocation: Allocation,
    pub rule: String,
    pub claim: Claim,
    pub witness: Witness,
    /// Competition rounds run inside this step, if any.
    pub rounds: Vec<RoundRecord>,
    pub round_bound: Option<u64>,
}

impl Step {
    fn new(
        allocation: Allocation,
        rule: impl Into<String>,
        claim: Claim,
        witness: Witness,
    ) -> Self {
        Self {
            allocation,
            rule: rule.into(),
            claim,
            witness,
            rounds: Vec::new(),
            round_bound: None,
        }
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        self.rule = format!("{prefix}/{}", self.rule);
        self
    }
}

fn wit(pairs: &[(&str, String)]) -> Witness {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect()
}

/// Group relabeling: `b` and `c` name the groups playing those roles.
#[derive(Clone, Copy, Debug)]
struct View {
    b: GroupId,
    c: GroupId,
}

impl View {
    const PLAIN: View = View {
        b: GroupId::B,
        c: GroupId::C,
    };
    const SWAPPED: View = View {
        b: GroupId::C,
        c: GroupId::B,
    };

    fn with_b(b: GroupId) -> View {
        if b == GroupId::B {
            Self::PLAIN
        } else {
            Self::SWAPPED
        }
    }

    fn b1(&self) -> AgentId {
        self.b.leader()
    }

    fn c1(&self) -> AgentId {
        self.c.leader()
    }
}

struct Ctx<'a> {
    inst: &'a Instance,
    x: &'a Allocation,
    g: GoodId,
    graph: EnvyGraph,
}

const A1: AgentId = AgentId {
    group: GroupId::A,
    rank: 1,
};

impl<'a> Ctx<'a> {
    fn envies(&self, i: AgentId, j: AgentId) -> bool {
        self.graph.has_edge(i, j)
    }

    /// The target wins ties for its own bundle.
    fn champion(&self, target: AgentId) -> ChampionEdge {
        g_champion_self_first(self.inst, self.x, self.g, target)
    }

    fn cut(
        &self,
        champion: AgentId,
        target: AgentId,
        rule: &str,
    ) -> Result<Decomposition, SolveError> {
        decompose(self.inst, self.x, self.g, champion, target)
            .map_err(|e| violation(rule, e.to_string()))
    }

    fn sources(&self) -> Vec<AgentId> {
        self.graph.sources()
    }

    fn a1_sole_source(&self) -> bool {
        self.sources() == [A1]
    }

    fn a1_envies_outside(&self) -> bool {
        self.x
            .agents()
            .into_iter()
            .any(|t| t.group != GroupId::A && self.envies(A1, t))
    }

    fn self_champion(&self, e: &ChampionEdge, claim: Claim) -> Result<Step, SolveError> {
        let y = champion_path_improvement(self.inst, self.x, e, &[e.target])?;
        Ok(Step::new(
            y,
            "self_champion",
            claim,
            wit(&[("agent", e.target.to_string())]),
        ))
    }

    fn pseudo(&self, edges: &[PseudoEdge], rule: &str) -> Result<Step, SolveError> {
        let y = eliminate_pseudo_cycle(self.inst, self.x, edges)?;
        let w = wit(&[(
            "pseudo_cycle",
            edges
                .iter()
                .map(|e| e.describe())
                .collect::<Vec<_>>()
                .join(","),
        )]);
        Ok(Step::new(y, rule, Claim::Phi, w))
    }

    fn champion_path(
        &self,
        e: &ChampionEdge,
        path: &[AgentId],
        rule: &str,
        claim: Claim,
    ) -> Result<Step, SolveError> {
        let y = champion_path_improvement(self.inst, self.x, e, path)?;
        let w = wit(&[(
            "path",
            path.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(">"),
        )]);
        Ok(Step::new(y, rule, claim, w))
    }

    fn single_source(&self) -> Result<Step, SolveError> {
        let e = self.champion(A1);
        if e.champion == A1 {
            return self.self_champion(&e, Claim::Phi);
        }
        let path = self.graph.path(A1, e.champion).ok_or_else(|| {
            violation(
                "single_source",
                format!("{} unreachable from a1", e.champion),
            )
        })?;
        self.champion_path(&e, &path, "single_source", Claim::Phi)
    }

    fn three_sources(&self) -> Result<Step, SolveError> {
        let ex = three_sources_exchange(self.inst, self.x, self.g)?;
        Ok(Step::new(
            ex.allocation,
            format!("three_sources/{}", ex.case),
            Claim::Pareto,
            ex.witness,
        ))
    }

    fn two_cycle(
        &self,
        p: AgentId,
        q: AgentId,
        rule: &str,
        claim: Claim,
    ) -> Result<Step, SolveError> {
        let (y, w) = two_cycle_top_swap(self.inst, self.x, self.g, p, q)?;
        Ok(Step::new(y, rule, claim, w))
    }
}

/// Picks and applies the rule for a partial EFX allocation with a pool good.
pub fn dispatch(inst: &Instance, x: &Allocation, g: GoodId) -> Result<Step, SolveError> {
    dispatch_in(inst, x, g, false)
}

/// Like [`dispatch`], for a state left by a `Neutral` hand-off whose potential
/// gain is still owed. The leading self-champion check is skipped: the
/// follow-up case must run on the state as handed off, and a leader taking
/// back what it gave up would only restart the hand-off.
pub fn dispatch_follow_up(inst: &Instance, x: &Allocation, g: GoodId) -> Result<Step, SolveError> {
    dispatch_in(inst, x, g, true)
}

fn dispatch_in(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    follow_up: bool,
) -> Result<Step, SolveError> {
    let ctx = Ctx {
        inst,
        x,
        g,
        graph: EnvyGraph::build(inst, x),
    };
    if let Some(cycle) = ctx.graph.find_cycle() {
        let y = eliminate_envy_cycle(inst, x, &cycle)?;
        let w = wit(&[(
            "cycle",
            cycle
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(">"),
        )]);
        return Ok(Step::new(y, "envy_cycle", Claim::Pareto, w));
    }
    // Strict here: a tie does not count, so a pending hand-off is not undone
    // by a leader taking back what it just gave up.
    for l in GroupId::ALL
        .map(GroupId::leader)
        .into_iter()
        .filter(|_| !follow_up)
    {
        let e = g_champion(inst, x, g, l);
        if e.champion == l {
            return ctx.self_champion(&e, Claim::Pareto);
        }
    }
    let sources = ctx.sources();
    if !sources.contains(&A1) {
        return if ctx.a1_envies_outside() {
            not_source_easy(&ctx).map(|s| s.prefixed("not_source_easy"))
        } else {
            not_source_hard(&ctx).map(|s| s.prefixed("not_source_hard"))
        };
    }
    if sources.len() == 1 {
        return ctx.single_source();
    }
    if sources.len() == 3 {
        return ctx.three_sources();
    }
    if ctx.a1_envies_outside() {
        a1_envies_somebody(&ctx)
    } else {
        a1_envies_none(&ctx).map(|s| s.prefixed("a1_envies_none"))
    }
}

/// `a1` is a source and envies `b1` or `c1`.
fn a1_envies_b1_or_c1(ctx: &Ctx) -> Result<Step, SolveError> {
    const RULE: &str = "a1_envies_b1_or_c1";
    let v = if ctx.envies(A1, GroupId::B.leader()) {
        View::PLAIN
    } else {
        View::SWAPPED
    };
    let (b1, c1) = (v.b1(), v.c1());
    ensure(ctx.envies(A1, b1), RULE, || {
        "a1 envies neither b1 nor c1".into()
    })?;
    if ctx.a1_sole_source() {
        return ctx.single_source().map(|s| s.prefixed(RULE));
    }
    let ea = ctx.champion(A1);
    if ea.champion == A1 {
        return ctx.self_champion(&ea, Claim::Phi).map(|s| s.prefixed(RULE));
    }
    if ea.champion == b1 {
        let edges = [
            PseudoEdge::envy(A1, b1),
            PseudoEdge::champion(b1, A1, ctx.g),
        ];
        return ctx.pseudo(&edges, &format!("{RULE}/pseudo_cycle"));
    }
    let ec = ctx.champion(c1);
    if ec.champion == A1 {
        return ctx.two_cycle(A1, c1, &format!("{RULE}/case1"), Claim::Phi);
    }
    if ec.champion == c1 {
        return ctx
            .self_champion(&ec, Claim::Pareto)
            .map(|s| s.prefixed(&format!("{RULE}/case2")));
    }
    case3_top_exchange(ctx, v).map(|s| s.prefixed(&format!("{RULE}/case3")))
}

/// `a1` envies `b1`, `c1` champions `a1` and `b1` champions `c1`.
fn case3_top_exchange(ctx: &Ctx, v: View) -> Result<Step, SolveError> {
    const RULE: &str = "a1_envies_b1_or_c1/case3";
    let (inst, x, g) = (ctx.inst, ctx.x, ctx.g);
    let (b1, c1) = (v.b1(), v.c1());
    let (a, b, c) = (GroupId::A, v.b, v.c);
    let dc = ctx.cut(b1, c1, RULE)?;
    let da = ctx.cut(c1, A1, RULE)?;
    let y = reassign(
        inst,
        x,
        &[
            (A1, x.bundle(b1).clone()),
            (b1, dc.top.with(g)),
            (c1, da.top.union(&dc.bottom)),
        ],
        RULE,
    )?;
    for l in [A1, b1, c1] {
        ensure(
            inst.value(l.group, y.bundle(l)) > inst.value(l.group, x.bundle(l)),
            RULE,
            || format!("{l} did not improve"),
        )?;
    }
    if is_efx(inst, &y) {
        return Ok(Step::new(y.sorted(inst), "Y", Claim::Phi, Witness::new()));
    }
    let yc1 = y.bundle(c1).clone();
    let envied_by_c1 = |grp: GroupId| {
        inst.agents_in(grp)
            .filter(|t| !t.is_leading())
            .find(|&t| envies(inst, &y, c1, t))
    };
    if let Some(ai) = envied_by_c1(a) {
        let z = reassign(inst, &y, &[(ai, yc1), (c1, y.bundle(ai).clone())], RULE)?;
        let z = resolve_all_intra_group(inst, &z)?;
        return Ok(Step::new(
            z,
            "3.1",
            Claim::Phi,
            wit(&[("a_i", ai.to_string())]),
        ));
    }
    if let Some(bj) = envied_by_c1(b) {
        let z = reassign(
            inst,
            &y,
            &[
                (c1, y.bundle(bj).clone()),
                (A1, yc1),
                (b1, x.bundle(b1).clone()),
                (bj, y.bundle(b1).clone()),
            ],
            RULE,
        )?;
        let z = resolve_all_intra_group(inst, &z)?;
        return Ok(Step::new(
            z,
            "3.2",
            Claim::Phi,
            wit(&[("b_j", bj.to_string())]),
        ));
    }
    // c1 envies nobody in A or B: shrink its bundle.
    let ab: Vec<AgentId> = inst.agents_in(a).chain(inst.agents_in(b)).collect();
    let (t_owner, t_val) = ab
        .iter()
        .map(|&p| (p, inst.value(c, y.bundle(p))))
        .fold(None, |best: Option<(AgentId, _)>, (p, val)| match best {
            Some((q, bv)) if bv >= val => Some((q, bv)),
            _ => Some((p, val)),
        })
        .expect("A is nonempty");
    let s = mes_above(inst, c, &yc1, &t_val).map_err(|e| violation(RULE, format!("S: {e}")))?;
    let a_min = inst
        .agents_in(a)
        .min_by_key(|&p| inst.value(a, y.bundle(p)))
        .expect("A is nonempty");
    let mut w = wit(&[
        ("S", format!("{:?}", s.indices())),
        ("a_min", a_min.to_string()),
    ]);
    if !strongly_prefers(inst, a, &s, y.bundle(a_min)) {
        let z = reassign(inst, &y, &[(c1, s)], RULE)?;
        let z = resolve_all_intra_group(inst, &z)?;
        return Ok(Step::new(z, "3.3/S", Claim::Phi, w));
    }
    let s2 = mes(inst, a, &s, y.bundle(a_min)).map_err(|e| violation(RULE, format!("S': {e}")))?;
    w.insert("S'".into(), json!(s2.indices()));
    w.insert("T".into(), json!(t_owner.to_string()));
    let (rule, changes) = if t_owner.group == a {
        (
            "3.3/T=Yai",
            vec![(c1, y.bundle(t_owner).clone()), (t_owner, s2)],
        )
    } else {
        let bj = t_owner;
        let ai = inst
            .agents_in(a)
            .max_by_key(|&p| inst.value(b, y.bundle(p)))
            .expect("A is nonempty");
        w.insert("a_i".into(), json!(ai.to_string()));
        let mut ch = vec![
            (b1, y.bundle(ai).clone()),
            (c1, y.bundle(bj).clone()),
            (ai, s2),
        ];
        if bj != b1 {
            ch.push((bj, y.bundle(b1).clone()));
        }
        ("3.3/T=Ybj", ch)
    };
    let z = reassign(inst, &y, &changes, RULE)?;
    let z = resolve_all_intra_group(inst, &z)?;
    Ok(Step::new(z, rule, Claim::Phi, w))
}

/// `a1` is a source and envies someone outside `A`.
fn a1_envies_somebody(ctx: &Ctx) -> Result<Step, SolveError> {
    const RULE: &str = "a1_envies_somebody";
    if ctx.envies(A1, GroupId::B.leader()) || ctx.envies(A1, GroupId::C.leader()) {
        return a1_envies_b1_or_c1(ctx);
    }
    let sources = ctx.sources();
    if sources.len() == 3 {
        return ctx.three_sources().map(|s| s.prefixed(RULE));
    }
    if sources.len() == 1 {
        return ctx.single_source().map(|s| s.prefixed(RULE));
    }
    let bi = [GroupId::B, GroupId::C]
        .into_iter()
        .flat_map(|grp| ctx.inst.agents_in(grp))
        .find(|&t| ctx.envies(A1, t))
        .ok_or_else(|| violation(RULE, "a1 envies nobody outside A"))?;
    let v = View::with_b(bi.group);
    let (b1, c1) = (v.b1(), v.c1());
    let mut w = wit(&[("b_i", bi.to_string())]);
    let ea = ctx.champion(A1);
    if ea.champion == A1 {
        return ctx.self_champion(&ea, Claim::Phi).map(|s| s.prefixed(RULE));
    }
    if ea.champion == b1 {
        let edges = [
            PseudoEdge::envy(A1, bi),
            PseudoEdge::champion(b1, A1, ctx.g),
        ];
        return ctx.pseudo(&edges, &format!("{RULE}/case3.1"));
    }
    if ctx.envies(b1, c1) {
        let edges = [
            PseudoEdge::envy(A1, bi),
            PseudoEdge::envy(b1, c1),
            PseudoEdge::champion(c1, A1, ctx.g),
        ];
        return ctx.pseudo(&edges, &format!("{RULE}/case3.2.1"));
    }
    ensure(ctx.envies(c1, b1), RULE, || {
        "neither b1 nor c1 envies the other".into()
    })?;
    let ec = ctx.champion(c1);
    if ec.champion == c1 {
        return ctx
            .self_champion(&ec, Claim::Pareto)
            .map(|s| s.prefixed(RULE));
    }
    if ec.champion == b1 {
        return ctx.champion_path(
            &ec,
            &[c1, b1],
            &format!("{RULE}/case3.2.2.1"),
            Claim::Pareto,
        );
    }
    let mut step = ctx.two_cycle(A1, c1, &format!("{RULE}/case3.2.2.2"), Claim::Phi)?;
    w.append(&mut step.witness);
    step.witness = w;
    Ok(step)
}

/// `a1` is a source and envies nobody outside `A`.
fn a1_envies_none(ctx: &Ctx) -> Result<Step, SolveError> {
    let sources = ctx.sources();
    if sources.len() == 1 {
        return ctx.single_source();
    }
    if sources.len() == 3 {
        return ctx.three_sources();
    }
    let other = *sources
        .iter()
        .find(|&&s| s != A1)
        .ok_or_else(|| violation("a1_envies_none", "no second source"))?;
    let v = View::with_b(other.group);
    let (b1, c1) = (v.b1(), v.c1());
    ensure(ctx.envies(b1, c1), "a1_envies_none", || {
        format!("{b1} does not envy {c1}")
    })?;
    let eb = ctx.champion(b1);
    if eb.champion == b1 {
        return ctx.self_champion(&eb, Claim::Pareto);
    }
    if eb.champion == c1 {
        return ctx.champion_path(&eb, &[b1, c1], "case3.2", Claim::Pareto);
    }
    let run = iterated_competition(ctx.inst, ctx.x, ctx.g, Roles { b: v.b, c: v.c })?;
    Ok(Step {
        allocation: run.allocation,
        rule: format!("competition/{}", run.case),
        claim: run.claim,
        witness: run.witness,
        rounds: run.rounds,
        round_bound: Some(run.bound),
    })
}

/// `a1` is not a source and envies someone outside `A`.
fn not_source_easy(ctx: &Ctx) -> Result<Step, SolveError> {
    const RULE: &str = "not_source_easy";
    let v = if ctx.envies(GroupId::B.leader(), A1) {
        View::PLAIN
    } else {
        View::SWAPPED
    };
    let (b1, c1) = (v.b1(), v.c1());
    ensure(ctx.envies(b1, A1), RULE, || {
        "no leading agent envies a1".into()
    })?;
    if let Some(bj) = ctx.inst.agents_in(v.b).find(|&t| ctx.envies(A1, t)) {
        let edges = [PseudoEdge::envy(A1, bj), PseudoEdge::envy(b1, A1)];
        return ctx.pseudo(&edges, "case1");
    }
    let cj = ctx
        .inst
        .agents_in(v.c)
        .find(|&t| ctx.envies(A1, t))
        .ok_or_else(|| violation(RULE, "a1 envies nobody outside A"))?;
    if ctx.envies(c1, A1) {
        let edges = [PseudoEdge::envy(A1, cj), PseudoEdge::envy(c1, A1)];
        return ctx.pseudo(&edges, "case2/c1_envies_a1");
    }
    let eb = ctx.champion(b1);
    if eb.champion == b1 {
        return ctx
            .self_champion(&eb, Claim::Pareto)
            .map(|s| s.prefixed("case2.1"));
    }
    if eb.champion == A1 {
        let edges = [
            PseudoEdge::champion(A1, b1, ctx.g),
            PseudoEdge::envy(b1, A1),
        ];
        return ctx.pseudo(&edges, "case2.2");
    }
    let edges = [
        PseudoEdge::envy(A1, cj),
        PseudoEdge::champion(c1, b1, ctx.g),
        PseudoEdge::envy(b1, A1),
    ];
    ctx.pseudo(&edges, "case2.3")
}

/// `a1` is not a source and envies nobody outside `A`.
fn not_source_hard(ctx: &Ctx) -> Result<Step, SolveError> {
    const RULE: &str = "not_source_hard";
    let (inst, x, g) = (ctx.inst, ctx.x, ctx.g);
    let v = if ctx.envies(GroupId::B.leader(), A1) {
        View::PLAIN
    } else {
        View::SWAPPED
    };
    let (b1, c1) = (v.b1(), v.c1());
    ensure(ctx.envies(b1, A1), RULE, || {
        "no leading agent envies a1".into()
    })?;
    let eb = ctx.champion(b1);
    if eb.champion == b1 {
        return ctx.self_champion(&eb, Claim::Pareto);
    }
    if eb.champion == A1 {
        let edges = [PseudoEdge::champion(A1, b1, g), PseudoEdge::envy(b1, A1)];
        return ctx.pseudo(&edges, "pseudo_cycle");
    }
    let ec = ctx.champion(c1);
    if ec.champion == c1 {
        return ctx.self_champion(&ec, Claim::Pareto);
    }
    if ec.champion == b1 {
        if ctx.envies(c1, b1) {
            return ctx.champion_path(&ec, &[c1, b1], "c1_b1/cycle", Claim::Pareto);
        }
        if ctx.envies(b1, c1) {
            return ctx.champion_path(&eb, &[b1, c1], "c1_b1/cycle", Claim::Pareto);
        }
        return ctx.two_cycle(b1, c1, "c1_b1/two_cycle", Claim::Pareto);
    }
    // a1 champions c1: c1 picks its favourite bundle among A and B.
    let d = ctx.cut(A1, c1, RULE)?;
    let fresh = d.top.with(g);
    let picked = inst
        .agents_in(GroupId::A)
        .chain(inst.agents_in(v.b))
        .fold(None, |best: Option<(AgentId, _)>, p| {
            let val = inst.value(v.c, x.bundle(p));
            match best {
                Some((q, bv)) if bv >= val => Some((q, bv)),
                _ => Some((p, val)),
            }
        })
        .expect("A is nonempty")
        .0;
    let w = wit(&[
        ("picked", picked.to_string()),
        ("T", format!("{:?}", d.top.indices())),
    ]);
    let xp = x.bundle(picked).clone();
    let (rule, changes, claim) = if picked.group == v.b {
        (
            "c1_picks_bj",
            vec![(c1, xp), (A1, fresh), (picked, x.bundle(A1).clone())],
            Claim::Phi,
        )
    } else if picked == A1 {
        ("c1_picks_a1", vec![(c1, xp), (A1, fresh)], Claim::Phi)
    } else {
        (
            "c1_picks_aj",
            vec![(c1, xp), (picked, fresh)],
            Claim::Neutral,
        )
    };
    let y = reassign(inst, x, &changes, RULE)?;
    let y = resolve_all_intra_group(inst, &y)?;
    Ok(Step::new(y, rule, claim, w))
}
