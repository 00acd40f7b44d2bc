//! Allocation transformations shared by the case procedures.

use serde_json::{json, Map, Value};

use crate::allocation::Allocation;
use crate::bundle::{Bundle, GoodId};
use crate::champion::{
    decompose, g_champion, mes, weak_self_champion, ChampionEdge, Decomposition,
};
use crate::envy::{envies, strong_envy_targets, strongly_envies, strongly_prefers, EnvyGraph};
use crate::error::SolveError;
use crate::instance::{AgentId, GroupId, Instance};

pub type Witness = Map<String, Value>;

pub(crate) fn violation(rule: &str, detail: impl Into<String>) -> SolveError {
    SolveError::violation(rule, detail)
}

/// Fails with a proof violation unless `cond` holds.
pub(crate) fn ensure(
    cond: bool,
    rule: &str,
    what: impl FnOnce() -> String,
) -> Result<(), SolveError> {
    if cond {
        Ok(())
    } else {
        Err(violation(rule, what()))
    }
}

/// `s >_g t`.
pub(crate) fn gt(inst: &Instance, g: GroupId, s: &Bundle, t: &Bundle) -> bool {
    inst.value(g, s) > inst.value(g, t)
}

/// Replaces the bundles of the listed agents and recomputes the pool. No
/// re-sorting; callers decide when the ordering invariant is restored.
pub fn reassign(
    inst: &Instance,
    x: &Allocation,
    changes: &[(AgentId, Bundle)],
    rule: &str,
) -> Result<Allocation, SolveError> {
    let mut y = x.clone();
    for (a, b) in changes {
        y.set_bundle(*a, b.clone());
    }
    let mut seen = vec![false; inst.goods()];
    for a in y.agents() {
        for g in y.bundle(a) {
            if seen[g.0] {
                return Err(violation(rule, format!("good {g} assigned twice")));
            }
            seen[g.0] = true;
        }
    }
    y.recompute_pool(inst);
    Ok(y)
}

/// Rotates bundles along an envy cycle `[v0, .., vk]`: each agent takes the
/// bundle of its successor.
pub fn eliminate_envy_cycle(
    inst: &Instance,
    x: &Allocation,
    cycle: &[AgentId],
) -> Result<Allocation, SolveError> {
    const RULE: &str = "envy_cycle";
    ensure(cycle.len() >= 2, RULE, || "cycle too short".into())?;
    let mut changes = Vec::with_capacity(cycle.len());
    for (k, &v) in cycle.iter().enumerate() {
        let next = cycle[(k + 1) % cycle.len()];
        ensure(envies(inst, x, v, next), RULE, || {
            format!("{v} does not envy {next}")
        })?;
        changes.push((v, x.bundle(next).clone()));
    }
    Ok(reassign(inst, x, &changes, RULE)?.sorted(inst))
}

/// Champion path rotation: along an envy path from the edge's target to its
/// champion, each agent takes its successor's bundle and the champion takes
/// its MES of the target's bundle plus the good. A path of one agent is the
/// self-champion replacement.
pub fn champion_path_improvement(
    inst: &Instance,
    x: &Allocation,
    edge: &ChampionEdge,
    path: &[AgentId],
) -> Result<Allocation, SolveError> {
    const RULE: &str = "champion_path";
    ensure(!path.is_empty(), RULE, || "empty path".into())?;
    ensure(
        path[0] == edge.target && *path.last().unwrap() == edge.champion,
        RULE,
        || "path endpoints do not match the champion edge".into(),
    )?;
    ensure(x.pool().contains(edge.good), RULE, || {
        "good is not unallocated".into()
    })?;
    let mut changes = Vec::with_capacity(path.len());
    for w in path.windows(2) {
        ensure(envies(inst, x, w[0], w[1]), RULE, || {
            format!("{} does not envy {}", w[0], w[1])
        })?;
        changes.push((w[0], x.bundle(w[1]).clone()));
    }
    let champion_bundle = mes(
        inst,
        edge.champion.group,
        &x.bundle(edge.target).with(edge.good),
        x.bundle(edge.champion),
    )
    .map_err(|e| violation(RULE, e.to_string()))?;
    changes.push((edge.champion, champion_bundle));
    Ok(reassign(inst, x, &changes, RULE)?.sorted(inst))
}

/// Edge of a pseudo-cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Envy,
    Champion(GoodId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PseudoEdge {
    pub from: AgentId,
    pub to: AgentId,
    pub kind: EdgeKind,
}

impl PseudoEdge {
    pub fn envy(from: AgentId, to: AgentId) -> Self {
        Self {
            from,
            to,
            kind: EdgeKind::Envy,
        }
    }

    pub fn champion(from: AgentId, to: AgentId, g: GoodId) -> Self {
        Self {
            from,
            to,
            kind: EdgeKind::Champion(g),
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            EdgeKind::Envy => format!("{}>{}", self.from, self.to),
            EdgeKind::Champion(g) => format!("{}>{}@{}", self.from, self.to, g.0),
        }
    }
}

/// Checks a tuple against the pseudo-cycle templates: starts at `a1`, every
/// `from` is a leading agent, each group appears once as a source and once as
/// a destination, at most one champion edge per good, and every edge holds.
pub fn validate_pseudo_cycle(
    inst: &Instance,
    x: &Allocation,
    edges: &[PseudoEdge],
) -> Result<(), String> {
    if !(2..=3).contains(&edges.len()) {
        return Err(format!("{} edges", edges.len()));
    }
    if edges[0].from != GroupId::A.leader() {
        return Err("first edge must leave a1".into());
    }
    let mut from_groups: Vec<GroupId> = edges.iter().map(|e| e.from.group).collect();
    let mut to_groups: Vec<GroupId> = edges.iter().map(|e| e.to.group).collect();
    from_groups.sort();
    to_groups.sort();
    from_groups.dedup();
    if from_groups.len() != edges.len() || from_groups != to_groups {
        return Err("groups must pair up".into());
    }
    if edges.iter().any(|e| e.from.group == e.to.group) {
        return Err("edge inside a group".into());
    }
    let mut goods = Vec::new();
    for e in edges {
        if !e.from.is_leading() {
            return Err(format!("{} is not a leading agent", e.from));
        }
        match e.kind {
            EdgeKind::Envy => {
                if !envies(inst, x, e.from, e.to) {
                    return Err(format!("{} does not envy {}", e.from, e.to));
                }
            }
            EdgeKind::Champion(g) => {
                if goods.contains(&g) {
                    return Err(format!("two champion edges for good {g}"));
                }
                goods.push(g);
                if !x.pool().contains(g) {
                    return Err(format!("good {g} is allocated"));
                }
                if g_champion(inst, x, g, e.to).champion != e.from {
                    return Err(format!("{} does not champion {}", e.from, e.to));
                }
            }
        }
    }
    Ok(())
}

/// Each source group receives the destination bundle of its edge (or the MES
/// for a champion edge), placed in the slot of its own agent that lost a
/// bundle; then every group is re-sorted.
pub fn eliminate_pseudo_cycle(
    inst: &Instance,
    x: &Allocation,
    edges: &[PseudoEdge],
) -> Result<Allocation, SolveError> {
    const RULE: &str = "pseudo_cycle";
    validate_pseudo_cycle(inst, x, edges).map_err(|e| violation(RULE, e))?;
    let mut changes = Vec::new();
    for e in edges {
        let received = match e.kind {
            EdgeKind::Envy => x.bundle(e.to).clone(),
            EdgeKind::Champion(g) => mes(
                inst,
                e.from.group,
                &x.bundle(e.to).with(g),
                x.bundle(e.from),
            )
            .map_err(|err| violation(RULE, err.to_string()))?,
        };
        let slot = edges
            .iter()
            .find(|d| d.to.group == e.from.group)
            .expect("validated")
            .to;
        changes.push((slot, received));
    }
    Ok(reassign(inst, x, &changes, RULE)?.sorted(inst))
}

/// Replaces every bundle `t` strongly envies by `t`'s MES of it; the removed
/// goods return to the pool. `t`'s strong envy must stay inside its group.
/// Does not re-sort.
pub fn resolve_internal_envies(
    inst: &Instance,
    x: &Allocation,
    t: AgentId,
) -> Result<Allocation, SolveError> {
    const RULE: &str = "internal_envies";
    let targets = strong_envy_targets(inst, x, t);
    let mut changes = Vec::new();
    for j in targets {
        ensure(j.group == t.group, RULE, || {
            format!("{t} strongly envies {j} in another group")
        })?;
        let m = mes(inst, t.group, x.bundle(j), x.bundle(t))
            .map_err(|e| violation(RULE, e.to_string()))?;
        changes.push((j, m));
    }
    if changes.is_empty() {
        return Ok(x.clone());
    }
    reassign(inst, x, &changes, RULE)
}

/// Removes all strong envy when it is confined to groups. Within each group
/// the strong envier with the smallest own value resolves its envies; that
/// clears the whole group. Restores the ordering invariant.
pub fn resolve_all_intra_group(inst: &Instance, x: &Allocation) -> Result<Allocation, SolveError> {
    const RULE: &str = "intra_group";
    let agents = x.agents();
    for &i in &agents {
        for &j in &agents {
            if i.group != j.group && strongly_envies(inst, x, i, j) {
                return Err(violation(
                    RULE,
                    format!("{i} strongly envies {j} across groups"),
                ));
            }
        }
    }
    let mut y = x.clone();
    for g in GroupId::ALL {
        // One pass suffices; the loop guards against a wrong argument.
        for _ in 0..=inst.size(g) {
            let t = inst
                .agents_in(g)
                .filter(|&a| !strong_envy_targets(inst, &y, a).is_empty())
                .min_by_key(|&a| inst.value(g, y.bundle(a)));
            match t {
                Some(t) => y = resolve_internal_envies(inst, &y, t)?,
                None => break,
            }
        }
    }
    Ok(y.sorted(inst))
}

fn third_leader(p: AgentId, q: AgentId) -> AgentId {
    GroupId::ALL
        .into_iter()
        .find(|&g| g != p.group && g != q.group)
        .expect("three groups")
        .leader()
}

/// Two leading agents `p`, `q` g-champion each other and no leading agent
/// envies either: swap the top halves; if the third leading agent would
/// strongly envy one side, that side keeps only its new top plus `g`.
pub fn two_cycle_top_swap(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    p: AgentId,
    q: AgentId,
) -> Result<(Allocation, Witness), SolveError> {
    const RULE: &str = "two_cycle";
    ensure(
        p.is_leading() && q.is_leading() && p.group != q.group,
        RULE,
        || format!("{p} and {q} are not two leading agents"),
    )?;
    ensure(
        g_champion(inst, x, g, p).champion == q && g_champion(inst, x, g, q).champion == p,
        RULE,
        || format!("{p} and {q} do not champion each other"),
    )?;
    for l in GroupId::ALL.map(GroupId::leader) {
        for t in [p, q] {
            ensure(!envies(inst, x, l, t), RULE, || format!("{l} envies {t}"))?;
        }
    }
    let w = third_leader(p, q);
    // q cuts X_p, p cuts X_q.
    let dp = decompose(inst, x, g, q, p).map_err(|e| violation(RULE, e.to_string()))?;
    let dq = decompose(inst, x, g, p, q).map_err(|e| violation(RULE, e.to_string()))?;
    ensure(gt(inst, p.group, &dq.top, &dp.top), RULE, || {
        format!("{p} prefers its own top")
    })?;
    ensure(gt(inst, q.group, &dp.top, &dq.top), RULE, || {
        format!("{q} prefers its own top")
    })?;
    let mut new_p = dq.top.union(&dp.bottom);
    let mut new_q = dp.top.union(&dq.bottom);
    let xw = x.bundle(w);
    let envy_p = strongly_prefers(inst, w.group, &new_p, xw);
    let envy_q = strongly_prefers(inst, w.group, &new_q, xw);
    ensure(!(envy_p && envy_q), RULE, || {
        format!("{w} strongly envies both sides")
    })?;
    let mut witness = Witness::new();
    witness.insert("pair".into(), json!([p.to_string(), q.to_string()]));
    if envy_p {
        new_p = dq.top.with(g);
        witness.insert("replaced".into(), json!(p.to_string()));
    } else if envy_q {
        new_q = dp.top.with(g);
        witness.insert("replaced".into(), json!(q.to_string()));
    }
    let y = reassign(inst, x, &[(p, new_p), (q, new_q)], RULE)?;
    Ok((resolve_all_intra_group(inst, &y)?, witness))
}

/// Result of the three-sources exchange.
pub struct Exchange {
    pub allocation: Allocation,
    pub case: String,
    pub witness: Witness,
}

/// Roles on a 3-cycle of champion edges: `x` champions `z`, `z` champions
/// `y`, `y` champions `x`. `t[k]`/`b[k]` are the top and bottom of role k's
/// bundle as cut by its champion.
#[derive(Clone)]
struct Roles {
    agent: [AgentId; 3],
    t: [Bundle; 3],
    b: [Bundle; 3],
}

impl Roles {
    fn rotate(&self) -> Roles {
        Roles {
            agent: [self.agent[1], self.agent[2], self.agent[0]],
            t: [self.t[1].clone(), self.t[2].clone(), self.t[0].clone()],
            b: [self.b[1].clone(), self.b[2].clone(), self.b[0].clone()],
        }
    }

    fn group(&self, k: usize) -> GroupId {
        self.agent[k].group
    }

    /// Predicate k: `B_k <_k B_{k+1}`.
    fn predicate(&self, inst: &Instance, k: usize) -> bool {
        gt(inst, self.group(k), &self.b[(k + 1) % 3], &self.b[k])
    }
}

/// All three leading agents are sources: improve the leading agents only.
pub fn three_sources_exchange(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
) -> Result<Exchange, SolveError> {
    const RULE: &str = "three_sources";
    let graph = EnvyGraph::build(inst, x);
    let leaders = GroupId::ALL.map(GroupId::leader);
    for l in leaders {
        ensure(graph.is_source(l), RULE, || format!("{l} is not a source"))?;
    }
    let champ = leaders.map(|l| g_champion(inst, x, g, l));
    let champ_of = |a: AgentId| champ[a.group.index()].champion;

    // Ties for a leader's own bundle count as self-championing here; the
    // exchanges below need strict preferences.
    if let Some(e) = leaders
        .iter()
        .find_map(|&l| weak_self_champion(inst, x, g, l))
    {
        let y = champion_path_improvement(inst, x, &e, &[e.target])?;
        let mut w = Witness::new();
        w.insert("agent".into(), json!(e.target.to_string()));
        return Ok(Exchange {
            allocation: y,
            case: "self".into(),
            witness: w,
        });
    }
    for (i, &p) in leaders.iter().enumerate() {
        for &q in &leaders[i + 1..] {
            if champ_of(p) == q && champ_of(q) == p {
                let (y, w) = two_cycle_top_swap(inst, x, g, p, q)?;
                return Ok(Exchange {
                    allocation: y,
                    case: "two_cycle".into(),
                    witness: w,
                });
            }
        }
    }

    // 3-cycle: x = a1, z is the agent a1 champions, y the remaining one.
    let xa = leaders[0];
    let za = *leaders
        .iter()
        .find(|&&l| champ_of(l) == xa)
        .ok_or_else(|| violation(RULE, "a1 champions nobody among leaders"))?;
    let ya = third_leader(xa, za);
    ensure(champ_of(ya) == za && champ_of(xa) == ya, RULE, || {
        "leading champion relation is not a 3-cycle".into()
    })?;
    let cut = |champion: AgentId, target: AgentId| -> Result<Decomposition, SolveError> {
        decompose(inst, x, g, champion, target).map_err(|e| violation(RULE, e.to_string()))
    };
    let dx = cut(ya, xa)?;
    let dy = cut(za, ya)?;
    let dz = cut(xa, za)?;
    let mut roles = Roles {
        agent: [xa, ya, za],
        t: [dx.top, dy.top, dz.top],
        b: [dx.bottom, dy.bottom, dz.bottom],
    };
    let gb = Bundle::singleton(g);

    // Conditions (1)-(3); role k champions the role before it.
    let check_basic = |r: &Roles| -> Result<(), SolveError> {
        for k in 0..3 {
            let (gk, prev, next) = (r.group(k), (k + 2) % 3, (k + 1) % 3);
            // role k champions role prev (x champions z, y champions x, z champions y).
            ensure(gt(inst, gk, &r.t[prev], &r.t[k]), RULE, || {
                format!("condition: T_prev > T_self for {}", r.agent[k])
            })?;
            ensure(gt(inst, gk, &r.t[prev], &r.t[next]), RULE, || {
                format!("condition: T_prev > T_next for {}", r.agent[k])
            })?;
            ensure(gt(inst, gk, &r.b[k], &gb), RULE, || {
                format!("condition: B_self > g for {}", r.agent[k])
            })?;
            ensure(gt(inst, gk, &gb, &r.b[prev]), RULE, || {
                format!("condition: g > B_prev for {}", r.agent[k])
            })?;
        }
        Ok(())
    };
    check_basic(&roles)?;

    let preds = [0, 1, 2].map(|k| roles.predicate(inst, k));
    let holding = preds.iter().filter(|&&p| p).count();
    let mut w = Witness::new();
    w.insert(
        "cycle".into(),
        json!(roles
            .agent
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()),
    );
    w.insert("predicates".into(), json!(preds));

    // Rotate so that the holding predicates come first.
    match holding {
        1 => {
            while !roles.predicate(inst, 0) {
                roles = roles.rotate();
            }
        }
        2 => {
            while !(roles.predicate(inst, 0) && roles.predicate(inst, 1)) {
                roles = roles.rotate();
            }
        }
        _ => {}
    }
    let [ax, ay, az] = roles.agent;
    let [gx, gy, gz] = [0, 1, 2].map(|k| roles.group(k));
    let [tx, ty, tz] = roles.t.clone();
    let [bx, by, bz] = roles.b.clone();
    let u = |s: &Bundle, t: &Bundle| s.union(t);
    let chain = |grp: GroupId, seq: &[&Bundle]| seq.windows(2).all(|p| gt(inst, grp, p[0], p[1]));

    // Conditions (4) and (5) hold whenever the first (and second) predicate do.
    if holding >= 1 {
        ensure(
            chain(gx, &[&tz, &tx, &ty]) && chain(gx, &[&by, &bx, &gb, &bz]),
            RULE,
            || "condition (4)".into(),
        )?;
    }
    if holding >= 2 {
        ensure(
            chain(gy, &[&tx, &ty, &tz]) && chain(gy, &[&bz, &by, &gb, &bx]),
            RULE,
            || "condition (5)".into(),
        )?;
    }

    let (case, changes): (&str, Vec<(AgentId, Bundle)>) = match holding {
        3 => {
            ensure(
                chain(gz, &[&ty, &tz, &tx]) && chain(gz, &[&bx, &bz, &gb, &by]),
                RULE,
                || "condition (6)".into(),
            )?;
            (
                "case1",
                vec![(ax, u(&tz, &by)), (ay, u(&tx, &bz)), (az, u(&ty, &bx))],
            )
        }
        0 => (
            "case2",
            vec![(ax, u(&tz, &bx)), (ay, u(&tx, &by)), (az, u(&ty, &bz))],
        ),
        1 => (
            "case3",
            vec![(ax, u(&tz, &bx)), (ay, tx.with(g)), (az, u(&ty, &bz))],
        ),
        _ => {
            if gt(inst, gz, &tz, &tx) {
                ensure(
                    chain(gz, &[&ty, &tz, &tx])
                        && chain(gz, &[&bz, &gb, &by])
                        && gt(inst, gz, &bz, &bx),
                    RULE,
                    || "condition (6)".into(),
                )?;
                (
                    "case4.1",
                    vec![(ax, u(&tz, &by)), (ay, u(&tx, &bz)), (az, ty.with(g))],
                )
            } else {
                ensure(
                    chain(gz, &[&ty, &tx, &tz])
                        && chain(gz, &[&bz, &gb, &by])
                        && gt(inst, gz, &bz, &bx),
                    RULE,
                    || "condition (7)".into(),
                )?;
                let s = mes(inst, gy, &u(&tx, &bz), x.bundle(ay))
                    .map_err(|e| violation(RULE, format!("MES for {ay}: {e}")))?;
                w.insert("S".into(), json!(s.indices()));
                if gt(inst, gz, &s, x.bundle(az)) {
                    ("case4.2/a", vec![(ax, u(&tz, &bx)), (az, s)])
                } else {
                    (
                        "case4.2/b",
                        vec![(ax, u(&tz, &by)), (ay, s), (az, ty.with(g))],
                    )
                }
            }
        }
    };
    w.insert(
        "roles".into(),
        json!([ax.to_string(), ay.to_string(), az.to_string()]),
    );
    let y = reassign(inst, x, &changes, RULE)?;
    // Only leading bundles change, each strictly improving.
    for l in leaders {
        ensure(
            inst.value(l.group, y.bundle(l)) >= inst.value(l.group, x.bundle(l)),
            RULE,
            || format!("{l} got worse"),
        )?;
    }
    Ok(Exchange {
        allocation: resolve_all_intra_group(inst, &y)?,
        case: case.into(),
        witness: w,
    })
}
