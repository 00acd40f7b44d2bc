//! Minimally envied subsets, champions and top/bottom decompositions.

use num_bigint::BigUint;
use thiserror::Error;

use crate::allocation::Allocation;
use crate::bundle::{Bundle, GoodId};
use crate::instance::{AgentId, GroupId, Instance};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ChampionError {
    #[error("bundle is not envied")]
    NotEnvied,
    #[error("nobody envies the bundle")]
    NoEnvier,
    #[error("{champion} envies {target}; no decomposition")]
    ChampionEnviesTarget { champion: AgentId, target: AgentId },
    #[error("{champion} does not envy the bundle of {target} plus the good")]
    NotAChampionEdge { champion: AgentId, target: AgentId },
}

/// Smallest subset of `s` worth more than `threshold` to `g`: the top-k goods
/// by value for the least such k.
pub fn mes_above(
    inst: &Instance,
    g: GroupId,
    s: &Bundle,
    threshold: &BigUint,
) -> Result<Bundle, ChampionError> {
    let mut acc = BigUint::default();
    let mut out = Bundle::new();
    for good in inst.sorted_desc(g, s) {
        acc += inst.good_value(g, good);
        out.insert(good);
        if &acc > threshold {
            return Ok(out);
        }
    }
    Err(ChampionError::NotEnvied)
}

/// Minimally envied subset of `s` relative to `r`.
pub fn mes(inst: &Instance, g: GroupId, s: &Bundle, r: &Bundle) -> Result<Bundle, ChampionError> {
    mes_above(inst, g, s, &inst.value(g, r))
}

/// Tie-break order for champions: `first` if given, then leading agents, then
/// group, then rank.
fn champion_order(x: &Allocation, first: Option<AgentId>) -> Vec<AgentId> {
    let agents = x.agents();
    let (mut lead, rest): (Vec<_>, Vec<_>) = agents
        .into_iter()
        .filter(|&a| Some(a) != first)
        .partition(|a| a.is_leading());
    lead.extend(rest);
    first.into_iter().chain(lead).collect()
}

/// Among agents envying `s`, one with the smallest MES.
pub fn champion_of_bundle(
    inst: &Instance,
    x: &Allocation,
    s: &Bundle,
) -> Result<(AgentId, Bundle), ChampionError> {
    champion_in_order(inst, x, s, None)
}

fn champion_in_order(
    inst: &Instance,
    x: &Allocation,
    s: &Bundle,
    first: Option<AgentId>,
) -> Result<(AgentId, Bundle), ChampionError> {
    let mut best: Option<(AgentId, Bundle)> = None;
    for a in champion_order(x, first) {
        if let Ok(m) = mes(inst, a.group, s, x.bundle(a)) {
            if best.as_ref().is_none_or(|(_, b)| m.len() < b.len()) {
                best = Some((a, m));
            }
        }
    }
    best.ok_or(ChampionError::NoEnvier)
}

/// `champion` g-champions `target` with the given MES of `X_target + g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChampionEdge {
    pub champion: AgentId,
    pub target: AgentId,
    pub good: GoodId,
    pub mes: Bundle,
}

/// The g-champion of `target`, ties broken by [`champion_order`].
pub fn g_champion(inst: &Instance, x: &Allocation, g: GoodId, target: AgentId) -> ChampionEdge {
    edge(inst, x, g, target, None)
}

/// Like [`g_champion`] but `target` wins ties for its own bundle. A tied
/// self-champion step is always safe; the case procedures need this reading
/// so that a non-self champion is strictly better than the target.
pub fn g_champion_self_first(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    target: AgentId,
) -> ChampionEdge {
    edge(inst, x, g, target, Some(target))
}

/// `Some` when `target` ties or beats every other envier of its own bundle
/// plus `g`.
pub fn weak_self_champion(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    target: AgentId,
) -> Option<ChampionEdge> {
    let e = g_champion_self_first(inst, x, g, target);
    (e.champion == target).then_some(e)
}

fn edge(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    target: AgentId,
    first: Option<AgentId>,
) -> ChampionEdge {
    let s = x.bundle(target).with(g);
    let (champion, mes) = champion_in_order(inst, x, &s, first)
        .expect("the target itself envies its bundle plus a good");
    ChampionEdge {
        champion,
        target,
        good: g,
        mes,
    }
}

/// Split of `X_j` by `i`'s MES of `X_j + g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub top: Bundle,
    pub bottom: Bundle,
}

pub fn decompose(
    inst: &Instance,
    x: &Allocation,
    g: GoodId,
    i: AgentId,
    j: AgentId,
) -> Result<Decomposition, ChampionError> {
    let xj = x.bundle(j);
    if i != j && inst.value(i.group, xj) > inst.value(i.group, x.bundle(i)) {
        return Err(ChampionError::ChampionEnviesTarget {
            champion: i,
            target: j,
        });
    }
    let m = mes(inst, i.group, &xj.with(g), x.bundle(i)).map_err(|_| {
        ChampionError::NotAChampionEdge {
            champion: i,
            target: j,
        }
    })?;
    // Without envy for X_j every envied subset of X_j + g contains g.
    debug_assert!(m.contains(g));
    let top = m.without(g);
    let bottom = xj.difference(&top);
    Ok(Decomposition { top, bottom })
}

/// The g-champion of every agent's bundle, as `(target, champion)` pairs.
pub fn champion_map(inst: &Instance, x: &Allocation, g: GoodId) -> Vec<(AgentId, AgentId)> {
    x.agents()
        .into_iter()
        .map(|t| (t, g_champion(inst, x, g, t).champion))
        .collect()
}

/// Structural checks on the champion relation: every target has a champion
/// (so following champions backwards always closes a cycle), champions are
/// leading agents, and the leading agents' champion cycle has length at most 3.
pub fn check_champion_structure(inst: &Instance, x: &Allocation, g: GoodId) -> Result<(), String> {
    let map = champion_map(inst, x, g);
    let champ_of = |t: AgentId| map.iter().find(|p| p.0 == t).map(|p| p.1);
    // Walk target -> champion; within n steps a node must repeat.
    let n = map.len();
    for &(start, _) in &map {
        let mut cur = start;
        let mut seen = vec![cur];
        loop {
            let Some(next) = champ_of(cur) else {
                return Err(format!("{cur} has no champion"));
            };
            if let Some(pos) = seen.iter().position(|&s| s == next) {
                let cycle = &seen[pos..];
                if cycle.iter().all(|a| a.is_leading()) && cycle.len() > 3 {
                    return Err(format!("leading champion cycle of length {}", cycle.len()));
                }
                break;
            }
            seen.push(next);
            if seen.len() > n + 1 {
                return Err("champion walk did not close".into());
            }
            cur = next;
        }
    }
    for &(t, c) in &map {
        if !c.is_leading() {
            return Err(format!("non-leading agent {c} champions {t}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(ids: &[usize]) -> Bundle {
        ids.iter().copied().map(GoodId).collect()
    }

    /// Exhaustive minimum-cardinality envied subset, smallest cardinality first.
    fn brute_min_card(inst: &Instance, g: GroupId, s: &Bundle, r: &Bundle) -> Option<usize> {
        let goods: Vec<GoodId> = s.iter().collect();
        let target = inst.value(g, r);
        (0u32..(1 << goods.len()))
            .filter(|mask| {
                let t: Bundle = goods
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &x)| x)
                    .collect();
                inst.value(g, &t) > target
            })
            .map(|mask| mask.count_ones() as usize)
            .min()
    }

    #[test]
    fn mes_examples() {
        // Goods valued 5, 4, 2 and a reference worth 6 (base values).
        let inst = Instance::from_u64([1, 1, 1], [&[5, 4, 2, 6], &[1; 4], &[1; 4]]).unwrap();
        let s = b(&[0, 1, 2]);
        assert_eq!(mes(&inst, GroupId::A, &s, &b(&[3])).unwrap(), b(&[0, 1]));
        assert_eq!(mes(&inst, GroupId::A, &s, &Bundle::new()).unwrap(), b(&[0]));
        assert_eq!(
            mes(&inst, GroupId::A, &b(&[2]), &b(&[3])),
            Err(ChampionError::NotEnvied)
        );
    }

    #[test]
    fn decomposition_examples() {
        // i = A1 holds g4 (worth 6); X_j = B1 holds {g0:5, g1:4, g2:2}; g3 worth 3.
        let inst =
            Instance::from_u64([1, 1, 1], [&[5, 4, 2, 3, 6], &[0, 0, 0, 0, 9], &[1; 5]]).unwrap();
        let x = Allocation::from_groups(
            &inst,
            [vec![b(&[4])], vec![b(&[0, 1, 2])], vec![Bundle::new()]],
        );
        let a1 = GroupId::A.leader();
        let b1 = GroupId::B.leader();
        // A1 envies B1 (11 > 6), so no decomposition.
        assert_eq!(
            decompose(&inst, &x, GoodId(3), a1, b1),
            Err(ChampionError::ChampionEnviesTarget {
                champion: a1,
                target: b1
            })
        );

        // X_j = {4, 2}, own 6, g = 3: MES = {4, 3}, top {4}, bottom {2}.
        let x = Allocation::from_groups(&inst, [vec![b(&[4])], vec![b(&[1, 2])], vec![b(&[0])]]);
        let d = decompose(&inst, &x, GoodId(3), a1, b1).unwrap();
        assert_eq!(d.top, b(&[1]));
        assert_eq!(d.bottom, b(&[2]));
    }

    #[test]
    fn champion_prefers_smaller_mes_then_order() {
        // Target bundle {g0, g1}. B1 holds nothing and needs one good; A1 also
        // needs one good, as does C1: the tie goes to A1.
        let inst =
            Instance::from_u64([1, 1, 1], [&[5, 5, 1, 0], &[5, 5, 0, 1], &[5, 5, 0, 0]]).unwrap();
        let x = Allocation::from_groups(&inst, [vec![b(&[2])], vec![b(&[3])], vec![Bundle::new()]]);
        let (c, m) = champion_of_bundle(&inst, &x, &b(&[0, 1])).unwrap();
        assert_eq!(c, GroupId::A.leader());
        assert_eq!(m.len(), 1);

        // B1 and C1 both need the single good g0; B comes first.
        let x = Allocation::from_groups(&inst, [vec![b(&[0, 1])], vec![b(&[3])], vec![b(&[2])]]);
        let (c, _) = champion_of_bundle(&inst, &x, &b(&[0])).unwrap();
        assert_eq!(c, GroupId::B.leader());
    }

    #[test]
    fn self_champion_edge() {
        let inst = Instance::from_u64([1, 1, 1], [&[1, 1, 0], &[9, 9, 0], &[9, 9, 9]]).unwrap();
        let x = Allocation::from_groups(&inst, [vec![b(&[0])], vec![b(&[1])], vec![Bundle::new()]]);
        let e = g_champion(&inst, &x, GoodId(2), GroupId::C.leader());
        assert_eq!(e.champion, GroupId::C.leader());
        assert!(check_champion_structure(&inst, &x, GoodId(2)).is_ok());
    }

    proptest! {
        #[test]
        fn canonical_mes_is_minimal_and_valid(
            vals in proptest::collection::vec(0u64..50, 12),
            s in proptest::collection::vec(any::<bool>(), 12),
            r in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let inst = Instance::from_u64([1, 1, 1], [&vals, &vals, &vals]).unwrap();
            let s: Bundle = s.iter().enumerate().filter(|p| *p.1).map(|p| GoodId(p.0)).collect();
            let r: Bundle = r.iter().enumerate().filter(|p| *p.1).map(|p| GoodId(p.0)).collect();
            let brute = brute_min_card(&inst, GroupId::A, &s, &r);
            match mes(&inst, GroupId::A, &s, &r) {
                Ok(m) => {
                    prop_assert_eq!(Some(m.len()), brute);
                    prop_assert!(m.is_subset(&s));
                    prop_assert!(inst.value(GroupId::A, &m) > inst.value(GroupId::A, &r));
                    for h in &m {
                        prop_assert!(inst.value(GroupId::A, &m.without(h)) <= inst.value(GroupId::A, &r));
                    }
                }
                Err(_) => prop_assert_eq!(brute, None),
            }
        }
    }
}
