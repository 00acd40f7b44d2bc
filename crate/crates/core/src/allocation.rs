//! Allocations, the ordering invariant, the potential and the progress ledger.

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, GoodId};
use crate::instance::{AgentId, GroupId, Instance};

/// Per-agent bundles plus the unallocated pool. Bundles of a group are stored
/// by rank, so `groups[g][0]` belongs to the group's leading agent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    groups: [Vec<Bundle>; 3],
    pool: Bundle,
}

impl Allocation {
    /// Every agent empty-handed, every good in the pool.
    pub fn empty(inst: &Instance) -> Self {
        Self {
            groups: GroupId::ALL.map(|g| vec![Bundle::new(); inst.size(g)]),
            pool: inst.all_goods(),
        }
    }

    /// Builds an allocation from explicit bundles; the pool is whatever is
    /// left over. Callers check [`Allocation::partition_ok`] when the input is
    /// untrusted.
    pub fn from_groups(inst: &Instance, groups: [Vec<Bundle>; 3]) -> Self {
        let mut x = Self {
            groups,
            pool: Bundle::new(),
        };
        x.recompute_pool(inst);
        x
    }

    /// Bundles and pool exactly as given, so a verifier can see overlaps and
    /// gaps instead of having them repaired.
    pub fn from_parts(groups: [Vec<Bundle>; 3], pool: Bundle) -> Self {
        Self { groups, pool }
    }

    pub fn bundle(&self, a: AgentId) -> &Bundle {
        &self.groups[a.group.index()][a.slot()]
    }

    pub(crate) fn set_bundle(&mut self, a: AgentId, b: Bundle) {
        self.groups[a.group.index()][a.slot()] = b;
    }

    pub fn group(&self, g: GroupId) -> &[Bundle] {
        &self.groups[g.index()]
    }

    pub fn pool(&self) -> &Bundle {
        &self.pool
    }

    pub(crate) fn recompute_pool(&mut self, inst: &Instance) {
        let mut pool = inst.all_goods();
        for b in self.groups.iter().flatten() {
            for g in b {
                pool.remove(g);
            }
        }
        self.pool = pool;
    }

    pub fn agents(&self) -> Vec<AgentId> {
        GroupId::ALL
            .iter()
            .flat_map(|&g| (1..=self.groups[g.index()].len()).map(move |r| AgentId::new(g, r)))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.pool.is_empty()
    }

    /// Lowest-index unallocated good.
    pub fn next_pool_good(&self) -> Option<GoodId> {
        self.pool.first()
    }

    /// Bundles are pairwise disjoint, in range, and together with the pool
    /// cover every good exactly once.
    pub fn partition_ok(&self, inst: &Instance) -> bool {
        let m = inst.goods();
        let mut seen = vec![false; m];
        for b in self
            .groups
            .iter()
            .flatten()
            .chain(std::iter::once(&self.pool))
        {
            for g in b {
                if g.0 >= m || seen[g.0] {
                    return false;
                }
                seen[g.0] = true;
            }
        }
        seen.into_iter().all(|s| s)
            && GroupId::ALL
                .iter()
                .all(|&g| self.groups[g.index()].len() == inst.size(g))
    }

    /// Within each group, own-type values are nondecreasing in rank.
    pub fn ordering_ok(&self, inst: &Instance) -> bool {
        GroupId::ALL.iter().all(|&g| {
            let vals: Vec<BigUint> = self.groups[g.index()]
                .iter()
                .map(|b| inst.value(g, b))
                .collect();
            vals.windows(2).all(|w| w[0] <= w[1])
        })
    }

    /// Permutes bundles within each group so that values are nondecreasing in
    /// rank. Stable, so equal (empty) bundles keep their rank order.
    pub fn restore_ordering(&mut self, inst: &Instance) {
        for g in GroupId::ALL {
            let group = std::mem::take(&mut self.groups[g.index()]);
            let mut keyed: Vec<(BigUint, Bundle)> =
                group.into_iter().map(|b| (inst.value(g, &b), b)).collect();
            keyed.sort_by(|x, y| x.0.cmp(&y.0));
            self.groups[g.index()] = keyed.into_iter().map(|(_, b)| b).collect();
        }
    }

    pub fn sorted(mut self, inst: &Instance) -> Self {
        self.restore_ordering(inst);
        self
    }

    /// Minimum value of an A bundle under A's valuation.
    pub fn phi(&self, inst: &Instance) -> BigUint {
        self.groups[0]
            .iter()
            .map(|b| inst.value(GroupId::A, b))
            .min()
            .unwrap_or_else(BigUint::zero)
    }

    /// Each agent's value of its own bundle, in canonical agent order.
    pub fn utilities(&self, inst: &Instance) -> Vec<BigUint> {
        self.agents()
            .into_iter()
            .map(|a| inst.value(a.group, self.bundle(a)))
            .collect()
    }

    pub fn measure(&self, inst: &Instance) -> ProgressMeasure {
        ProgressMeasure {
            phi: self.phi(inst),
            utilities: self.utilities(inst),
        }
    }

    /// Hands the lowest-index goods, one each, to empty-handed agents in
    /// canonical order, then sorts. The result is EFX: nobody strongly envies
    /// a singleton.
    pub fn bootstrap(inst: &Instance) -> Self {
        let mut x = Self::empty(inst);
        for a in inst.agents() {
            let Some(g) = x.pool.first() else { break };
            x.pool.remove(g);
            x.set_bundle(a, Bundle::singleton(g));
        }
        x.sorted(inst)
    }
}

/// Snapshot of the two progress measures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgressMeasure {
    pub phi: BigUint,
    pub utilities: Vec<BigUint>,
}

/// `next` Pareto dominates `prev`: every entry weakly larger, one strictly.
pub fn utilities_dominate(next: &[BigUint], prev: &[BigUint]) -> bool {
    next.len() == prev.len()
        && next.iter().zip(prev).all(|(n, p)| n >= p)
        && next.iter().zip(prev).any(|(n, p)| n > p)
}

pub fn pareto_dominates(inst: &Instance, y: &Allocation, x: &Allocation) -> bool {
    utilities_dominate(&y.utilities(inst), &x.utilities(inst))
}

/// What a checkpoint promises about progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Claim {
    /// Utility vector weakly improves with one strict improvement.
    Pareto,
    /// The potential strictly increases.
    Phi,
    /// Only promises the potential does not drop; used for hand-offs whose
    /// gain is realized by the steps that follow.
    Neutral,
}

/// Checks a declared claim against two measures.
pub fn assert_progress(
    prev: &ProgressMeasure,
    next: &ProgressMeasure,
    claim: Claim,
) -> Result<(), String> {
    if next.phi < prev.phi {
        return Err(format!(
            "potential dropped from {} to {}",
            prev.phi, next.phi
        ));
    }
    match claim {
        Claim::Phi if next.phi <= prev.phi => {
            Err(format!("potential did not increase (stayed {})", prev.phi))
        }
        Claim::Pareto if !utilities_dominate(&next.utilities, &prev.utilities) => {
            Err("utilities do not Pareto dominate".to_string())
        }
        _ => Ok(()),
    }
}

pub(crate) mod decimal {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use num_bigint::BigUint;
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&x.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| s.parse().map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// One rule firing. Competition rounds are recorded with rule
/// `competition/<case>` at one level deeper than the step that runs them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub rule: String,
    pub depth: u32,
    #[serde(with = "decimal")]
    pub phi_before: BigUint,
    #[serde(with = "decimal")]
    pub phi_after: BigUint,
    pub claim: Claim,
    #[serde(with = "decimal::vec")]
    pub utilities_before: Vec<BigUint>,
    #[serde(with = "decimal::vec")]
    pub utilities_after: Vec<BigUint>,
    pub pool_before: usize,
    pub pool_after: usize,
    pub witness: serde_json::Map<String, serde_json::Value>,
}

impl TraceEvent {
    /// Re-checks the event's declared claim from its own recorded measures.
    pub fn check(&self) -> Result<(), String> {
        assert_progress(
            &ProgressMeasure {
                phi: self.phi_before.clone(),
                utilities: self.utilities_before.clone(),
            },
            &ProgressMeasure {
                phi: self.phi_after.clone(),
                utilities: self.utilities_after.clone(),
            },
            self.claim,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(ids: &[usize]) -> Bundle {
        ids.iter().copied().map(GoodId).collect()
    }

    fn big(v: &[u64]) -> Vec<BigUint> {
        v.iter().map(|&x| BigUint::from(x)).collect()
    }

    #[test]
    fn ordering_swaps_ranks() {
        let inst = Instance::from_u64([2, 1, 1], [&[9, 4, 1], &[1, 1, 1], &[1, 1, 1]]).unwrap();
        let mut x = Allocation::from_groups(
            &inst,
            [vec![b(&[0]), b(&[1])], vec![b(&[2])], vec![Bundle::new()]],
        );
        assert!(!x.ordering_ok(&inst));
        x.restore_ordering(&inst);
        assert_eq!(x.group(GroupId::A), &[b(&[1]), b(&[0])]);
        let again = x.clone().sorted(&inst);
        assert_eq!(again, x);
        assert_eq!(x.phi(&inst), BigUint::from(4u32 * 8 + 2));
    }

    #[test]
    fn empty_allocation_measures() {
        let inst = Instance::from_u64([1, 1, 1], [&[1, 2], &[1, 2], &[1, 2]]).unwrap();
        let x = Allocation::empty(&inst);
        assert!(x.phi(&inst).is_zero());
        assert!(x.partition_ok(&inst));
        assert!(!x.is_complete());
        assert_eq!(x.next_pool_good(), Some(GoodId(0)));
    }

    #[test]
    fn bootstrap_shapes() {
        let inst = Instance::from_u64([1, 1, 1], [&[1, 1], &[1, 1], &[1, 1]]).unwrap();
        let x = Allocation::bootstrap(&inst);
        assert!(x.is_complete());
        assert!(x.bundle(AgentId::new(GroupId::C, 1)).is_empty());

        let inst = Instance::from_u64([2, 1, 1], [&[1; 6], &[1; 6], &[1; 6]]).unwrap();
        let x = Allocation::bootstrap(&inst);
        assert_eq!(x.pool(), &b(&[4, 5]));
        assert!(x.agents().iter().all(|&a| x.bundle(a).len() == 1));
        assert!(x.partition_ok(&inst));
    }

    #[test]
    fn pareto_examples() {
        assert!(!utilities_dominate(&big(&[1, 2]), &big(&[1, 2])));
        assert!(utilities_dominate(&big(&[1, 3]), &big(&[1, 2])));
        assert!(!utilities_dominate(&big(&[2, 1]), &big(&[1, 2])));
    }

    #[test]
    fn progress_claims() {
        let m = |phi: u64, u: &[u64]| ProgressMeasure {
            phi: BigUint::from(phi),
            utilities: big(u),
        };
        assert!(assert_progress(&m(4, &[4, 5]), &m(7, &[7, 5]), Claim::Phi).is_ok());
        assert!(assert_progress(&m(4, &[4, 5]), &m(4, &[4, 6]), Claim::Pareto).is_ok());
        assert!(assert_progress(&m(4, &[4, 5]), &m(3, &[3, 9]), Claim::Pareto).is_err());
        assert!(assert_progress(&m(4, &[4, 5]), &m(3, &[3, 9]), Claim::Neutral).is_err());
        assert!(assert_progress(&m(4, &[4, 5]), &m(4, &[4, 5]), Claim::Phi).is_err());
        assert!(assert_progress(&m(4, &[4, 5]), &m(4, &[4, 2]), Claim::Neutral).is_ok());
    }

    #[test]
    fn trace_event_round_trips() {
        let ev = TraceEvent {
            step: 3,
            rule: "envy_cycle".into(),
            depth: 0,
            phi_before: BigUint::from(5u32),
            phi_after: BigUint::from(123456789012345678901234567890u128),
            claim: Claim::Phi,
            utilities_before: big(&[5]),
            utilities_after: big(&[6]),
            pool_before: 2,
            pool_after: 1,
            witness: serde_json::Map::new(),
        };
        let text = serde_json::to_string(&ev).unwrap();
        assert!(text.contains("\"123456789012345678901234567890\""));
        let back: TraceEvent = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ev);
        assert!(back.check().is_ok());
    }

    proptest! {
        #[test]
        fn resorting_is_idempotent_and_monotone(
            vals in proptest::collection::vec(0u64..20, 6),
            owner in proptest::collection::vec(0usize..4, 6),
        ) {
            let inst = Instance::from_u64([3, 1, 1], [&vals, &vals, &vals]).unwrap();
            let mut a = vec![Bundle::new(); 3];
            for (good, &o) in owner.iter().enumerate() {
                if o < 3 {
                    a[o].insert(GoodId(good));
                }
            }
            let x = Allocation::from_groups(&inst, [a, vec![Bundle::new()], vec![Bundle::new()]]);
            let y = x.clone().sorted(&inst);
            prop_assert!(y.ordering_ok(&inst));
            prop_assert_eq!(y.clone().sorted(&inst), y.clone());
            let mut before: Vec<_> = x.group(GroupId::A).to_vec();
            let mut after: Vec<_> = y.group(GroupId::A).to_vec();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
            prop_assert_eq!(x.phi(&inst), y.phi(&inst));
        }
    }
}
