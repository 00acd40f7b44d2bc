//! Brute-force ground truth: exhaustive EFX enumeration, exhaustive minimum
//! envied subsets and an allocation verifier. Nothing here calls the solver's
//! envy or MES code.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::Serialize;
use thiserror::Error;

use crate::allocation::Allocation;
use crate::bundle::{Bundle, GoodId};
use crate::instance::{AgentId, GroupId, Instance, Scale};

/// Largest assignment space the enumerator accepts.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;
/// Largest set `brute_mes` accepts.
pub const BRUTE_MES_LIMIT: usize = 20;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("{assignments} assignments exceed the enumeration limit")]
    TooLarge { assignments: String },
    #[error("a base value does not fit in 64 bits")]
    ValueTooLarge,
    #[error("set of {0} goods is too large for exhaustive search")]
    SetTooLarge(usize),
    #[error("no subset is envied")]
    NotEnvied,
}

fn value(inst: &Instance, scale: Scale, g: GroupId, b: &Bundle) -> BigUint {
    inst.value_with(scale, g, b)
}

/// Strong envy found by removing each good in turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RemovalWitness {
    pub envier: AgentId,
    pub target: AgentId,
    pub removed: GoodId,
}

/// All strong envies, checked by literally removing every good of the envied
/// bundle.
pub fn strong_envies_by_removal(
    inst: &Instance,
    x: &Allocation,
    scale: Scale,
) -> Vec<RemovalWitness> {
    let agents = x.agents();
    let mut out = Vec::new();
    for &i in &agents {
        let own = value(inst, scale, i.group, x.bundle(i));
        for &j in &agents {
            if i == j {
                continue;
            }
            for h in x.bundle(j) {
                if value(inst, scale, i.group, &x.bundle(j).without(h)) > own {
                    out.push(RemovalWitness {
                        envier: i,
                        target: j,
                        removed: h,
                    });
                    break;
                }
            }
        }
    }
    out
}

pub fn efx_by_removal(inst: &Instance, x: &Allocation, scale: Scale) -> bool {
    strong_envies_by_removal(inst, x, scale).is_empty()
}

/// Base values as machine integers for the enumerator.
struct Table {
    /// `vals[group][good]`
    vals: [Vec<u64>; 3],
    owner_group: Vec<GroupId>,
}

impl Table {
    fn new(inst: &Instance, agents: &[AgentId]) -> Result<Self, OracleError> {
        let conv = |g: GroupId| -> Result<Vec<u64>, OracleError> {
            inst.valuation(g)
                .base()
                .iter()
                .map(|v| v.to_u64().ok_or(OracleError::ValueTooLarge))
                .collect()
        };
        Ok(Self {
            vals: [conv(GroupId::A)?, conv(GroupId::B)?, conv(GroupId::C)?],
            owner_group: agents.iter().map(|a| a.group).collect(),
        })
    }

    /// EFX under base values for an assignment `owner[good]` (`n` = pool).
    fn efx(&self, owner: &[usize], n: usize) -> bool {
        // sums[i][j]: agent i's value of agent j's bundle.
        let mut sums = vec![vec![0u128; n]; n];
        for (good, &o) in owner.iter().enumerate() {
            if o == n {
                continue;
            }
            for (i, row) in sums.iter_mut().enumerate() {
                row[o] += self.vals[self.owner_group[i].index()][good] as u128;
            }
        }
        for (i, row) in sums.iter().enumerate() {
            let own = row[i];
            let gi = self.owner_group[i].index();
            for (good, &o) in owner.iter().enumerate() {
                if o == n || o == i {
                    continue;
                }
                if row[o] - self.vals[gi][good] as u128 > own {
                    return false;
                }
            }
        }
        true
    }
}

/// Result of an enumeration: how many EFX allocations exist and the first few.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub count: u64,
    pub allocations: Vec<Allocation>,
}

/// Enumerates every assignment of goods to agents (and to the pool unless
/// `complete_only`), in increasing assignment index with good 0 the least
/// significant digit, keeping those that are EFX under base values.
pub fn enumerate_efx(
    inst: &Instance,
    complete_only: bool,
    limit: usize,
) -> Result<Enumeration, OracleError> {
    let agents = inst.agents();
    let n = agents.len();
    let radix = if complete_only { n } else { n + 1 };
    let m = inst.goods();
    let total = BigUint::from(radix).pow(m as u32);
    if total > BigUint::from(ENUMERATION_LIMIT) {
        return Err(OracleError::TooLarge {
            assignments: total.to_string(),
        });
    }
    let table = Table::new(inst, &agents)?;
    let total = total.to_u64().expect("bounded above");
    let mut owner = vec![0usize; m];
    let mut out = Enumeration {
        count: 0,
        allocations: Vec::new(),
    };
    for index in 0..total {
        let mut rest = index;
        for o in owner.iter_mut() {
            *o = (rest % radix as u64) as usize;
            rest /= radix as u64;
        }
        if table.efx(&owner, n) {
            out.count += 1;
            if out.allocations.len() < limit {
                out.allocations.push(to_allocation(inst, &agents, &owner));
            }
        }
    }
    Ok(out)
}

fn to_allocation(inst: &Instance, agents: &[AgentId], owner: &[usize]) -> Allocation {
    let mut groups: [Vec<Bundle>; 3] = GroupId::ALL.map(|g| vec![Bundle::new(); inst.size(g)]);
    for (good, &o) in owner.iter().enumerate() {
        if let Some(a) = agents.get(o) {
            groups[a.group.index()][a.rank - 1].insert(GoodId(good));
        }
    }
    Allocation::from_groups(inst, groups)
}

/// Minimum-cardinality subset of `s` that group `g` values above `r`, found
/// by scanning subsets by size and, within a size, lexicographically.
pub fn brute_mes(
    inst: &Instance,
    g: GroupId,
    s: &Bundle,
    r: &Bundle,
) -> Result<Bundle, OracleError> {
    let goods: Vec<GoodId> = s.iter().collect();
    if goods.len() > BRUTE_MES_LIMIT {
        return Err(OracleError::SetTooLarge(goods.len()));
    }
    let threshold = inst.value(g, r);
    for k in 1..=goods.len() {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let t: Bundle = idx.iter().map(|&i| goods[i]).collect();
            if inst.value(g, &t) > threshold
                && t.iter().all(|h| inst.value(g, &t.without(h)) <= threshold)
            {
                return Ok(t);
            }
            // Next combination in lexicographic order.
            let Some(pos) = (0..k).rev().find(|&p| idx[p] < goods.len() - k + p) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..k {
                idx[p] = idx[p - 1] + 1;
            }
        }
    }
    Err(OracleError::NotEnvied)
}

/// Verdicts about an allocation, computed independently of the solver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub partition_ok: bool,
    pub complete: bool,
    pub efx_base: bool,
    pub efx_perturbed: bool,
    pub ordering_ok: bool,
    pub phi: String,
    pub violations: Vec<RemovalWitness>,
}

impl Report {
    /// What `verify` accepts: a partition that is EFX under base values.
    pub fn accepted(&self) -> bool {
        self.partition_ok && self.efx_base
    }
}

pub fn verify_allocation(inst: &Instance, x: &Allocation) -> Report {
    let partition_ok = x.partition_ok(inst);
    let in_range = x
        .agents()
        .iter()
        .all(|&a| x.bundle(a).iter().all(|g| g.0 < inst.goods()));
    if !in_range || x.agents().len() != inst.agent_count() {
        return Report {
            partition_ok: false,
            complete: false,
            efx_base: false,
            efx_perturbed: false,
            ordering_ok: false,
            phi: "0".into(),
            violations: Vec::new(),
        };
    }
    let violations = strong_envies_by_removal(inst, x, Scale::Base);
    Report {
        partition_ok,
        complete: partition_ok
            && x.agents().iter().map(|&a| x.bundle(a).len()).sum::<usize>() == inst.goods(),
        efx_base: violations.is_empty(),
        efx_perturbed: efx_by_removal(inst, x, Scale::Perturbed),
        ordering_ok: x.ordering_ok(inst),
        phi: x.phi(inst).to_string(),
        violations,
    }
}
