//! Instance model: goods, the three agent groups, additive valuations and the
//! bit perturbation that makes every instance non-degenerate.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{Bundle, GoodId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("malformed instance document: {0}")]
    Malformed(String),
    #[error("negative value {value:?} in group {group}")]
    NegativeValue { group: String, value: String },
    #[error("instance has zero goods")]
    ZeroGoods,
    #[error("instance has zero agents")]
    ZeroAgents,
    #[error("instance has {0} agents; at least 3 are required")]
    TooFewAgents(usize),
    #[error("unknown good {0}")]
    UnknownGood(usize),
}

/// One of the three agent groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupId {
    A,
    B,
    C,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::A, GroupId::B, GroupId::C];

    pub fn index(self) -> usize {
        match self {
            GroupId::A => 0,
            GroupId::B => 1,
            GroupId::C => 2,
        }
    }

    pub fn from_index(i: usize) -> GroupId {
        Self::ALL[i]
    }

    pub fn letter(self) -> char {
        match self {
            GroupId::A => 'A',
            GroupId::B => 'B',
            GroupId::C => 'C',
        }
    }

    /// The leading agent of this group.
    pub fn leader(self) -> AgentId {
        AgentId::new(self, 1)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// An agent slot: group plus 1-based rank. Rank 1 is the leading agent, which
/// holds the group's least valued bundle under the ordering invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub group: GroupId,
    pub rank: usize,
}

impl AgentId {
    pub fn new(group: GroupId, rank: usize) -> Self {
        debug_assert!(rank >= 1);
        Self { group, rank }
    }

    pub fn is_leading(&self) -> bool {
        self.rank == 1
    }

    pub(crate) fn slot(&self) -> usize {
        self.rank - 1
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.group.letter(), self.rank)
    }
}

impl FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let group = match chars.next() {
            Some('A') => GroupId::A,
            Some('B') => GroupId::B,
            Some('C') => GroupId::C,
            _ => return Err(format!("bad agent label {s:?}")),
        };
        let rank: usize = chars
            .as_str()
            .parse()
            .map_err(|_| format!("bad agent label {s:?}"))?;
        if rank == 0 {
            return Err(format!("bad agent label {s:?}"));
        }
        Ok(AgentId::new(group, rank))
    }
}

impl Serialize for AgentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which values a comparison uses. The solver works on perturbed values only;
/// the verifier also reports verdicts under the original values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Base,
    Perturbed,
}

/// Additive valuation of one group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Valuation {
    base: Vec<BigUint>,
    perturbed: Vec<BigUint>,
}

impl Valuation {
    /// `perturbed[i] = base[i] * 2^m + 2^i`. The tie-break total is below
    /// `2^m`, so strict base order is preserved and distinct bundles never tie.
    pub fn perturb(base: Vec<BigUint>) -> Self {
        let m = base.len();
        let perturbed = base
            .iter()
            .enumerate()
            .map(|(i, v)| (v << m) + (BigUint::one() << i))
            .collect();
        Self { base, perturbed }
    }

    pub fn base(&self) -> &[BigUint] {
        &self.base
    }

    pub fn perturbed(&self) -> &[BigUint] {
        &self.perturbed
    }

    fn values(&self, scale: Scale) -> &[BigUint] {
        match scale {
            Scale::Base => &self.base,
            Scale::Perturbed => &self.perturbed,
        }
    }
}

/// A three-group instance. Groups are always nonempty; inputs with fewer
/// types are reduced by splitting a group into two labels with the same
/// valuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    m: usize,
    sizes: [usize; 3],
    valuations: [Valuation; 3],
}

impl Instance {
    /// Builds an instance from integer base values, one vector per group.
    pub fn new(sizes: [usize; 3], base: [Vec<BigUint>; 3]) -> Result<Self, InstanceError> {
        let m = base[0].len();
        if m == 0 {
            return Err(InstanceError::ZeroGoods);
        }
        if base.iter().any(|v| v.len() != m) {
            return Err(InstanceError::Malformed(
                "value vectors differ in length".into(),
            ));
        }
        let n: usize = sizes.iter().sum();
        if n == 0 {
            return Err(InstanceError::ZeroAgents);
        }
        if n < 3 {
            return Err(InstanceError::TooFewAgents(n));
        }
        if sizes.contains(&0) {
            return Err(InstanceError::Malformed(
                "every group needs at least one agent".into(),
            ));
        }
        let [va, vb, vc] = base;
        Ok(Self {
            m,
            sizes,
            valuations: [
                Valuation::perturb(va),
                Valuation::perturb(vb),
                Valuation::perturb(vc),
            ],
        })
    }

    /// Convenience constructor from machine integers.
    pub fn from_u64(sizes: [usize; 3], base: [&[u64]; 3]) -> Result<Self, InstanceError> {
        let conv = |v: &[u64]| v.iter().map(|&x| BigUint::from(x)).collect::<Vec<_>>();
        Self::new(sizes, [conv(base[0]), conv(base[1]), conv(base[2])])
    }

    pub fn goods(&self) -> usize {
        self.m
    }

    pub fn all_goods(&self) -> Bundle {
        Bundle::full(self.m)
    }

    pub fn size(&self, g: GroupId) -> usize {
        self.sizes[g.index()]
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn agent_count(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn valuation(&self, g: GroupId) -> &Valuation {
        &self.valuations[g.index()]
    }

    /// All agents in canonical order: group A, B, C, then rank.
    pub fn agents(&self) -> Vec<AgentId> {
        GroupId::ALL
            .iter()
            .flat_map(|&g| (1..=self.size(g)).map(move |r| AgentId::new(g, r)))
            .collect()
    }

    pub fn agents_in(&self, g: GroupId) -> impl Iterator<Item = AgentId> {
        (1..=self.size(g)).map(move |r| AgentId::new(g, r))
    }

    pub fn good_value(&self, g: GroupId, good: GoodId) -> &BigUint {
        &self.valuations[g.index()].perturbed[good.0]
    }

    /// Perturbed value of a bundle for a group.
    pub fn value(&self, g: GroupId, bundle: &Bundle) -> BigUint {
        self.value_with(Scale::Perturbed, g, bundle)
    }

    pub fn value_with(&self, scale: Scale, g: GroupId, bundle: &Bundle) -> BigUint {
        let vals = self.valuations[g.index()].values(scale);
        let mut total = BigUint::zero();
        for good in bundle {
            total += &vals[good.0];
        }
        total
    }

    /// Checked variant of [`Instance::value`] for bundles of unknown origin.
    pub fn try_value(&self, g: GroupId, bundle: &Bundle) -> Result<BigUint, InstanceError> {
        if let Some(bad) = bundle.iter().find(|good| good.0 >= self.m) {
            return Err(InstanceError::UnknownGood(bad.0));
        }
        Ok(self.value(g, bundle))
    }

    pub fn compare(&self, g: GroupId, s: &Bundle, t: &Bundle) -> Ordering {
        if s == t {
            return Ordering::Equal;
        }
        self.value(g, s).cmp(&self.value(g, t))
    }

    /// Goods of `bundle` sorted by decreasing perturbed value for `g`.
    pub fn sorted_desc(&self, g: GroupId, bundle: &Bundle) -> Vec<GoodId> {
        let vals = &self.valuations[g.index()].perturbed;
        let mut goods: Vec<GoodId> = bundle.iter().collect();
        goods.sort_by(|x, y| vals[y.0].cmp(&vals[x.0]));
        goods
    }

    /// Least valued good of a nonempty bundle.
    pub fn cheapest(&self, g: GroupId, bundle: &Bundle) -> Option<GoodId> {
        let vals = &self.valuations[g.index()].perturbed;
        bundle.iter().min_by(|x, y| vals[x.0].cmp(&vals[y.0]))
    }
}

// ---------------------------------------------------------------------------
// Instance document

/// A value as written in an instance document: an integer, or a string
/// holding an integer or a fraction `a/b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueDoc {
    Int(u64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDoc {
    pub name: String,
    pub size: usize,
    pub values: Vec<ValueDoc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub goods: usize,
    pub groups: Vec<GroupDoc>,
}

fn parse_value(group: &str, v: &ValueDoc) -> Result<(BigUint, BigUint), InstanceError> {
    let text = match v {
        ValueDoc::Int(x) => return Ok((BigUint::from(*x), BigUint::one())),
        ValueDoc::Text(s) => s.trim(),
    };
    if text.starts_with('-') {
        return Err(InstanceError::NegativeValue {
            group: group.to_string(),
            value: text.to_string(),
        });
    }
    let bad = || InstanceError::Malformed(format!("bad value {text:?} in group {group}"));
    let (num, den) = match text.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (text, "1"),
    };
    let num: BigUint = num.parse().map_err(|_| bad())?;
    let den: BigUint = den.parse().map_err(|_| bad())?;
    if den.is_zero() {
        return Err(bad());
    }
    let gcd = num.gcd(&den);
    if gcd.is_zero() {
        return Ok((num, BigUint::one()));
    }
    Ok((&num / &gcd, &den / &gcd))
}

/// Parses an instance document, normalizing rationals by the least common
/// multiple of all denominators and materializing three nonempty groups.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let doc: InstanceDoc =
        serde_json::from_str(text).map_err(|e| InstanceError::Malformed(e.to_string()))?;
    instance_from_doc(&doc)
}

pub fn instance_from_doc(doc: &InstanceDoc) -> Result<Instance, InstanceError> {
    if doc.goods == 0 {
        return Err(InstanceError::ZeroGoods);
    }
    if doc.groups.is_empty() || doc.groups.len() > 3 {
        return Err(InstanceError::Malformed(format!(
            "expected 1 to 3 groups, found {}",
            doc.groups.len()
        )));
    }
    let mut fractions = Vec::with_capacity(doc.groups.len());
    for grp in &doc.groups {
        if grp.values.len() != doc.goods {
            return Err(InstanceError::Malformed(format!(
                "group {} lists {} values for {} goods",
                grp.name,
                grp.values.len(),
                doc.goods
            )));
        }
        let vals = grp
            .values
            .iter()
            .map(|v| parse_value(&grp.name, v))
            .collect::<Result<Vec<_>, _>>()?;
        fractions.push(vals);
    }
    let lcm = fractions
        .iter()
        .flatten()
        .fold(BigUint::one(), |acc, (_, den)| acc.lcm(den));
    let scaled: Vec<Vec<BigUint>> = fractions
        .into_iter()
        .map(|vals| {
            vals.into_iter()
                .map(|(num, den)| num * (&lcm / den))
                .collect()
        })
        .collect();

    // Drop empty groups, then split the largest group until three labels exist.
    let mut groups: Vec<(usize, Vec<BigUint>)> = doc
        .groups
        .iter()
        .zip(scaled)
        .filter(|(g, _)| g.size > 0)
        .map(|(g, v)| (g.size, v))
        .collect();
    let n: usize = groups.iter().map(|(s, _)| s).sum();
    if n == 0 {
        return Err(InstanceError::ZeroAgents);
    }
    if n < 3 {
        return Err(InstanceError::TooFewAgents(n));
    }
    while groups.len() < 3 {
        let (idx, _) = groups
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.cmp(&y.1 .0).then(y.0.cmp(&x.0)))
            .expect("at least one group");
        groups[idx].0 -= 1;
        let values = groups[idx].1.clone();
        groups.push((1, values));
    }
    let sizes = [groups[0].0, groups[1].0, groups[2].0];
    let mut it = groups.into_iter().map(|(_, v)| v);
    let base = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    Instance::new(sizes, base)
}

/// Renders an instance (base values, already integral) as a document.
pub fn instance_to_doc(inst: &Instance) -> InstanceDoc {
    InstanceDoc {
        goods: inst.goods(),
        groups: GroupId::ALL
            .iter()
            .map(|&g| GroupDoc {
                name: g.letter().to_string(),
                size: inst.size(g),
                values: inst
                    .valuation(g)
                    .base()
                    .iter()
                    .map(|v| match u64::try_from(v) {
                        Ok(x) => ValueDoc::Int(x),
                        Err(_) => ValueDoc::Text(v.to_string()),
                    })
                    .collect(),
            })
            .collect(),
    }
}
