//! Allocation documents and JSON-lines traces.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::allocation::{Allocation, TraceEvent};
use crate::bundle::{Bundle, GoodId};
use crate::error::Error;
use crate::instance::{AgentId, GroupId, Instance};

/// Agent bundles in document order. Serialized as a JSON object keyed by
/// agent label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bundles(pub Vec<(AgentId, Vec<usize>)>);

impl Serialize for Bundles {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (a, goods) in &self.0 {
            map.serialize_entry(a, goods)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Bundles {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Bundles;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from agent labels to good lists")
            }

            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> Result<Bundles, M::Error> {
                let mut out = Vec::new();
                while let Some((a, goods)) = map.next_entry::<AgentId, Vec<usize>>()? {
                    out.push((a, goods));
                }
                Ok(Bundles(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationDoc {
    pub bundles: Bundles,
    pub unallocated: Vec<usize>,
    /// Informational; ignored when reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
}

pub fn allocation_to_doc(inst: &Instance, x: &Allocation) -> AllocationDoc {
    AllocationDoc {
        bundles: Bundles(
            x.agents()
                .into_iter()
                .map(|a| (a, x.bundle(a).indices()))
                .collect(),
        ),
        unallocated: x.pool().indices(),
        phi: Some(x.phi(inst).to_string()),
    }
}

/// Builds an allocation exactly as written. Every agent of the instance must
/// appear once; overlapping or missing goods are kept for the verifier to
/// flag.
pub fn allocation_from_doc(inst: &Instance, doc: &AllocationDoc) -> Result<Allocation, Error> {
    let mut groups: [Vec<Option<Bundle>>; 3] = GroupId::ALL.map(|g| vec![None; inst.size(g)]);
    for (a, goods) in &doc.bundles.0 {
        let slot = groups[a.group.index()]
            .get_mut(a.rank - 1)
            .ok_or_else(|| Error::Allocation(format!("unknown agent {a}")))?;
        if slot.is_some() {
            return Err(Error::Allocation(format!("agent {a} listed twice")));
        }
        let bundle: Bundle = goods.iter().copied().map(GoodId).collect();
        if bundle.len() != goods.len() {
            return Err(Error::Allocation(format!("agent {a} lists a good twice")));
        }
        *slot = Some(bundle);
    }
    let mut out: [Vec<Bundle>; 3] = Default::default();
    for g in GroupId::ALL {
        for (k, b) in std::mem::take(&mut groups[g.index()])
            .into_iter()
            .enumerate()
        {
            let b = b.ok_or_else(|| {
                Error::Allocation(format!("agent {} missing", AgentId::new(g, k + 1)))
            })?;
            out[g.index()].push(b);
        }
    }
    let pool: Bundle = doc.unallocated.iter().copied().map(GoodId).collect();
    if pool.len() != doc.unallocated.len() {
        return Err(Error::Allocation("unallocated lists a good twice".into()));
    }
    Ok(Allocation::from_parts(out, pool))
}

pub fn parse_allocation(inst: &Instance, text: &str) -> Result<Allocation, Error> {
    let doc: AllocationDoc =
        serde_json::from_str(text).map_err(|e| Error::Allocation(e.to_string()))?;
    allocation_from_doc(inst, &doc)
}

pub fn print_allocation(inst: &Instance, x: &Allocation) -> String {
    let mut s = serde_json::to_string_pretty(&allocation_to_doc(inst, x)).expect("serializable");
    s.push('\n');
    s
}

pub fn print_trace(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for ev in trace {
        s.push_str(&serde_json::to_string(ev).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
