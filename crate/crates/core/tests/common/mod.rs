#![allow(dead_code)]

use std::path::PathBuf;

use efx_core::allocation::Allocation;
use efx_core::bundle::GoodId;
use efx_core::cli::generate;
use efx_core::instance::{instance_from_doc, InstanceDoc};
use efx_core::io::{allocation_from_doc, AllocationDoc};
use efx_core::oracle::brute_mes;
use efx_core::{AgentId, Instance};
use serde::{Deserialize, Serialize};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Seeded instance with group sizes in `1..=max_size` and `1..=max_goods`
/// goods.
pub fn seeded(seed: u64, max_size: u64, max_goods: u64, max_value: u64) -> InstanceDoc {
    let mut s = seed;
    let mut next = |k: u64| {
        let v = s % k;
        s /= k;
        v
    };
    let sizes = [
        1 + next(max_size) as usize,
        1 + next(max_size) as usize,
        1 + next(max_size) as usize,
    ];
    let m = 1 + next(max_goods) as usize;
    generate(sizes, m, max_value, seed)
}

pub fn instance(doc: &InstanceDoc) -> Instance {
    instance_from_doc(doc).expect("valid instance document")
}

/// Champion of `target`'s bundle plus `g` found with exhaustive subset
/// search. Ties go to leading agents first, then group and rank.
pub fn brute_champion(inst: &Instance, x: &Allocation, g: GoodId, target: AgentId) -> AgentId {
    let s = x.bundle(target).with(g);
    let mut order = x.agents();
    order.sort_by_key(|a| (!a.is_leading(), a.group, a.rank));
    let mut best: Option<(AgentId, usize)> = None;
    for a in order {
        if let Ok(m) = brute_mes(inst, a.group, &s, x.bundle(a)) {
            if best.is_none_or(|(_, k)| m.len() < k) {
                best = Some((a, m.len()));
            }
        }
    }
    best.expect("the target envies its own bundle plus a good")
        .0
}

/// A dispatch state recorded from a solver run, with the rule that fired.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateCase {
    pub rule: String,
    /// Recorded while a hand-off awaited its follow-up.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub follow_up: bool,
    pub instance: InstanceDoc,
    pub allocation: AllocationDoc,
}

impl StateCase {
    pub fn load(&self) -> (Instance, Allocation) {
        let inst = instance(&self.instance);
        let x = allocation_from_doc(&inst, &self.allocation).expect("valid allocation document");
        (inst, x)
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    let text = std::fs::read_to_string(data(name)).expect("fixture present");
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("fixture line parses"))
        .collect()
}
