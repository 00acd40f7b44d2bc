//! Envy, strong envy, EFX verdicts and the envy graph.

use std::collections::VecDeque;

use serde::Serialize;

use crate::allocation::Allocation;
use crate::bundle::{Bundle, GoodId};
use crate::instance::{AgentId, GroupId, Instance, Scale};

/// `g` envies `other` from `own` (perturbed values).
pub fn prefers(inst: &Instance, g: GroupId, other: &Bundle, own: &Bundle) -> bool {
    inst.value(g, other) > inst.value(g, own)
}

pub fn envies(inst: &Instance, x: &Allocation, i: AgentId, j: AgentId) -> bool {
    i != j && prefers(inst, i.group, x.bundle(j), x.bundle(i))
}

/// Returns the cheapest good of `other` if removing it still leaves envy.
/// For additive values that good witnesses strong envy whenever any does.
pub fn strong_envy_witness(
    inst: &Instance,
    scale: Scale,
    g: GroupId,
    own: &Bundle,
    other: &Bundle,
) -> Option<GoodId> {
    let vals = match scale {
        Scale::Base => inst.valuation(g).base(),
        Scale::Perturbed => inst.valuation(g).perturbed(),
    };
    let cheapest = other.iter().min_by(|x, y| vals[x.0].cmp(&vals[y.0]))?;
    let rest = inst.value_with(scale, g, other) - &vals[cheapest.0];
    (rest > inst.value_with(scale, g, own)).then_some(cheapest)
}

pub fn strongly_prefers(inst: &Instance, g: GroupId, other: &Bundle, own: &Bundle) -> bool {
    strong_envy_witness(inst, Scale::Perturbed, g, own, other).is_some()
}

pub fn strongly_envies(inst: &Instance, x: &Allocation, i: AgentId, j: AgentId) -> bool {
    i != j && strongly_prefers(inst, i.group, x.bundle(j), x.bundle(i))
}

/// A strong envy pair with the good whose removal keeps the envy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub envier: AgentId,
    pub target: AgentId,
    pub good: GoodId,
}

pub fn efx_violations(inst: &Instance, x: &Allocation, scale: Scale) -> Vec<Violation> {
    let agents = x.agents();
    let mut out = Vec::new();
    for &i in &agents {
        for &j in &agents {
            if i == j {
                continue;
            }
            if let Some(good) = strong_envy_witness(inst, scale, i.group, x.bundle(i), x.bundle(j))
            {
                out.push(Violation {
                    envier: i,
                    target: j,
                    good,
                });
            }
        }
    }
    out
}

pub fn is_efx(inst: &Instance, x: &Allocation) -> bool {
    efx_violations(inst, x, Scale::Perturbed).is_empty()
}

/// Agents that `i` strongly envies.
pub fn strong_envy_targets(inst: &Instance, x: &Allocation, i: AgentId) -> Vec<AgentId> {
    x.agents()
        .into_iter()
        .filter(|&j| strongly_envies(inst, x, i, j))
        .collect()
}

/// Directed envy graph; node order is canonical (A, B, C, then rank).
#[derive(Clone, Debug)]
pub struct EnvyGraph {
    agents: Vec<AgentId>,
    adj: Vec<Vec<usize>>,
}

impl EnvyGraph {
    pub fn build(inst: &Instance, x: &Allocation) -> Self {
        let agents = x.agents();
        let adj = agents
            .iter()
            .map(|&i| {
                agents
                    .iter()
                    .enumerate()
                    .filter(|&(_, &j)| envies(inst, x, i, j))
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect();
        Self { agents, adj }
    }

    fn index(&self, a: AgentId) -> usize {
        self.agents
            .iter()
            .position(|&b| b == a)
            .expect("agent in graph")
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }

    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        self.adj[self.index(from)].contains(&self.index(to))
    }

    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, out)| out.iter().map(move |&j| (self.agents[i], self.agents[j])))
            .collect()
    }

    pub fn sources(&self) -> Vec<AgentId> {
        let mut has_in = vec![false; self.agents.len()];
        for out in &self.adj {
            for &j in out {
                has_in[j] = true;
            }
        }
        self.agents
            .iter()
            .zip(has_in)
            .filter(|(_, h)| !h)
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn is_source(&self, a: AgentId) -> bool {
        let k = self.index(a);
        !self.adj.iter().any(|out| out.contains(&k))
    }

    /// Agents that envy `a`.
    pub fn enviers(&self, a: AgentId) -> Vec<AgentId> {
        let k = self.index(a);
        self.adj
            .iter()
            .enumerate()
            .filter(|(_, out)| out.contains(&k))
            .map(|(i, _)| self.agents[i])
            .collect()
    }

    /// Agents `a` envies.
    pub fn envied_by(&self, a: AgentId) -> Vec<AgentId> {
        self.adj[self.index(a)]
            .iter()
            .map(|&j| self.agents[j])
            .collect()
    }

    fn bfs(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; self.agents.len()];
        let mut seen = vec![false; self.agents.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            if u == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Shortest envy path from `from` to `to`, endpoints included.
    pub fn path(&self, from: AgentId, to: AgentId) -> Option<Vec<AgentId>> {
        self.bfs(self.index(from), self.index(to))
            .map(|p| p.into_iter().map(|k| self.agents[k]).collect())
    }

    /// A shortest directed cycle `[v0, v1, ..., vk]` where each agent envies
    /// the next and `vk` envies `v0`. Earliest start node wins ties.
    pub fn find_cycle(&self) -> Option<Vec<AgentId>> {
        let mut best: Option<Vec<usize>> = None;
        for s in 0..self.agents.len() {
            for &t in &self.adj[s] {
                if let Some(p) = self.bfs(t, s) {
                    // p runs t -> s; the cycle is s, t, ..., (before s)
                    let mut cyc = vec![s];
                    cyc.extend(&p[..p.len() - 1]);
                    if best.as_ref().is_none_or(|b| cyc.len() < b.len()) {
                        best = Some(cyc);
                    }
                }
            }
            if best.as_ref().is_some_and(|b| b.len() == 2) {
                break;
            }
        }
        best.map(|c| c.into_iter().map(|k| self.agents[k]).collect())
    }
}
