//! Agent DAGs with feature assignments.
//!
//! Agent ids and feature indices are 1-based everywhere in the public API,
//! matching the graph file format (`x_1..x_d`, agents `1..N`).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A validated agent DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    d: usize,
    feature_sets: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
}

impl AgentGraph {
    /// Builds a graph from `(parent, child)` edges and one feature set per
    /// agent. Agent `i` owns `feature_sets[i - 1]`. Parents are kept in edge
    /// order; ties in the topological order go to the smaller id.
    pub fn build(edges: &[(usize, usize)], feature_sets: &[Vec<usize>], d: usize) -> Result<Self> {
        let n = feature_sets.len();
        let mut sets = Vec::with_capacity(n);
        for set in feature_sets {
            let mut uniq = BTreeSet::new();
            for &l in set {
                if l == 0 || l > d {
                    return Err(Error::IndexOutOfRange {
                        what: "feature",
                        index: l,
                        max: d,
                    });
                }
                uniq.insert(l);
            }
            sets.push(uniq.into_iter().collect::<Vec<_>>());
        }

        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in edges {
            for id in [p, c] {
                if id == 0 || id > n {
                    return Err(Error::IndexOutOfRange {
                        what: "agent",
                        index: id,
                        max: n,
                    });
                }
            }
            if p == c {
                return Err(Error::CycleDetected { agent: p });
            }
            if !parents[c - 1].contains(&p) {
                parents[c - 1].push(p);
                children[p - 1].push(c);
            }
        }

        let topo_order = kahn_min_id(&parents, &children)?;
        Ok(Self {
            d,
            feature_sets: sets,
            parents,
            children,
            topo_order,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.feature_sets.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Sorted, de-duplicated feature indices of `agent`.
    pub fn features(&self, agent: usize) -> &[usize] {
        &self.feature_sets[agent - 1]
    }

    /// Parents of `agent` in declared order.
    pub fn parents(&self, agent: usize) -> &[usize] {
        &self.parents[agent - 1]
    }

    pub fn children(&self, agent: usize) -> &[usize] {
        &self.children[agent - 1]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// All `(parent, child)` edges, grouped by child in id order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c + 1)))
            .collect()
    }

    pub fn sinks(&self) -> Vec<usize> {
        self.topo_order
            .iter()
            .copied()
            .filter(|&a| self.children[a - 1].is_empty())
            .collect()
    }

    /// Largest feature index used by any agent (0 if none).
    pub fn max_feature(&self) -> usize {
        self.feature_sets
            .iter()
            .filter_map(|s| s.last().copied())
            .max()
            .unwrap_or(0)
    }

    /// Returns the agents in path order if the graph is a simple path
    /// `A_1 -> A_2 -> ... -> A_D` (in topological order).
    pub fn path_order(&self) -> Result<&[usize]> {
        for (pos, &agent) in self.topo_order.iter().enumerate() {
            let ps = self.parents(agent);
            if pos == 0 {
                if !ps.is_empty() {
                    return Err(Error::NotAPath(format!("source agent {agent} has parents")));
                }
                continue;
            }
            if ps.len() != 1 {
                return Err(Error::NotAPath(format!(
                    "agent {agent} has {} parents",
                    ps.len()
                )));
            }
            let prev = self.topo_order[pos - 1];
            if ps[0] != prev {
                return Err(Error::NotAPath(format!(
                    "agent {agent} follows {} but its parent is {}",
                    prev, ps[0]
                )));
            }
        }
        Ok(&self.topo_order)
    }

    /// Checks that every window of `m` consecutive path agents jointly
    /// observes all `d` features.
    pub fn check_m_coverage(&self, m: usize, d: usize) -> Result<Coverage> {
        let path = self.path_order()?;
        if m == 0 || m > path.len() {
            return Err(Error::InvalidDimension(format!(
                "coverage window {m} must lie in 1..={}",
                path.len()
            )));
        }
        // Sliding window multiset of observed features.
        let mut counts = vec![0usize; d + 1];
        let mut covered = 0usize;
        let add = |counts: &mut Vec<usize>, covered: &mut usize, agent: usize, delta: isize| {
            for &l in self.features(agent) {
                if l > d {
                    continue;
                }
                if delta > 0 {
                    if counts[l] == 0 {
                        *covered += 1;
                    }
                    counts[l] += 1;
                } else {
                    counts[l] -= 1;
                    if counts[l] == 0 {
                        *covered -= 1;
                    }
                }
            }
        };
        for &a in &path[..m] {
            add(&mut counts, &mut covered, a, 1);
        }
        for start in 0..=path.len() - m {
            if start > 0 {
                add(&mut counts, &mut covered, path[start - 1], -1);
                add(&mut counts, &mut covered, path[start + m - 1], 1);
            }
            if covered < d {
                return Ok(Coverage {
                    covered: false,
                    first_violation: Some(start + 1),
                });
            }
        }
        Ok(Coverage {
            covered: true,
            first_violation: None,
        })
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            d: self.d,
            agents: (1..=self.num_agents())
                .map(|id| GraphFileAgent {
                    id,
                    features: self.features(id).to_vec(),
                    parents: self.parents(id).to_vec(),
                })
                .collect(),
        }
    }
}

/// Result of an M-coverage check. `first_violation` is the 1-based start of
/// the first window that misses a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub covered: bool,
    pub first_violation: Option<usize>,
}

fn kahn_min_id(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (1..=n)
        .filter(|&a| indegree[a - 1] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(a)) = ready.pop() {
        order.push(a);
        for &c in &children[a - 1] {
            indegree[c - 1] -= 1;
            if indegree[c - 1] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < n {
        let agent = (1..=n).find(|&a| indegree[a - 1] > 0).unwrap_or(1);
        return Err(Error::CycleDetected { agent });
    }
    Ok(order)
}

/// Path `A_1 -> ... -> A_D` where agent `i` observes feature
/// `((i - 1) mod k) + 1`.
pub fn cyclic_path_assignment(k: usize, depth: usize) -> Result<AgentGraph> {
    if k < 2 {
        return Err(Error::InvalidDimension(format!("k = {k}, need k >= 2")));
    }
    if depth == 0 {
        return Err(Error::InvalidDimension("path depth must be >= 1".into()));
    }
    let sets: Vec<Vec<usize>> = (1..=depth).map(|i| vec![(i - 1) % k + 1]).collect();
    let edges: Vec<(usize, usize)> = (2..=depth).map(|i| (i - 1, i)).collect();
    AgentGraph::build(&edges, &sets, k)
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub d: usize,
    pub agents: Vec<GraphFileAgent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFileAgent {
    pub id: usize,
    #[serde(default)]
    pub features: Vec<usize>,
    #[serde(default)]
    pub parents: Vec<usize>,
}

impl GraphFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_graph(self) -> Result<AgentGraph> {
        let n = self.agents.len();
        let mut sets = vec![None; n];
        let mut edges = Vec::new();
        for agent in &self.agents {
            if agent.id == 0 || agent.id > n {
                return Err(Error::IndexOutOfRange {
                    what: "agent",
                    index: agent.id,
                    max: n,
                });
            }
            if sets[agent.id - 1].is_some() {
                return Err(Error::InvalidConfig(format!("duplicate agent id {}", agent.id)));
            }
            sets[agent.id - 1] = Some(agent.features.clone());
        }
        // Edges grouped by child in id order keep each parent list in file order.
        let mut by_id: Vec<&GraphFileAgent> = self.agents.iter().collect();
        by_id.sort_by_key(|a| a.id);
        for agent in by_id {
            edges.extend(agent.parents.iter().map(|&p| (p, agent.id)));
        }
        let sets: Vec<Vec<usize>> = sets.into_iter().map(Option::unwrap_or_default).collect();
        AgentGraph::build(&edges, &sets, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_graph() {
        let g = AgentGraph::build(&[], &[vec![1]], 1).unwrap();
        assert_eq!(g.topo_order(), &[1]);
        assert_eq!(g.sinks(), vec![1]);
    }

    #[test]
    fn path_graph_order() {
        let g = AgentGraph::build(&[(1, 2), (2, 3)], &[vec![1], vec![2], vec![1]], 2).unwrap();
        assert_eq!(g.topo_order(), &[1, 2, 3]);
        assert_eq!(g.path_order().unwrap(), &[1, 2, 3]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = AgentGraph::build(&[(1, 2), (2, 1)], &[vec![1], vec![1]], 1).unwrap_err();
        assert!(matches!(err, Error::CycleDetected { .. }));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let err = AgentGraph::build(&[(1, 1)], &[vec![1]], 1).unwrap_err();
        assert!(matches!(err, Error::CycleDetected { agent: 1 }));
    }

    #[test]
    fn out_of_range_ids() {
        let err = AgentGraph::build(&[], &[vec![3]], 2).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "feature", .. }));
        let err = AgentGraph::build(&[(1, 5)], &[vec![1], vec![1]], 2).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "agent", .. }));
        let err = AgentGraph::build(&[], &[vec![0]], 2).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "feature", .. }));
    }

    #[test]
    fn ties_break_by_smallest_id() {
        // 3 and 2 are both sources; 1 depends on 3.
        let g = AgentGraph::build(&[(3, 1)], &[vec![], vec![], vec![]], 1).unwrap();
        assert_eq!(g.topo_order(), &[2, 3, 1]);
    }

    #[test]
    fn parents_keep_declared_order() {
        let g = AgentGraph::build(&[(3, 1), (2, 1)], &[vec![1], vec![1], vec![1]], 1).unwrap();
        assert_eq!(g.parents(1), &[3, 2]);
        assert!(g.path_order().is_err());
    }

    #[test]
    fn empty_feature_sets_allowed() {
        let g = AgentGraph::build(&[(1, 2)], &[vec![], vec![2]], 2).unwrap();
        assert!(g.features(1).is_empty());
        assert_eq!(g.max_feature(), 2);
    }

    #[test]
    fn coverage_examples() {
        let g = AgentGraph::build(
            &[(1, 2), (2, 3), (3, 4)],
            &[vec![1], vec![2], vec![1], vec![2]],
            2,
        )
        .unwrap();
        assert_eq!(
            g.check_m_coverage(2, 2).unwrap(),
            Coverage {
                covered: true,
                first_violation: None
            }
        );

        let g = AgentGraph::build(&[(1, 2), (2, 3)], &[vec![1], vec![1], vec![2]], 2).unwrap();
        assert_eq!(
            g.check_m_coverage(2, 2).unwrap(),
            Coverage {
                covered: false,
                first_violation: Some(1)
            }
        );
    }

    #[test]
    fn coverage_requires_a_path() {
        let g = AgentGraph::build(&[(1, 3), (2, 3)], &[vec![1], vec![2], vec![1]], 2).unwrap();
        assert!(matches!(g.check_m_coverage(2, 2), Err(Error::NotAPath(_))));
        let g = cyclic_path_assignment(2, 3).unwrap();
        assert!(matches!(g.check_m_coverage(4, 2), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn cyclic_assignment_examples() {
        let g = cyclic_path_assignment(2, 4).unwrap();
        let sets: Vec<&[usize]> = (1..=4).map(|a| g.features(a)).collect();
        assert_eq!(sets, vec![&[1][..], &[2], &[1], &[2]]);
        assert_eq!(g.parents(3), &[2]);

        let g = cyclic_path_assignment(3, 3).unwrap();
        let sets: Vec<&[usize]> = (1..=3).map(|a| g.features(a)).collect();
        assert_eq!(sets, vec![&[1][..], &[2], &[3]]);

        assert!(matches!(cyclic_path_assignment(1, 4), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn graph_file_round_trip() {
        let text = r#"{"d": 3, "agents": [
            {"id": 2, "features": [3, 1], "parents": [1]},
            {"id": 1, "features": [2], "parents": []}
        ]}"#;
        let file: GraphFile = serde_json::from_str(text).unwrap();
        let g = file.into_graph().unwrap();
        assert_eq!(g.topo_order(), &[1, 2]);
        assert_eq!(g.features(2), &[1, 3]);
        let again = g.to_file().into_graph().unwrap();
        assert_eq!(again, g);

        let bad = r#"{"d": 1, "agents": [], "extra": 1}"#;
        assert!(serde_json::from_str::<GraphFile>(bad).is_err());
    }
}
