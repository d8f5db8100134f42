//! Owner-defined workflows as directed graphs of agents.
//!
//! A workflow starts and ends at the owner: data leaves the owner, moves
//! through contractor agents and is finally returned. Edges pointing back at
//! the owner are *return edges*; the owner acts as both the unique source and
//! the terminal sink, so return edges never count as cycles.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An agent acting on behalf of an actor (owner or contractor).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentId {
    pub actor: String,
    pub agent: String,
}

impl AgentId {
    pub fn new(actor: impl Into<String>, agent: impl Into<String>) -> Self {
        Self { actor: actor.into(), agent: agent.into() }
    }

    /// Agent that is the sole member of its actor.
    pub fn single(name: impl Into<String>) -> Self {
        let name = name.into();
        Self { actor: name.clone(), agent: name }
    }

    pub fn name(&self) -> &str {
        &self.agent
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.agent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub src: String,
    pub dst: String,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self { src: src.into(), dst: dst.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowGraph {
    pub owner: AgentId,
    pub agents: Vec<AgentId>,
    pub edges: Vec<Edge>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkflowFile {
    owner: String,
    agents: Vec<AgentId>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("workflow file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("workflow file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid workflow: {}", join_defects(.0))]
    Invalid(Vec<Defect>),
}

fn join_defects(defects: &[Defect]) -> String {
    defects.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A violated graph invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    EmptyName { actor: String, agent: String },
    DuplicateAgent { agent: String },
    UnknownAgent { edge: Edge, agent: String },
    SelfLoop { agent: String },
    DuplicateEdge { edge: Edge },
    Cycle { agents: Vec<String> },
    Unreachable { agent: String },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::EmptyName { actor, agent } => {
                write!(f, "empty name: actor {actor:?} agent {agent:?}")
            }
            Defect::DuplicateAgent { agent } => write!(f, "duplicate agent: {agent}"),
            Defect::UnknownAgent { edge, agent } => {
                write!(f, "unknown agent {agent} in edge {}->{}", edge.src, edge.dst)
            }
            Defect::SelfLoop { agent } => write!(f, "self-loop: {agent}"),
            Defect::DuplicateEdge { edge } => {
                write!(f, "duplicate edge: {}->{}", edge.src, edge.dst)
            }
            Defect::Cycle { agents } => write!(f, "cycle: {}", agents.join(",")),
            Defect::Unreachable { agent } => write!(f, "unreachable from owner: {agent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    NoContractorEdges,
    /// Data reaching this agent never flows back to the owner.
    OwnerUnreachable { agent: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NoContractorEdges => f.write_str("no contractor edges"),
            Warning::OwnerUnreachable { agent } => {
                write!(f, "owner unreachable from {agent}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationResult {
    pub defects: Vec<Defect>,
    pub warnings: Vec<Warning>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.defects.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NumberedEdge {
    pub index: usize,
    pub src: String,
    pub dst: String,
}

impl WorkflowGraph {
    /// Builds a graph; an owner missing from `agents` is added as a
    /// single-agent actor.
    pub fn new(owner: AgentId, mut agents: Vec<AgentId>, edges: Vec<Edge>) -> Self {
        if !agents.iter().any(|a| a.agent == owner.agent) {
            agents.insert(0, owner.clone());
        }
        Self { owner, agents, edges, metadata: BTreeMap::new() }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        let file: WorkflowFile = crate::object_from_json(text)?;
        let owner = file
            .agents
            .iter()
            .find(|a| a.agent == file.owner)
            .cloned()
            .unwrap_or_else(|| AgentId::single(file.owner.clone()));
        let mut graph = WorkflowGraph::new(owner, file.agents, file.edges);
        graph.metadata = file.metadata;
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<Self, WorkflowError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = WorkflowFile {
            owner: self.owner.agent.clone(),
            agents: self.agents.clone(),
            edges: self.edges.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string_pretty(&file).expect("workflow serializes")
    }

    pub fn agent(&self, name: &str) -> Option<&AgentId> {
        self.agents.iter().find(|a| a.agent == name)
    }

    /// Agent names in declaration order.
    pub fn agent_names(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.agent.clone()).collect()
    }

    pub fn agents_of(&self, actor: &str) -> BTreeSet<AgentId> {
        self.agents.iter().filter(|a| a.actor == actor).cloned().collect()
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    fn is_return_edge(&self, e: &Edge) -> bool {
        e.dst == self.owner.agent
    }

    pub fn validate(&self) -> ValidationResult {
        validate_workflow(self)
    }

    /// Returns the graph unchanged if it validates, the defects otherwise.
    pub fn validated(&self) -> Result<&Self, WorkflowError> {
        let result = self.validate();
        if result.is_ok() {
            Ok(self)
        } else {
            Err(WorkflowError::Invalid(result.defects))
        }
    }

    pub fn number_edges(&self) -> Result<Vec<NumberedEdge>, WorkflowError> {
        number_edges(self)
    }
}

pub fn validate_workflow(graph: &WorkflowGraph) -> ValidationResult {
    let mut result = ValidationResult::default();

    let mut names = BTreeSet::new();
    for a in &graph.agents {
        if a.actor.is_empty() || a.agent.is_empty() {
            result.defects.push(Defect::EmptyName {
                actor: a.actor.clone(),
                agent: a.agent.clone(),
            });
        }
        if !names.insert(a.agent.as_str()) {
            result.defects.push(Defect::DuplicateAgent { agent: a.agent.clone() });
        }
    }

    let mut seen = BTreeSet::new();
    let mut structural = Vec::new();
    for e in &graph.edges {
        let mut ok = true;
        for end in [&e.src, &e.dst] {
            if !names.contains(end.as_str()) {
                result.defects.push(Defect::UnknownAgent { edge: e.clone(), agent: end.clone() });
                ok = false;
            }
        }
        if e.src == e.dst {
            result.defects.push(Defect::SelfLoop { agent: e.src.clone() });
            ok = false;
        }
        if !seen.insert((e.src.as_str(), e.dst.as_str())) {
            result.defects.push(Defect::DuplicateEdge { edge: e.clone() });
            ok = false;
        }
        if ok {
            structural.push(e);
        }
    }

    let forward: Vec<&Edge> =
        structural.iter().copied().filter(|e| !graph.is_return_edge(e)).collect();
    for scc in cyclic_components(&names, &forward) {
        result.defects.push(Defect::Cycle { agents: scc });
    }

    let reach = reachable(&graph.owner.agent, &structural, false);
    for name in &names {
        if !reach.contains(*name) {
            result.defects.push(Defect::Unreachable { agent: (*name).to_owned() });
        }
    }

    if graph.edges.is_empty() {
        result.warnings.push(Warning::NoContractorEdges);
    }
    let back = reachable(&graph.owner.agent, &structural, true);
    for name in &names {
        if *name != graph.owner.agent && !back.contains(*name) {
            result.warnings.push(Warning::OwnerUnreachable { agent: (*name).to_owned() });
        }
    }

    result
}

fn reachable<'a>(start: &'a str, edges: &[&'a Edge], reversed: bool) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(node) = stack.pop() {
        for e in edges {
            let (from, to) = if reversed { (&e.dst, &e.src) } else { (&e.src, &e.dst) };
            if from == node && seen.insert(to.as_str()) {
                stack.push(to.as_str());
            }
        }
    }
    seen
}

/// Strongly connected components with more than one member, each sorted,
/// in lexicographic order of their first member.
fn cyclic_components(names: &BTreeSet<&str>, edges: &[&Edge]) -> Vec<Vec<String>> {
    let nodes: Vec<&str> = names.iter().copied().collect();
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut succ = vec![Vec::new(); nodes.len()];
    let mut pred = vec![Vec::new(); nodes.len()];
    for e in edges {
        let (s, d) = (index[e.src.as_str()], index[e.dst.as_str()]);
        succ[s].push(d);
        pred[d].push(s);
    }

    // Kosaraju: finish order on the graph, then collect on the transpose.
    fn finish(v: usize, succ: &[Vec<usize>], seen: &mut [bool], order: &mut Vec<usize>) {
        seen[v] = true;
        for &w in &succ[v] {
            if !seen[w] {
                finish(w, succ, seen, order);
            }
        }
        order.push(v);
    }
    fn collect(v: usize, pred: &[Vec<usize>], comp: &mut [Option<usize>], id: usize) {
        comp[v] = Some(id);
        for &w in &pred[v] {
            if comp[w].is_none() {
                collect(w, pred, comp, id);
            }
        }
    }

    let mut seen = vec![false; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    for v in 0..nodes.len() {
        if !seen[v] {
            finish(v, &succ, &mut seen, &mut order);
        }
    }
    let mut comp = vec![None; nodes.len()];
    let mut count = 0;
    for &v in order.iter().rev() {
        if comp[v].is_none() {
            collect(v, &pred, &mut comp, count);
            count += 1;
        }
    }

    let mut groups: Vec<Vec<String>> = vec![Vec::new(); count];
    for (v, c) in comp.iter().enumerate() {
        groups[c.expect("assigned")].push(nodes[v].to_owned());
    }
    let mut cycles: Vec<Vec<String>> = groups.into_iter().filter(|g| g.len() > 1).collect();
    for g in &mut cycles {
        g.sort();
    }
    cycles.sort();
    cycles
}

/// Position of every agent in the topological order of the forward edges,
/// breaking ties by agent name.
fn topological_rank(graph: &WorkflowGraph) -> BTreeMap<&str, usize> {
    let mut indegree: BTreeMap<&str, usize> =
        graph.agents.iter().map(|a| (a.agent.as_str(), 0)).collect();
    let forward: Vec<&Edge> = graph.edges.iter().filter(|e| !graph.is_return_edge(e)).collect();
    for e in &forward {
        *indegree.get_mut(e.dst.as_str()).expect("validated") += 1;
    }
    let mut ready: BinaryHeap<Reverse<&str>> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| Reverse(*n)).collect();
    let mut rank = BTreeMap::new();
    while let Some(Reverse(node)) = ready.pop() {
        rank.insert(node, rank.len());
        for e in forward.iter().filter(|e| e.src == node) {
            let d = indegree.get_mut(e.dst.as_str()).expect("validated");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(e.dst.as_str()));
            }
        }
    }
    rank
}

/// Numbers edges 1..=|E| by (topological rank of src, dst name).
pub fn number_edges(graph: &WorkflowGraph) -> Result<Vec<NumberedEdge>, WorkflowError> {
    graph.validated()?;
    let rank = topological_rank(graph);
    let mut edges: Vec<&Edge> = graph.edges.iter().collect();
    edges.sort_by(|a, b| {
        (rank[a.src.as_str()], a.dst.as_str()).cmp(&(rank[b.src.as_str()], b.dst.as_str()))
    });
    Ok(edges
        .into_iter()
        .enumerate()
        .map(|(i, e)| NumberedEdge { index: i + 1, src: e.src.clone(), dst: e.dst.clone() })
        .collect())
}

/// The movie post-production workflow with abstract agent names
/// (`O`, `C1_0`..`C1_2`, `C2`..`C4`).
pub fn movie_workflow() -> WorkflowGraph {
    let agents = vec![
        AgentId::single("O"),
        AgentId::new("C1", "C1_0"),
        AgentId::new("C1", "C1_1"),
        AgentId::new("C1", "C1_2"),
        AgentId::single("C2"),
        AgentId::single("C3"),
        AgentId::single("C4"),
    ];
    let edges = [
        ("O", "C1_0"),
        ("C1_0", "C1_1"),
        ("C1_0", "C1_2"),
        ("C1_1", "C2"),
        ("C1_2", "C4"),
        ("C2", "C3"),
        ("C3", "O"),
        ("C4", "O"),
    ];
    WorkflowGraph::new(
        AgentId::single("O"),
        agents,
        edges.iter().map(|(s, d)| Edge::new(*s, *d)).collect(),
    )
}

/// Region metadata key for an agent.
pub fn region_key(agent: &str) -> String {
    format!("region:{agent}")
}

pub const DEFAULT_REGION: &str = "us-central1-f";

impl WorkflowGraph {
    /// Region label of an agent: `region:<agent>` metadata, else the default.
    pub fn region_of(&self, agent: &str) -> &str {
        self.metadata.get(&region_key(agent)).map(String::as_str).unwrap_or(DEFAULT_REGION)
    }
}

/// The same workflow with the service names used in the deployed proof of
/// concept (`owner`, `vfx-1`..`vfx-3`, `color`, `hdr`, `sound`) and its
/// two-region cluster placement.
pub fn poc_workflow() -> WorkflowGraph {
    let agents = vec![
        AgentId::new("O", "owner"),
        AgentId::new("C1", "vfx-1"),
        AgentId::new("C1", "vfx-2"),
        AgentId::new("C1", "vfx-3"),
        AgentId::new("C2", "color"),
        AgentId::new("C3", "hdr"),
        AgentId::new("C4", "sound"),
    ];
    let edges = [
        ("owner", "vfx-1"),
        ("vfx-1", "vfx-2"),
        ("vfx-1", "vfx-3"),
        ("vfx-2", "color"),
        ("vfx-3", "sound"),
        ("color", "hdr"),
        ("hdr", "owner"),
        ("sound", "owner"),
    ];
    let mut graph = WorkflowGraph::new(
        AgentId::new("O", "owner"),
        agents,
        edges.iter().map(|(s, d)| Edge::new(*s, *d)).collect(),
    );
    for agent in ["owner", "vfx-1", "vfx-2", "vfx-3", "color"] {
        graph.metadata.insert(region_key(agent), "us-central1-f".into());
    }
    for agent in ["hdr", "sound"] {
        graph.metadata.insert(region_key(agent), "us-west2-b".into());
    }
    graph
}
