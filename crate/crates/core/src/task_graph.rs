//! Acyclic task graph, round-synchronous message bus and leadership token passing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::{StlTask, TaskOwner};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("task graph contains the cycle {0:?}")]
    Cycle(Vec<usize>),
    #[error("collaborative task on self-loop ({0},{0})")]
    SelfLoop(usize),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("agents {from} and {to} are not neighbors")]
    NotNeighbors { from: usize, to: usize },
    #[error("token passing did not terminate: undefined tokens remain at agents {0:?}")]
    NonTree(Vec<usize>),
    #[error("no agent made progress in round {round}; waiting agents {waiting:?}")]
    Deadlock { round: usize, waiting: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub vertices: BTreeSet<usize>,
    /// Undirected edges stored as `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
    pub independent: BTreeSet<usize>,
    pub diameter: usize,
    adjacency: BTreeMap<usize, BTreeSet<usize>>,
}

impl TaskGraph {
    /// Graph over `agents` whose edges are the collaborative tasks.
    pub fn build(agents: &[usize], tasks: &[StlTask]) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut independent = BTreeSet::new();
        for t in tasks {
            match t.owner {
                TaskOwner::Independent(i) => {
                    independent.insert(i);
                }
                TaskOwner::Collaborative(i, j) => edges.push((i, j)),
            }
        }
        let mut g = Self::from_edges(agents, &edges)?;
        for i in &independent {
            if !g.vertices.contains(i) {
                return Err(GraphError::UnknownAgent(*i));
            }
        }
        g.independent = independent;
        Ok(g)
    }

    pub fn from_edges(agents: &[usize], edge_list: &[(usize, usize)]) -> Result<Self, GraphError> {
        let vertices: BTreeSet<usize> = agents.iter().copied().collect();
        let mut adjacency: BTreeMap<usize, BTreeSet<usize>> = vertices.iter().map(|&v| (v, BTreeSet::new())).collect();
        let mut edges = BTreeSet::new();
        for &(a, b) in edge_list {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            for v in [a, b] {
                if !vertices.contains(&v) {
                    return Err(GraphError::UnknownAgent(v));
                }
            }
            let e = (a.min(b), a.max(b));
            if !edges.insert(e) {
                continue;
            }
            if let Some(path) = path_between(&adjacency, a, b) {
                return Err(GraphError::Cycle(path));
            }
            adjacency.get_mut(&a).unwrap().insert(b);
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        let mut g = Self { vertices, edges, independent: BTreeSet::new(), diameter: 0, adjacency };
        g.diameter = g.compute_diameter();
        Ok(g)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.get(&i).into_iter().flatten().copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.get(&i).map_or(0, BTreeSet::len)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Largest hop distance within any connected component (double BFS).
    fn compute_diameter(&self) -> usize {
        let mut seen = BTreeSet::new();
        let mut best = 0;
        for &v in &self.vertices {
            if seen.contains(&v) {
                continue;
            }
            let (far, _, comp) = self.bfs_farthest(v);
            seen.extend(comp);
            let (_, d, _) = self.bfs_farthest(far);
            best = best.max(d);
        }
        best
    }

    fn bfs_farthest(&self, start: usize) -> (usize, usize, Vec<usize>) {
        let mut dist = BTreeMap::from([(start, 0usize)]);
        let mut queue = VecDeque::from([start]);
        let mut far = (start, 0);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            if d > far.1 {
                far = (v, d);
            }
            for w in self.neighbors(v) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        (far.0, far.1, dist.into_keys().collect())
    }
}

fn path_between(adj: &BTreeMap<usize, BTreeSet<usize>>, a: usize, b: usize) -> Option<Vec<usize>> {
    let mut parent = BTreeMap::from([(a, a)]);
    let mut queue = VecDeque::from([a]);
    while let Some(v) = queue.pop_front() {
        if v == b {
            let mut path = vec![b];
            let mut cur = b;
            while cur != a {
                cur = parent[&cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &w in &adj[&v] {
            if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(w) {
                e.insert(v);
                queue.push_back(w);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    #[serde(rename = "l")]
    Leader,
    #[serde(rename = "f")]
    Follower,
    #[serde(rename = "u")]
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet {
    pub owner: usize,
    pub tokens: BTreeMap<usize, Token>,
}

impl TokenSet {
    /// The neighbor on whose edge this agent leads, if any.
    pub fn led_edge(&self) -> Option<usize> {
        self.tokens.iter().find(|(_, t)| **t == Token::Leader).map(|(j, _)| *j)
    }

    /// Neighbors that lead the shared edge.
    pub fn leaders(&self) -> Vec<usize> {
        self.tokens.iter().filter(|(_, t)| **t == Token::Follower).map(|(j, _)| *j).collect()
    }

    fn undefined(&self) -> Vec<usize> {
        self.tokens.iter().filter(|(_, t)| **t == Token::Undefined).map(|(j, _)| *j).collect()
    }
}

/// Order in which a round's messages are handed to each receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeliveryOrder {
    #[default]
    BySender,
    ReverseSender,
    /// Rotate the per-receiver list by the given offset.
    Rotated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub from: usize,
    pub to: usize,
    pub payload: M,
}

/// Synchronous mailbox: messages sent in round `k` become readable in round `k + 1`.
#[derive(Debug, Clone)]
pub struct RoundBus<M> {
    links: BTreeMap<usize, BTreeSet<usize>>,
    outbox: Vec<Envelope<M>>,
    inbox: BTreeMap<usize, Vec<Envelope<M>>>,
    round: usize,
    hops: usize,
    order: DeliveryOrder,
}

impl<M> RoundBus<M> {
    pub fn new(graph: &TaskGraph) -> Self {
        Self::with_order(graph, DeliveryOrder::default())
    }

    pub fn with_order(graph: &TaskGraph, order: DeliveryOrder) -> Self {
        Self {
            links: graph.adjacency.clone(),
            outbox: Vec::new(),
            inbox: BTreeMap::new(),
            round: 0,
            hops: 0,
            order,
        }
    }

    pub fn send(&mut self, from: usize, to: usize, payload: M) -> Result<(), GraphError> {
        if !self.links.get(&from).is_some_and(|n| n.contains(&to)) {
            return Err(GraphError::NotNeighbors { from, to });
        }
        self.outbox.push(Envelope { from, to, payload });
        Ok(())
    }

    /// Closes the current round; returns whether any message was delivered.
    pub fn advance(&mut self) -> bool {
        self.round += 1;
        self.inbox.clear();
        let delivered = !self.outbox.is_empty();
        if delivered {
            self.hops += 1;
        }
        for env in self.outbox.drain(..) {
            self.inbox.entry(env.to).or_default().push(env);
        }
        for list in self.inbox.values_mut() {
            list.sort_by_key(|e| e.from);
            match self.order {
                DeliveryOrder::BySender => {}
                DeliveryOrder::ReverseSender => list.reverse(),
                DeliveryOrder::Rotated(k) => {
                    let n = list.len();
                    list.rotate_left(k % n);
                }
            }
        }
        delivered
    }

    pub fn receive(&mut self, agent: usize) -> Vec<Envelope<M>> {
        self.inbox.remove(&agent).unwrap_or_default()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Number of rounds in which at least one message crossed a link.
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn pending(&self) -> bool {
        !self.outbox.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAssignment {
    pub tokens: BTreeMap<usize, TokenSet>,
    pub rounds_used: usize,
}

impl TokenAssignment {
    pub fn get(&self, i: usize) -> &TokenSet {
        &self.tokens[&i]
    }

    /// Checks the three consistency rules; returns a description of the first breach.
    pub fn check(&self, graph: &TaskGraph) -> Result<(), String> {
        for (i, set) in &self.tokens {
            if set.tokens.values().any(|t| *t == Token::Undefined) {
                return Err(format!("agent {i} holds an undefined token"));
            }
            if set.tokens.values().filter(|t| **t == Token::Leader).count() > 1 {
                return Err(format!("agent {i} leads more than one edge"));
            }
        }
        for &(i, j) in &graph.edges {
            let (a, b) = (self.tokens[&i].tokens[&j], self.tokens[&j].tokens[&i]);
            let ok = matches!((a, b), (Token::Leader, Token::Follower) | (Token::Follower, Token::Leader));
            if !ok {
                return Err(format!("edge ({i},{j}) has tokens {a:?}/{b:?}"));
            }
        }
        Ok(())
    }
}

/// Leadership token passing. Leaves claim their unique edge; an agent with a
/// single undefined token left claims it; simultaneous claims on one edge
/// resolve in favor of the lower id when both claims arrive.
pub fn run_token_passing(graph: &TaskGraph) -> Result<TokenAssignment, GraphError> {
    run_token_passing_with(graph, DeliveryOrder::default())
}

pub fn run_token_passing_with(graph: &TaskGraph, order: DeliveryOrder) -> Result<TokenAssignment, GraphError> {
    let mut sets: BTreeMap<usize, TokenSet> = graph
        .vertices
        .iter()
        .map(|&i| (i, TokenSet { owner: i, tokens: graph.neighbors(i).map(|j| (j, Token::Undefined)).collect() }))
        .collect();
    let mut bus: RoundBus<Token> = RoundBus::with_order(graph, order);
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    let claim = |i: usize, sets: &mut BTreeMap<usize, TokenSet>, bus: &mut RoundBus<Token>, claimed: &mut BTreeSet<usize>| {
        let und = sets[&i].undefined();
        if und.len() == 1 && !claimed.contains(&i) {
            let j = und[0];
            sets.get_mut(&i).unwrap().tokens.insert(j, Token::Leader);
            claimed.insert(i);
            bus.send(i, j, Token::Leader).expect("claims travel along task edges");
        }
    };
    for &i in &graph.vertices {
        claim(i, &mut sets, &mut bus, &mut claimed);
    }
    let limit = graph.vertices.len() + 2;
    while bus.advance() {
        if bus.round() > limit {
            break;
        }
        for &i in &graph.vertices {
            for env in bus.receive(i) {
                if env.payload != Token::Leader {
                    continue;
                }
                let j = env.from;
                let set = sets.get_mut(&i).unwrap();
                match set.tokens[&j] {
                    Token::Leader if i < j => {}
                    _ => {
                        set.tokens.insert(j, Token::Follower);
                    }
                }
            }
        }
        for &i in &graph.vertices {
            claim(i, &mut sets, &mut bus, &mut claimed);
        }
    }
    let stuck: Vec<usize> = sets.iter().filter(|(_, s)| !s.undefined().is_empty()).map(|(i, _)| *i).collect();
    if !stuck.is_empty() {
        return Err(GraphError::NonTree(stuck));
    }
    Ok(TokenAssignment { tokens: sets, rounds_used: bus.hops() })
}
