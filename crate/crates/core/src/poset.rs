//! Partial orders read from edge lists, and their transitive closures.
//!
//! Edges are stored as `x ≺ y` with `x` the more specific node (hyponym,
//! entity or subtype) and `y` the more general one. The closure is irreflexive:
//! `(x, x)` is never a member.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node index into a [`PartialOrder`] vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub(crate) fn from_index(index: usize) -> Self {
        NodeId(u32::try_from(index).expect("node count fits in u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// An ordered pair `(x, y)` read as `x ≺ y`.
pub type Pair = (NodeId, NodeId);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Entity,
    #[default]
    Type,
}

/// Column layout of an edge file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColumnOrder {
    /// `child \t parent` (hyponym first).
    #[default]
    ChildFirst,
    /// `parent \t child` (hypernym first).
    ParentFirst,
}

impl std::str::FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "child-first" | "child_first" => Ok(ColumnOrder::ChildFirst),
            "parent-first" | "parent_first" => Ok(ColumnOrder::ParentFirst),
            other => Err(Error::Config(format!("unknown column order `{other}`"))),
        }
    }
}

/// Node vocabulary plus the raw, deduplicated and acyclic base edges.
#[derive(Clone, Debug, Default)]
pub struct PartialOrder {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    kinds: Vec<NodeKind>,
    edges: Vec<Pair>,
}

impl PartialOrder {
    /// Parse a tab-separated edge list. Blank lines and lines starting with `#`
    /// are skipped; the vocabulary is built in first-appearance order.
    pub fn load_edges<R: BufRead>(reader: R, column_order: ColumnOrder) -> Result<Self> {
        let mut order = PartialOrder::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 2 tab-separated columns, found {}", cols.len()),
                });
            }
            let (child, parent) = match column_order {
                ColumnOrder::ChildFirst => (cols[0], cols[1]),
                ColumnOrder::ParentFirst => (cols[1], cols[0]),
            };
            if child == parent {
                return Err(Error::SelfLoop {
                    line: lineno,
                    name: child.to_string(),
                });
            }
            // intern in column order so the vocabulary follows the file
            let a = order.intern(cols[0]);
            let b = order.intern(cols[1]);
            let edge = match column_order {
                ColumnOrder::ChildFirst => (a, b),
                ColumnOrder::ParentFirst => (b, a),
            };
            if seen.insert(edge) {
                order.edges.push(edge);
            }
        }
        order.check_acyclic()?;
        Ok(order)
    }

    /// Build from `(child, parent)` name pairs.
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut order = PartialOrder::default();
        let mut seen = std::collections::HashSet::new();
        for (i, (child, parent)) in edges.into_iter().enumerate() {
            let (child, parent) = (child.as_ref(), parent.as_ref());
            if child == parent {
                return Err(Error::SelfLoop {
                    line: i + 1,
                    name: child.to_string(),
                });
            }
            let edge = (order.intern(child), order.intern(parent));
            if seen.insert(edge) {
                order.edges.push(edge);
            }
        }
        order.check_acyclic()?;
        Ok(order)
    }

    /// Add a node with no edges, or return the existing id.
    pub fn intern(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = NodeId::from_index(self.names.len());
        self.names.push(name.to_string());
        self.kinds.push(NodeKind::Type);
        self.index.insert(name.to_string(), id);
        id
    }

    fn check_acyclic(&self) -> Result<()> {
        topological_order(&self.edges, self.len())
            .map(|_| ())
            .map_err(|cycle| Error::Cyclic {
                cycle: cycle.iter().map(|&i| self.names[i].clone()).collect(),
            })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edges(&self) -> &[Pair] {
        &self.edges
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.index()]
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.kinds[id.index()]
    }

    pub fn set_kind(&mut self, id: NodeId, kind: NodeKind) {
        self.kinds[id.index()] = kind;
    }

    /// Transitive closure of the base edges.
    pub fn closure(&self) -> Closure {
        // acyclicity was established at construction
        Closure::from_pairs(&self.edges, self.len()).expect("partial order is acyclic")
    }
}

/// Topological order of the pair graph in which every node appears after all
/// of its successors (`x ≺ y` puts `y` before `x`). On failure returns one cycle
/// as a closed node walk `[a, b, …, a]`.
fn topological_order(pairs: &[Pair], n: usize) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let succ = Csr::new(n, pairs.iter().map(|&(x, y)| (x.index(), y.index())));
    let pred = Csr::new(n, pairs.iter().map(|&(x, y)| (y.index(), x.index())));
    let mut pending: Vec<usize> = (0..n).map(|v| succ.row(v).len()).collect();
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = (0..n).rev().filter(|&v| pending[v] == 0).collect();
    while let Some(v) = stack.pop() {
        order.push(v);
        for &p in pred.row(v) {
            pending[p] -= 1;
            if pending[p] == 0 {
                stack.push(p);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // every unfinished node has an unfinished successor, so walking them must revisit
    let start = (0..n).find(|&v| pending[v] > 0).expect("unfinished node");
    let mut pos = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut v = start;
    while pos[v] == usize::MAX {
        pos[v] = walk.len();
        walk.push(v);
        v = *succ
            .row(v)
            .iter()
            .find(|&&s| pending[s] > 0)
            .expect("unfinished successor");
    }
    let mut cycle = walk.split_off(pos[v]);
    cycle.push(v);
    Err(cycle)
}

/// Deduplicated adjacency in compressed-row form.
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn new(n: usize, arcs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut arcs: Vec<(usize, usize)> = arcs.collect();
        arcs.sort_unstable();
        arcs.dedup();
        let mut offsets = vec![0; n + 1];
        for &(s, _) in &arcs {
            offsets[s + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            offsets,
            targets: arcs.into_iter().map(|(_, t)| t).collect(),
        }
    }

    fn row(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Reachable targets of one source node.
#[derive(Clone, Debug)]
enum ReachSet {
    /// Sorted target indices.
    Sparse(Box<[u32]>),
    /// One bit per node plus the cardinality.
    Dense(Box<[u64]>, usize),
}

impl ReachSet {
    fn build(sorted: &[u32], n: usize) -> Self {
        // a bitset costs n/8 bytes, a sorted list 4 bytes per member
        if sorted.len() * 32 >= n && n > 0 {
            let mut bits = vec![0u64; n.div_ceil(64)].into_boxed_slice();
            for &t in sorted {
                bits[t as usize / 64] |= 1 << (t % 64);
            }
            ReachSet::Dense(bits, sorted.len())
        } else {
            ReachSet::Sparse(sorted.into())
        }
    }

    #[inline]
    fn contains(&self, t: usize) -> bool {
        match self {
            ReachSet::Sparse(v) => v.binary_search(&(t as u32)).is_ok(),
            ReachSet::Dense(bits, _) => bits[t / 64] >> (t % 64) & 1 == 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            ReachSet::Sparse(v) => v.len(),
            ReachSet::Dense(_, len) => *len,
        }
    }

    fn iter(&self) -> Box<dyn Iterator<Item = usize> + '_> {
        match self {
            ReachSet::Sparse(v) => Box::new(v.iter().map(|&t| t as usize)),
            ReachSet::Dense(bits, _) => Box::new(bits.iter().enumerate().flat_map(|(w, &word)| {
                let mut word = word;
                std::iter::from_fn(move || {
                    if word == 0 {
                        return None;
                    }
                    let b = word.trailing_zeros() as usize;
                    word &= word - 1;
                    Some(w * 64 + b)
                })
            })),
        }
    }
}

/// Per-source reachability of an acyclic pair set.
#[derive(Clone, Debug)]
pub struct Closure {
    reach: Vec<ReachSet>,
    len: usize,
}

impl Closure {
    /// Close `pairs` over `num_nodes` nodes. Rejects out-of-range endpoints and cycles.
    ///
    /// Nodes are visited so that every successor is finished first; a node's
    /// reach set is the union of its successors and their reach sets.
    pub fn from_pairs(pairs: &[Pair], num_nodes: usize) -> Result<Self> {
        for &(x, y) in pairs {
            for id in [x, y] {
                if id.index() >= num_nodes {
                    return Err(Error::Index {
                        what: "node",
                        index: id.index(),
                        bound: num_nodes,
                    });
                }
            }
            if x == y {
                return Err(Error::Cyclic {
                    cycle: vec![x.to_string(), y.to_string()],
                });
            }
        }
        let order = topological_order(pairs, num_nodes).map_err(|cycle| Error::Cyclic {
            cycle: cycle.iter().map(|&i| NodeId::from_index(i).to_string()).collect(),
        })?;
        let succ = Csr::new(
            num_nodes,
            pairs.iter().map(|&(x, y)| (x.index(), y.index())),
        );

        let mut reach: Vec<Option<ReachSet>> = vec![None; num_nodes];
        let mut marks = vec![0u64; num_nodes.div_ceil(64)];
        let mut touched: Vec<u32> = Vec::new();
        let mut len = 0;
        for v in order {
            for &s in succ.row(v) {
                mark(&mut marks, &mut touched, s);
                let finished = reach[s].as_ref().expect("successor finished first");
                for t in finished.iter() {
                    mark(&mut marks, &mut touched, t);
                }
            }
            touched.sort_unstable();
            len += touched.len();
            reach[v] = Some(ReachSet::build(&touched, num_nodes));
            for &t in &touched {
                marks[t as usize / 64] = 0;
            }
            touched.clear();
        }
        Ok(Closure {
            reach: reach.into_iter().map(|r| r.expect("all visited")).collect(),
            len,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.reach.len()
    }

    /// Number of pairs in the closed relation.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Membership of `(x, y)`, with range checking.
    pub fn contains(&self, x: NodeId, y: NodeId) -> Result<bool> {
        let n = self.num_nodes();
        for id in [x, y] {
            if id.index() >= n {
                return Err(Error::Index {
                    what: "node",
                    index: id.index(),
                    bound: n,
                });
            }
        }
        Ok(self.holds(x, y))
    }

    /// Membership of `(x, y)`. Panics on out-of-range ids.
    #[inline]
    pub fn holds(&self, x: NodeId, y: NodeId) -> bool {
        let r = &self.reach[x.index()];
        y.index() < self.reach.len() && r.contains(y.index())
    }

    /// Targets reachable from `x`, ascending.
    pub fn reachable(&self, x: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.reach[x.index()].iter().map(NodeId::from_index)
    }

    pub fn out_degree(&self, x: NodeId) -> usize {
        self.reach[x.index()].len()
    }

    /// All pairs, ordered by source then target.
    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        (0..self.num_nodes()).flat_map(move |x| {
            let x = NodeId::from_index(x);
            self.reachable(x).map(move |y| (x, y))
        })
    }
}

#[inline]
fn mark(marks: &mut [u64], touched: &mut Vec<u32>, t: usize) {
    let (w, b) = (t / 64, t % 64);
    if marks[w] >> b & 1 == 0 {
        marks[w] |= 1 << b;
        touched.push(t as u32);
    }
}
