//! Sparse directed graphs: edge-list I/O, degrees, and the connectivity
//! queries the intersection-with-attachment procedure relies on.
//!
//! A [`DirectedGraph`] stores its edges twice, once grouped by source and once
//! grouped by target, so that out-neighbours and in-neighbours are both
//! available in `O(deg)`. Graphs are immutable after construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

/// 0-based node index.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: node id {id} is negative after rebasing")]
    Range { line: usize, id: i64 },
    #[error("edge ({src}, {dst}) has an endpoint outside [0, {n})")]
    EndpointOutOfRange { src: usize, dst: usize, n: usize },
    #[error("node {node} is outside [0, {n})")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index base used by text files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexBase {
    #[default]
    Zero,
    One,
}

impl IndexBase {
    pub fn offset(self) -> i64 {
        match self {
            IndexBase::Zero => 0,
            IndexBase::One => 1,
        }
    }

    pub fn from_offset(base: u8) -> Option<Self> {
        match base {
            0 => Some(IndexBase::Zero),
            1 => Some(IndexBase::One),
            _ => None,
        }
    }
}

/// Unweighted directed graph in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    out_offsets: Vec<usize>,
    out_targets: Vec<NodeId>,
    in_offsets: Vec<usize>,
    in_sources: Vec<NodeId>,
}

impl DirectedGraph {
    /// Builds a graph over `n` nodes. Duplicate pairs are collapsed.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(GraphError::EndpointOutOfRange { src, dst, n });
            }
            pairs.push((src, dst));
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self::from_sorted_unique(n, &pairs))
    }

    /// `pairs` must be sorted and free of duplicates.
    fn from_sorted_unique(n: usize, pairs: &[(NodeId, NodeId)]) -> Self {
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for &(s, d) in pairs {
            out_offsets[s + 1] += 1;
            in_offsets[d + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let out_targets: Vec<NodeId> = pairs.iter().map(|&(_, d)| d).collect();
        // Sources arrive in ascending order, so each in-list ends up sorted.
        let mut in_sources = vec![0; pairs.len()];
        let mut cursor = in_offsets.clone();
        for &(s, d) in pairs {
            in_sources[cursor[d]] = s;
            cursor[d] += 1;
        }
        DirectedGraph {
            n,
            out_offsets,
            out_targets,
            in_offsets,
            in_sources,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_sorted_unique(n, &[])
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.out_targets.len()
    }

    /// Sorted targets of edges leaving `i`.
    pub fn out_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.out_targets[self.out_offsets[i]..self.out_offsets[i + 1]]
    }

    /// Sorted sources of edges entering `j`.
    pub fn in_neighbors(&self, j: NodeId) -> &[NodeId] {
        &self.in_sources[self.in_offsets[j]..self.in_offsets[j + 1]]
    }

    pub fn out_degree(&self, i: NodeId) -> usize {
        self.out_offsets[i + 1] - self.out_offsets[i]
    }

    pub fn in_degree(&self, j: NodeId) -> usize {
        self.in_offsets[j + 1] - self.in_offsets[j]
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        i < self.n && j < self.n && self.out_neighbors(i).binary_search(&j).is_ok()
    }

    /// Edges in (source, target) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n).flat_map(move |i| self.out_neighbors(i).iter().map(move |&j| (i, j)))
    }

    pub fn self_loop_count(&self) -> usize {
        (0..self.n).filter(|&i| self.has_edge(i, i)).count()
    }

    pub fn transpose(&self) -> Self {
        let mut pairs: Vec<_> = self.edges().map(|(i, j)| (j, i)).collect();
        pairs.sort_unstable();
        Self::from_sorted_unique(self.n, &pairs)
    }

    /// Writes one `src dst` line per edge.
    pub fn to_edge_list(&self, base: IndexBase) -> String {
        let off = base.offset() as usize;
        let mut text = String::with_capacity(self.edge_count() * 8);
        for (i, j) in self.edges() {
            let _ = writeln!(text, "{} {}", i + off, j + off);
        }
        text
    }
}

/// Out- and in-degree of every node.
pub fn degrees(g: &DirectedGraph) -> (Vec<usize>, Vec<usize>) {
    let out = (0..g.n).map(|i| g.out_degree(i)).collect();
    let inn = (0..g.n).map(|j| g.in_degree(j)).collect();
    (out, inn)
}

fn parse_id(token: &str, line: usize, base: IndexBase) -> Result<usize, GraphError> {
    let raw: i64 = token.parse().map_err(|_| GraphError::Parse {
        line,
        message: format!("expected an integer node id, found {token:?}"),
    })?;
    let id = raw - base.offset();
    if id < 0 {
        return Err(GraphError::Range { line, id });
    }
    Ok(id as usize)
}

/// Splits a data line into exactly two tokens. Blank and `#` lines yield `None`.
fn two_tokens(text: &str, line: usize) -> Result<Option<(&str, &str)>, GraphError> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut it = trimmed.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok(Some((a, b))),
        _ => Err(GraphError::Parse {
            line,
            message: format!("expected two whitespace-separated integers, found {trimmed:?}"),
        }),
    }
}

/// Reads an edge list. The node count is one more than the largest id seen.
pub fn read_edge_list<R: BufRead>(
    reader: R,
    base: IndexBase,
    drop_self_loops: bool,
) -> Result<DirectedGraph, GraphError> {
    let mut pairs = Vec::new();
    let mut n = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let Some((a, b)) = two_tokens(&line, line_no)? else {
            continue;
        };
        let src = parse_id(a, line_no, base)?;
        let dst = parse_id(b, line_no, base)?;
        n = n.max(src + 1).max(dst + 1);
        if drop_self_loops && src == dst {
            continue;
        }
        pairs.push((src, dst));
    }
    DirectedGraph::from_edges(n, pairs)
}

pub fn from_edge_list(
    text: &str,
    base: IndexBase,
    drop_self_loops: bool,
) -> Result<DirectedGraph, GraphError> {
    read_edge_list(text.as_bytes(), base, drop_self_loops)
}

/// Reads a `node_id label` file. Labels are kept as raw integers.
pub fn read_label_file<R: BufRead>(
    reader: R,
    base: IndexBase,
) -> Result<BTreeMap<NodeId, i64>, GraphError> {
    let mut labels = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let Some((a, b)) = two_tokens(&line, line_no)? else {
            continue;
        };
        let node = parse_id(a, line_no, base)?;
        let label: i64 = b.parse().map_err(|_| GraphError::Parse {
            line: line_no,
            message: format!("expected an integer label, found {b:?}"),
        })?;
        labels.insert(node, label);
    }
    Ok(labels)
}

/// Writes `node label` lines for nodes `0..labels.len()`.
pub fn write_labels(labels: &[usize], base: IndexBase) -> String {
    let off = base.offset() as usize;
    let mut text = String::new();
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(text, "{} {}", i + off, l);
    }
    text
}

/// Sorted, deduplicated set of nodes with O(1) membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    members: Vec<NodeId>,
    mask: Vec<bool>,
}

impl NodeSet {
    pub fn new<I: IntoIterator<Item = NodeId>>(n: usize, nodes: I) -> Result<Self, GraphError> {
        let mut mask = vec![false; n];
        for node in nodes {
            if node >= n {
                return Err(GraphError::NodeOutOfRange { node, n });
            }
            mask[node] = true;
        }
        Ok(Self::from_mask(mask))
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        let members = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        NodeSet { members, mask }
    }

    pub fn full(n: usize) -> Self {
        Self::from_mask(vec![true; n])
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.mask.get(node).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Size of the node universe the set lives in.
    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| a && b)
            .collect();
        NodeSet::from_mask(mask)
    }

    pub fn complement(&self) -> NodeSet {
        NodeSet::from_mask(self.mask.iter().map(|&m| !m).collect())
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Largest class; ties go to the class holding the smallest element.
    pub(crate) fn largest_class(&mut self) -> Vec<bool> {
        let n = self.parent.len();
        let roots: Vec<usize> = (0..n).map(|i| self.find(i)).collect();
        let mut best: Option<usize> = None;
        // Scanning nodes in order means the first root seen with a given size
        // holds the smallest member, so strict `>` implements the tie-break.
        for &r in &roots {
            match best {
                Some(b) if self.size[r] <= self.size[b] => {}
                _ => best = Some(r),
            }
        }
        match best {
            Some(b) => roots.iter().map(|&r| r == b).collect(),
            None => Vec::new(),
        }
    }
}

/// Largest weakly connected component.
pub fn largest_weak_component(g: &DirectedGraph) -> NodeSet {
    let mut uf = UnionFind::new(g.n);
    for (i, j) in g.edges() {
        uf.union(i, j);
    }
    NodeSet::from_mask(uf.largest_class())
}

/// Which Gram matrix of the adjacency to take components of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductSide {
    /// `A Aᵀ`: nodes linked when they share an out-neighbour.
    Left,
    /// `Aᵀ A`: nodes linked when they share an in-neighbour.
    Right,
}

/// Largest connected component of the nonzero pattern of `A Aᵀ` or `Aᵀ A`.
///
/// The product is never formed. For the left side, every node's in-list is a
/// clique in `A Aᵀ`, so chaining consecutive entries of each in-list through a
/// union-find yields the same components in `O(|E|)`.
pub fn product_component(g: &DirectedGraph, side: ProductSide) -> NodeSet {
    let mut uf = UnionFind::new(g.n);
    for hub in 0..g.n {
        let group = match side {
            ProductSide::Left => g.in_neighbors(hub),
            ProductSide::Right => g.out_neighbors(hub),
        };
        for w in group.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    NodeSet::from_mask(uf.largest_class())
}

/// Translation between the node ids of a graph and of one of its induced subgraphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    old_of_new: Vec<NodeId>,
    new_of_old: Vec<Option<NodeId>>,
}

impl IndexMap {
    pub fn to_new(&self, old: NodeId) -> Option<NodeId> {
        self.new_of_old.get(old).copied().flatten()
    }

    pub fn to_old(&self, new: NodeId) -> NodeId {
        self.old_of_new[new]
    }

    pub fn old_ids(&self) -> &[NodeId] {
        &self.old_of_new
    }
}

/// Subgraph on `s`, relabelled `0..|s|` in increasing order of original id.
pub fn induced_subgraph(
    g: &DirectedGraph,
    s: &NodeSet,
) -> Result<(DirectedGraph, IndexMap), GraphError> {
    if s.is_empty() {
        return Err(GraphError::EmptyNodeSet);
    }
    if s.universe() != g.n {
        if let Some(&bad) = s.members().iter().find(|&&m| m >= g.n) {
            return Err(GraphError::NodeOutOfRange { node: bad, n: g.n });
        }
    }
    let mut new_of_old = vec![None; g.n];
    for (new, &old) in s.members().iter().enumerate() {
        new_of_old[old] = Some(new);
    }
    let mut pairs = Vec::new();
    for (new_src, &old_src) in s.members().iter().enumerate() {
        for &old_dst in g.out_neighbors(old_src) {
            if let Some(new_dst) = new_of_old[old_dst] {
                pairs.push((new_src, new_dst));
            }
        }
    }
    // Relabelling is monotone, so `pairs` is already sorted.
    let sub = DirectedGraph::from_sorted_unique(s.len(), &pairs);
    Ok((
        sub,
        IndexMap {
            old_of_new: s.members().to_vec(),
            new_of_old,
        },
    ))
}
