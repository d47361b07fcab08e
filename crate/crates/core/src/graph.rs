//! The similarity graph: nodes with features and split labels, a symmetric
//! weighted adjacency, and per-node pruned neighbor lists used for
//! aggregation.
//!
//! Neighbor lists are pruned once, at build time, to the
//! [`MAX_NEIGHBORS`] strongest connections (ties broken by ascending node
//! index). Unweighted graphs keep a seeded uniform sample of
//! [`MAX_NEIGHBORS`] connections, each with weight 1. Pruning is applied
//! per node after symmetrization, so `u` may aggregate `v` without `v`
//! aggregating `u`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SparseMatrix};

/// Cap on aggregated neighbors per node.
pub const MAX_NEIGHBORS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An edge as read from an edge list, endpoints given by external id.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEdge {
    pub source: String,
    pub target: String,
    pub weight: Option<f64>,
}

impl RawEdge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, weight: Option<f64>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            weight,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArtistGraph {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    /// D x V, one column per node.
    features: Arc<Matrix>,
    split: Vec<Split>,
    /// Every undirected edge in both directions, rows ascending.
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Pruned aggregation neighbors, ascending by index.
    kept: Vec<Vec<(usize, f64)>>,
    weighted: bool,
    prune_seed: u64,
}

impl ArtistGraph {
    /// Builds a graph from id-keyed edges.
    ///
    /// Either every edge carries a weight or none does. Repeated edges keep
    /// the largest weight; self-loops are dropped.
    pub fn build(
        node_ids: Vec<String>,
        features: Matrix,
        split: Vec<Split>,
        edges: &[RawEdge],
        prune_seed: u64,
    ) -> Result<Self> {
        let index = index_ids(&node_ids)?;
        let weighted = match (
            edges.iter().all(|e| e.weight.is_some()),
            edges.iter().all(|e| e.weight.is_none()),
        ) {
            (true, _) => !edges.is_empty(),
            (false, true) => false,
            (false, false) => {
                return Err(Error::Graph(
                    "edge list mixes weighted and unweighted edges".into(),
                ))
            }
        };
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnknownNode(id.to_string()))
        };
        let mut indexed = Vec::with_capacity(edges.len());
        for e in edges {
            let (u, v) = (lookup(&e.source)?, lookup(&e.target)?);
            indexed.push((u, v, e.weight.unwrap_or(1.0)));
        }
        Self::assemble(node_ids, index, Arc::new(features), split, indexed, weighted, prune_seed)
    }

    /// Builds a graph from index-keyed edges.
    pub fn from_index_edges(
        node_ids: Vec<String>,
        features: Matrix,
        split: Vec<Split>,
        edges: Vec<(usize, usize, f64)>,
        weighted: bool,
        prune_seed: u64,
    ) -> Result<Self> {
        let index = index_ids(&node_ids)?;
        Self::assemble(node_ids, index, Arc::new(features), split, edges, weighted, prune_seed)
    }

    fn assemble(
        node_ids: Vec<String>,
        index: HashMap<String, usize>,
        features: Arc<Matrix>,
        split: Vec<Split>,
        edges: Vec<(usize, usize, f64)>,
        weighted: bool,
        prune_seed: u64,
    ) -> Result<Self> {
        let n = node_ids.len();
        if features.cols() != n {
            return Err(Error::Graph(format!(
                "feature matrix has {} columns for {n} nodes",
                features.cols()
            )));
        }
        if split.len() != n {
            return Err(Error::Graph(format!(
                "{} split labels for {n} nodes",
                split.len()
            )));
        }
        let mut undirected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::NodeOutOfRange {
                    index: u.max(v),
                    count: n,
                });
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) has non-positive weight {w}",
                    node_ids[u], node_ids[v]
                )));
            }
            if u == v {
                continue;
            }
            let w = if weighted { w } else { 1.0 };
            let slot = undirected.entry((u.min(v), u.max(v))).or_insert(w);
            *slot = slot.max(w);
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(u, v), &w) in &undirected {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(v, _)| v);
        }
        let kept = adjacency
            .iter()
            .enumerate()
            .map(|(node, list)| prune(node, list, weighted, prune_seed))
            .collect();
        Ok(Self {
            node_ids,
            index,
            features,
            split,
            adjacency,
            kept,
            weighted,
            prune_seed,
        })
    }

    /// Same nodes and features, keeping only edges for which `keep`
    /// holds. Neighbor lists are pruned afresh.
    pub fn restrict_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let edges = self.edges().filter(|&(u, v, _)| keep(u, v)).collect();
        Self::assemble(
            self.node_ids.clone(),
            self.index.clone(),
            self.features.clone(),
            self.split.clone(),
            edges,
            self.weighted,
            self.prune_seed,
        )
    }

    /// Graph containing only edges between training nodes.
    pub fn training_subgraph(&self) -> Result<Self> {
        self.restrict_edges(|u, v| self.split[u] == Split::Train && self.split[v] == Split::Train)
    }

    /// Replaces node features; the adjacency is shared.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.cols() != self.node_count() {
            return Err(Error::Graph(format!(
                "feature matrix has {} columns for {} nodes",
                features.cols(),
                self.node_count()
            )));
        }
        let mut g = self.clone();
        g.features = Arc::new(features);
        Ok(g)
    }

    pub fn with_splits(&self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.node_count() {
            return Err(Error::Graph(format!(
                "{} split labels for {} nodes",
                split.len(),
                self.node_count()
            )));
        }
        let mut g = self.clone();
        g.split = split;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, v: usize) -> &str {
        &self.node_ids[v]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.rows()
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn split_of(&self, v: usize) -> Split {
        self.split[v]
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| self.split[v] == split)
            .collect()
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn prune_seed(&self) -> u64 {
        self.prune_seed
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.node_count() {
            return Err(Error::NodeOutOfRange {
                index: v,
                count: self.node_count(),
            });
        }
        Ok(())
    }

    /// All neighbors of `v` before pruning.
    pub fn all_neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    /// Aggregation neighbors of `v` after pruning, excluding `v`.
    pub fn kept_neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.kept[v]
    }

    /// Post-pruning degree.
    pub fn degree(&self, v: usize) -> usize {
        self.kept[v].len()
    }

    pub fn is_adjacent(&self, u: usize, v: usize) -> bool {
        self.adjacency[u]
            .binary_search_by_key(&v, |&(n, _)| n)
            .is_ok()
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adjacency[u]
            .binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|i| self.adjacency[u][i].1)
    }

    /// Undirected edges as `(u, v, weight)` with `u < v`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&(v, _)| v > u)
                .map(move |&(v, w)| (u, v, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Symmetric V x V adjacency with all stored edges.
    pub fn adjacency_matrix(&self) -> SparseMatrix {
        let entries = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().map(move |&(v, w)| (v, u, w)))
            .collect();
        SparseMatrix::from_triplets(self.node_count(), self.node_count(), entries)
            .expect("adjacency lists are deduplicated")
    }

    /// The pruned neighbors of `v` plus `v` itself, ascending.
    pub fn neighborhood(&self, v: usize) -> Result<Vec<usize>> {
        self.check(v)?;
        let mut out: Vec<usize> = self.kept[v].iter().map(|&(n, _)| n).collect();
        let pos = out.partition_point(|&n| n < v);
        out.insert(pos, v);
        Ok(out)
    }

    /// Traces the nodes needed to embed `batch` through `layers` graph
    /// convolutions.
    ///
    /// Layer `k` lists `V_{k+1}` first, in its own order, followed by the
    /// newly reached nodes in ascending order, so every layer is a prefix
    /// of the layer before it.
    pub fn trace_batch(&self, batch: &[usize], layers: usize) -> Result<TraceResult> {
        if batch.is_empty() {
            return Err(Error::Graph("cannot trace an empty batch".into()));
        }
        let mut seen = HashSet::with_capacity(batch.len());
        for &v in batch {
            self.check(v)?;
            if !seen.insert(v) {
                return Err(Error::Graph(format!("batch lists node {v} twice")));
            }
        }
        let mut sets = vec![batch.to_vec()];
        for _ in 0..layers {
            let last = sets.last().expect("nonempty");
            let mut members: HashSet<usize> = last.iter().copied().collect();
            let mut fresh: Vec<usize> = Vec::new();
            for &v in last {
                for &(n, _) in &self.kept[v] {
                    if members.insert(n) {
                        fresh.push(n);
                    }
                }
            }
            fresh.sort_unstable();
            let mut next = last.clone();
            next.extend(fresh);
            sets.push(next);
        }
        sets.reverse();
        let slices = (1..=layers)
            .map(|k| {
                self.slice_normalized_adjacency(&sets[k - 1], &sets[k])
                    .map(Arc::new)
            })
            .collect::<Result<_>>()?;
        Ok(TraceResult {
            layers: sets,
            slices,
        })
    }

    /// Aggregation matrix from `source` rows to `target` columns: entry
    /// `(i, j)` is the weight of edge `(source[i], target[j])` over the
    /// total kept weight of `target[j]`. Self weight is excluded; a
    /// target without neighbors gets an all-zero column.
    pub fn slice_normalized_adjacency(
        &self,
        source: &[usize],
        target: &[usize],
    ) -> Result<SparseMatrix> {
        let pos: HashMap<usize, usize> = source.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut entries = Vec::new();
        for (j, &t) in target.iter().enumerate() {
            self.check(t)?;
            if !pos.contains_key(&t) {
                return Err(Error::Graph(format!(
                    "target node {t} is not in the source set"
                )));
            }
            let total: f64 = self.kept[t].iter().map(|&(_, w)| w).sum();
            for &(n, w) in &self.kept[t] {
                let &i = pos.get(&n).ok_or_else(|| {
                    Error::Graph(format!(
                        "neighbor {n} of target {t} is missing from the source set"
                    ))
                })?;
                entries.push((i, j, w / total));
            }
        }
        SparseMatrix::from_triplets(source.len(), target.len(), entries)
    }

    /// Fraction of `subset` edges `(u, v)` whose endpoints remain within
    /// two hops of each other once the edge itself is removed, i.e. share
    /// a neighbor in the unpruned graph. Empty subsets give 0.
    pub fn two_hop_coverage(&self, subset: &[(usize, usize)]) -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        let covered = subset
            .iter()
            .filter(|&&(u, v)| self.share_neighbor(u, v))
            .count();
        covered as f64 / subset.len() as f64
    }

    fn share_neighbor(&self, u: usize, v: usize) -> bool {
        let (a, b) = (&self.adjacency[u], &self.adjacency[v]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let (x, y) = (a[i].0, b[j].0);
            if x == y {
                if x != u && x != v {
                    return true;
                }
                i += 1;
                j += 1;
            } else if x < y {
                i += 1;
            } else {
                j += 1;
            }
        }
        false
    }
}

fn index_ids(node_ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(node_ids.len());
    for (i, id) in node_ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::Graph(format!("duplicate node id `{id}`")));
        }
    }
    Ok(index)
}

fn prune(node: usize, list: &[(usize, f64)], weighted: bool, seed: u64) -> Vec<(usize, f64)> {
    if list.len() <= MAX_NEIGHBORS {
        return list.to_vec();
    }
    let mut kept: Vec<(usize, f64)> = if weighted {
        let mut ranked = list.to_vec();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(MAX_NEIGHBORS);
        ranked
    } else {
        // One stream per node keeps the sample independent of build order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(node as u64);
        index::sample(&mut rng, list.len(), MAX_NEIGHBORS)
            .into_iter()
            .map(|i| (list[i].0, 1.0))
            .collect()
    };
    kept.sort_by_key(|&(v, _)| v);
    kept
}

/// Node sets per layer and the aggregation slices between them.
#[derive(Clone, Debug)]
pub struct TraceResult {
    /// `layers[k]` is `V_k`; `layers[K]` is the batch.
    layers: Vec<Vec<usize>>,
    /// `slices[k-1]` is `A_k`, shape `|V_{k-1}| x |V_k|`.
    slices: Vec<Arc<SparseMatrix>>,
}

impl TraceResult {
    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn layer(&self, k: usize) -> &[usize] {
        &self.layers[k]
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.layers[0]
    }

    pub fn batch(&self) -> &[usize] {
        self.layers.last().expect("trace has at least one layer")
    }

    /// `A_k` for `k` in `1..=depth`.
    pub fn slice(&self, k: usize) -> &Arc<SparseMatrix> {
        &self.slices[k - 1]
    }

    /// Columns of `V_{k-1}` that hold the nodes of `V_k`.
    pub fn carried_columns(&self, k: usize) -> Vec<usize> {
        (0..self.layers[k].len()).collect()
    }

    /// Every `(source node, target node)` pair aggregated by the trace.
    pub fn edges_read(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slices.iter().enumerate().flat_map(move |(i, s)| {
            let (src, dst) = (&self.layers[i], &self.layers[i + 1]);
            s.entries().map(move |(r, c, _)| (src[r], dst[c]))
        })
    }
}
