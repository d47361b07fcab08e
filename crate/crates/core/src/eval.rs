//! Retrieval evaluation on held-out nodes.
//!
//! The evaluation graph keeps training edges and edges between training
//! and evaluation nodes; edges among evaluation nodes are hidden and serve
//! as ground truth. Each evaluation node ranks every other evaluation node
//! by embedding distance and is scored with NDCG@K.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArtistGraph, Split};
use crate::model::ModelParams;
use crate::tensor::{l2_normalize_columns, Matrix, L2_EPSILON};

pub const DEFAULT_CUTOFF: usize = 200;

/// Training edges plus training-to-`split` edges. Edges among `split`
/// nodes and edges touching any other held-out split are dropped.
pub fn build_eval_graph(full: &ArtistGraph, split: Split) -> Result<ArtistGraph> {
    let splits = full.splits();
    full.restrict_edges(|u, v| match (splits[u], splits[v]) {
        (Split::Train, Split::Train) => true,
        (Split::Train, s) | (s, Split::Train) => s == split,
        _ => false,
    })
}

/// Orders `candidates` (other than `query`) by ascending distance between
/// columns of `embeddings`, ties by ascending node index. Column `i` of
/// `embeddings` belongs to `candidates[i]`; a query that is not among the
/// candidates yields an empty ranking.
pub fn rank_candidates(embeddings: &Matrix, candidates: &[usize], query: usize) -> Vec<usize> {
    let Some(q) = candidates.iter().position(|&c| c == query) else {
        return Vec::new();
    };
    let qv = embeddings.column(q);
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c != query)
        .map(|(i, &c)| {
            let d = (0..embeddings.rows())
                .map(|r| {
                    let x = embeddings.get(r, i) - qv[r];
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            (d, c)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, c)| c).collect()
}

/// NDCG@K with binary gain and discount `1 / log2(rank + 1)`.
///
/// The ideal list puts `min(|relevant|, k)` relevant items first. Returns
/// 0 when nothing is relevant.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let ideal_hits = relevant.len().min(k);
    if ideal_hits == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| relevant.contains(v))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=ideal_hits).map(discount).sum();
    dcg / idcg
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtistScore {
    pub node_id: String,
    pub ndcg: f64,
    pub relevant: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub k: usize,
    pub candidate_count: usize,
    /// Evaluation nodes with at least one hidden relation, in node order.
    pub per_artist: Vec<ArtistScore>,
    pub mean_ndcg: f64,
    /// Hidden edges aggregated while embedding; always 0 for a sound
    /// evaluation graph.
    pub hidden_edges_read: usize,
    #[serde(default)]
    pub fingerprint: String,
}

/// Scores `embeddings` (columns aligned with `nodes`) against the
/// relations among `nodes` in `truth`.
pub fn score_embeddings(
    truth: &ArtistGraph,
    nodes: &[usize],
    embeddings: &Matrix,
    k: usize,
) -> Vec<ArtistScore> {
    let normalized = l2_normalize_columns(embeddings, L2_EPSILON);
    let members: HashSet<usize> = nodes.iter().copied().collect();
    let scores: Vec<Option<ArtistScore>> = nodes
        .par_iter()
        .map(|&query| {
            let relevant: HashSet<usize> = truth
                .all_neighbors(query)
                .iter()
                .map(|&(v, _)| v)
                .filter(|v| members.contains(v))
                .collect();
            if relevant.is_empty() {
                return None;
            }
            let ranked = rank_candidates(&normalized, nodes, query);
            Some(ArtistScore {
                node_id: truth.node_id(query).to_string(),
                ndcg: ndcg_at_k(&ranked, &relevant, k),
                relevant: relevant.len(),
            })
        })
        .collect();
    scores.into_iter().flatten().collect()
}

fn summarize(split: Split, k: usize, candidate_count: usize, per_artist: Vec<ArtistScore>, hidden_edges_read: usize) -> EvalReport {
    let mean_ndcg = if per_artist.is_empty() {
        0.0
    } else {
        per_artist.iter().map(|s| s.ndcg).sum::<f64>() / per_artist.len() as f64
    };
    EvalReport {
        split,
        k,
        candidate_count,
        per_artist,
        mean_ndcg,
        hidden_edges_read,
        fingerprint: String::new(),
    }
}

/// Embeds every `split` node over the evaluation graph and scores the
/// rankings against the hidden relations of `full`.
pub fn evaluate(params: &ModelParams, full: &ArtistGraph, split: Split, k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::Config("NDCG cutoff must be at least 1".into()));
    }
    if split == Split::Train {
        return Err(Error::Config("evaluate on validation or test, not train".into()));
    }
    let nodes = full.nodes_in(split);
    if nodes.is_empty() {
        return Err(Error::Config(format!("split `{split}` has no nodes")));
    }
    let eval_graph = build_eval_graph(full, split)?;
    let splits = full.splits();
    let mut hidden_edges_read = 0usize;
    let embeddings = params.embed_nodes(&eval_graph, &nodes, |trace| {
        hidden_edges_read += trace
            .edges_read()
            .filter(|&(s, t)| splits[s] == split && splits[t] == split)
            .count();
    })?;
    let per_artist = score_embeddings(full, &nodes, &embeddings, k);
    Ok(summarize(split, k, nodes.len(), per_artist, hidden_edges_read))
}

/// Scores externally supplied embeddings (one column per `split` node,
/// in node order) under the same protocol.
pub fn evaluate_embeddings(full: &ArtistGraph, split: Split, embeddings: &Matrix, k: usize) -> Result<EvalReport> {
    let nodes = full.nodes_in(split);
    if embeddings.cols() != nodes.len() {
        return Err(Error::Shape(format!(
            "{} embedding columns for {} `{split}` nodes",
            embeddings.cols(),
            nodes.len()
        )));
    }
    let per_artist = score_embeddings(full, &nodes, embeddings, k);
    Ok(summarize(split, k, nodes.len(), per_artist, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize, split: &[Split], edges: &[(usize, usize)]) -> ArtistGraph {
        ArtistGraph::from_index_edges(
            (0..n).map(|i| format!("a{i}")).collect(),
            Matrix::zeros(1, n),
            split.to_vec(),
            edges.iter().map(|&(u, v)| (u, v, 1.0)).collect(),
            false,
            0,
        )
        .unwrap()
    }

    #[test]
    fn eval_graph_drops_hidden_edges() {
        use Split::*;
        let g = labelled(3, &[Train, Train, Train], &[(0, 1), (1, 2)]);
        assert_eq!(build_eval_graph(&g, Validation).unwrap().edge_count(), 2);

        let g = labelled(3, &[Train, Validation, Validation], &[(1, 2), (0, 1)]);
        let e = build_eval_graph(&g, Validation).unwrap();
        assert_eq!(e.edges().map(|(u, v, _)| (u, v)).collect::<Vec<_>>(), vec![(0, 1)]);

        let g = labelled(3, &[Train, Validation, Validation], &[(0, 1), (0, 2), (1, 2)]);
        let e = build_eval_graph(&g, Validation).unwrap();
        assert!(e.is_adjacent(0, 1) && e.is_adjacent(0, 2) && !e.is_adjacent(1, 2));
    }

    #[test]
    fn eval_graph_drops_other_heldout_split() {
        use Split::*;
        let g = labelled(3, &[Train, Validation, Test], &[(0, 1), (0, 2), (1, 2)]);
        let e = build_eval_graph(&g, Validation).unwrap();
        assert_eq!(e.edge_count(), 1);
    }

    #[test]
    fn ranking_examples() {
        // Candidates 10, 11, 12 at distances 0.5, 0.2, 0.9 from query 9.
        let emb = Matrix::from_rows(&[&[0.0, 0.5, 0.2, 0.9]]);
        assert_eq!(rank_candidates(&emb, &[9, 10, 11, 12], 9), vec![11, 10, 12]);

        let emb = Matrix::from_rows(&[&[0.0, 1.0, -1.0]]);
        assert_eq!(rank_candidates(&emb, &[5, 8, 3], 5), vec![3, 8]);
    }

    #[test]
    fn ndcg_examples() {
        let rel: HashSet<usize> = [1, 2].into_iter().collect();
        assert_eq!(ndcg_at_k(&[2, 1, 7, 8], &rel, 200), 1.0);
        let v = ndcg_at_k(&[1, 9, 2], &rel, 200);
        assert!((v - 0.91972).abs() < 1e-5, "{v}");
        assert_eq!(ndcg_at_k(&[5, 6, 1, 2], &rel, 2), 0.0);
        assert_eq!(ndcg_at_k(&[5, 6], &HashSet::new(), 2), 0.0);
    }

    #[test]
    fn idcg_uses_at_most_k_terms() {
        let rel: HashSet<usize> = (0..10).collect();
        assert_eq!(ndcg_at_k(&[0, 1, 2], &rel, 3), 1.0);
    }

    #[test]
    fn oracle_embeddings_score_perfectly() {
        use Split::*;
        // Two hidden cliques among validation nodes 1..=6.
        let split = [Train, Validation, Validation, Validation, Validation, Validation, Validation];
        let edges = [(1, 2), (2, 3), (1, 3), (4, 5), (5, 6), (4, 6), (0, 1)];
        let g = labelled(7, &split, &edges);
        let emb = Matrix::from_fn(2, 6, |r, c| if (c < 3) == (r == 0) { 1.0 } else { 0.0 });
        let report = evaluate_embeddings(&g, Validation, &emb, 200).unwrap();
        assert_eq!(report.per_artist.len(), 6);
        assert_eq!(report.mean_ndcg, 1.0);
    }

    #[test]
    fn artists_without_hidden_relations_are_excluded() {
        use Split::*;
        let g = labelled(4, &[Train, Validation, Validation, Validation], &[(1, 2), (0, 3)]);
        let emb = Matrix::from_rows(&[&[0.0, 1.0, 5.0]]);
        let report = evaluate_embeddings(&g, Validation, &emb, 200).unwrap();
        let ids: Vec<_> = report.per_artist.iter().map(|s| s.node_id.as_str()).collect();
        assert_eq!(ids, vec!["a1", "a2"]);
    }
}
