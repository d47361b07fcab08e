#![allow(dead_code)]

use artgnn::autodiff::{Tape, TripletColumns, Var};
use artgnn::data::{generate_synthetic, SyntheticConfig};
use artgnn::model::BoundParams;
use artgnn::tensor::L2_EPSILON;
use artgnn::{ArtistGraph, Matrix, ModelConfig, ModelParams, Result, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ten nodes in two loosely bridged groups, weighted edges, 3 features.
pub fn ten_node_graph() -> ArtistGraph {
    let edges = vec![
        (0, 1, 1.0),
        (0, 2, 0.5),
        (1, 2, 2.0),
        (2, 3, 1.5),
        (3, 4, 0.7),
        (1, 4, 1.2),
        (4, 5, 0.3),
        (5, 6, 1.0),
        (6, 7, 2.5),
        (5, 7, 0.9),
        (7, 8, 1.1),
        (8, 9, 0.6),
        (6, 9, 1.4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let features = Matrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
    ArtistGraph::from_index_edges(
        (0..10).map(|i| format!("v{i}")).collect(),
        features,
        vec![Split::Train; 10],
        edges,
        true,
        0,
    )
    .unwrap()
}

pub fn small_model(gc_layers: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        gc_layers,
        gc_width: 6,
        backend_widths: vec![5, 5],
        output_dim: 4,
    }
}

pub const TRIPLETS: [TripletColumns; 6] = [
    [0, 1, 7],
    [2, 3, 9],
    [4, 5, 0],
    [6, 7, 2],
    [8, 9, 3],
    [5, 6, 1],
];

/// Mean triplet loss of the whole graph embedded as one batch.
pub fn objective<'a>(
    config: &'a ModelConfig,
    graph: &'a ArtistGraph,
    margin: f64,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a {
    let shell = ModelParams::init(config, 0).unwrap();
    move |tape, vars| {
        let bound = BoundParams::from_vars(vars.to_vec());
        let batch: Vec<usize> = (0..graph.node_count()).collect();
        let (raw, _) = shell.embed_on_tape(tape, &bound, graph, &batch)?;
        let normalized = tape.l2_normalize_columns(raw, L2_EPSILON)?;
        tape.triplet_loss(normalized, TRIPLETS.to_vec(), margin)
    }
}

/// Two disconnected cliques of `size` training nodes with
/// well-separated features.
pub fn two_cliques(size: usize) -> ArtistGraph {
    let config = SyntheticConfig {
        communities: 2,
        community_size: size,
        p_in: 1.0,
        p_out: 0.0,
        feature_dim: 4,
        feature_noise: 0.5,
        seed: 2,
    };
    let g = generate_synthetic(&config).unwrap().graph;
    g.with_splits(vec![Split::Train; g.node_count()]).unwrap()
}
