//! Graph convolution front-end plus dense back-end.
//!
//! Layer `k` of the front-end computes, for the nodes `V_k` of a trace,
//!
//! ```text
//! N_k = elu(Q_k X_{k-1}) A_k
//! X_k = normalize(elu(W_k [N_k; X_{k-1}[., V_k]]))
//! ```
//!
//! where `A_k` is the column-normalized aggregation slice. The back-end is
//! a stack of ELU dense layers with biases and a linear head. With zero
//! graph convolutions the model is a plain feed-forward network over the
//! raw features.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{ArtistGraph, TraceResult};
use crate::tensor::{Matrix, L2_EPSILON};

pub const DEFAULT_GC_WIDTH: usize = 256;
pub const DEFAULT_BACKEND_WIDTHS: [usize; 2] = [256, 256];
pub const DEFAULT_OUTPUT_DIM: usize = 100;

const CHECKPOINT_FORMAT: &str = "artgnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Nodes embedded per forward pass when embedding large node sets.
const EMBED_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub gc_layers: usize,
    pub gc_width: usize,
    pub backend_widths: Vec<usize>,
    pub output_dim: usize,
}

impl ModelConfig {
    /// Standard widths: 256-unit graph convolutions, two 256-unit back-end
    /// layers and a 100-dimensional output.
    pub fn new(input_dim: usize, gc_layers: usize) -> Self {
        Self {
            input_dim,
            gc_layers,
            gc_width: DEFAULT_GC_WIDTH,
            backend_widths: DEFAULT_BACKEND_WIDTHS.to_vec(),
            output_dim: DEFAULT_OUTPUT_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.gc_width == 0
            || self.output_dim == 0
            || self.backend_widths.contains(&0)
        {
            return Err(Error::Config(format!("all widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Width of the front-end output, i.e. the back-end input.
    pub fn frontend_width(&self) -> usize {
        if self.gc_layers == 0 {
            self.input_dim
        } else {
            self.gc_width
        }
    }

    /// `(name, rows, cols)` of every parameter in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut width = self.input_dim;
        for k in 1..=self.gc_layers {
            out.push((format!("gc{k}.q"), self.gc_width, width));
            out.push((format!("gc{k}.w"), self.gc_width, self.gc_width + width));
            width = self.gc_width;
        }
        for (i, &h) in self.backend_widths.iter().enumerate() {
            out.push((format!("dense{}.w", i + 1), h, width));
            out.push((format!("dense{}.b", i + 1), h, 1));
            width = h;
        }
        out.push(("head.w".into(), self.output_dim, width));
        out.push(("head.b".into(), self.output_dim, 1));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

/// Parameters registered on a tape, in storage order.
#[derive(Clone, Debug)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    /// Wraps variables already registered in storage order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols) in config.layout() {
            let m = if name.ends_with(".b") {
                Matrix::zeros(rows, cols)
            } else {
                let bound = 1.0 / (cols as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
            };
            names.push(name);
            tensors.push(m);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Assembles parameters from explicit tensors, checking shapes
    /// against the config layout.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), t) in layout.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::Shape(format!(
                    "{name}: expected {r}x{c}, got {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            names: layout.into_iter().map(|l| l.0).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(
            self.tensors
                .iter()
                .enumerate()
                .map(|(i, t)| tape.param(ParamId(i), t.clone()))
                .collect(),
        )
    }

    /// Runs the graph convolutions over a trace. `x0` holds one column
    /// per node of `trace.input_nodes()`; the result has one column per
    /// batch node.
    pub fn gc_block_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        trace: &TraceResult,
        x0: Var,
    ) -> Result<Var> {
        let layers = self.config.gc_layers;
        if trace.depth() != layers {
            return Err(Error::Shape(format!(
                "trace depth {} for a model with {layers} graph convolutions",
                trace.depth()
            )));
        }
        let (rows, cols) = tape.value(x0).shape();
        if rows != self.config.input_dim || cols != trace.input_nodes().len() {
            return Err(Error::Shape(format!(
                "input features {rows}x{cols}, expected {}x{}",
                self.config.input_dim,
                trace.input_nodes().len()
            )));
        }
        let mut x = x0;
        for k in 1..=layers {
            let (q, w) = (bound.0[2 * (k - 1)], bound.0[2 * (k - 1) + 1]);
            let projected = tape.matmul(q, x)?;
            let projected = tape.elu(projected)?;
            let aggregated = tape.spmm(projected, trace.slice(k).clone())?;
            let carried = tape.select_columns(x, trace.carried_columns(k))?;
            let stacked = tape.concat_rows(aggregated, carried)?;
            let mixed = tape.matmul(w, stacked)?;
            let mixed = tape.elu(mixed)?;
            x = tape.l2_normalize_columns(mixed, L2_EPSILON)?;
        }
        Ok(x)
    }

    /// Dense ELU layers followed by the linear head. Output is not
    /// normalized.
    pub fn backend_on_tape(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let rows = tape.value(x).rows();
        if rows != self.config.frontend_width() {
            return Err(Error::Shape(format!(
                "back-end input has {rows} rows, expected {}",
                self.config.frontend_width()
            )));
        }
        let base = 2 * self.config.gc_layers;
        let mut h = x;
        for i in 0..self.config.backend_widths.len() {
            let z = tape.matmul(bound.0[base + 2 * i], h)?;
            let z = tape.add_bias(z, bound.0[base + 2 * i + 1])?;
            h = tape.elu(z)?;
        }
        let head = base + 2 * self.config.backend_widths.len();
        let z = tape.matmul(bound.0[head], h)?;
        tape.add_bias(z, bound.0[head + 1])
    }

    /// Traces `batch` in `graph` and records the full forward pass,
    /// returning raw embeddings (one column per batch node) and the trace.
    pub fn embed_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &ArtistGraph,
        batch: &[usize],
    ) -> Result<(Var, TraceResult)> {
        if graph.feature_dim() != self.config.input_dim {
            return Err(Error::InputDim {
                expected: self.config.input_dim,
                actual: graph.feature_dim(),
            });
        }
        let trace = graph.trace_batch(batch, self.config.gc_layers)?;
        let x0 = tape.input(graph.features().select_columns(trace.input_nodes())?);
        let xk = self.gc_block_on_tape(tape, bound, &trace, x0)?;
        let y = self.backend_on_tape(tape, bound, xk)?;
        Ok((y, trace))
    }

    pub fn gc_block_forward(&self, trace: &TraceResult, x0: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.input(x0.clone());
        let out = self.gc_block_on_tape(&mut tape, &bound, trace, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn backend_forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.input(x.clone());
        let out = self.backend_on_tape(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }

    /// Raw embeddings of `batch`, one column per node.
    pub fn embed_batch(&self, graph: &ArtistGraph, batch: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let (y, _) = self.embed_on_tape(&mut tape, &bound, graph, batch)?;
        Ok(tape.value(y).clone())
    }

    /// Embeds an arbitrary node list in fixed-size chunks. Columns follow
    /// `nodes`. Also hands every trace to `inspect`.
    pub fn embed_nodes(
        &self,
        graph: &ArtistGraph,
        nodes: &[usize],
        mut inspect: impl FnMut(&TraceResult),
    ) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.config.output_dim, nodes.len());
        for (chunk_idx, chunk) in nodes.chunks(EMBED_CHUNK).enumerate() {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let (y, trace) = self.embed_on_tape(&mut tape, &bound, graph, chunk)?;
            inspect(&trace);
            let y = tape.value(y);
            let offset = chunk_idx * EMBED_CHUNK;
            for r in 0..y.rows() {
                for c in 0..y.cols() {
                    out.set(r, offset + c, y.get(r, c));
                }
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| TensorRecord {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.as_slice().to_vec(),
                })
                .collect(),
            meta,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// JSON checkpoint: config, shape manifest and flattened row-major data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let layout = self.config.layout();
        for ((name, _, _), rec) in layout.iter().zip(&self.tensors) {
            if *name != rec.name {
                return Err(Error::Data(format!(
                    "checkpoint tensor `{}` where `{name}` was expected",
                    rec.name
                )));
            }
        }
        let tensors = self
            .tensors
            .iter()
            .map(|t| Matrix::from_vec(t.rows, t.cols, t.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_tensors(&self.config, tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Split;

    fn tiny_config(gc_layers: usize) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            gc_layers,
            gc_width: 4,
            backend_widths: vec![5, 4],
            output_dim: 2,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::new(8, 2);
        assert_eq!(ModelParams::init(&c, 4).unwrap(), ModelParams::init(&c, 4).unwrap());
        assert_ne!(ModelParams::init(&c, 4).unwrap(), ModelParams::init(&c, 5).unwrap());
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let p = ModelParams::init(&ModelConfig::new(8, 1), 1).unwrap();
        let w = p.get("dense2.w").unwrap();
        assert_eq!(w.cols(), 256);
        let max = w.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 0.0625 && max > 0.06, "{max}");
        assert!(p.get("dense1.b").unwrap().as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn baseline_allocates_no_graph_weights() {
        let p = ModelParams::init(&ModelConfig::new(8, 0), 1).unwrap();
        assert!(p.names().iter().all(|n| !n.starts_with("gc")));
        assert_eq!(p.names().len(), 6);
    }

    #[test]
    fn single_isolated_node_hand_case() {
        let config = ModelConfig {
            input_dim: 1,
            gc_layers: 1,
            gc_width: 1,
            backend_widths: vec![1],
            output_dim: 1,
        };
        let tensors = vec![
            Matrix::from_rows(&[&[1.0]]),
            Matrix::from_rows(&[&[1.0, 1.0]]),
            Matrix::from_rows(&[&[1.0]]),
            Matrix::zeros(1, 1),
            Matrix::from_rows(&[&[1.0]]),
            Matrix::zeros(1, 1),
        ];
        let p = ModelParams::from_tensors(&config, tensors).unwrap();
        let g = ArtistGraph::from_index_edges(
            vec!["a".into()],
            Matrix::from_rows(&[&[2.0]]),
            vec![Split::Train],
            vec![],
            false,
            0,
        )
        .unwrap();
        let trace = g.trace_batch(&[0], 1).unwrap();
        let out = p.gc_block_forward(&trace, &Matrix::from_rows(&[&[2.0]])).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);
    }

    #[test]
    fn zero_layers_pass_features_through() {
        let p = ModelParams::init(&tiny_config(0), 3).unwrap();
        let g = ArtistGraph::from_index_edges(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]),
            vec![Split::Train; 2],
            vec![(0, 1, 1.0)],
            false,
            0,
        )
        .unwrap();
        let trace = g.trace_batch(&[1], 0).unwrap();
        let x0 = g.features().select_columns(trace.input_nodes()).unwrap();
        assert_eq!(p.gc_block_forward(&trace, &x0).unwrap(), x0);
    }

    #[test]
    fn backend_contracts() {
        let mut p = ModelParams::init(&tiny_config(0), 3).unwrap();
        for t in p.tensors_mut() {
            if t.cols() == 1 {
                *t = Matrix::zeros(t.rows(), 1);
            }
        }
        let zero = p.backend_forward(&Matrix::zeros(3, 4)).unwrap();
        assert_eq!(zero.shape(), (2, 4));
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));

        let x = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.1 - 0.5);
        let perm = [2, 0, 3, 1];
        let y = p.backend_forward(&x).unwrap();
        let yp = p.backend_forward(&x.select_columns(&perm).unwrap()).unwrap();
        assert_eq!(yp, y.select_columns(&perm).unwrap());
    }

    #[test]
    fn identical_nodes_embed_identically() {
        let p = ModelParams::init(&tiny_config(2), 9).unwrap();
        let g = ArtistGraph::from_index_edges(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[&[1.0, 1.0], &[-2.0, -2.0], &[0.5, 0.5]]),
            vec![Split::Train; 2],
            vec![(0, 1, 1.0)],
            false,
            0,
        )
        .unwrap();
        let y = p.embed_batch(&g, &[0, 1]).unwrap();
        assert_eq!(y.column(0), y.column(1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(&tiny_config(2), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        p.to_checkpoint(serde_json::json!({"seed": 1})).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params().unwrap(), p);
        assert_eq!(back.meta["seed"], 1);
    }

    #[test]
    fn feature_dim_mismatch_is_reported() {
        let p = ModelParams::init(&tiny_config(1), 1).unwrap();
        let g = ArtistGraph::from_index_edges(
            vec!["a".into()],
            Matrix::zeros(5, 1),
            vec![Split::Train],
            vec![],
            false,
            0,
        )
        .unwrap();
        assert!(matches!(
            p.embed_batch(&g, &[0]),
            Err(Error::InputDim { expected: 3, actual: 5 })
        ));
    }
}
