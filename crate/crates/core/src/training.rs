//! Mini-batch triplet training with ADAM, a one-epoch linear warm-up and
//! cosine decay over the remaining epochs (no restarts).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, Tape, TripletColumns};
use crate::error::{Error, Result};
use crate::graph::{ArtistGraph, Split, TraceResult};
use crate::model::{ModelConfig, ModelParams};
use crate::sampling::{euclidean, sample_positive, DistanceWeightedSampler, Triplet};
use crate::tensor::{Matrix, L2_EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    /// Anchors per mini-batch.
    pub batch_size: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            warmup_epochs: 1,
            base_lr: 1e-3,
            batch_size: 64,
            margin: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < self.warmup_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be non-negative, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Learning rate for a zero-based optimizer `step`.
///
/// Warm-up rises linearly to `base_lr` at the last warm-up step; decay then
/// follows `0.5 (1 + cos(pi t))` with `t` going from 0 at the first decay
/// step towards 1 at the end of training.
pub fn lr_at(config: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let warmup = config.warmup_epochs * steps_per_epoch;
    if step < warmup {
        return config.base_lr * (step + 1) as f64 / warmup as f64;
    }
    let decay = (config.epochs - config.warmup_epochs) * steps_per_epoch;
    if decay == 0 {
        return config.base_lr;
    }
    let t = ((step - warmup) as f64 / decay as f64).min(1.0);
    config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// ADAM moments for every parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Self::for_shapes(params.tensors().iter().map(Matrix::shape))
    }

    pub fn for_shapes(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let zeros: Vec<Matrix> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `names` is only used for error messages.
    pub fn update(
        &mut self,
        tensors: &mut [Matrix],
        names: &[String],
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        for (i, t) in tensors.iter().enumerate() {
            let g = grads
                .get(ParamId(i))
                .ok_or_else(|| Error::Shape(format!("missing gradient for `{}`", names[i])))?;
            if g.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{}` is {}x{}, parameter is {}x{}",
                    names[i],
                    g.rows(),
                    g.cols(),
                    t.rows(),
                    t.cols()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(names[i].clone()));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in tensors.iter_mut().enumerate() {
            let g = grads.get(ParamId(i)).expect("checked above");
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((p, &gi), mi), vi) in t.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        let names = params.names().to_vec();
        self.update(params.tensors_mut(), &names, grads, lr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's final step.
    pub lr: f64,
    pub triplets: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
}

/// Progress notifications from [`train_observed`].
pub enum TrainEvent<'a> {
    Trace(&'a TraceResult),
    Epoch(&'a EpochLog),
}

/// Trains on the training-split subgraph of `graph`.
pub fn train(graph: &ArtistGraph, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(graph, model, config, |_| {})
}

pub fn train_observed(
    graph: &ArtistGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    mut observe: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    let train_graph = graph.training_subgraph()?;
    let mut anchors: Vec<usize> = train_graph
        .nodes_in(Split::Train)
        .into_iter()
        .filter(|&v| train_graph.degree(v) > 0)
        .collect();
    if anchors.is_empty() {
        return Err(Error::Config(
            "no training node has a training-graph neighbor".into(),
        ));
    }

    let mut params = ModelParams::init(model, config.seed)?;
    let mut optimizer = Adam::new(&params);
    let sampler = DistanceWeightedSampler::new(model.output_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let steps_per_epoch = anchors.len().div_ceil(config.batch_size);
    let mut step = 0usize;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        anchors.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut triplet_count = 0usize;
        let mut lr = lr_at(config, step, steps_per_epoch);
        for (batch_idx, chunk) in anchors.chunks(config.batch_size).enumerate() {
            lr = lr_at(config, step, steps_per_epoch);
            step += 1;

            let positives: Vec<usize> = chunk
                .iter()
                .map(|&a| sample_positive(&train_graph, a, &mut rng).expect("anchors have neighbors"))
                .collect();
            let mut nodes: Vec<usize> = Vec::with_capacity(chunk.len() * 2);
            let mut column: HashMap<usize, usize> = HashMap::new();
            for &v in chunk.iter().chain(&positives) {
                column.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    nodes.len() - 1
                });
            }

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (raw, trace) = params.embed_on_tape(&mut tape, &bound, &train_graph, &nodes)?;
            if let Some(&leak) = trace
                .input_nodes()
                .iter()
                .find(|&&v| train_graph.split_of(v) != Split::Train)
            {
                return Err(Error::Graph(format!(
                    "training trace reached non-training node {}",
                    train_graph.node_id(leak)
                )));
            }
            observe(TrainEvent::Trace(&trace));
            let normalized = tape.l2_normalize_columns(raw, L2_EPSILON)?;

            let triplets = build_triplets(
                &train_graph,
                chunk,
                &positives,
                &nodes,
                tape.value(normalized),
                &sampler,
                &mut rng,
            );
            if triplets.is_empty() {
                continue;
            }
            let cols: Vec<TripletColumns> = triplets
                .iter()
                .map(|t| [column[&t.anchor], column[&t.positive], column[&t.negative]])
                .collect();
            let loss = tape.triplet_loss(normalized, cols, config.margin)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            optimizer.step(&mut params, &grads, lr)?;
            loss_sum += value;
            batches += 1;
            triplet_count += triplets.len();
        }
        let log = EpochLog {
            epoch,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            lr,
            triplets: triplet_count,
        };
        observe(TrainEvent::Epoch(&log));
        history.push(log);
    }
    Ok(TrainOutcome { params, history })
}

/// One triplet per anchor. Negatives come from the batch's own nodes,
/// excluding the anchor and anything adjacent to it; anchors with no such
/// candidate are skipped. `embeddings` holds normalized columns aligned
/// with `nodes`.
pub fn build_triplets<R: rand::Rng + ?Sized>(
    graph: &ArtistGraph,
    anchors: &[usize],
    positives: &[usize],
    nodes: &[usize],
    embeddings: &Matrix,
    sampler: &DistanceWeightedSampler,
    rng: &mut R,
) -> Vec<Triplet> {
    let columns: Vec<Vec<f64>> = (0..nodes.len()).map(|c| embeddings.column(c)).collect();
    let position: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut out = Vec::with_capacity(anchors.len());
    for (&anchor, &positive) in anchors.iter().zip(positives) {
        let a = &columns[position[&anchor]];
        let (candidates, distances): (Vec<usize>, Vec<f64>) = nodes
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != anchor && !graph.is_adjacent(anchor, v))
            .map(|(i, &v)| (v, euclidean(a, &columns[i])))
            .unzip();
        if let Some(pick) = sampler.sample_by_distance(&distances, rng) {
            out.push(Triplet {
                anchor,
                positive,
                negative: candidates[pick],
            });
        }
    }
    out
}
