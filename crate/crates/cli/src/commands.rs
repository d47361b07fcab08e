use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::Instant;

use artgnn::data::{
    self, generate_synthetic, random_features, read_bundle, read_feature_records, split_dataset,
    standardize_features, write_bundle, BundleManifest, SyntheticConfig, DEFAULT_SPLIT,
};
use artgnn::eval::{build_eval_graph, EvalReport};
use artgnn::graph::ArtistGraph;
use artgnn::tensor::{l2_normalize_columns, L2_EPSILON};
use artgnn::training::{train_observed, EpochLog, TrainEvent};
use artgnn::{Checkpoint, ModelParams, Split};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{FeatureMode, FileConfig, RunConfig};
use crate::error::{io, CliError, Result};
use crate::{EmbedArgs, EmbedScope, EvaluateArgs, IngestArgs, StatsArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Provenance stored in the checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub bundle_hash: String,
    pub fingerprint: String,
    pub features: FeatureMode,
    /// Seed of the substituted features in random mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_feature_seed: Option<u64>,
    pub config: RunConfig,
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    seed: u64,
    bundle_hash: &'a str,
    checkpoint_fingerprint: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("dataset directory {} does not exist", path.display())))
    }
}

fn provenance_header(seed: u64, bundle_hash: &str, fingerprint: &str) -> String {
    format!("# seed: {seed}\n# bundle_hash: {bundle_hash}\n# fingerprint: {fingerprint}\n")
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        communities: args.communities,
        community_size: args.community_size,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        feature_noise: args.feature_noise,
        seed: args.seed,
    };
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dataset = generate_synthetic(&config)?;
    let manifest = write_bundle(
        &args.out,
        &dataset.graph,
        None,
        json!({ "generator": "planted-partition", "config": config, "communities": dataset.communities }),
    )?;
    println!(
        "wrote {} nodes, {} edges to {} (bundle {})",
        manifest.node_count,
        manifest.edge_count,
        args.out.display(),
        manifest.bundle_hash
    );
    Ok(())
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let file = File::open(&args.records).map_err(|e| io(&args.records, e))?;
    let table = read_feature_records(BufReader::new(file))?;
    let split = split_dataset(table.len(), DEFAULT_SPLIT, args.seed)?;
    let mask: Vec<bool> = split.iter().map(|&s| s == Split::Train).collect();
    let (features, feature_manifest) = standardize_features(&table, Some(&mask))?;
    let edges = data::read_edges(&args.edges)?;
    let known: std::collections::HashSet<&str> = table.artists.iter().map(String::as_str).collect();
    let (kept, dropped): (Vec<_>, Vec<_>) = edges
        .into_iter()
        .partition(|e| known.contains(e.source.as_str()) && known.contains(e.target.as_str()));
    if !dropped.is_empty() {
        log::warn!("dropping {} edges touching artists without features", dropped.len());
    }
    let graph = ArtistGraph::build(table.artists.clone(), features, split, &kept, args.seed)?;
    log::info!(
        "{} artists, {} retained features, {} edges",
        graph.node_count(),
        feature_manifest.fields.len(),
        graph.edge_count()
    );
    let manifest = write_bundle(
        &args.out,
        &graph,
        Some(feature_manifest),
        json!({ "records": args.records.file_name().and_then(|n| n.to_str()), "split_seed": args.seed }),
    )?;
    println!("wrote bundle {} to {}", manifest.bundle_hash, args.out.display());
    Ok(())
}

/// Applies the feature mode recorded for a run.
fn features_for(graph: ArtistGraph, mode: FeatureMode, seed: Option<u64>) -> Result<ArtistGraph> {
    match mode {
        FeatureMode::Real => Ok(graph),
        FeatureMode::Random => {
            let seed = seed.ok_or_else(|| CliError::Config("random feature mode without a seed".into()))?;
            let x = random_features(graph.node_count(), graph.feature_dim(), seed)?;
            Ok(graph.with_features(x)?)
        }
    }
}

fn load_dataset(dir: &Path) -> Result<(ArtistGraph, BundleManifest)> {
    require_dir(dir)?;
    Ok(read_bundle(dir)?)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = args.config.as_deref().map(FileConfig::load).transpose()?;
    let run = RunConfig::resolve(file.as_ref(), &args.model, &args.train)?;
    let (graph, manifest) = load_dataset(&args.dataset)?;
    let fingerprint = run.fingerprint(&manifest.bundle_hash);
    let random_feature_seed = (run.features == FeatureMode::Random).then_some(run.train.seed);
    let graph = features_for(graph, run.features, random_feature_seed)?;
    let model = run.model_config(graph.feature_dim());
    model.validate().map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(&args.out)?;

    log::info!(
        "training K={} on {} ({} features, seed {})",
        model.gc_layers,
        args.dataset.display(),
        match run.features {
            FeatureMode::Real => "real",
            FeatureMode::Random => "random",
        },
        run.train.seed
    );
    let started = Instant::now();
    let outcome = train_observed(&graph, &model, &run.train, |event| {
        if let TrainEvent::Epoch(e) = event {
            log::info!("epoch {:>3} loss {:.6} lr {:.3e}", e.epoch, e.mean_loss, e.lr);
        }
    })?;
    log::info!("trained in {:.1?}", started.elapsed());

    let meta = RunMeta {
        seed: run.train.seed,
        bundle_hash: manifest.bundle_hash.clone(),
        fingerprint: fingerprint.clone(),
        features: run.features,
        random_feature_seed,
        config: run.clone(),
    };
    outcome
        .params
        .to_checkpoint(serde_json::to_value(&meta)?)
        .save(&args.out.join(CHECKPOINT_FILE))?;
    write_text(
        &args.out.join(TRAIN_LOG_FILE),
        &train_log(&outcome.history, run.train.seed, &manifest.bundle_hash, &fingerprint),
    )?;
    write_text(&args.out.join(RUN_FILE), &(serde_json::to_string_pretty(&meta)? + "\n"))?;

    let last = outcome.history.last().map_or(0.0, |e| e.mean_loss);
    println!("final loss {last:.6}; checkpoint in {}", args.out.display());
    Ok(())
}

pub fn train_log(history: &[EpochLog], seed: u64, bundle_hash: &str, fingerprint: &str) -> String {
    let mut out = provenance_header(seed, bundle_hash, fingerprint);
    out.push_str("epoch,mean_loss,lr,triplets\n");
    for e in history {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_loss, e.lr, e.triplets));
    }
    out
}

fn load_checkpoint(path: &Path, manifest: &BundleManifest) -> Result<(ModelParams, RunMeta)> {
    let checkpoint = Checkpoint::load(path)?;
    let meta: RunMeta = serde_json::from_value(checkpoint.meta.clone())?;
    if meta.bundle_hash != manifest.bundle_hash {
        log::warn!(
            "checkpoint was trained on bundle {}, evaluating bundle {}",
            meta.bundle_hash,
            manifest.bundle_hash
        );
    }
    Ok((checkpoint.params()?, meta))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.k == 0 {
        return Err(CliError::Config("--k must be at least 1".into()));
    }
    let (graph, manifest) = load_dataset(&args.dataset)?;
    let (params, meta) = load_checkpoint(&args.checkpoint, &manifest)?;
    let graph = features_for(graph, meta.features, meta.random_feature_seed)?;
    let split: Split = args.split.into();
    let mut report = artgnn::evaluate(&params, &graph, split, args.k)?;
    report.fingerprint = data::sha256_hex(
        json!({
            "checkpoint": meta.fingerprint,
            "bundle_hash": manifest.bundle_hash,
            "split": split,
            "k": args.k,
        })
        .to_string()
        .as_bytes(),
    );
    create_dir(&args.out)?;
    let file = ReportFile {
        seed: meta.seed,
        bundle_hash: &manifest.bundle_hash,
        checkpoint_fingerprint: &meta.fingerprint,
        report: &report,
    };
    write_text(&args.out.join(REPORT_JSON), &(serde_json::to_string_pretty(&file)? + "\n"))?;
    let mut csv = provenance_header(meta.seed, &manifest.bundle_hash, &report.fingerprint);
    csv.push_str("node_id,ndcg\n");
    for s in &report.per_artist {
        csv.push_str(&format!("{},{}\n", s.node_id, s.ndcg));
    }
    write_text(&args.out.join(REPORT_CSV), &csv)?;
    println!(
        "mean ndcg@{} on {} ({} of {} artists scored): {:.6}",
        report.k,
        split,
        report.per_artist.len(),
        report.candidate_count,
        report.mean_ndcg
    );
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let (graph, manifest) = load_dataset(&args.dataset)?;
    let (params, meta) = load_checkpoint(&args.checkpoint, &manifest)?;
    let graph = features_for(graph, meta.features, meta.random_feature_seed)?;
    let (context, nodes) = match args.split {
        EmbedScope::All => {
            let nodes = (0..graph.node_count()).collect();
            (graph.clone(), nodes)
        }
        EmbedScope::Train => (graph.training_subgraph()?, graph.nodes_in(Split::Train)),
        EmbedScope::Validation => (build_eval_graph(&graph, Split::Validation)?, graph.nodes_in(Split::Validation)),
        EmbedScope::Test => (build_eval_graph(&graph, Split::Test)?, graph.nodes_in(Split::Test)),
    };
    let raw = params.embed_nodes(&context, &nodes, |_| {})?;
    let emb = l2_normalize_columns(&raw, L2_EPSILON);

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(&args.out).map_err(|e| io(&args.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut text = provenance_header(meta.seed, &manifest.bundle_hash, &meta.fingerprint);
    text.push_str("id,split");
    for i in 0..emb.rows() {
        text.push_str(&format!(",e{i}"));
    }
    text.push('\n');
    for (c, &v) in nodes.iter().enumerate() {
        text.push_str(graph.node_id(v));
        text.push(',');
        text.push_str(graph.split_of(v).as_str());
        for r in 0..emb.rows() {
            text.push_str(&format!(",{}", emb.get(r, c)));
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io(&args.out, e))?;
    println!("wrote {} embeddings to {}", nodes.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct GraphStats {
    pub bundle_hash: String,
    pub prune_seed: u64,
    pub nodes: usize,
    pub edges: usize,
    pub weighted: bool,
    pub feature_dim: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub isolated: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub max_kept_degree: usize,
    /// Share of all edges whose endpoints stay within two hops once the
    /// edge itself is removed.
    pub two_hop_coverage: f64,
    pub hidden_edges: SplitPair<usize>,
    pub hidden_two_hop_coverage: SplitPair<f64>,
}

#[derive(Debug, Serialize)]
pub struct SplitPair<T> {
    pub validation: T,
    pub test: T,
}

pub fn graph_stats(graph: &ArtistGraph, manifest: &BundleManifest) -> GraphStats {
    let n = graph.node_count();
    let degrees: Vec<usize> = (0..n).map(|v| graph.all_neighbors(v).len()).collect();
    let all: Vec<(usize, usize)> = graph.edges().map(|(u, v, _)| (u, v)).collect();
    let hidden = |split: Split| -> Vec<(usize, usize)> {
        all.iter()
            .copied()
            .filter(|&(u, v)| graph.split_of(u) == split && graph.split_of(v) == split)
            .collect()
    };
    let (hv, ht) = (hidden(Split::Validation), hidden(Split::Test));
    GraphStats {
        bundle_hash: manifest.bundle_hash.clone(),
        prune_seed: graph.prune_seed(),
        nodes: n,
        edges: all.len(),
        weighted: graph.is_weighted(),
        feature_dim: graph.feature_dim(),
        train: graph.nodes_in(Split::Train).len(),
        validation: graph.nodes_in(Split::Validation).len(),
        test: graph.nodes_in(Split::Test).len(),
        isolated: degrees.iter().filter(|&&d| d == 0).count(),
        mean_degree: if n == 0 { 0.0 } else { degrees.iter().sum::<usize>() as f64 / n as f64 },
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        max_kept_degree: (0..n).map(|v| graph.degree(v)).max().unwrap_or(0),
        two_hop_coverage: graph.two_hop_coverage(&all),
        hidden_edges: SplitPair {
            validation: hv.len(),
            test: ht.len(),
        },
        hidden_two_hop_coverage: SplitPair {
            validation: graph.two_hop_coverage(&hv),
            test: graph.two_hop_coverage(&ht),
        },
    }
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let (graph, manifest) = load_dataset(&args.dataset)?;
    let text = serde_json::to_string_pretty(&graph_stats(&graph, &manifest))? + "\n";
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    print!("{text}");
    Ok(())
}
