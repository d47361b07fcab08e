//! Dataset ingestion and generation.
//!
//! A dataset bundle is a directory holding
//!
//! * `nodes.csv`: `id,split,f0,...,f{D-1}`, one row per node;
//! * `edges.csv`: `source,target,weight`, weight left empty for unweighted
//!   graphs;
//! * `manifest.json`: dimensions, SHA-256 checksums of both files and a
//!   bundle hash derived from them.
//!
//! Feature records in the nested AcousticBrainz style are flattened by a
//! depth-first walk, averaged per artist and standardized with
//! training-split statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{ArtistGraph, RawEdge, Split};
use crate::tensor::Matrix;

pub const BUNDLE_FORMAT: &str = "artgnn-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Flattens a nested record into `(path, value)` pairs. Objects are walked
/// in key order, arrays elementwise with the index as path segment;
/// strings, booleans and nulls are skipped.
pub fn parse_feature_record(record: &Value) -> Result<Vec<(String, f64)>> {
    if !record.is_object() {
        return Err(Error::Data("feature record must be a JSON object".into()));
    }
    let mut out = Vec::new();
    flatten(record, &mut String::new(), &mut out);
    Ok(out)
}

fn flatten(value: &Value, path: &mut String, out: &mut Vec<(String, f64)>) {
    let mut descend = |segment: &str, child: &Value, path: &mut String| {
        let len = path.len();
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(segment);
        flatten(child, path, out);
        path.truncate(len);
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                descend(k, v, path);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                descend(&i.to_string(), v, path);
            }
        }
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|x| x.is_finite()) {
                out.push((path.clone(), x));
            }
        }
        Value::String(_) | Value::Bool(_) | Value::Null => {}
    }
}

/// Named numeric fields of one track or artist.
pub type FieldVector = BTreeMap<String, f64>;

/// Elementwise mean over tracks. Only fields present in every track are
/// kept; `None` when there are no tracks.
pub fn artist_centroid(tracks: &[FieldVector]) -> Option<FieldVector> {
    let (first, rest) = tracks.split_first()?;
    let mut sums = first.clone();
    sums.retain(|k, _| rest.iter().all(|t| t.contains_key(k)));
    for t in rest {
        for (k, s) in sums.iter_mut() {
            *s += t[k];
        }
    }
    let n = tracks.len() as f64;
    for s in sums.values_mut() {
        *s /= n;
    }
    Some(sums)
}

/// Per-artist feature maps, possibly with different field sets.
#[derive(Clone, Debug, Default)]
pub struct RawFeatureTable {
    pub artists: Vec<String>,
    pub rows: Vec<FieldVector>,
}

impl RawFeatureTable {
    pub fn push(&mut self, artist: impl Into<String>, fields: FieldVector) {
        self.artists.push(artist.into());
        self.rows.push(fields);
    }

    pub fn len(&self) -> usize {
        self.artists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artists.is_empty()
    }
}

/// Reads JSON lines of the form `{"artist": <id>, "features": {...}}`, one
/// track per line, and averages tracks per artist. Malformed lines and
/// artists left without tracks are logged and skipped. Artists keep the
/// order of their first appearance.
pub fn read_feature_records(reader: impl BufRead) -> Result<RawFeatureTable> {
    let mut order: Vec<String> = Vec::new();
    let mut tracks: HashMap<String, Vec<FieldVector>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<records>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<(String, FieldVector), String> = (|| {
            let v: Value = serde_json::from_str(&line).map_err(|e| e.to_string())?;
            let artist = v
                .get("artist")
                .and_then(Value::as_str)
                .ok_or("missing string field `artist`")?
                .to_string();
            let features = v.get("features").ok_or("missing field `features`")?;
            let fields = parse_feature_record(features).map_err(|e| e.to_string())?;
            Ok((artist, fields.into_iter().collect()))
        })();
        match parsed {
            Ok((artist, fields)) => {
                let entry = tracks.entry(artist.clone()).or_default();
                if entry.is_empty() {
                    order.push(artist);
                }
                entry.push(fields);
            }
            Err(e) => log::warn!("skipping record on line {}: {e}", lineno + 1),
        }
    }
    let mut table = RawFeatureTable::default();
    for artist in order {
        match artist_centroid(&tracks[&artist]) {
            Some(c) => table.push(artist, c),
            None => log::warn!("dropping artist {artist}: no tracks"),
        }
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub fields: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Always "population".
    pub std_kind: String,
    pub statistics_from: String,
}

/// Standardizes each field to zero mean and unit variance using the rows
/// selected by `train_mask` (all rows when `None`). Fields missing for any
/// artist, and fields that are constant over the statistics rows, are
/// dropped. Returns a `fields x artists` matrix.
pub fn standardize_features(
    table: &RawFeatureTable,
    train_mask: Option<&[bool]>,
) -> Result<(Matrix, FeatureManifest)> {
    if table.is_empty() {
        return Err(Error::Data("feature table is empty".into()));
    }
    if let Some(mask) = train_mask {
        if mask.len() != table.len() {
            return Err(Error::Data(format!(
                "train mask has {} entries for {} artists",
                mask.len(),
                table.len()
            )));
        }
    }
    let selected: Vec<usize> = (0..table.len())
        .filter(|&i| train_mask.is_none_or(|m| m[i]))
        .collect();
    if selected.is_empty() {
        return Err(Error::Data("no rows to compute statistics from".into()));
    }
    let common: BTreeSet<&String> = table.rows[0]
        .keys()
        .filter(|k| table.rows.iter().all(|r| r.contains_key(*k)))
        .collect();

    let mut fields = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for name in common {
        let n = selected.len() as f64;
        let mean = selected.iter().map(|&i| table.rows[i][name]).sum::<f64>() / n;
        let var = selected
            .iter()
            .map(|&i| (table.rows[i][name] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        fields.push(name.clone());
        means.push(mean);
        stds.push(std);
    }
    if fields.is_empty() {
        return Err(Error::Data("no feature survives preprocessing".into()));
    }
    let matrix = Matrix::from_fn(fields.len(), table.len(), |f, a| {
        (table.rows[a][&fields[f]] - means[f]) / stds[f]
    });
    Ok((
        matrix,
        FeatureManifest {
            fields,
            means,
            stds,
            std_kind: "population".into(),
            statistics_from: if train_mask.is_some() { "train" } else { "all" }.into(),
        },
    ))
}

/// Sizes for a `(train, validation, test)` split of `n` items: the two
/// held-out parts are rounded down and training takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must sum to 1")));
    }
    let val = (b * n as f64 + 1e-9).floor() as usize;
    let test = (c * n as f64 + 1e-9).floor() as usize;
    Ok((n - val - test, val, test))
}

/// Uniform random partition of `n` nodes under `seed`.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (train, val, _) = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        split[v] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(split)
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// `dim x node_count` matrix of independent uniform draws on `[-1, 1]`.
pub fn random_features(node_count: usize, dim: usize, seed: u64) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::Config("random feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    Ok(Matrix::from_fn(dim, node_count, |_, _| rng.random_range(-1.0..=1.0)))
}

/// Planted-partition graph parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub communities: usize,
    pub community_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of per-node Gaussian noise around the community
    /// centroid, whose entries are standard normal.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.communities < 2 || self.community_size < 2 {
            return Err(Error::Config(
                "need at least 2 communities of at least 2 nodes".into(),
            ));
        }
        if self.feature_dim == 0 || self.feature_noise.is_nan() || self.feature_noise < 0.0 {
            return Err(Error::Config(
                "feature_dim must be positive and feature_noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub graph: ArtistGraph,
    /// Community of each node.
    pub communities: Vec<usize>,
}

/// Generates a planted-partition graph with unit edge weights, community
/// centroid features plus noise, and an 80/10/10 split.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = config.communities * config.community_size;
    let communities: Vec<usize> = (0..n).map(|v| v / config.community_size).collect();

    let mut edge_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if communities[u] == communities[v] {
                config.p_in
            } else {
                config.p_out
            };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }

    let mut feat_rng = ChaCha8Rng::seed_from_u64(config.seed);
    feat_rng.set_stream(1);
    let d = config.feature_dim;
    let centroids: Vec<Vec<f64>> = (0..config.communities)
        .map(|_| (0..d).map(|_| feat_rng.sample(StandardNormal)).collect())
        .collect();
    let mut features = Matrix::zeros(d, n);
    for v in 0..n {
        for (r, &centre) in centroids[communities[v]].iter().enumerate() {
            let noise: f64 = feat_rng.sample(StandardNormal);
            features.set(r, v, centre + config.feature_noise * noise);
        }
    }

    let split = split_dataset(n, DEFAULT_SPLIT, config.seed)?;
    let ids = (0..n).map(|v| format!("n{v:05}")).collect();
    let graph = ArtistGraph::from_index_edges(ids, features, split, edges, false, config.seed)?;
    Ok(SyntheticDataset { graph, communities })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub node_count: usize,
    pub edge_count: usize,
    pub feature_dim: usize,
    pub weighted: bool,
    pub prune_seed: u64,
    pub checksums: BTreeMap<String, String>,
    pub bundle_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureManifest>,
    /// Free-form provenance, e.g. the generator config.
    #[serde(default)]
    pub source: Value,
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn bundle_hash(checksums: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (name, sum) in checksums {
        h.update(name.as_bytes());
        h.update(b":");
        h.update(sum.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Writes `graph` as a bundle into `dir`, creating it if needed.
pub fn write_bundle(
    dir: &Path,
    graph: &ArtistGraph,
    features: Option<FeatureManifest>,
    source: Value,
) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = graph.feature_dim();

    let nodes_path = dir.join(NODES_FILE);
    let mut w = csv::Writer::from_path(&nodes_path)?;
    let mut header = vec!["id".to_string(), "split".to_string()];
    header.extend((0..d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    let x = graph.features();
    for v in 0..graph.node_count() {
        let mut row = vec![graph.node_id(v).to_string(), graph.split_of(v).to_string()];
        row.extend((0..d).map(|r| x.get(r, v).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&nodes_path, e))?;

    let edges_path = dir.join(EDGES_FILE);
    let mut w = csv::Writer::from_path(&edges_path)?;
    w.write_record(["source", "target", "weight"])?;
    for (u, v, weight) in graph.edges() {
        let weight = if graph.is_weighted() { weight.to_string() } else { String::new() };
        w.write_record([graph.node_id(u), graph.node_id(v), weight.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(&edges_path, e))?;

    let mut checksums = BTreeMap::new();
    checksums.insert(NODES_FILE.to_string(), sha256_file(&nodes_path)?);
    checksums.insert(EDGES_FILE.to_string(), sha256_file(&edges_path)?);
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        feature_dim: d,
        weighted: graph.is_weighted(),
        prune_seed: graph.prune_seed(),
        bundle_hash: bundle_hash(&checksums),
        checksums,
        features,
        source,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads edges from a `source,target[,weight]` CSV with a header row.
pub fn read_edges(path: &Path) -> Result<Vec<RawEdge>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Data(format!("{}: row {} has fewer than 2 fields", path.display(), i + 2)));
        }
        let weight = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(w) => Some(w.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: row {}: bad weight `{w}`", path.display(), i + 2))
            })?),
        };
        out.push(RawEdge::new(rec[0].trim(), rec[1].trim(), weight));
    }
    Ok(out)
}

/// Loads and verifies a bundle.
pub fn read_bundle(dir: &Path) -> Result<(ArtistGraph, BundleManifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(Error::Data(format!(
            "unsupported bundle {} v{}",
            manifest.format, manifest.version
        )));
    }
    for (name, expected) in &manifest.checksums {
        let path = dir.join(name);
        let actual = sha256_file(&path)?;
        if &actual != expected {
            return Err(Error::Checksum {
                path,
                expected: expected.clone(),
                actual,
            });
        }
    }

    let npath = dir.join(NODES_FILE);
    let mut r = csv::Reader::from_path(&npath)?;
    let d = manifest.feature_dim;
    let mut ids = Vec::with_capacity(manifest.node_count);
    let mut split = Vec::with_capacity(manifest.node_count);
    let mut columns: Vec<f64> = Vec::with_capacity(manifest.node_count * d);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 2 {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, expected {}",
                npath.display(),
                i + 2,
                rec.len(),
                d + 2
            )));
        }
        ids.push(rec[0].to_string());
        split.push(rec[1].parse::<Split>()?);
        for f in rec.iter().skip(2) {
            columns.push(f.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: row {}: bad number `{f}`", npath.display(), i + 2))
            })?);
        }
    }
    if ids.len() != manifest.node_count {
        return Err(Error::Data(format!(
            "manifest declares {} nodes, file has {}",
            manifest.node_count,
            ids.len()
        )));
    }
    // Rows are nodes; the graph stores one column per node.
    let n = ids.len();
    let features = Matrix::from_vec(n, d, columns)?.transpose();
    let edges = read_edges(&dir.join(EDGES_FILE))?;
    if manifest.weighted && edges.iter().any(|e| e.weight.is_none()) {
        return Err(Error::Data("weighted bundle has edges without weight".into()));
    }
    let graph = ArtistGraph::build(ids, features, split, &edges, manifest.prune_seed)?;
    Ok((graph, manifest))
}
