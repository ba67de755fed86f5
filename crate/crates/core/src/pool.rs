//! Cached prediction data for a pool of pretrained classifiers.
//!
//! Every ensemble objective is computed from what lives here: per-model softmax
//! outputs on a validation and a test split, the matching labels, trainable
//! parameter counts and per-platform latencies (seconds per 128-sample batch).
//!
//! On-disk layout is a JSON manifest (`pool.json`) pointing at little-endian
//! binary files:
//!
//! ```text
//! prediction file: b"EPRD" | u32 version=1 | u64 n_samples | u32 n_classes | f32[n_samples*n_classes]
//! label file:      b"ELBL" | u32 version=1 | u64 n_samples | u32[n_samples]
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

pub const PREDICTION_MAGIC: &[u8; 4] = b"EPRD";
pub const LABEL_MAGIC: &[u8; 4] = b"ELBL";
pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "pool.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Softmax outputs of one model on one split, with the ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    n_classes: usize,
    probs: Vec<f32>,
    labels: Vec<u32>,
}

impl PredictionSet {
    /// Builds a prediction set and checks every row and label invariant.
    pub fn new(n_classes: usize, probs: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        let set = PredictionSet {
            n_classes,
            probs,
            labels,
        };
        set.check().map_err(Error::Pool)?;
        Ok(set)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.n_classes < 2 {
            return Err(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.probs.len() != self.labels.len() * self.n_classes {
            return Err(format!(
                "probability matrix holds {} values, expected {} x {}",
                self.probs.len(),
                self.labels.len(),
                self.n_classes
            ));
        }
        for (i, row) in self.probs.chunks_exact(self.n_classes).enumerate() {
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(format!("row {i}: probability {p} outside [0, 1]"));
            }
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(format!(
                    "row {i}: row sum {sum:.6} exceeds tolerance {ROW_SUM_TOLERANCE}"
                ));
            }
        }
        if let Some((i, l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.n_classes)
        {
            return Err(format!("sample {i}: label {l} outside [0, {})", self.n_classes));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, sample: usize) -> &[f32] {
        &self.probs[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    /// Fraction of samples whose argmax (lowest index on ties) matches the label.
    pub fn accuracy(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let correct = self
            .probs
            .chunks_exact(self.n_classes)
            .zip(&self.labels)
            .filter(|(row, &l)| argmax_f32(row) == l as usize)
            .count();
        correct as f64 / self.labels.len() as f64
    }

    /// Rows (and labels) at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PredictionSet {
        let mut probs = Vec::with_capacity(indices.len() * self.n_classes);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            probs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        PredictionSet {
            n_classes: self.n_classes,
            probs,
            labels,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

fn argmax_f32(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub id: String,
    pub params: u64,
    /// Platform id to seconds per 128-sample batch.
    pub latencies: BTreeMap<String, f64>,
    pub validation: PredictionSet,
    pub test: PredictionSet,
}

impl ModelRecord {
    pub fn split(&self, split: Split) -> &PredictionSet {
        match split {
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn latency(&self, platform: &str) -> Option<f64> {
        self.latencies.get(platform).copied()
    }
}

/// Immutable collection of models sharing a label space and sample sets.
#[derive(Debug, Clone)]
pub struct ModelPool {
    dataset: String,
    n_classes: usize,
    platforms: Vec<String>,
    models: Vec<ModelRecord>,
    index: HashMap<String, usize>,
}

impl PartialEq for ModelPool {
    fn eq(&self, other: &Self) -> bool {
        self.dataset == other.dataset
            && self.n_classes == other.n_classes
            && self.platforms == other.platforms
            && self.models == other.models
    }
}

impl ModelPool {
    pub fn new(
        dataset: impl Into<String>,
        n_classes: usize,
        platforms: Vec<String>,
        models: Vec<ModelRecord>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Pool("pool contains no models".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &platforms {
            if !seen.insert(p.as_str()) {
                return Err(Error::Pool(format!("duplicate platform {p:?}")));
            }
        }
        let mut index = HashMap::with_capacity(models.len());
        let (n_val, n_test) = (models[0].validation.n_samples(), models[0].test.n_samples());
        let (val_labels, test_labels) = (models[0].validation.labels(), models[0].test.labels());
        for (i, m) in models.iter().enumerate() {
            if index.insert(m.id.clone(), i).is_some() {
                return Err(Error::Pool(format!("duplicate model id {:?}", m.id)));
            }
            if m.params == 0 {
                return Err(Error::Pool(format!("model {}: param count must be positive", m.id)));
            }
            for p in &platforms {
                match m.latency(p) {
                    None => {
                        return Err(Error::Pool(format!(
                            "model {}: missing latency for platform {p:?}",
                            m.id
                        )))
                    }
                    Some(t) if !(t > 0.0 && t.is_finite()) => {
                        return Err(Error::Pool(format!(
                            "model {}: latency {t} on {p:?} must be positive",
                            m.id
                        )))
                    }
                    Some(_) => {}
                }
            }
            for (split, set) in [("validation", &m.validation), ("test", &m.test)] {
                set.check()
                    .map_err(|e| Error::Pool(format!("model {} ({split}): {e}", m.id)))?;
                if set.n_classes() != n_classes {
                    return Err(Error::Pool(format!(
                        "model {} ({split}): {} classes, pool declares {n_classes}",
                        m.id,
                        set.n_classes()
                    )));
                }
            }
            if m.validation.n_samples() != n_val || m.test.n_samples() != n_test {
                return Err(Error::Pool(format!(
                    "model {}: sample counts ({}, {}) differ from ({n_val}, {n_test})",
                    m.id,
                    m.validation.n_samples(),
                    m.test.n_samples()
                )));
            }
            if m.validation.labels() != val_labels || m.test.labels() != test_labels {
                return Err(Error::Pool(format!(
                    "model {}: labels differ from the first model's",
                    m.id
                )));
            }
        }
        Ok(ModelPool {
            dataset: dataset.into(),
            n_classes,
            platforms,
            models,
            index,
        })
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn platforms(&self) -> &[String] {
        &self.platforms
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn model(&self, index: usize) -> &ModelRecord {
        &self.models[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&ModelRecord> {
        self.index_of(id).map(|i| &self.models[i])
    }

    pub fn has_platform(&self, platform: &str) -> bool {
        self.platforms.iter().any(|p| p == platform)
    }

    pub fn n_samples(&self, split: Split) -> usize {
        self.models[0].split(split).n_samples()
    }

    pub fn labels(&self, split: Split) -> &[u32] {
        self.models[0].split(split).labels()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dataset: String,
    n_classes: usize,
    platforms: Vec<String>,
    models: Vec<ManifestModel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestModel {
    id: String,
    params: u64,
    latency: BTreeMap<String, f64>,
    validation: SplitFiles,
    test: SplitFiles,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFiles {
    probs_file: String,
    labels_file: String,
}

/// Loads a pool from its JSON manifest. Paths inside the manifest are relative
/// to the manifest's directory. Values are taken bit-exact; nothing is
/// reordered or renormalized.
pub fn load_pool(manifest_path: impl AsRef<Path>) -> Result<ModelPool> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(manifest_path, format!("manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut models = Vec::with_capacity(manifest.models.len());
    for m in manifest.models {
        let validation = load_split(base, &m.id, "validation", &m.validation, manifest.n_classes)?;
        let test = load_split(base, &m.id, "test", &m.test, manifest.n_classes)?;
        models.push(ModelRecord {
            id: m.id,
            params: m.params,
            latencies: m.latency,
            validation,
            test,
        });
    }
    ModelPool::new(manifest.dataset, manifest.n_classes, manifest.platforms, models)
}

fn load_split(
    base: &Path,
    model_id: &str,
    split: &str,
    files: &SplitFiles,
    n_classes: usize,
) -> Result<PredictionSet> {
    let probs_path = base.join(&files.probs_file);
    let labels_path = base.join(&files.labels_file);
    let (n_samples, file_classes, probs) = read_predictions(&probs_path)?;
    if file_classes != n_classes {
        return Err(Error::format(
            &probs_path,
            format!("header declares {file_classes} classes, manifest declares {n_classes}"),
        ));
    }
    let labels = read_labels(&labels_path)?;
    if labels.len() != n_samples {
        return Err(Error::format(
            &labels_path,
            format!("{} labels for {n_samples} prediction rows", labels.len()),
        ));
    }
    let set = PredictionSet {
        n_classes,
        probs,
        labels,
    };
    set.check()
        .map_err(|e| Error::Pool(format!("model {model_id} ({split}): {e}")))?;
    Ok(set)
}

fn header<'a>(path: &Path, bytes: &'a [u8], magic: &[u8; 4], len: usize) -> Result<&'a [u8]> {
    if bytes.len() < len {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    Ok(&bytes[..len])
}

/// Reads an `EPRD` file, returning `(n_samples, n_classes, row-major probabilities)`.
pub fn read_predictions(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let head = header(path, &bytes, PREDICTION_MAGIC, 20)?;
    let n_samples = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let n_classes = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
    let expected = n_samples
        .checked_mul(n_classes)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header implies {n_samples} x {n_classes} f32 = {expected}",
                body.len()
            ),
        ));
    }
    let probs = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n_samples, n_classes, probs))
}

/// Reads an `ELBL` file.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let head = header(path, &bytes, LABEL_MAGIC, 16)?;
    let n_samples = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if Some(body.len()) != n_samples.checked_mul(4) {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {n_samples} labels", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn encode_predictions(n_classes: usize, probs: &[f32]) -> Vec<u8> {
    let n_samples = probs.len() / n_classes;
    let mut out = Vec::with_capacity(20 + probs.len() * 4);
    out.extend_from_slice(PREDICTION_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n_samples as u64).to_le_bytes());
    out.extend_from_slice(&(n_classes as u32).to_le_bytes());
    for p in probs {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn encode_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn write_predictions(path: &Path, set: &PredictionSet) -> Result<()> {
    fs::write(path, encode_predictions(set.n_classes(), set.probs())).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

/// Writes `pool.json` plus one prediction and one label file per model and
/// split into `dir`, returning the manifest path.
pub fn write_pool(pool: &ModelPool, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut models = Vec::with_capacity(pool.len());
    for (i, m) in pool.models().iter().enumerate() {
        let files = |split: Split, set: &PredictionSet| -> Result<SplitFiles> {
            let stem = format!("m{i:03}_{}", split.as_str());
            let probs_file = format!("{stem}.eprd");
            let labels_file = format!("{stem}.elbl");
            write_predictions(&dir.join(&probs_file), set)?;
            write_labels(&dir.join(&labels_file), set.labels())?;
            Ok(SplitFiles {
                probs_file,
                labels_file,
            })
        };
        let validation = files(Split::Validation, &m.validation)?;
        let test = files(Split::Test, &m.test)?;
        models.push(ManifestModel {
            id: m.id.clone(),
            params: m.params,
            latency: m.latencies.clone(),
            validation,
            test,
        });
    }
    let manifest = Manifest {
        dataset: pool.dataset().to_string(),
        n_classes: pool.n_classes(),
        platforms: pool.platforms().to_vec(),
        models,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Splits sample indices per class: the first half receives `ceil(m_c / 2)`
/// of each class's `m_c` samples, the second half the rest. Selection inside
/// a class is a seeded shuffle; each half is returned in ascending index order.
pub fn stratified_half_split_indices(
    labels: &[u32],
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= n_classes {
            return Err(Error::Pool(format!("sample {i}: label {l} outside [0, {n_classes})")));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Pool(format!(
                "class {class} has {} sample(s); at least 2 are needed to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let cut = members.len().div_ceil(2);
        first.extend_from_slice(&members[..cut]);
        second.extend_from_slice(&members[cut..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

pub fn stratified_half_split(
    predictions: &PredictionSet,
    seed: u64,
) -> Result<(PredictionSet, PredictionSet)> {
    let (first, second) =
        stratified_half_split_indices(predictions.labels(), predictions.n_classes(), seed)?;
    Ok((predictions.select(&first), predictions.select(&second)))
}

/// Deterministic synthetic pool.
///
/// Each split holds `n_samples` samples with near-balanced classes and a shared
/// per-sample difficulty. Model `j` gets a skill level spread across the pool;
/// more skilled models are larger and slower, so the single-model front over
/// (error, params) is non-degenerate. Model noise is independent, which is what
/// makes merging and chaining worthwhile.
pub fn synth_pool(n_models: usize, n_samples: usize, n_classes: usize, seed: u64) -> Result<ModelPool> {
    if n_models == 0 {
        return Err(Error::Config("synth_pool needs at least one model".into()));
    }
    if n_classes < 2 || n_samples < n_classes {
        return Err(Error::Config(format!(
            "synth_pool needs n_samples >= n_classes >= 2 (got {n_samples} samples, {n_classes} classes)"
        )));
    }
    let mut attempt = 0u64;
    loop {
        let pool = synth_attempt(n_models, n_samples, n_classes, seed, attempt)?;
        if n_models < 2 || attempt >= 16 || size_error_front_len(&pool) >= 2 {
            return Ok(pool);
        }
        attempt += 1;
    }
}

fn size_error_front_len(pool: &ModelPool) -> usize {
    let points: Vec<(f64, u64)> = pool
        .models()
        .iter()
        .map(|m| (1.0 - m.validation.accuracy(), m.params))
        .collect();
    points
        .iter()
        .filter(|a| {
            !points
                .iter()
                .any(|b| b.0 <= a.0 && b.1 <= a.1 && (b.0 < a.0 || b.1 < a.1))
        })
        .count()
}

fn synth_attempt(
    n_models: usize,
    n_samples: usize,
    n_classes: usize,
    seed: u64,
    attempt: u64,
) -> Result<ModelPool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let split_data = |rng: &mut ChaCha8Rng| {
        let mut labels: Vec<u32> = (0..n_samples).map(|i| (i % n_classes) as u32).collect();
        labels.shuffle(rng);
        let difficulty: Vec<f64> = (0..n_samples).map(|_| rng.random::<f64>()).collect();
        (labels, difficulty)
    };
    let val = split_data(&mut rng);
    let test = split_data(&mut rng);

    // Wider spread on later attempts.
    let spread = 1.0 + 0.25 * attempt as f64;
    let mut models = Vec::with_capacity(n_models);
    for j in 0..n_models {
        let base = if n_models == 1 {
            0.5
        } else {
            j as f64 / (n_models - 1) as f64
        };
        let skill = (base + 0.08 * normal.sample(&mut rng)).clamp(0.0, 1.0);
        let strength = 0.4 + 2.2 * skill * spread;
        let params = 10f64.powf(5.0 + 2.5 * skill + 0.15 * normal.sample(&mut rng));
        let params = params.round().max(1.0) as u64;
        let mega = params as f64 / 1e6;
        let gpu = 2e-3 * mega.powf(0.6) * (0.1 * normal.sample(&mut rng)).exp();
        let cpu = 2.5e-2 * mega.powf(0.9) * (0.1 * normal.sample(&mut rng)).exp();

        let predict = |(labels, difficulty): &(Vec<u32>, Vec<f64>), rng: &mut ChaCha8Rng| {
            let mut probs = Vec::with_capacity(n_samples * n_classes);
            let mut logits = vec![0.0f64; n_classes];
            for (&label, &d) in labels.iter().zip(difficulty) {
                for z in logits.iter_mut() {
                    *z = normal.sample(rng);
                }
                logits[label as usize] += 4.0 * strength * (1.0 - d);
                softmax_into(&logits, &mut probs);
            }
            PredictionSet {
                n_classes,
                probs,
                labels: labels.clone(),
            }
        };
        let validation = predict(&val, &mut rng);
        let test = predict(&test, &mut rng);
        models.push(ModelRecord {
            id: format!("m{j:02}"),
            params,
            latencies: BTreeMap::from([("cpu".to_string(), cpu), ("gpu".to_string(), gpu)]),
            validation,
            test,
        });
    }
    ModelPool::new(
        format!("synthetic-{seed}"),
        n_classes,
        vec!["cpu".into(), "gpu".into()],
        models,
    )
}

fn softmax_into(logits: &[f64], out: &mut Vec<f32>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    out.extend(exps.iter().map(|e| (e / total) as f32));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pool() -> ModelPool {
        let labels = vec![0, 1, 0, 1];
        let a = PredictionSet::new(
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7],
            labels.clone(),
        )
        .unwrap();
        let b = PredictionSet::new(
            2,
            vec![0.5, 0.5, 0.4, 0.6, 0.1, 0.9, 0.45, 0.55],
            labels,
        )
        .unwrap();
        let rec = |id: &str, params, set: &PredictionSet| ModelRecord {
            id: id.into(),
            params,
            latencies: BTreeMap::from([("gpu".into(), 0.001)]),
            validation: set.clone(),
            test: set.clone(),
        };
        ModelPool::new("tiny", 2, vec!["gpu".into()], vec![rec("m0", 10, &a), rec("m1", 20, &b)])
            .unwrap()
    }

    #[test]
    fn write_then_load_two_model_pool() {
        let dir = tempfile::tempdir().unwrap();
        let pool = tiny_pool();
        let path = write_pool(&pool, dir.path()).unwrap();
        let loaded = load_pool(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded, pool);
    }

    #[test]
    fn row_sum_violation_is_reported_with_model_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pool(&tiny_pool(), dir.path()).unwrap();
        let bad = encode_predictions(2, &[0.9, 0.2, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]);
        fs::write(dir.path().join("m000_validation.eprd"), bad).unwrap();
        let err = load_pool(&path).unwrap_err().to_string();
        assert!(err.contains("row sum 1.1"), "{err}");
        assert!(err.contains("exceeds tolerance"), "{err}");
        assert!(err.contains("m0") && err.contains("row 0"), "{err}");
    }

    #[test]
    fn missing_platform_latency_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pool(&tiny_pool(), dir.path()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let text = text.replacen("\"platforms\": [\n    \"gpu\"\n  ]", "\"platforms\": [\"gpu\", \"cpu\"]", 1);
        fs::write(&path, text).unwrap();
        let err = load_pool(&path).unwrap_err().to_string();
        assert!(err.contains("missing latency"), "{err}");
    }

    #[test]
    fn bad_magic_and_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pool(&tiny_pool(), dir.path()).unwrap();
        let file = dir.path().join("m001_test.eprd");
        let mut bytes = fs::read(&file).unwrap();
        bytes[0] = b'X';
        fs::write(&file, &bytes).unwrap();
        let err = load_pool(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic") && err.contains("m001_test.eprd"), "{err}");

        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 4);
        fs::write(&file, &bytes).unwrap();
        let err = load_pool(&path).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");

        // three-class header against a two-class manifest
        fs::write(&file, encode_predictions(3, &[0.2, 0.3, 0.5])).unwrap();
        let err = load_pool(&path).unwrap_err().to_string();
        assert!(err.contains("3 classes"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pool(&tiny_pool(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("m000_test.elbl")).unwrap();
        assert!(matches!(load_pool(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn split_even_classes() {
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let (a, b) = stratified_half_split_indices(&labels, 2, 3).unwrap();
        assert_eq!((a.len(), b.len()), (4, 4));
        for half in [&a, &b] {
            assert_eq!(half.iter().filter(|&&i| labels[i] == 0).count(), 2);
        }
    }

    #[test]
    fn split_odd_classes_rounds_first_half_up() {
        let labels: Vec<u32> = (0..10).map(|i| i % 2).collect();
        let (a, b) = stratified_half_split_indices(&labels, 2, 11).unwrap();
        assert_eq!((a.len(), b.len()), (6, 4));
        assert_eq!(a.iter().filter(|&&i| labels[i] == 1).count(), 3);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let err = stratified_half_split_indices(&[0, 0, 1], 2, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn synth_boundary_and_preconditions() {
        let pool = synth_pool(1, 10, 2, 0).unwrap();
        assert_eq!(pool.len(), 1);
        assert!(synth_pool(0, 10, 2, 0).is_err());
        assert!(synth_pool(2, 3, 4, 0).is_err());
        assert!(synth_pool(2, 10, 1, 0).is_err());
    }

    #[test]
    fn synth_accuracy_tracks_size() {
        let pool = synth_pool(8, 500, 10, 1).unwrap();
        let first = pool.model(0).validation.accuracy();
        let last = pool.model(7).validation.accuracy();
        assert!(last > first + 0.3, "{first} vs {last}");
        assert!(pool.model(7).params > pool.model(0).params);
    }
}
