//! Datasets: planted-signal synthetic generation, JSONL ingestion, and
//! uniform temporal subsampling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pooling::FeatureSequence;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorMode {
    /// Independent `N(0, I/D)` frames.
    Gaussian,
    /// Jittered draws from a fixed, class-independent pool of noise prototypes.
    SharedPool,
}

/// Parameters of the planted-signal benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feat_dim: usize,
    pub seq_len: usize,
    /// Signal frames planted per sequence.
    pub signal_frames: usize,
    /// Noise scale on signal frames (and jitter scale on pooled distractors).
    pub signal_noise: f64,
    pub distractor_mode: DistractorMode,
    pub pool_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// `C=4, D=16, T=20, k=3, σ=0.1`, shared pool of 10, 500/200 samples, seed 42.
    pub fn standard() -> Self {
        Self {
            num_classes: 4,
            feat_dim: 16,
            seq_len: 20,
            signal_frames: 3,
            signal_noise: 0.1,
            distractor_mode: DistractorMode::SharedPool,
            pool_size: 10,
            train_count: 500,
            test_count: 200,
            seed: 42,
        }
    }

    /// The standard setup with only two planted frames per sequence.
    pub fn hard() -> Self {
        Self {
            signal_frames: 2,
            ..Self::standard()
        }
    }

    /// A few dozen short sequences, for smoke tests.
    pub fn tiny() -> Self {
        Self {
            num_classes: 3,
            feat_dim: 8,
            seq_len: 6,
            signal_frames: 2,
            signal_noise: 0.1,
            distractor_mode: DistractorMode::SharedPool,
            pool_size: 5,
            train_count: 48,
            test_count: 24,
            seed: 7,
        }
    }

    /// Looks up a named preset: `standard` (alias `default`), `hard`, `tiny`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "standard" | "default" => Some(Self::standard()),
            "hard" => Some(Self::hard()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::contract("synthetic data needs C ≥ 2"));
        }
        if self.feat_dim == 0 || self.seq_len == 0 {
            return Err(Error::contract("synthetic data needs D ≥ 1 and T ≥ 1"));
        }
        if self.signal_frames == 0 || self.signal_frames > self.seq_len {
            return Err(Error::contract(format!(
                "signal frames k = {} must satisfy 1 ≤ k ≤ T = {}",
                self.signal_frames, self.seq_len
            )));
        }
        if !(self.signal_noise >= 0.0) || !self.signal_noise.is_finite() {
            return Err(Error::contract("signal noise must be finite and ≥ 0"));
        }
        if self.distractor_mode == DistractorMode::SharedPool && self.pool_size == 0 {
            return Err(Error::contract("shared distractor pool needs m ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { config: SynthConfig, split: String },
    File(PathBuf),
    Derived(String),
}

/// Labelled sequences sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub samples: Vec<FeatureSequence<S>>,
    pub num_classes: usize,
    pub feat_dim: usize,
    pub source: DataSource,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(samples: Vec<FeatureSequence<S>>, num_classes: usize, source: DataSource) -> Result<Self> {
        let feat_dim = samples
            .first()
            .map(FeatureSequence::dim)
            .ok_or_else(|| Error::contract("a dataset needs at least one sample"))?;
        for s in &samples {
            if s.dim() != feat_dim {
                return Err(Error::shape(
                    "Dataset",
                    format!("sample '{}' has D = {}, expected {feat_dim}", s.id, s.dim()),
                ));
            }
            if s.label >= num_classes {
                return Err(Error::contract(format!(
                    "sample '{}' has label {} ≥ C = {num_classes}",
                    s.id, s.label
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feat_dim,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same samples, classes, and dimension, ignoring the source.
    pub fn same_contents(&self, other: &Self) -> bool {
        self.samples == other.samples && self.num_classes == other.num_classes && self.feat_dim == other.feat_dim
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Applies [`uniform_subsample`] to every sample.
    pub fn subsample(&self, n: usize) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| uniform_subsample(s, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            num_classes: self.num_classes,
            feat_dim: self.feat_dim,
            source: DataSource::Derived(format!("subsample {n}")),
        })
    }
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm class prototypes, orthogonalized by Gram–Schmidt while
/// `C ≤ D`; beyond that they are only normalized.
fn prototypes<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = gaussian(rng, dim, 1.0);
        let mut v = raw.clone();
        for u in &out {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        let (v, n) = if n > 1e-8 { (v, n) } else { (raw.clone(), dot(&raw, &raw).sqrt()) };
        out.push(v.into_iter().map(|x| x / n).collect());
    }
    out
}

fn synth_split<S: Scalar, R: Rng>(
    rng: &mut R,
    cfg: &SynthConfig,
    protos: &[Vec<f64>],
    pool: &[Vec<f64>],
    count: usize,
    split: &str,
) -> Result<Dataset<S>> {
    let (t_len, dim) = (cfg.seq_len, cfg.feat_dim);
    let unit = 1.0 / (dim as f64).sqrt();
    let mut labels: Vec<usize> = (0..count).map(|i| i % cfg.num_classes).collect();
    labels.shuffle(rng);

    let mut samples = Vec::with_capacity(count);
    for (i, &label) in labels.iter().enumerate() {
        let mut mask = vec![false; t_len];
        for pos in index::sample(rng, t_len, cfg.signal_frames) {
            mask[pos] = true;
        }
        let mut data = Vec::with_capacity(t_len * dim);
        for &is_signal in &mask {
            let frame: Vec<f64> = if is_signal {
                let noise = gaussian(rng, dim, cfg.signal_noise * unit);
                protos[label].iter().zip(noise).map(|(u, z)| u + z).collect()
            } else {
                match cfg.distractor_mode {
                    DistractorMode::Gaussian => gaussian(rng, dim, unit),
                    DistractorMode::SharedPool => {
                        let base = &pool[rng.random_range(0..pool.len())];
                        let jitter = gaussian(rng, dim, cfg.signal_noise * unit);
                        base.iter().zip(jitter).map(|(b, z)| b + z).collect()
                    }
                }
            };
            data.extend(frame.into_iter().map(S::of));
        }
        let frames = Tensor::new(vec![t_len, dim], data)?;
        samples.push(FeatureSequence::new(format!("{split}-{i:05}"), label, frames, Some(mask))?);
    }
    Dataset::new(
        samples,
        cfg.num_classes,
        DataSource::Synthetic {
            config: cfg.clone(),
            split: split.to_string(),
        },
    )
}

/// Draws the train and test splits of a planted-signal benchmark.
///
/// Each class `c` owns a unit prototype `u_c`. A sample of class `c` holds
/// `u_c + noise` at `k` uniformly chosen positions and class-independent
/// distractors elsewhere. Everything is determined by `cfg.seed`; the two
/// splits are consecutive draws from one stream.
pub fn generate_synthetic<S: Scalar>(cfg: &SynthConfig) -> Result<(Dataset<S>, Dataset<S>)> {
    cfg.validate()?;
    if cfg.train_count == 0 || cfg.test_count == 0 {
        return Err(Error::contract("both splits need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = prototypes(&mut rng, cfg.num_classes, cfg.feat_dim);
    let pool: Vec<Vec<f64>> = match cfg.distractor_mode {
        DistractorMode::SharedPool => (0..cfg.pool_size)
            .map(|_| gaussian(&mut rng, cfg.feat_dim, 1.0 / (cfg.feat_dim as f64).sqrt()))
            .collect(),
        DistractorMode::Gaussian => Vec::new(),
    };
    let train = synth_split(&mut rng, cfg, &protos, &pool, cfg.train_count, "train")?;
    let test = synth_split(&mut rng, cfg, &protos, &pool, cfg.test_count, "test")?;
    Ok((train, test))
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct Record<S> {
    id: String,
    label: usize,
    frames: Vec<Vec<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signal_mask: Option<Vec<bool>>,
}

/// Parses one sequence per line:
/// `{"id": str, "label": int, "frames": [[f64; D]; T], "signal_mask"?: [bool; T]}`.
///
/// Blank lines are skipped. When `num_classes` is `None` it is inferred as
/// the largest label plus one.
pub fn read_jsonl<S: Scalar, R: BufRead>(reader: R, num_classes: Option<usize>, source: DataSource) -> Result<Dataset<S>> {
    let mut samples = Vec::new();
    let mut feat_dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Ingest { line: line_no, message };
        let rec: Record<S> = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let t_len = rec.frames.len();
        if t_len == 0 {
            return Err(bad("sequence has no frames".into()));
        }
        let d = rec.frames[0].len();
        if d == 0 {
            return Err(bad("frames have no features".into()));
        }
        if let Some((r, row)) = rec.frames.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(bad(format!("ragged frames: row {r} has {} values, row 0 has {d}", row.len())));
        }
        match feat_dim {
            Some(expected) if expected != d => {
                return Err(bad(format!("feature dimension {d} differs from earlier lines ({expected})")));
            }
            _ => feat_dim = Some(d),
        }
        if let Some(c) = num_classes {
            if rec.label >= c {
                return Err(bad(format!("label {} is not below C = {c}", rec.label)));
            }
        }
        let frames = Tensor::new(vec![t_len, d], rec.frames.into_iter().flatten().collect())
            .map_err(|e| bad(e.to_string()))?;
        let seq = FeatureSequence::new(rec.id, rec.label, frames, rec.signal_mask).map_err(|e| bad(e.to_string()))?;
        samples.push(seq);
    }
    if samples.is_empty() {
        return Err(Error::Ingest {
            line: 0,
            message: "no samples found".into(),
        });
    }
    let c = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label).max().unwrap_or(0) + 1);
    Dataset::new(samples, c, source)
}

pub fn load_jsonl<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    load_jsonl_with_classes(path, None)
}

pub fn load_jsonl_with_classes<S: Scalar>(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file), num_classes, DataSource::File(path.to_path_buf()))
}

pub fn write_jsonl<S: Scalar, W: Write>(dataset: &Dataset<S>, mut writer: W) -> Result<()> {
    for s in &dataset.samples {
        let rec = Record {
            id: s.id.clone(),
            label: s.label,
            frames: s.frames().to_rows(),
            signal_mask: s.signal_mask().map(<[bool]>::to_vec),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_jsonl<S: Scalar>(dataset: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_jsonl(dataset, BufWriter::new(file))
}

/// Indices `⌊j·T/n⌋` for `j = 0..n`.
pub fn subsample_indices(len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|j| j * len / n).collect()
}

/// Keeps `n` evenly spaced frames (repeating frames when `T < n`).
pub fn uniform_subsample<S: Scalar>(seq: &FeatureSequence<S>, n: usize) -> Result<FeatureSequence<S>> {
    if n == 0 {
        return Err(Error::contract("subsample size must be at least 1"));
    }
    let idx = subsample_indices(seq.len(), n);
    let data = idx.iter().flat_map(|&t| seq.frame(t).iter().copied()).collect();
    let frames = Tensor::new(vec![n, seq.dim()], data)?;
    let mask = seq.signal_mask().map(|m| idx.iter().map(|&t| m[t]).collect());
    FeatureSequence::new(seq.id.clone(), seq.label, frames, mask)
}
