//! Synthetic multimodal classification task.
//!
//! Two independent latent sign bits drive four classes. Each modality
//! observes exactly one bit — its signal is that bit's sign times a
//! fixed per-modality template, plus Gaussian noise — so no single
//! modality can beat ~50% accuracy while both together identify the
//! class almost perfectly at moderate noise. That gap is what the
//! multimodal search is supposed to find and exploit.
//!
//! Class construction: label = 2·[s_a > 0] + [s_b > 0], where modality
//! 0 carries s_a and modality 1 carries s_b.

use crate::error::{Error, Result};
use crate::seeds::{self, tag};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// The task always has two latent bits, hence four classes.
pub const NUM_CLASSES: usize = 4;
/// And exactly two modalities, one per latent bit.
pub const NUM_MODALITIES: usize = 2;

const DATASET_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub signal_len: usize,
    pub channels: usize,
    pub noise_sigma: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            train_samples: 4000,
            val_samples: 1000,
            test_samples: 1000,
            signal_len: 16,
            channels: 2,
            noise_sigma: 0.3,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal_len == 0 {
            return Err(Error::invalid("signal_len", "must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid(
                "noise_sigma",
                format!("{} must be finite and >= 0", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn count(self, spec: &SyntheticTaskSpec) -> usize {
        match self {
            Split::Train => spec.train_samples,
            Split::Val => spec.val_samples,
            Split::Test => spec.test_samples,
        }
    }
}

/// Name and channel count of one modality stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityInfo {
    pub name: String,
    pub channels: usize,
}

/// A labeled multimodal dataset: per modality, flat `(N, C, L)` signal
/// arrays in example-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    modalities: Vec<ModalityInfo>,
    signal_len: usize,
    num_classes: usize,
    signals: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl MultimodalDataset {
    pub fn new(
        modalities: Vec<ModalityInfo>,
        signal_len: usize,
        num_classes: usize,
        signals: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::invalid("modalities", "need at least one"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        if signals.len() != modalities.len() {
            return Err(Error::invalid(
                "signals",
                format!("{} arrays for {} modalities", signals.len(), modalities.len()),
            ));
        }
        let n = labels.len();
        for (info, arr) in modalities.iter().zip(&signals) {
            let want = n * info.channels * signal_len;
            if arr.len() != want {
                return Err(Error::invalid(
                    "signals",
                    format!("{}: {} values, want {want}", info.name, arr.len()),
                ));
            }
            if let Some(bad) = arr.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid("signals", format!("{}: non-finite {bad}", info.name)));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} out of {num_classes} classes"),
            ));
        }
        Ok(MultimodalDataset { modalities, signal_len, num_classes, signals, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn modalities(&self) -> &[ModalityInfo] {
        &self.modalities
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::invalid("modality", format!("no modality named `{name}`")))
    }

    /// Raw flat signal array of one modality (example-major `(N, C, L)`).
    pub fn raw_signals(&self, modality: usize) -> Result<&[f64]> {
        self.signals
            .get(modality)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid("modality", format!("index {modality} out of range")))
    }

    /// Gather one modality's examples into a `(B, C, L)` input constant
    /// plus their labels.
    pub fn modality_batch(&self, modality: usize, idxs: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let info = self
            .modalities
            .get(modality)
            .ok_or_else(|| Error::invalid("modality", format!("index {modality} out of range")))?;
        if idxs.is_empty() {
            return Err(Error::EmptyDataset("batch of zero examples".into()));
        }
        let n = self.len();
        if let Some(&bad) = idxs.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("idxs", format!("example {bad} out of {n}")));
        }
        let row = info.channels * self.signal_len;
        let arr = &self.signals[modality];
        let mut data = Vec::with_capacity(idxs.len() * row);
        for &i in idxs {
            data.extend_from_slice(&arr[i * row..(i + 1) * row]);
        }
        let labels = idxs.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::from_vec(data, &[idxs.len(), info.channels, self.signal_len])?, labels))
    }

    /// Per-class example counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let header = DatasetHeader {
            version: DATASET_FILE_VERSION,
            signal_len: self.signal_len,
            num_classes: self.num_classes,
            num_examples: self.len(),
            modalities: self.modalities.clone(),
        };
        let mut emit = |value: String| -> Result<()> {
            writeln!(w, "{value}").map_err(|e| Error::io(path.display().to_string(), e))
        };
        emit(serde_json::to_string(&header)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?)?;
        for i in 0..self.len() {
            let rec = ExampleRecord {
                label: self.labels[i],
                signals: self
                    .modalities
                    .iter()
                    .zip(&self.signals)
                    .map(|(info, arr)| {
                        let row = info.channels * self.signal_len;
                        arr[i * row..(i + 1) * row].to_vec()
                    })
                    .collect(),
            };
            emit(serde_json::to_string(&rec)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines();
        let p = || path.display().to_string();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::parse(p(), "empty file"))?
            .map_err(|e| Error::io(p(), e))?;
        let header: DatasetHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::parse(p(), e.to_string()))?;
        if header.version != DATASET_FILE_VERSION {
            return Err(Error::parse(
                p(),
                format!("file version {} (expected {DATASET_FILE_VERSION})", header.version),
            ));
        }
        let mut signals: Vec<Vec<f64>> = header
            .modalities
            .iter()
            .map(|m| Vec::with_capacity(header.num_examples * m.channels * header.signal_len))
            .collect();
        let mut labels = Vec::with_capacity(header.num_examples);
        for line in lines {
            let line = line.map_err(|e| Error::io(p(), e))?;
            if line.is_empty() {
                continue;
            }
            let rec: ExampleRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(p(), e.to_string()))?;
            if rec.signals.len() != header.modalities.len() {
                return Err(Error::parse(
                    p(),
                    format!("example {} has {} signal arrays", labels.len(), rec.signals.len()),
                ));
            }
            for ((info, sink), got) in header.modalities.iter().zip(&mut signals).zip(rec.signals) {
                if got.len() != info.channels * header.signal_len {
                    return Err(Error::parse(
                        p(),
                        format!("example {}: {} values for {}", labels.len(), got.len(), info.name),
                    ));
                }
                sink.extend_from_slice(&got);
            }
            labels.push(rec.label);
        }
        if labels.len() != header.num_examples {
            return Err(Error::parse(
                p(),
                format!("{} examples, header promised {}", labels.len(), header.num_examples),
            ));
        }
        MultimodalDataset::new(
            header.modalities,
            header.signal_len,
            header.num_classes,
            signals,
            labels,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    signal_len: usize,
    num_classes: usize,
    num_examples: usize,
    modalities: Vec<ModalityInfo>,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    label: usize,
    signals: Vec<Vec<f64>>,
}

/// Deterministic unit-norm template of one modality: per channel, a
/// smooth positive bump at a channel-specific position, normalized so
/// the whole `(C, L)` template has unit Euclidean norm.
pub fn modality_template(modality: usize, channels: usize, signal_len: usize) -> Vec<f64> {
    let c = channels as f64;
    let l = signal_len as f64;
    let width = (l / 8.0).max(1.0);
    let mut t = Vec::with_capacity(channels * signal_len);
    for ch in 0..channels {
        // Modality 0 centers bumps in the left half, modality 1 in the
        // right half, staggered across channels.
        let frac = (ch as f64 + 1.0) / (c + 1.0);
        let center = match modality {
            0 => 0.5 * l * frac,
            _ => 0.5 * l + 0.5 * l * frac,
        };
        for i in 0..signal_len {
            let d = (i as f64 - center) / width;
            t.push((-0.5 * d * d).exp());
        }
    }
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut t {
        *v /= norm;
    }
    t
}

/// Generate one split. Classes are exactly balanced (the remainder of
/// `n / 4` goes to the lowest class indices), example order is shuffled,
/// and each split draws from its own seed stream so splits are disjoint.
pub fn generate_split(spec: &SyntheticTaskSpec, seed: u64, split: Split) -> Result<MultimodalDataset> {
    spec.validate()?;
    let n = split.count(spec);
    let (c, l) = (spec.channels, spec.signal_len);
    let mut labels = Vec::with_capacity(n);
    for class in 0..NUM_CLASSES {
        let extra = usize::from(class < n % NUM_CLASSES);
        labels.extend(std::iter::repeat(class).take(n / NUM_CLASSES + extra));
    }
    let mut rng = seeds::rng_for(seed, tag::DATA, split.stream(), 0);
    labels.shuffle(&mut rng);

    let templates = [modality_template(0, c, l), modality_template(1, c, l)];
    let mut signals = vec![Vec::with_capacity(n * c * l), Vec::with_capacity(n * c * l)];
    for &label in &labels {
        // label = 2*[s_a > 0] + [s_b > 0]
        let signs = [if label >= 2 { 1.0 } else { -1.0 }, if label % 2 == 1 { 1.0 } else { -1.0 }];
        for (m, sign) in signs.into_iter().enumerate() {
            for &tv in &templates[m] {
                let noise: f64 = rng.sample(StandardNormal);
                signals[m].push(sign * tv + spec.noise_sigma * noise);
            }
        }
    }
    MultimodalDataset::new(
        vec![
            ModalityInfo { name: "m0".into(), channels: c },
            ModalityInfo { name: "m1".into(), channels: c },
        ],
        l,
        NUM_CLASSES,
        signals,
        labels,
    )
}

/// All three splits at once, each from its own stream.
pub fn generate_all(
    spec: &SyntheticTaskSpec,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset, MultimodalDataset)> {
    Ok((
        generate_split(spec, seed, Split::Train)?,
        generate_split(spec, seed, Split::Val)?,
        generate_split(spec, seed, Split::Test)?,
    ))
}
