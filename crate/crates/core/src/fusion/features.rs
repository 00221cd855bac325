//! Frozen backbone features as fusion-network inputs.
//!
//! During fusion search the backbones never move, so their per-block
//! features are computed once for a whole dataset and stored flat; the
//! training loop gathers mini-batches out of these arrays without
//! touching the backbones again.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Identifies one tapped feature map: which modality, which backbone
/// block produced it, and its channel count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub modality: String,
    pub block: usize,
    pub channels: usize,
}

/// Per-source features for an entire dataset split, stored as flat
/// `(N, C_s, L)` arrays in example-major order, plus the labels.
#[derive(Debug, Clone)]
pub struct SourceFeatures {
    pub specs: Vec<SourceSpec>,
    pub signal_len: usize,
    per_source: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl SourceFeatures {
    pub fn new(
        specs: Vec<SourceSpec>,
        signal_len: usize,
        per_source: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if specs.len() != per_source.len() {
            return Err(Error::invalid(
                "per_source",
                format!("{} sources, {} feature arrays", specs.len(), per_source.len()),
            ));
        }
        let n = labels.len();
        for (spec, arr) in specs.iter().zip(&per_source) {
            let want = n * spec.channels * signal_len;
            if arr.len() != want {
                return Err(Error::invalid(
                    "per_source",
                    format!(
                        "{}/block{}: {} values, want {n}x{}x{signal_len} = {want}",
                        spec.modality, spec.block, arr.len(), spec.channels
                    ),
                ));
            }
        }
        Ok(SourceFeatures { specs, signal_len, per_source, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gather the given examples into per-source `(B, C_s, L)` input
    /// tensors (constants: gradients stop at the frozen backbones).
    pub fn batch(&self, idxs: &[usize]) -> Result<SourceBatch> {
        if idxs.is_empty() {
            return Err(Error::EmptyDataset("batch of zero examples".into()));
        }
        let n = self.len();
        if let Some(&bad) = idxs.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("idxs", format!("example {bad} out of {n}")));
        }
        let b = idxs.len();
        let mut inputs = Vec::with_capacity(self.specs.len());
        for (spec, arr) in self.specs.iter().zip(&self.per_source) {
            let row = spec.channels * self.signal_len;
            let mut data = Vec::with_capacity(b * row);
            for &i in idxs {
                data.extend_from_slice(&arr[i * row..(i + 1) * row]);
            }
            inputs.push(Tensor::from_vec(data, &[b, spec.channels, self.signal_len])?);
        }
        let labels = idxs.iter().map(|&i| self.labels[i]).collect();
        Ok(SourceBatch { inputs, labels })
    }

    /// All examples in stored order.
    pub fn full_batch(&self) -> Result<SourceBatch> {
        let idxs: Vec<usize> = (0..self.len()).collect();
        self.batch(&idxs)
    }
}

/// One mini-batch of fusion inputs: a tensor per source plus labels.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl SourceBatch {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SourceFeatures {
        // 3 examples, 2 sources: (1 ch, L=2) and (2 ch, L=2).
        let s0: Vec<f64> = (0..6).map(f64::from).collect();
        let s1: Vec<f64> = (100..112).map(f64::from).collect();
        SourceFeatures::new(
            vec![
                SourceSpec { modality: "a".into(), block: 0, channels: 1 },
                SourceSpec { modality: "b".into(), block: 1, channels: 2 },
            ],
            2,
            vec![s0, s1],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn batch_gathers_rows_in_index_order() {
        let f = toy();
        let b = f.batch(&[2, 0]).unwrap();
        assert_eq!(b.labels, vec![2, 0]);
        assert_eq!(b.inputs[0].shape(), &[2, 1, 2]);
        assert_eq!(b.inputs[0].data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(b.inputs[1].shape(), &[2, 2, 2]);
        assert_eq!(&b.inputs[1].data()[..4], &[108.0, 109.0, 110.0, 111.0]);
    }

    #[test]
    fn out_of_range_and_empty_batches_are_rejected() {
        let f = toy();
        assert!(f.batch(&[3]).is_err());
        assert!(f.batch(&[]).is_err());
    }

    #[test]
    fn size_mismatches_are_rejected() {
        let err = SourceFeatures::new(
            vec![SourceSpec { modality: "a".into(), block: 0, channels: 1 }],
            2,
            vec![vec![0.0; 5]],
            vec![0, 1, 2],
        );
        assert!(err.is_err());
    }
}
