use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value filling every coordinate of the end-of-sequence frame. It lies
/// outside the normalized `[0, 1]` image range, so it cannot be confused with
/// a real pose.
pub const EOS_VALUE: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Eos,
    Pad,
}

/// Fixed-length clip: data rows, one end-of-sequence row, then zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    features: Tensor<f32>,
    frame_kind: Vec<FrameKind>,
    label_index: Option<usize>,
}

impl ClipTensor {
    /// `[T, F]` feature matrix.
    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn frame_kind(&self) -> &[FrameKind] {
        &self.frame_kind
    }

    pub fn label_index(&self) -> Option<usize> {
        self.label_index
    }

    pub fn with_label(mut self, label_index: Option<usize>) -> Self {
        self.label_index = label_index;
        self
    }

    pub fn seq_len(&self) -> usize {
        self.frame_kind.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.cols()
    }

    pub fn data_len(&self) -> usize {
        self.frame_kind.iter().filter(|&&k| k == FrameKind::Data).count()
    }

    /// `true` for positions the encoder may attend to (data and EOS).
    pub fn attention_mask(&self) -> Vec<bool> {
        self.frame_kind.iter().map(|&k| k != FrameKind::Pad).collect()
    }

    /// Appends `extra` zero rows.
    pub fn pad_to(&self, seq_len: usize) -> Result<Self> {
        if seq_len < self.seq_len() {
            return Err(Error::SequenceTooLong { len: self.seq_len(), max: seq_len });
        }
        let f = self.feature_count();
        let mut values = self.features.values().to_vec();
        values.resize(seq_len * f, 0.0);
        let mut kinds = self.frame_kind.clone();
        kinds.resize(seq_len, FrameKind::Pad);
        Ok(Self { features: Tensor::new(vec![seq_len, f], values)?, frame_kind: kinds, label_index: self.label_index })
    }
}

/// Lays out `frames` (already imputed) into a `(t_data + 1) x F` clip.
pub fn build_clip_tensor(
    frames: &[Vec<f32>],
    t_data: usize,
    feature_count: usize,
    label_index: Option<usize>,
) -> Result<ClipTensor> {
    if frames.len() > t_data {
        return Err(Error::SequenceTooLong { len: frames.len(), max: t_data });
    }
    if let Some(bad) = frames.iter().find(|f| f.len() != feature_count) {
        return Err(Error::DimensionMismatch { expected: feature_count, found: bad.len() });
    }
    let seq_len = t_data + 1;
    let mut values = Vec::with_capacity(seq_len * feature_count);
    let mut kinds = Vec::with_capacity(seq_len);
    for frame in frames {
        values.extend_from_slice(frame);
        kinds.push(FrameKind::Data);
    }
    values.extend(std::iter::repeat_n(EOS_VALUE, feature_count));
    kinds.push(FrameKind::Eos);
    values.resize(seq_len * feature_count, 0.0);
    kinds.resize(seq_len, FrameKind::Pad);
    Ok(ClipTensor { features: Tensor::new(vec![seq_len, feature_count], values)?, frame_kind: kinds, label_index })
}
