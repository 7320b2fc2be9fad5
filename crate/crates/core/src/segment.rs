//! Motion-triggered clip segmentation for live landmark streams.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::DIMS_PER_KEYPOINT;

/// One frame of a live stream, as carried on the NDJSON wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    pub features: Vec<Option<f32>>,
}

impl StreamFrame {
    pub fn new(ts: Option<f64>, features: Vec<Option<f32>>) -> Self {
        Self { ts, features }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub start_threshold: f64,
    pub stop_threshold: f64,
    pub start_hold: usize,
    pub stop_hold: usize,
    pub max_clip_frames: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { start_threshold: 0.01, stop_threshold: 0.004, start_hold: 3, stop_hold: 10, max_clip_frames: 150 }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if !(self.stop_threshold.is_finite() && self.start_threshold.is_finite()) || self.stop_threshold < 0.0 {
            return bad("segmentation thresholds must be finite and non-negative");
        }
        if self.stop_threshold > self.start_threshold {
            return bad("stop_threshold must not exceed start_threshold");
        }
        if self.start_hold == 0 || self.stop_hold == 0 {
            return bad("start_hold and stop_hold must be at least 1");
        }
        if self.max_clip_frames <= self.start_hold {
            return bad("max_clip_frames must exceed start_hold");
        }
        Ok(())
    }
}

/// Mean Euclidean displacement of the keypoints detected in both frames.
pub fn displacement(a: &[Option<f32>], b: &[Option<f32>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.chunks_exact(DIMS_PER_KEYPOINT).zip(b.chunks_exact(DIMS_PER_KEYPOINT)) {
        let mut sq = 0.0;
        let mut complete = true;
        for (x, y) in pa.iter().zip(pb) {
            match (x, y) {
                (Some(x), Some(y)) => sq += (f64::from(*x) - f64::from(*y)).powi(2),
                _ => complete = false,
            }
        }
        if complete {
            total += sq.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Per-transition displacement for a run of consecutive frames.
pub fn motion_signal<F: AsRef<[Option<f32>]>>(frames: &[F]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames);
    }
    Ok(frames.windows(2).map(|w| displacement(w[0].as_ref(), w[1].as_ref())).collect())
}

/// A clip cut from the stream. `indices` are positions in the input, counting skipped frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub indices: Vec<u64>,
    pub frames: Vec<StreamFrame>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_index(&self) -> u64 {
        self.indices[0]
    }

    pub fn last_index(&self) -> u64 {
        self.indices[self.indices.len() - 1]
    }

    pub fn timestamps(&self) -> Option<Vec<f64>> {
        self.frames.iter().map(|f| f.ts).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterState {
    Idle,
    Recording,
}

/// Streaming state machine. Holds at most `max(start_hold + 1, max_clip_frames)` frames.
#[derive(Debug)]
pub struct Segmenter {
    config: SegmenterConfig,
    feature_count: usize,
    state: SegmenterState,
    next_index: u64,
    last: Option<StreamFrame>,
    recent: VecDeque<(u64, StreamFrame)>,
    moving_run: usize,
    still_run: usize,
    clip: Vec<(u64, StreamFrame)>,
    skipped: usize,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, feature_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            recent: VecDeque::with_capacity(config.start_hold + 1),
            clip: Vec::new(),
            config,
            feature_count,
            state: SegmenterState::Idle,
            next_index: 0,
            last: None,
            moving_run: 0,
            still_run: 0,
            skipped: 0,
        })
    }

    pub fn state(&self) -> SegmenterState {
        self.state
    }

    /// Frames rejected for a wrong length or non-finite values.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn buffered(&self) -> usize {
        self.recent.len() + self.clip.len()
    }

    /// Feed one frame; returns a clip when this frame closes one.
    pub fn push(&mut self, frame: StreamFrame) -> Option<Segment> {
        let index = self.next_index;
        self.next_index += 1;
        let well_formed = frame.features.len() == self.feature_count
            && frame.features.iter().flatten().all(|v| v.is_finite())
            && frame.ts.is_none_or(f64::is_finite);
        if !well_formed {
            self.skipped += 1;
            return None;
        }
        let signal = self.last.as_ref().map(|prev| displacement(&prev.features, &frame.features));
        self.last = Some(frame.clone());
        match self.state {
            SegmenterState::Idle => {
                if self.recent.len() == self.config.start_hold + 1 {
                    self.recent.pop_front();
                }
                self.recent.push_back((index, frame));
                match signal {
                    Some(s) if s >= self.config.start_threshold => self.moving_run += 1,
                    _ => self.moving_run = 0,
                }
                if self.moving_run >= self.config.start_hold {
                    let keep = self.moving_run + 1;
                    let skip = self.recent.len().saturating_sub(keep);
                    self.clip = self.recent.drain(..).skip(skip).collect();
                    self.state = SegmenterState::Recording;
                    self.moving_run = 0;
                    self.still_run = 0;
                }
                None
            }
            SegmenterState::Recording => {
                self.clip.push((index, frame));
                if signal.is_some_and(|s| s < self.config.stop_threshold) {
                    self.still_run += 1;
                } else {
                    self.still_run = 0;
                }
                if self.still_run >= self.config.stop_hold {
                    let trailing = self.still_run;
                    Some(self.emit(trailing))
                } else if self.clip.len() >= self.config.max_clip_frames {
                    Some(self.emit(0))
                } else {
                    None
                }
            }
        }
    }

    /// Close any clip still recording at end of stream.
    pub fn finish(&mut self) -> Option<Segment> {
        match self.state {
            SegmenterState::Recording => {
                let trailing = self.still_run;
                Some(self.emit(trailing))
            }
            SegmenterState::Idle => None,
        }
    }

    fn emit(&mut self, trailing: usize) -> Segment {
        let mut clip = std::mem::take(&mut self.clip);
        let kept = clip.len() - trailing.min(clip.len() - 1);
        let last = if kept < clip.len() { clip.pop() } else { None };
        clip.truncate(kept);
        self.state = SegmenterState::Idle;
        self.moving_run = 0;
        self.still_run = 0;
        self.recent.clear();
        self.recent.extend(last);
        let (indices, frames) = clip.into_iter().unzip();
        Segment { indices, frames }
    }
}

/// Run a whole stream through a fresh segmenter. Returns the clips and the skipped-frame count.
pub fn segment_stream(
    frames: impl IntoIterator<Item = StreamFrame>,
    config: &SegmenterConfig,
    feature_count: usize,
) -> Result<(Vec<Segment>, usize)> {
    let mut seg = Segmenter::new(config.clone(), feature_count)?;
    let mut clips: Vec<Segment> = frames.into_iter().filter_map(|f| seg.push(f)).collect();
    clips.extend(seg.finish());
    Ok((clips, seg.skipped()))
}
