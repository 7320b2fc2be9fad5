//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function returns a JSON string. The `*_json` functions hold
//! the logic and are callable natively; the `#[wasm_bindgen]` wrappers only
//! convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use skelsign::landmark::{build_clip_tensor, FrameKind, LandmarkLayout, Sampler};
use skelsign::model::positional_encoding;
use skelsign::segment::{displacement, Segment, Segmenter, SegmenterConfig, SegmenterState, StreamFrame};
use skelsign::synthetic::burst_stream;
use skelsign::{Error, Result};

const MAX_HEATMAP_CELLS: usize = 1 << 18;

#[derive(Serialize)]
struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

pub fn positional_encoding_json(seq_len: usize, dim: usize) -> Result<String> {
    if seq_len == 0 || seq_len.saturating_mul(dim) > MAX_HEATMAP_CELLS {
        return Err(Error::InvalidConfig(format!("heatmap of {seq_len} x {dim} is out of range")));
    }
    let pe = positional_encoding::<f32>(seq_len, dim)?;
    Ok(serde_json::to_string(&Heatmap { rows: seq_len, cols: dim, values: pe.into_values() })?)
}

#[derive(Serialize)]
struct ClipSpan {
    first: u64,
    last: u64,
    frames: usize,
}

#[derive(Serialize)]
struct Trace {
    /// Displacement into each frame; the first frame has none.
    signal: Vec<Option<f64>>,
    states: Vec<SegmenterState>,
    clips: Vec<ClipSpan>,
    config: SegmenterConfig,
}

#[derive(Clone, Debug)]
pub struct BurstShape {
    pub still_before: usize,
    pub moving: usize,
    pub still_after: usize,
    pub speed: f32,
    pub seed: u64,
}

/// Runs the segmenter over a synthetic still/moving/still stream and records
/// the state after every frame.
pub fn segmentation_trace_json(burst: &BurstShape, config: SegmenterConfig) -> Result<String> {
    let total = burst.still_before + burst.moving + burst.still_after;
    if total == 0 || total > 5000 {
        return Err(Error::InvalidConfig(format!("stream of {total} frames is out of range")));
    }
    let layout = LandmarkLayout::default();
    let frames = burst_stream(&layout, burst.still_before, burst.moving, burst.still_after, burst.speed, burst.seed);
    let mut seg = Segmenter::new(config.clone(), layout.feature_count())?;
    let mut trace = Trace { signal: Vec::new(), states: Vec::new(), clips: Vec::new(), config };
    let mut prev: Option<&Vec<Option<f32>>> = None;
    for f in &frames {
        trace.signal.push(prev.map(|p| displacement(p, f)));
        prev = Some(f);
        let clip = seg.push(StreamFrame::new(None, f.clone()));
        trace.states.push(seg.state());
        record(clip, &mut trace.clips);
    }
    record(seg.finish(), &mut trace.clips);
    Ok(serde_json::to_string(&trace)?)
}

fn record(clip: Option<Segment>, clips: &mut Vec<ClipSpan>) {
    if let Some(c) = clip {
        clips.push(ClipSpan { first: c.first_index(), last: c.last_index(), frames: c.len() });
    }
}

#[derive(Serialize)]
struct Layout {
    sampled: Vec<usize>,
    kinds: Vec<&'static str>,
}

/// Which source frames a sampler keeps, and how they fill a padded model sequence.
pub fn clip_layout_json(n_frames: usize, sampler: &str, t_data: usize, seq_len: usize) -> Result<String> {
    let sampler: Sampler = sampler.parse()?;
    if t_data == 0 || seq_len > 4096 || n_frames > 100_000 {
        return Err(Error::InvalidConfig("layout sizes out of range".into()));
    }
    let sampled = sampler.select(n_frames, None, t_data)?;
    let rows = vec![vec![0.0f32]; sampled.len()];
    let clip = build_clip_tensor(&rows, t_data, 1, None)?;
    let clip = if seq_len > clip.seq_len() { clip.pad_to(seq_len)? } else { clip };
    let kinds = clip
        .frame_kind()
        .iter()
        .map(|k| match k {
            FrameKind::Data => "data",
            FrameKind::Eos => "eos",
            FrameKind::Pad => "pad",
        })
        .collect();
    Ok(serde_json::to_string(&Layout { sampled, kinds })?)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = positionalEncoding)]
pub fn positional_encoding_js(seq_len: usize, dim: usize) -> std::result::Result<String, JsError> {
    positional_encoding_json(seq_len, dim).map_err(js)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = segmentationTrace)]
pub fn segmentation_trace_js(
    still_before: usize,
    moving: usize,
    still_after: usize,
    speed: f32,
    start_threshold: f64,
    stop_threshold: f64,
    start_hold: usize,
    stop_hold: usize,
    max_clip_frames: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    let burst = BurstShape { still_before, moving, still_after, speed, seed: seed.into() };
    let config = SegmenterConfig { start_threshold, stop_threshold, start_hold, stop_hold, max_clip_frames };
    segmentation_trace_json(&burst, config).map_err(js)
}

#[wasm_bindgen(js_name = clipLayout)]
pub fn clip_layout_js(n_frames: usize, sampler: &str, t_data: usize, seq_len: usize) -> std::result::Result<String, JsError> {
    clip_layout_json(n_frames, sampler, t_data, seq_len).map_err(js)
}
