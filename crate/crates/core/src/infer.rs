//! Clip classification and the streaming segment-then-classify pipeline.

use std::io::{BufRead, Write};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::landmark::{ClipBuilder, Sampler};
use crate::model::{logits, predict_topk};
use crate::segment::{Segment, Segmenter, SegmenterConfig, StreamFrame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub probability: f32,
}

/// A loaded model plus the preprocessing it was trained with.
#[derive(Clone, Debug)]
pub struct Classifier {
    checkpoint: Checkpoint,
    builder: ClipBuilder,
}

impl Classifier {
    pub fn new(checkpoint: Checkpoint) -> Self {
        let sampler = checkpoint.sampler;
        Self::with_sampler(checkpoint, sampler)
    }

    pub fn with_sampler(checkpoint: Checkpoint, sampler: Sampler) -> Self {
        let t_data = checkpoint.config.max_seq_len - 1;
        let mut builder = ClipBuilder::new(checkpoint.layout.clone(), sampler, t_data);
        builder.recenter = checkpoint.recenter;
        Self { checkpoint, builder }
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn feature_count(&self) -> usize {
        self.checkpoint.layout.feature_count()
    }

    /// The `k` most probable classes for one recorded clip, most probable first.
    pub fn classify(
        &self,
        frames: &[Vec<Option<f32>>],
        timestamps: Option<&[f64]>,
        k: usize,
    ) -> Result<Vec<Prediction>> {
        if frames.is_empty() {
            return Err(Error::EmptyClip);
        }
        let clip = self.builder.build(frames, timestamps, None)?;
        let out = logits(&self.checkpoint.params, &self.checkpoint.config, std::slice::from_ref(&clip))?;
        let ranked = predict_topk(out.values(), k)?;
        Ok(ranked
            .into_iter()
            .map(|(i, probability)| Prediction {
                label: self.checkpoint.vocabulary.name(i).expect("checked on load").to_owned(),
                probability,
            })
            .collect())
    }
}

/// Classify one clip with evenly spaced sampling down to `t_data` frames.
pub fn infer_clip(
    frames: &[Vec<Option<f32>>],
    checkpoint: &Checkpoint,
    t_data: usize,
    k: usize,
) -> Result<Vec<Prediction>> {
    Classifier::with_sampler(checkpoint.clone(), Sampler::Fixed(t_data)).classify(frames, None, k)
}

/// One output line of the `stream` pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPrediction {
    pub clip: usize,
    pub first_frame: u64,
    pub last_frame: u64,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_ts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_ts: Option<f64>,
    pub top_k: Vec<Prediction>,
    /// Time from the clip closing to its prediction being ready.
    pub latency_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StreamSummary {
    pub lines: usize,
    pub clips: usize,
    /// Lines that were not valid frame records, plus frames the segmenter rejected.
    pub skipped: usize,
}

/// Reads NDJSON frames from `input`, segments them, and writes one JSON line
/// per clip to `output`. Classification runs on a worker thread with at most
/// one clip in flight; output order follows clip order.
pub fn run_stream<R: BufRead, W: Write + Send>(
    input: R,
    output: W,
    classifier: &Classifier,
    segmenter: SegmenterConfig,
    k: usize,
) -> Result<StreamSummary> {
    let mut seg = Segmenter::new(segmenter, classifier.feature_count())?;
    let (tx, rx) = mpsc::sync_channel::<(usize, Segment, Instant)>(0);
    let mut summary = StreamSummary::default();
    let mut bad_lines = 0;

    std::thread::scope(|scope| {
        let worker = scope.spawn(move || -> Result<()> {
            let mut output = output;
            for (clip, segment, closed) in rx {
                let frames: Vec<Vec<Option<f32>>> = segment.frames.iter().map(|f| f.features.clone()).collect();
                let timestamps = segment.timestamps();
                let top_k = classifier.classify(&frames, timestamps.as_deref(), k)?;
                let record = StreamPrediction {
                    clip,
                    first_frame: segment.first_index(),
                    last_frame: segment.last_index(),
                    frames: segment.len(),
                    start_ts: segment.frames[0].ts,
                    end_ts: segment.frames[segment.len() - 1].ts,
                    top_k,
                    latency_ms: closed.elapsed().as_secs_f64() * 1e3,
                };
                serde_json::to_writer(&mut output, &record)?;
                writeln!(output).and_then(|_| output.flush()).map_err(|e| Error::io("<output>", e))?;
            }
            Ok(())
        });

        let send = |segment: Segment, clips: &mut usize| -> bool {
            let sent = tx.send((*clips, segment, Instant::now())).is_ok();
            *clips += 1;
            sent
        };
        let mut read_result = Ok(());
        for line in input.lines() {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    read_result = Err(Error::io("<input>", e));
                    break;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            summary.lines += 1;
            let Ok(frame) = serde_json::from_str::<StreamFrame>(&line) else {
                bad_lines += 1;
                continue;
            };
            if let Some(segment) = seg.push(frame) {
                if !send(segment, &mut summary.clips) {
                    break;
                }
            }
        }
        if read_result.is_ok() {
            if let Some(segment) = seg.finish() {
                send(segment, &mut summary.clips);
            }
        }
        drop(tx);
        let worked = worker.join().expect("inference worker panicked");
        read_result.and(worked)
    })?;
    summary.skipped = bad_lines + seg.skipped();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark::{ClassVocabulary, LandmarkLayout};
    use crate::model::{init_params, ModelConfig};
    use crate::synthetic::burst_stream;
    use std::collections::BTreeMap;

    fn checkpoint() -> Checkpoint {
        let layout = LandmarkLayout::default();
        let config = ModelConfig {
            hidden_dim: 16,
            num_heads: 2,
            num_layers: 1,
            ffn_dim: 16,
            num_classes: 7,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: init_params(&config, 11).unwrap(),
            vocabulary: ClassVocabulary::new((0..7).map(|i| format!("sign{i}")).collect()).unwrap(),
            config,
            layout,
            sampler: Sampler::Fixed(16),
            recenter: false,
            seed: 11,
            metrics: BTreeMap::new(),
        }
    }

    #[test]
    fn top_five_descending() {
        let ckpt = checkpoint();
        let frames = burst_stream(&ckpt.layout, 3, 20, 3, 0.02, 1);
        let out = infer_clip(&frames, &ckpt, 16, 5).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.windows(2).all(|w| w[0].probability >= w[1].probability));
        assert!(out.iter().all(|p| p.label.starts_with("sign")));
    }

    #[test]
    fn zero_clip_is_deterministic() {
        let ckpt = checkpoint();
        let frames = vec![vec![Some(0.0f32); 144]; 12];
        let a = infer_clip(&frames, &ckpt, 16, 3).unwrap();
        assert_eq!(a, infer_clip(&frames, &ckpt, 16, 3).unwrap());
    }

    #[test]
    fn errors() {
        let ckpt = checkpoint();
        assert!(matches!(infer_clip(&[], &ckpt, 16, 5), Err(Error::EmptyClip)));
        let frames = vec![vec![Some(0.0f32); 144]; 4];
        assert!(matches!(infer_clip(&frames, &ckpt, 16, 0), Err(Error::BadK { .. })));
        assert!(matches!(infer_clip(&frames, &ckpt, 16, 8), Err(Error::BadK { .. })));
    }

    #[test]
    fn stream_emits_one_record_per_burst() {
        let classifier = Classifier::new(checkpoint());
        let mut input = String::new();
        let mut frames = burst_stream(&classifier.checkpoint().layout, 5, 30, 15, 0.02, 2);
        frames.extend(burst_stream(&classifier.checkpoint().layout, 5, 30, 15, 0.02, 3));
        for (i, f) in frames.iter().enumerate() {
            input.push_str(&serde_json::to_string(&StreamFrame::new(Some(i as f64 / 30.0), f.clone())).unwrap());
            input.push('\n');
            if i == 20 {
                input.push_str("not json\n");
            }
        }
        let mut out = Vec::new();
        let summary = run_stream(input.as_bytes(), &mut out, &classifier, SegmenterConfig::default(), 5).unwrap();
        assert_eq!(summary, StreamSummary { lines: 101, clips: 2, skipped: 1 });
        let records: Vec<StreamPrediction> =
            String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 2);
        assert_eq!((records[0].clip, records[0].first_frame, records[0].last_frame), (0, 4, 34));
        assert_eq!(records[1].clip, 1);
        assert!(records.iter().all(|r| r.top_k.len() == 5 && r.latency_ms >= 0.0));
    }
}
