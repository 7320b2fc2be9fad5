//! Seeded synthetic landmark data: drifting-pose clips for training checks and
//! still/moving/still frame streams for segmentation checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::landmark::{FrameRecord, LandmarkLayout, DIMS_PER_KEYPOINT};

/// Class names of the drift task, indexed by class.
pub const DRIFT_CLASSES: [&str; 3] = ["drift_right", "drift_left", "still"];

#[derive(Clone, Debug, PartialEq)]
pub struct DriftConfig {
    pub min_frames: usize,
    pub max_frames: usize,
    /// Per-frame X displacement range for the drifting classes.
    pub speed: (f32, f32),
    /// Standard deviation of per-coordinate frame noise.
    pub jitter: f32,
    /// Probability that a keypoint goes undetected in a frame.
    pub missing_rate: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { min_frames: 24, max_frames: 48, speed: (0.004, 0.012), jitter: 0.004, missing_rate: 0.02 }
    }
}

/// One generated clip: frames of `Option` coordinates and the class index.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub frames: Vec<Vec<Option<f32>>>,
    pub label: usize,
}

/// `per_class` clips of each class: 0 drifts right, 1 drifts left, 2 stays
/// in place with jitter. Output is class-interleaved.
pub fn drift_clips(layout: &LandmarkLayout, per_class: usize, config: &DriftConfig, seed: u64) -> Vec<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, config.jitter).expect("non-negative jitter");
    let k = layout.keypoint_count();
    let mut out = Vec::with_capacity(per_class * 3);
    for _ in 0..per_class {
        for label in 0..3 {
            let base: Vec<f32> = (0..k * DIMS_PER_KEYPOINT)
                .map(|i| if i % 3 == 2 { rng.gen_range(-0.1..0.1) } else { rng.gen_range(0.3..0.7) })
                .collect();
            let direction = [1.0f32, -1.0, 0.0][label];
            let speed = rng.gen_range(config.speed.0..=config.speed.1);
            let n = rng.gen_range(config.min_frames..=config.max_frames);
            let frames = (0..n)
                .map(|t| {
                    let mut frame = Vec::with_capacity(base.len());
                    for kp in 0..k {
                        let missing = rng.gen_bool(config.missing_rate);
                        for axis in 0..DIMS_PER_KEYPOINT {
                            let mut v = base[kp * 3 + axis] + noise.sample(&mut rng);
                            if axis == 0 {
                                v += direction * speed * t as f32;
                            }
                            frame.push((!missing).then_some(v));
                        }
                    }
                    frame
                })
                .collect();
            out.push(SyntheticClip { frames, label });
        }
    }
    out
}

/// The same clips as CSV records, video ids `"{prefix}{n}"`.
pub fn drift_records(clips: &[SyntheticClip], prefix: &str) -> Vec<FrameRecord> {
    clips
        .iter()
        .enumerate()
        .flat_map(|(n, clip)| {
            clip.frames.iter().enumerate().map(move |(i, f)| FrameRecord {
                video_id: format!("{prefix}{n}"),
                frame_index: i as u64,
                features: f.clone(),
                label: DRIFT_CLASSES[clip.label].to_owned(),
            })
        })
        .collect()
}

/// A stream of `still_before` identical frames, `moving` frames each shifted by
/// `speed` in X from the previous one, then `still_after` copies of the last
/// moving frame.
pub fn burst_stream(
    layout: &LandmarkLayout,
    still_before: usize,
    moving: usize,
    still_after: usize,
    speed: f32,
    seed: u64,
) -> Vec<Vec<Option<f32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose: Vec<f32> = (0..layout.feature_count()).map(|_| rng.gen_range(0.3..0.7)).collect();
    let mut frames = Vec::with_capacity(still_before + moving + still_after);
    for _ in 0..still_before {
        frames.push(pose.iter().map(|&v| Some(v)).collect());
    }
    for _ in 0..moving {
        for v in pose.iter_mut().step_by(DIMS_PER_KEYPOINT) {
            *v += speed;
        }
        frames.push(pose.iter().map(|&v| Some(v)).collect());
    }
    for _ in 0..still_after {
        frames.push(pose.iter().map(|&v| Some(v)).collect());
    }
    frames
}
