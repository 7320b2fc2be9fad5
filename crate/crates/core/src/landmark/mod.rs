//! Landmark data model: layout, CSV records, clip grouping and clip tensors.

mod clip;
mod csv;
mod sampling;

pub use clip::{build_clip_tensor, ClipTensor, FrameKind, EOS_VALUE};
pub use csv::{parse_landmark_csv, write_landmark_csv, MISSING_TOKEN};
pub use sampling::{sample_frames, Sampler, DEFAULT_SOURCE_FPS};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates per keypoint (X, Y, Z).
pub const DIMS_PER_KEYPOINT: usize = 3;

const HAND_JOINTS: [&str; 21] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_finger_mcp",
    "index_finger_pip",
    "index_finger_dip",
    "index_finger_tip",
    "middle_finger_mcp",
    "middle_finger_pip",
    "middle_finger_dip",
    "middle_finger_tip",
    "ring_finger_mcp",
    "ring_finger_pip",
    "ring_finger_dip",
    "ring_finger_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

const POSE_JOINTS: [&str; 6] = [
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Ordered keypoint set; each keypoint contributes `_x`, `_y`, `_z` columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkLayout {
    keypoint_names: Vec<String>,
}

impl Default for LandmarkLayout {
    /// 21 left-hand joints, 21 right-hand joints, then shoulders, elbows and
    /// wrists from the pose model: 48 keypoints, 144 features.
    fn default() -> Self {
        let mut names = Vec::with_capacity(48);
        for side in ["left_hand", "right_hand"] {
            names.extend(HAND_JOINTS.iter().map(|j| format!("{side}_{j}")));
        }
        names.extend(POSE_JOINTS.iter().map(|j| format!("pose_{j}")));
        Self { keypoint_names: names }
    }
}

impl LandmarkLayout {
    pub fn new(keypoint_names: Vec<String>) -> Result<Self> {
        if keypoint_names.is_empty() {
            return Err(Error::InvalidConfig("layout needs at least one keypoint".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = keypoint_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate keypoint name {dup:?}")));
        }
        if let Some(bad) = keypoint_names.iter().find(|n| n.contains(',') || n.contains('\n')) {
            return Err(Error::InvalidConfig(format!("keypoint name {bad:?} is not CSV-safe")));
        }
        Ok(Self { keypoint_names })
    }

    /// Generic `kp0..kpN` layout, convenient for small test fixtures.
    pub fn numbered(keypoints: usize) -> Result<Self> {
        Self::new((0..keypoints).map(|i| format!("kp{i}")).collect())
    }

    pub fn keypoint_names(&self) -> &[String] {
        &self.keypoint_names
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn feature_count(&self) -> usize {
        self.keypoint_names.len() * DIMS_PER_KEYPOINT
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.keypoint_names.iter().position(|n| n == name)
    }

    /// The exact CSV header line, without the trailing newline.
    pub fn csv_header(&self) -> String {
        let mut header = String::from("video_id,frame_index");
        for name in &self.keypoint_names {
            for axis in ["x", "y", "z"] {
                header.push(',');
                header.push_str(name);
                header.push('_');
                header.push_str(axis);
            }
        }
        header.push_str(",label");
        header
    }

    /// Recovers the layout from a CSV header line; the inverse of [`Self::csv_header`].
    pub fn from_csv_header(header: &str) -> Result<Self> {
        let mismatch = || Error::HeaderMismatch { line: 1 };
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 2 + DIMS_PER_KEYPOINT + 1 || !(cols.len() - 3).is_multiple_of(DIMS_PER_KEYPOINT) {
            return Err(mismatch());
        }
        let names = cols[2..cols.len() - 1]
            .chunks(DIMS_PER_KEYPOINT)
            .map(|c| c[0].strip_suffix("_x").map(str::to_owned).ok_or_else(mismatch))
            .collect::<Result<Vec<_>>>()?;
        let layout = Self::new(names).map_err(|_| mismatch())?;
        if layout.csv_header() != header.trim_end_matches('\r') {
            return Err(mismatch());
        }
        Ok(layout)
    }
}

/// One row of the landmark CSV. `None` marks an undetected coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u64,
    pub features: Vec<Option<f32>>,
    pub label: String,
}

/// The frames of one video in temporal order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipGroup {
    pub video_id: String,
    pub frames: Vec<FrameRecord>,
    pub label: String,
}

/// Partitions records by video id (in order of first appearance) and sorts
/// each group by frame index.
pub fn group_clips(records: Vec<FrameRecord>) -> Result<Vec<ClipGroup>> {
    let mut order: Vec<ClipGroup> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for record in records {
        match slot.get(&record.video_id) {
            Some(&i) => {
                let group = &mut order[i];
                if group.label != record.label {
                    return Err(Error::InconsistentLabel {
                        video_id: record.video_id,
                        first: group.label.clone(),
                        second: record.label,
                    });
                }
                group.frames.push(record);
            }
            None => {
                slot.insert(record.video_id.clone(), order.len());
                order.push(ClipGroup {
                    video_id: record.video_id.clone(),
                    label: record.label.clone(),
                    frames: vec![record],
                });
            }
        }
    }
    for group in &mut order {
        group.frames.sort_by_key(|f| f.frame_index);
        if let Some(w) = group.frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::DuplicateFrame {
                video_id: group.video_id.clone(),
                frame_index: w[0].frame_index,
            });
        }
    }
    Ok(order)
}

/// Missing coordinates become zero; present values pass through untouched.
pub fn impute_missing(features: &[Option<f32>]) -> Vec<f32> {
    features.iter().map(|v| v.unwrap_or(0.0)).collect()
}

/// Translates every present keypoint so the shoulder midpoint sits at the
/// origin. Frames without both shoulders are returned unchanged.
pub fn recenter_on_shoulders(features: &[Option<f32>], layout: &LandmarkLayout) -> Vec<Option<f32>> {
    let coord = |kp: usize, axis: usize| features.get(kp * DIMS_PER_KEYPOINT + axis).copied().flatten();
    let (Some(l), Some(r)) = (layout.index_of("pose_left_shoulder"), layout.index_of("pose_right_shoulder")) else {
        return features.to_vec();
    };
    let mut center = [0.0f32; DIMS_PER_KEYPOINT];
    for (axis, c) in center.iter_mut().enumerate() {
        match (coord(l, axis), coord(r, axis)) {
            (Some(a), Some(b)) => *c = (a + b) / 2.0,
            _ => return features.to_vec(),
        }
    }
    features
        .iter()
        .enumerate()
        .map(|(i, v)| v.map(|v| v - center[i % DIMS_PER_KEYPOINT]))
        .collect()
}

/// Turns raw frames into a model-ready clip: optional recentering,
/// imputation, sampling down to the frame budget, then EOS and padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBuilder {
    pub layout: LandmarkLayout,
    pub sampler: Sampler,
    /// Data-frame capacity of the model (sequence length minus the EOS slot).
    pub t_data: usize,
    pub recenter: bool,
}

impl ClipBuilder {
    pub fn new(layout: LandmarkLayout, sampler: Sampler, t_data: usize) -> Self {
        Self { layout, sampler, t_data, recenter: false }
    }

    pub fn build(
        &self,
        frames: &[Vec<Option<f32>>],
        timestamps: Option<&[f64]>,
        label_index: Option<usize>,
    ) -> Result<ClipTensor> {
        let f = self.layout.feature_count();
        if let Some(bad) = frames.iter().find(|fr| fr.len() != f) {
            return Err(Error::DimensionMismatch { expected: f, found: bad.len() });
        }
        let picked = self.sampler.select(frames.len(), timestamps, self.t_data)?;
        let rows: Vec<Vec<f32>> = picked
            .into_iter()
            .map(|i| {
                if self.recenter {
                    impute_missing(&recenter_on_shoulders(&frames[i], &self.layout))
                } else {
                    impute_missing(&frames[i])
                }
            })
            .collect();
        build_clip_tensor(&rows, self.t_data, f, label_index)
    }

    /// Builds labeled clips for every video group.
    pub fn build_groups(&self, groups: &[ClipGroup], vocabulary: &ClassVocabulary) -> Result<Vec<ClipTensor>> {
        groups
            .iter()
            .map(|g| {
                let frames: Vec<Vec<Option<f32>>> = g.frames.iter().map(|f| f.features.clone()).collect();
                self.build(&frames, None, Some(vocabulary.index_of(&g.label)?))
            })
            .collect()
    }
}

/// Bijective mapping between class names and dense indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// Sorted distinct labels of the given groups.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = labels.into_iter().map(str::to_owned).collect();
        names.sort();
        names.dedup();
        Self::new(names).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownLabel(name.to_owned()))
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindexed(self) -> Result<Self> {
        Self::new(self.names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_from_header_round_trips() {
        for layout in [LandmarkLayout::default(), LandmarkLayout::numbered(2).unwrap()] {
            assert_eq!(LandmarkLayout::from_csv_header(&layout.csv_header()).unwrap(), layout);
        }
        for bad in ["video_id,frame_index,label", "video_id,frame_index,a_x,a_y,a_w,label", "id,frame_index,a_x,a_y,a_z,label"] {
            assert!(matches!(LandmarkLayout::from_csv_header(bad), Err(Error::HeaderMismatch { line: 1 })), "{bad}");
        }
    }

    fn record(video: &str, frame: u64, label: &str) -> FrameRecord {
        FrameRecord { video_id: video.into(), frame_index: frame, features: vec![Some(0.0); 6], label: label.into() }
    }

    #[test]
    fn default_layout_shape() {
        let layout = LandmarkLayout::default();
        assert_eq!(layout.keypoint_count(), 48);
        assert_eq!(layout.feature_count(), 144);
        let unique: HashSet<_> = layout.keypoint_names().iter().collect();
        assert_eq!(unique.len(), 48);
        let header = layout.csv_header();
        assert!(header.starts_with("video_id,frame_index,left_hand_wrist_x,left_hand_wrist_y,left_hand_wrist_z,"));
        assert!(header.ends_with(",pose_right_wrist_z,label"));
        assert_eq!(header.split(',').count(), 147);
    }

    #[test]
    fn layout_rejects_duplicates() {
        assert!(LandmarkLayout::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn grouping_sorts_frames() {
        let groups = group_clips(vec![record("a", 1, "x"), record("b", 0, "y"), record("a", 0, "x")]).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].video_id, "a");
        let idx: Vec<u64> = groups[0].frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, [0, 1]);
        assert_eq!(groups[1].frames.len(), 1);
    }

    #[test]
    fn grouping_single_video_and_empty() {
        let groups = group_clips(vec![record("v", 2, "el"), record("v", 0, "el"), record("v", 1, "el")]).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].frames.len(), 3);
        assert!(group_clips(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn grouping_rejects_conflicts() {
        let err = group_clips(vec![record("a", 0, "el"), record("a", 1, "su")]).unwrap_err();
        assert!(matches!(err, Error::InconsistentLabel { .. }));
        let err = group_clips(vec![record("a", 0, "el"), record("a", 0, "el")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateFrame { .. }));
    }

    #[test]
    fn imputation() {
        let present: Vec<Option<f32>> = (0..144).map(|i| Some(i as f32 * 0.01)).collect();
        let out = impute_missing(&present);
        assert!(out.iter().zip(&present).all(|(a, b)| a.to_bits() == b.unwrap().to_bits()));
        assert_eq!(impute_missing(&[None; 144]), vec![0.0; 144]);
        let mut one = vec![None; 144];
        one[0] = Some(0.5);
        let out = impute_missing(&one);
        assert_eq!(out[0], 0.5);
        assert!(out[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shoulder_recentering() {
        let layout = LandmarkLayout::default();
        let l = layout.index_of("pose_left_shoulder").unwrap();
        let r = layout.index_of("pose_right_shoulder").unwrap();
        let mut f = vec![Some(0.5f32); 144];
        f[l * 3] = Some(0.4);
        f[r * 3] = Some(0.6);
        f[7] = None;
        let out = recenter_on_shoulders(&f, &layout);
        assert_eq!(out[l * 3], Some(0.4 - 0.5));
        assert_eq!(out[1], Some(0.0));
        assert_eq!(out[7], None);
        f[r * 3 + 1] = None;
        assert_eq!(recenter_on_shoulders(&f, &layout), f);
    }

    #[test]
    fn builder_pipeline() {
        let layout = LandmarkLayout::numbered(2).unwrap();
        let builder = ClipBuilder::new(layout, Sampler::Fixed(4), 4);
        let frames: Vec<Vec<Option<f32>>> =
            (0..31).map(|i| vec![Some(i as f32), None, Some(0.5), Some(1.0), Some(1.0), Some(1.0)]).collect();
        let clip = builder.build(&frames, None, Some(1)).unwrap();
        assert_eq!(clip.seq_len(), 5);
        // indices round(k * 30 / 3) = 0, 10, 20, 30
        let firsts: Vec<f32> = (0..4).map(|r| clip.features().row(r)[0]).collect();
        assert_eq!(firsts, [0.0, 10.0, 20.0, 30.0]);
        assert_eq!(clip.features().row(0)[1], 0.0);
        assert!(builder.build(&[vec![None; 5]], None, None).is_err());
        assert!(matches!(builder.build(&[], None, None), Err(Error::ZeroFrames)));
    }

    #[test]
    fn vocabulary_lookup() {
        let v = ClassVocabulary::from_labels(["su", "abla", "el", "su"]);
        assert_eq!(v.names(), ["abla", "el", "su"]);
        assert_eq!(v.index_of("el").unwrap(), 1);
        assert!(v.index_of("yok").is_err());
        assert!(ClassVocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }
}
