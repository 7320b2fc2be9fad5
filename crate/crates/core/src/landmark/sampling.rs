use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame rate assumed for a clip when no timestamps are available.
pub const DEFAULT_SOURCE_FPS: f64 = 30.0;

/// `t_data` indices spread evenly over `0..n_frames`, endpoints included.
///
/// Index `k` is `round(k * (n - 1) / (t - 1))` with ties going to the even
/// neighbour; a collision pushes the later index up by one. Clips shorter than
/// `t_data` keep every frame.
pub fn sample_frames(n_frames: usize, t_data: usize) -> Result<Vec<usize>> {
    if n_frames == 0 {
        return Err(Error::ZeroFrames);
    }
    if t_data == 0 {
        return Err(Error::InvalidConfig("frame budget must be positive".into()));
    }
    if n_frames < t_data {
        return Ok((0..n_frames).collect());
    }
    if t_data == 1 {
        return Ok(vec![0]);
    }
    let span = (n_frames - 1) as u64;
    let denom = (t_data - 1) as u64;
    let mut out: Vec<usize> = Vec::with_capacity(t_data);
    for k in 0..t_data as u64 {
        let num = k * span;
        let (q, r) = (num / denom, num % denom);
        // exact integer round-half-even of num / denom
        let idx = match (2 * r).cmp(&denom) {
            std::cmp::Ordering::Less => q,
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q & 1),
        } as usize;
        let idx = match out.last() {
            Some(&prev) if idx <= prev => prev + 1,
            _ => idx,
        };
        out.push(idx);
    }
    Ok(out)
}

/// How a recorded clip is reduced to the model's frame budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sampler {
    /// A fixed number of evenly spaced frames.
    Fixed(usize),
    /// A target rate in frames per second; the result is still capped at the
    /// model's frame budget.
    Fps(f64),
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Fixed(16)
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Fixed(n) => write!(f, "fixed:{n}"),
            Sampler::Fps(r) => write!(f, "fps:{r}"),
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("sampler must be fixed:<n> or fps:<rate>, got {s:?}"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "fixed" => match value.parse::<usize>() {
                Ok(n) if n > 0 => Ok(Sampler::Fixed(n)),
                _ => Err(bad()),
            },
            "fps" => match value.parse::<f64>() {
                Ok(r) if r > 0.0 && r.is_finite() => Ok(Sampler::Fps(r)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Sampler {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Sampler> for String {
    fn from(s: Sampler) -> String {
        s.to_string()
    }
}

impl Sampler {
    /// Frames requested per clip before the model capacity cap.
    pub fn budget(&self) -> Option<usize> {
        match self {
            Sampler::Fixed(n) => Some(*n),
            Sampler::Fps(_) => None,
        }
    }

    /// Picks frame indices from a clip of `n_frames`.
    ///
    /// `timestamps` (seconds, non-decreasing) drive rate-based sampling when
    /// present; otherwise frames are assumed to arrive at
    /// [`DEFAULT_SOURCE_FPS`]. The result never exceeds `capacity` indices.
    pub fn select(&self, n_frames: usize, timestamps: Option<&[f64]>, capacity: usize) -> Result<Vec<usize>> {
        if n_frames == 0 {
            return Err(Error::ZeroFrames);
        }
        match *self {
            Sampler::Fixed(n) => sample_frames(n_frames, n.min(capacity)),
            Sampler::Fps(rate) => {
                let times: Vec<f64> = match timestamps {
                    Some(ts) if ts.len() == n_frames => ts.to_vec(),
                    _ => (0..n_frames).map(|i| i as f64 / DEFAULT_SOURCE_FPS).collect(),
                };
                let picked = sample_by_rate(&times, rate);
                if picked.len() <= capacity {
                    Ok(picked)
                } else {
                    Ok(sample_frames(picked.len(), capacity)?.into_iter().map(|i| picked[i]).collect())
                }
            }
        }
    }
}

/// For each tick `t0 + j / rate` up to the last timestamp, the first frame at
/// or after the tick; duplicates are dropped.
fn sample_by_rate(times: &[f64], rate: f64) -> Vec<usize> {
    let start = times[0];
    let end = times[times.len() - 1];
    let mut out: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut j = 0u64;
    loop {
        let tick = start + j as f64 / rate;
        if tick > end + 1e-9 {
            break;
        }
        while cursor + 1 < times.len() && times[cursor] < tick - 1e-9 {
            cursor += 1;
        }
        if out.last() != Some(&cursor) {
            out.push(cursor);
        }
        j += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_when_counts_match() {
        assert_eq!(sample_frames(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn thirty_one_frames() {
        // k * 30 / 15 = 2k exactly for every k
        let want: Vec<usize> = (0..16).map(|k| k * 30 / 15).collect();
        assert_eq!(sample_frames(31, 16).unwrap(), want);
    }

    #[test]
    fn short_clip_keeps_everything() {
        assert_eq!(sample_frames(5, 16).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(sample_frames(0, 16), Err(Error::ZeroFrames)));
    }

    #[test]
    fn ties_round_to_even() {
        // n=4, t=3: k * 3 / 2 -> 0, 1.5, 3 -> 0, 2, 3
        assert_eq!(sample_frames(4, 3).unwrap(), vec![0, 2, 3]);
        // n=6, t=5: k * 5 / 4 -> 0, 1.25, 2.5, 3.75, 5 -> 0, 1, 2, 4, 5
        assert_eq!(sample_frames(6, 5).unwrap(), vec![0, 1, 2, 4, 5]);
    }

    #[test]
    fn sampler_parsing() {
        assert_eq!("fixed:16".parse::<Sampler>().unwrap(), Sampler::Fixed(16));
        assert_eq!("fps:15".parse::<Sampler>().unwrap(), Sampler::Fps(15.0));
        for bad in ["fixed:0", "fps:-1", "16", "every:2"] {
            assert!(bad.parse::<Sampler>().is_err(), "{bad}");
        }
        assert_eq!(Sampler::Fps(15.0).to_string(), "fps:15");
    }

    #[test]
    fn rate_sampling_by_timestamp_and_count() {
        // 2 s at 30 fps, sampled at 15 fps: every other frame, 31 picks, capped at 16
        let picks = Sampler::Fps(15.0).select(61, None, 100).unwrap();
        assert_eq!(picks, (0..=60).step_by(2).collect::<Vec<_>>());
        let capped = Sampler::Fps(15.0).select(61, None, 16).unwrap();
        assert_eq!(capped.len(), 16);
        assert_eq!((capped[0], capped[15]), (0, 60));

        // 10 fps source with timestamps: every frame survives a 15 fps request
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let picks = Sampler::Fps(15.0).select(10, Some(&ts), 100).unwrap();
        assert_eq!(picks, (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn samples_are_increasing_with_endpoints(n in 1usize..400, t in 1usize..40) {
            let idx = sample_frames(n, t).unwrap();
            prop_assert_eq!(idx.len(), t.min(n));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < n));
            if n >= t && n >= 2 && t >= 2 {
                prop_assert_eq!(idx[0], 0);
                prop_assert_eq!(*idx.last().unwrap(), n - 1);
            }
        }
    }
}
