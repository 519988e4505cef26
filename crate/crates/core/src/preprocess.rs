//! Cropping, windowing, labeling and per-channel standardization.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_sim::{Episode, FaultType, CHANNEL_COUNT, CROP_HALF_WIDTH_S};

/// Window length in samples (50 ms at 6.4 kHz).
pub const WINDOW_LEN: usize = 320;
/// Window stride in samples (5 ms at 6.4 kHz).
pub const WINDOW_STRIDE: usize = 32;
/// Flattened window length fed to the models.
pub const WINDOW_FEATURES: usize = WINDOW_LEN * CHANNEL_COUNT;

/// Standard deviations below this are treated as dead channels.
pub const STD_FLOOR: f64 = 1e-9;

/// A cropped slice of an episode, channel-major.
#[derive(Debug, Clone)]
pub struct Crop {
    pub signals: Array2<f32>,
    /// Absolute sample index of the first cropped column.
    pub offset: usize,
}

impl Crop {
    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Half-open absolute sample range of the crop around inception.
pub fn crop_range(inception_sample: usize, sample_rate: f64, total: usize) -> (usize, usize) {
    let half = (CROP_HALF_WIDTH_S * sample_rate).round() as usize;
    let start = inception_sample.saturating_sub(half);
    let end = (inception_sample + half).min(total);
    (start, end)
}

/// Keep `[t_inception - 80 ms, t_inception + 80 ms)`, clamped to the episode.
pub fn crop_episode(ep: &Episode) -> Crop {
    let (start, end) = crop_range(ep.inception_sample(), ep.sample_rate, ep.samples());
    Crop {
        signals: ep.signals.slice(s![.., start..end]).to_owned(),
        offset: start,
    }
}

/// Number of windows a crop of `len` samples yields.
pub fn window_count(len: usize) -> usize {
    if len < WINDOW_LEN {
        0
    } else {
        (len - WINDOW_LEN) / WINDOW_STRIDE + 1
    }
}

/// One model input: `tensor` is time-major (320 x 48).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub episode_id: u64,
    /// Start index within the cropped episode.
    pub start_sample: usize,
    pub tensor: Array2<f32>,
    pub fc_label: FaultType,
    pub fl_target: Option<f64>,
}

impl Window {
    pub fn is_faulted(&self) -> bool {
        self.fc_label.is_fault()
    }
}

/// Label for the absolute sample span `[start, end)`.
///
/// Any overlap with the closed fault interval marks the window faulted.
pub fn assign_labels(start: usize, end: usize, ep: &Episode) -> (FaultType, Option<f64>) {
    let inception = ep.inception_sample();
    let clearing = ep.clearing_sample();
    if start <= clearing && end > inception {
        (ep.fault_type, Some(ep.location_frac))
    } else {
        (FaultType::NoFault, None)
    }
}

/// Slice a crop into overlapping windows and label each one.
pub fn segment_windows(crop: &Crop, ep: &Episode) -> Vec<Window> {
    let n = window_count(crop.len());
    if n == 0 {
        log::warn!(
            "episode {}: crop of {} samples is shorter than one window, skipped",
            ep.episode_id,
            crop.len()
        );
        return Vec::new();
    }
    (0..n)
        .map(|k| {
            let start = k * WINDOW_STRIDE;
            let tensor = crop
                .signals
                .slice(s![.., start..start + WINDOW_LEN])
                .t()
                .to_owned();
            let abs = crop.offset + start;
            let (fc_label, fl_target) = assign_labels(abs, abs + WINDOW_LEN, ep);
            Window {
                episode_id: ep.episode_id,
                start_sample: start,
                tensor,
                fc_label,
                fl_target,
            }
        })
        .collect()
}

pub fn episode_windows(ep: &Episode) -> Vec<Window> {
    segment_windows(&crop_episode(ep), ep)
}

/// Window every episode, preserving episode order.
pub fn dataset_windows(episodes: &[Episode]) -> Vec<Window> {
    episodes
        .par_iter()
        .map(episode_windows)
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Per-channel statistics of a set of training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Episodes whose windows produced these statistics.
    pub source_episodes: BTreeSet<u64>,
}

impl ChannelStats {
    /// Identity transform, for tests and degenerate cases.
    pub fn identity() -> Self {
        ChannelStats {
            mean: vec![0.0; CHANNEL_COUNT],
            std: vec![1.0; CHANNEL_COUNT],
            source_episodes: BTreeSet::new(),
        }
    }

    /// Fails if any of `episodes` contributed to these statistics.
    pub fn assert_disjoint_from<I: IntoIterator<Item = u64>>(&self, episodes: I) -> Result<()> {
        for id in episodes {
            if self.source_episodes.contains(&id) {
                return Err(Error::contract(format!(
                    "normalization statistics were computed with episode {id}"
                )));
            }
        }
        Ok(())
    }

    fn scale(&self, c: usize) -> Option<f64> {
        let s = self.std[c];
        (s >= STD_FLOOR).then(|| 1.0 / s)
    }
}

pub fn compute_channel_stats<'a, I>(windows: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a Window>,
    I::IntoIter: Clone,
{
    let iter = windows.into_iter();
    let mut sum = [0.0f64; CHANNEL_COUNT];
    let mut count = 0usize;
    let mut source_episodes = BTreeSet::new();
    for w in iter.clone() {
        for row in w.tensor.rows() {
            for (c, &v) in row.iter().enumerate() {
                sum[c] += v as f64;
            }
        }
        count += w.tensor.nrows();
        source_episodes.insert(w.episode_id);
    }
    if count == 0 {
        return Err(Error::contract("channel statistics need at least one window"));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = [0.0f64; CHANNEL_COUNT];
    for w in iter {
        for row in w.tensor.rows() {
            for (c, &v) in row.iter().enumerate() {
                let d = v as f64 - mean[c];
                sq[c] += d * d;
            }
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt()).collect();
    Ok(ChannelStats {
        mean,
        std,
        source_episodes,
    })
}

/// Write the standardized, flattened (time-major) window into `out`.
pub fn normalize_into(tensor: ArrayView2<f32>, stats: &ChannelStats, out: &mut [f64]) {
    debug_assert_eq!(out.len(), tensor.len());
    let scales: Vec<Option<f64>> = (0..CHANNEL_COUNT).map(|c| stats.scale(c)).collect();
    for (t, row) in tensor.rows().into_iter().enumerate() {
        let dst = &mut out[t * CHANNEL_COUNT..(t + 1) * CHANNEL_COUNT];
        for (c, (&v, o)) in row.iter().zip(dst.iter_mut()).enumerate() {
            *o = match scales[c] {
                Some(inv) => (v as f64 - stats.mean[c]) * inv,
                None => 0.0,
            };
        }
    }
}

/// `(x - mean) / std` per channel; channels with `std < 1e-9` become zero.
pub fn apply_normalization(window: &Window, stats: &ChannelStats) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(window.tensor.raw_dim());
    normalize_into(
        window.tensor.view(),
        stats,
        out.as_slice_mut().expect("fresh array is contiguous"),
    );
    out
}
