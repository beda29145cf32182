//! Event streams, binning into frames, resolution changes and client shards.

mod io;
mod synthetic;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FrameSequence;

pub use io::{read_frames, write_frames};
pub use synthetic::{generate_synthetic, ProfileDesign, RateProfile, SyntheticSpec};

/// Timestamped events on a set of channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    /// `(time in seconds, channel)`, sorted by time.
    pub events: Vec<(f64, usize)>,
    pub duration: f64,
    pub n_channels: usize,
    pub label: usize,
}

impl EventStream {
    pub fn validate(&self) -> Result<()> {
        for &(t, c) in &self.events {
            if !(0.0..self.duration).contains(&t) || c >= self.n_channels {
                return Err(Error::InvalidArgument(format!(
                    "event ({t}, {c}) outside [0, {}) × [0, {})",
                    self.duration, self.n_channels
                )));
            }
        }
        Ok(())
    }
}

/// Number of windows needed to cover `duration`, counting a trailing
/// partial window. Ratios within 1e-9 of an integer are treated as exact.
pub fn frame_count(duration: f64, window: f64) -> usize {
    let ratio = duration / window;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Index of the window `[i·w, (i+1)·w)` containing `t`.
fn window_index(t: f64, window: f64) -> usize {
    let mut i = (t / window).floor().max(0.0) as usize;
    if (i as f64 + 1.0) * window <= t {
        i += 1;
    } else if i > 0 && i as f64 * window > t {
        i -= 1;
    }
    i
}

/// Count events per `(window, channel)`. The result is at resolution 1.
pub fn bin_to_frames(stream: &EventStream, window: f64) -> Result<FrameSequence> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::InvalidArgument(format!("window {window} must be positive")));
    }
    let n = frame_count(stream.duration, window);
    let mut frames = Array2::zeros((n, stream.n_channels));
    for &(t, c) in &stream.events {
        let i = window_index(t, window).min(n.saturating_sub(1));
        frames[[i, c]] += 1.0;
    }
    Ok(FrameSequence::new(frames, 1, stream.label))
}

/// Sum consecutive blocks of `factor` frames; a trailing partial block
/// becomes the last frame.
pub fn coarsen(seq: &FrameSequence, factor: usize) -> Result<FrameSequence> {
    if factor == 0 {
        return Err(Error::InvalidArgument("coarsening factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(seq.clone());
    }
    let n = seq.len().div_ceil(factor);
    let mut frames = Array2::zeros((n, seq.channels()));
    for (t, row) in seq.frames.rows().into_iter().enumerate() {
        let mut dst = frames.row_mut(t / factor);
        dst += &row;
    }
    Ok(FrameSequence::new(frames, seq.resolution * factor as u32, seq.label))
}

/// Sum adjacent groups of `group` channels; a trailing partial group is kept.
pub fn channel_bin(seq: &FrameSequence, group: usize) -> Result<FrameSequence> {
    if group == 0 {
        return Err(Error::InvalidArgument("channel group must be at least 1".into()));
    }
    if group == 1 {
        return Ok(seq.clone());
    }
    let c = seq.channels().div_ceil(group);
    let mut frames = Array2::zeros((seq.len(), c));
    for ((t, ch), v) in seq.frames.indexed_iter() {
        frames[[t, ch / group]] += v;
    }
    Ok(FrameSequence::new(frames, seq.resolution, seq.label))
}

/// Split indices into `k` shards, class by class: each class is shuffled and
/// dealt round-robin, continuing from the shard where the previous class
/// stopped. Per-class counts of any two shards differ by at most one.
pub fn partition_iid<R: Rng + ?Sized>(labels: &[usize], k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("at least one shard is required".into()));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut shards = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} samples, fewer than {k} shards",
                members.len()
            )));
        }
        members.shuffle(rng);
        for i in members {
            shards[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(shards)
}

/// Bin, channel-merge and coarsen a whole dataset.
pub fn prepare(
    streams: &[EventStream],
    window: f64,
    channel_group: usize,
    resolution: usize,
) -> Result<Vec<FrameSequence>> {
    streams
        .iter()
        .map(|s| {
            let f = bin_to_frames(s, window)?;
            let f = channel_bin(&f, channel_group)?;
            coarsen(&f, resolution)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream(events: Vec<(f64, usize)>, duration: f64, n_channels: usize) -> EventStream {
        EventStream {
            events,
            duration,
            n_channels,
            label: 0,
        }
    }

    #[test]
    fn hand_binning() {
        let s = stream(vec![(0.1, 0), (0.15, 0), (0.9, 0)], 1.0, 1);
        let f = bin_to_frames(&s, 0.5).unwrap();
        assert_eq!(f.frames, array![[2.0], [1.0]]);
        assert_eq!(f.resolution, 1);
    }

    #[test]
    fn trailing_partial_window_is_kept() {
        let s = stream(vec![(0.95, 0)], 1.0, 1);
        let f = bin_to_frames(&s, 0.3).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f.frames[[3, 0]], 1.0);
    }

    #[test]
    fn empty_stream_gives_zero_frames() {
        let f = bin_to_frames(&stream(vec![], 1.0, 3), 0.1).unwrap();
        assert_eq!(f.frames.dim(), (10, 3));
        assert_eq!(f.frames.sum(), 0.0);
    }

    #[test]
    fn coarsen_block_sums() {
        let s = FrameSequence::new(array![[1.0], [2.0], [3.0], [4.0]], 1, 0);
        let c = coarsen(&s, 2).unwrap();
        assert_eq!(c.frames, array![[3.0], [7.0]]);
        assert_eq!(c.resolution, 2);
        assert_eq!(coarsen(&s, 1).unwrap(), s);
        assert_eq!(coarsen(&coarsen(&s, 2).unwrap(), 2).unwrap(), coarsen(&s, 4).unwrap());
        assert_eq!(coarsen(&s, 3).unwrap().frames, array![[6.0], [4.0]]);
    }

    #[test]
    fn channel_bin_groups() {
        let s = FrameSequence::new(Array2::ones((2, 700)), 1, 0);
        let b = channel_bin(&s, 5).unwrap();
        assert_eq!(b.channels(), 140);
        assert_eq!(b.frames.sum(), s.frames.sum());
        assert_eq!(channel_bin(&s, 1).unwrap(), s);
        let odd = channel_bin(&FrameSequence::new(array![[1.0, 2.0, 3.0]], 1, 0), 2).unwrap();
        assert_eq!(odd.frames, array![[3.0, 3.0]]);
    }

    #[test]
    fn partition_is_balanced() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shards = partition_iid(&labels, 5, &mut rng).unwrap();
        for shard in &shards {
            for c in 0..10 {
                assert_eq!(shard.iter().filter(|&&i| labels[i] == c).count(), 20);
            }
        }
        let mut all: Vec<usize> = shards.concat();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_too_many_shards() {
        let labels = vec![0, 0, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(partition_iid(&labels, 3, &mut rng).is_err());
        assert_eq!(partition_iid(&labels, 1, &mut rng).unwrap()[0].len(), 4);
    }
}
