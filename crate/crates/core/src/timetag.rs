//! Time-tag records, tag streams and coincidence histogram geometry.
//!
//! Timestamps are integer picoseconds. Delays are signed and always taken as
//! `t(channel B) - t(channel A)`. Histogram bins are left-closed, right-open.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimeTag {
    pub timestamp_ps: u64,
    pub channel: u16,
}

impl TimeTag {
    pub const fn new(channel: u16, timestamp_ps: u64) -> Self {
        TimeTag {
            timestamp_ps,
            channel,
        }
    }
}

/// A validated, time-ordered sequence of tags plus acquisition metadata.
///
/// Immutable once built: every constructor checks sortedness and the
/// `timestamp <= duration` bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    resolution_ps: u32,
    duration_ps: u64,
    channel_labels: BTreeMap<u16, String>,
}

/// Index of the first tag that breaks non-decreasing timestamp order.
pub fn first_unsorted(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2)
        .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
        .map(|i| i + 1)
}

impl TagStream {
    /// Builds a stream with resolution 1 ps and duration equal to the last
    /// timestamp (0 for an empty stream).
    pub fn new(tags: Vec<TimeTag>) -> Result<Self> {
        let duration = tags.last().map_or(0, |t| t.timestamp_ps);
        Self::with_metadata(tags, 1, duration, BTreeMap::new())
    }

    pub fn with_metadata(
        tags: Vec<TimeTag>,
        resolution_ps: u32,
        duration_ps: u64,
        channel_labels: BTreeMap<u16, String>,
    ) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(invalid("resolution_ps must be positive"));
        }
        if let Some(index) = first_unsorted(&tags) {
            return Err(Error::Ordering { index });
        }
        if let Some(last) = tags.last() {
            if last.timestamp_ps > duration_ps {
                return Err(invalid(format!(
                    "tag at {} ps lies beyond the acquisition duration {} ps",
                    last.timestamp_ps, duration_ps
                )));
            }
        }
        Ok(TagStream {
            tags,
            resolution_ps,
            duration_ps,
            channel_labels,
        })
    }

    pub fn empty(duration_ps: u64) -> Self {
        TagStream {
            tags: Vec::new(),
            resolution_ps: 1,
            duration_ps,
            channel_labels: BTreeMap::new(),
        }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn resolution_ps(&self) -> u32 {
        self.resolution_ps
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn channel_labels(&self) -> &BTreeMap<u16, String> {
        &self.channel_labels
    }

    pub fn with_label(mut self, channel: u16, label: impl Into<String>) -> Self {
        self.channel_labels.insert(channel, label.into());
        self
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    /// Timestamps only, in stream order.
    pub fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.tags.iter().map(|t| t.timestamp_ps)
    }
}

/// Geometry of a delay histogram: `[delay_min_ps, delay_max_ps)` cut into
/// bins of `bin_width_ps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width_ps: i64,
    pub delay_min_ps: i64,
    pub delay_max_ps: i64,
}

impl HistogramSpec {
    pub fn new(bin_width_ps: i64, delay_min_ps: i64, delay_max_ps: i64) -> Result<Self> {
        let spec = HistogramSpec {
            bin_width_ps,
            delay_min_ps,
            delay_max_ps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric range `[-half_range_ps, half_range_ps)`.
    pub fn symmetric(bin_width_ps: i64, half_range_ps: i64) -> Result<Self> {
        Self::new(bin_width_ps, -half_range_ps, half_range_ps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps <= 0 {
            return Err(invalid("bin width must be positive"));
        }
        if self.delay_min_ps >= self.delay_max_ps {
            return Err(invalid("delay_min_ps must be below delay_max_ps"));
        }
        if self.delay_min_ps % self.bin_width_ps != 0 || self.delay_max_ps % self.bin_width_ps != 0
        {
            return Err(invalid("delay limits must be multiples of the bin width"));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        ((self.delay_max_ps - self.delay_min_ps) / self.bin_width_ps) as usize
    }

    /// Bin holding `delay_ps`, or `None` outside `[delay_min, delay_max)`.
    #[inline]
    pub fn bin_index(&self, delay_ps: i64) -> Option<usize> {
        if delay_ps < self.delay_min_ps || delay_ps >= self.delay_max_ps {
            return None;
        }
        Some(((delay_ps - self.delay_min_ps) / self.bin_width_ps) as usize)
    }

    pub fn bin_left(&self, index: usize) -> i64 {
        self.delay_min_ps + index as i64 * self.bin_width_ps
    }

    pub fn bin_center(&self, index: usize) -> f64 {
        self.bin_left(index) as f64 + 0.5 * self.bin_width_ps as f64
    }

    /// Mirror image `[-delay_max, -delay_min)`, used for the sign-swap symmetry.
    pub fn mirrored(&self) -> Self {
        HistogramSpec {
            bin_width_ps: self.bin_width_ps,
            delay_min_ps: -self.delay_max_ps,
            delay_max_ps: -self.delay_min_ps,
        }
    }
}

/// Free-function form of [`HistogramSpec::bin_index`].
pub fn histogram_bin_index(delay_ps: i64, spec: &HistogramSpec) -> Option<usize> {
    spec.bin_index(delay_ps)
}

/// Binned coincidence counts versus delay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationHistogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    pub total_pairs: u64,
}

impl CorrelationHistogram {
    pub fn zeros(spec: HistogramSpec, n_a: u64, n_b: u64) -> Self {
        CorrelationHistogram {
            spec,
            counts: vec![0; spec.bin_count()],
            n_a,
            n_b,
            total_pairs: 0,
        }
    }

    /// Wraps externally produced counts; `total_pairs` is their sum.
    pub fn from_counts(spec: HistogramSpec, counts: Vec<u64>, n_a: u64, n_b: u64) -> Result<Self> {
        spec.validate()?;
        if counts.len() != spec.bin_count() {
            return Err(invalid(format!(
                "{} counts given for {} bins",
                counts.len(),
                spec.bin_count()
            )));
        }
        let total_pairs = counts.iter().sum();
        Ok(CorrelationHistogram {
            spec,
            counts,
            n_a,
            n_b,
            total_pairs,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.spec.bin_center(i))
            .collect()
    }

    /// Adds another histogram with identical geometry bin by bin.
    pub fn accumulate(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if self.spec != other.spec {
            return Err(invalid("cannot add histograms with different bin geometry"));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.n_a += other.n_a;
        self.n_b += other.n_b;
        self.total_pairs += other.total_pairs;
        Ok(())
    }

    /// Sum of counts over bins whose centers lie in `[lo_ps, hi_ps)`.
    ///
    /// Works on doubled integer coordinates, so windows with half-picosecond
    /// edges (odd widths) are handled exactly. Errors if the window is not
    /// contained in the histogram range.
    pub fn window_sum(&self, center_ps: i64, width_ps: i64) -> Result<u64> {
        let lo2 = 2 * center_ps - width_ps;
        let hi2 = 2 * center_ps + width_ps;
        if width_ps <= 0 || lo2 < 2 * self.spec.delay_min_ps || hi2 > 2 * self.spec.delay_max_ps {
            return Err(Error::WindowOutOfRange {
                window_ps: width_ps,
            });
        }
        let w = self.spec.bin_width_ps;
        let base2 = 2 * self.spec.delay_min_ps + w;
        // First bin with center2 >= lo2, first bin with center2 >= hi2.
        let first = div_ceil(lo2 - base2, 2 * w).max(0) as usize;
        let last = div_ceil(hi2 - base2, 2 * w).max(0) as usize;
        let last = last.min(self.counts.len());
        Ok(self.counts[first.min(last)..last].iter().sum())
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    let q = a.div_euclid(b);
    if a.rem_euclid(b) == 0 {
        q
    } else {
        q + 1
    }
}
