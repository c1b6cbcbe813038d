//! Coincidence histograms between two tag streams.
//!
//! [`correlate`] counts every ordered pair `(a, b)` whose delay
//! `t_b - t_a` falls in the histogram range. It is a sliding two-pointer
//! scan: for each `a` the lower edge of the matching `b` window only moves
//! forward, so the cost is `O(n_a + n_b + pairs)`.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::timetag::{first_unsorted, CorrelationHistogram, HistogramSpec, TimeTag};

fn check_sorted(tags: &[TimeTag]) -> Result<()> {
    match first_unsorted(tags) {
        Some(index) => Err(Error::Ordering { index }),
        None => Ok(()),
    }
}

/// Full (all ordered pairs) cross-correlation histogram.
pub fn correlate(
    a: &[TimeTag],
    b: &[TimeTag],
    spec: &HistogramSpec,
) -> Result<CorrelationHistogram> {
    spec.validate()?;
    check_sorted(a)?;
    check_sorted(b)?;
    let mut hist = CorrelationHistogram::zeros(*spec, a.len() as u64, b.len() as u64);
    hist.total_pairs = accumulate(a, b, spec, &mut hist.counts);
    Ok(hist)
}

/// Adds the pairs of `a` x `b` into `counts` and returns how many were added.
/// Inputs must already be sorted.
fn accumulate(a: &[TimeTag], b: &[TimeTag], spec: &HistogramSpec, counts: &mut [u64]) -> u64 {
    let width = spec.bin_width_ps;
    let dmin = spec.delay_min_ps;
    let dmax = spec.delay_max_ps;
    let mut lo = 0usize;
    let mut pairs = 0u64;
    for ta in a {
        let t = ta.timestamp_ps as i64;
        let first = t + dmin;
        while lo < b.len() && (b[lo].timestamp_ps as i64) < first {
            lo += 1;
        }
        let stop = t + dmax;
        for tb in &b[lo..] {
            let tb = tb.timestamp_ps as i64;
            if tb >= stop {
                break;
            }
            counts[((tb - first) / width) as usize] += 1;
            pairs += 1;
        }
    }
    pairs
}

/// Start-stop (TCSPC) histogram: each `a` tag counts only the first `b` tag
/// whose delay lies in range.
pub fn correlate_start_stop(
    a: &[TimeTag],
    b: &[TimeTag],
    spec: &HistogramSpec,
) -> Result<CorrelationHistogram> {
    spec.validate()?;
    check_sorted(a)?;
    check_sorted(b)?;
    let mut hist = CorrelationHistogram::zeros(*spec, a.len() as u64, b.len() as u64);
    let mut lo = 0usize;
    for ta in a {
        let t = ta.timestamp_ps as i64;
        let first = t + spec.delay_min_ps;
        while lo < b.len() && (b[lo].timestamp_ps as i64) < first {
            lo += 1;
        }
        if let Some(tb) = b.get(lo) {
            if let Some(bin) = spec.bin_index(tb.timestamp_ps as i64 - t) {
                hist.counts[bin] += 1;
                hist.total_pairs += 1;
            }
        }
    }
    Ok(hist)
}

/// Integrated counts in `[n T - W/2, n T + W/2)` for `n` in
/// `-n_peaks..=n_peaks`.
pub fn peak_areas(
    hist: &CorrelationHistogram,
    t_rep_ps: i64,
    window_ps: i64,
    n_peaks: u32,
) -> Result<BTreeMap<i32, u64>> {
    if t_rep_ps <= 0 || window_ps <= 0 {
        return Err(invalid("t_rep_ps and window_ps must be positive"));
    }
    if window_ps > t_rep_ps {
        return Err(invalid(format!(
            "window {window_ps} ps exceeds the repetition period {t_rep_ps} ps"
        )));
    }
    let n = n_peaks as i32;
    (-n..=n)
        .map(|k| Ok((k, hist.window_sum(k as i64 * t_rep_ps, window_ps)?)))
        .collect()
}
