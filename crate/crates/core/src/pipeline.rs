//! End-to-end Monte Carlo runs: emitter, optics, detectors, correlator.
//!
//! Long runs are split into independent segments of [`SEGMENT_PULSES`]
//! pulses, each seeded from the run seed and the segment index, and their
//! histograms summed. Memory stays bounded and the result depends only on
//! the inputs. Coincidences between photons of different segments are not
//! counted, which loses a fraction of about `range / (segment length)` of
//! the pairs near the segment edges and nothing else.

use crate::correlator::{correlate, correlate_start_stop};
use crate::emitter::{generate_photons, EmitterParams};
use crate::error::{invalid, Result};
use crate::optics::{
    apply_detector, simulate_hbt, simulate_hom, DetectorParams, HbtConfig, HomConfig,
};
use crate::rng::{derive_seed, purpose};
use crate::timetag::{CorrelationHistogram, HistogramSpec, TagStream, TimeTag};

pub const SEGMENT_PULSES: u64 = 1 << 23;

fn span(emitter: &EmitterParams, n_pulses: u64) -> u64 {
    (n_pulses as f64 * emitter.t_rep_ps).ceil() as u64
}

fn segmented(
    n_pulses: u64,
    seed: u64,
    spec: &HistogramSpec,
    mut run: impl FnMut(u64, u64) -> Result<CorrelationHistogram>,
) -> Result<CorrelationHistogram> {
    spec.validate()?;
    let mut total = CorrelationHistogram::zeros(*spec, 0, 0);
    let mut done = 0;
    let mut index = 0;
    while done < n_pulses {
        let n = SEGMENT_PULSES.min(n_pulses - done);
        let h = run(n, derive_seed(seed, purpose::SEGMENT, index))?;
        total.accumulate(&h)?;
        done += n;
        index += 1;
    }
    Ok(total)
}

/// Tag streams of one HBT acquisition of `n_pulses` pulses.
pub fn hbt_streams(
    emitter: &EmitterParams,
    cfg: &HbtConfig,
    n_pulses: u64,
    seed: u64,
) -> Result<(TagStream, TagStream)> {
    let photons = generate_photons(emitter, n_pulses, seed)?;
    simulate_hbt(&photons, cfg, span(emitter, n_pulses), seed)
}

/// Tag streams of one HOM acquisition of `n_pulses` pulses.
pub fn hom_streams(
    emitter: &EmitterParams,
    cfg: &HomConfig,
    n_pulses: u64,
    seed: u64,
) -> Result<(TagStream, TagStream)> {
    let photons = generate_photons(emitter, n_pulses, seed)?;
    simulate_hom(&photons, emitter, cfg, span(emitter, n_pulses), seed)
}

/// Laser sync tags on channel 0 and one detector's tags on channel 1, as in
/// a time-correlated single-photon counting lifetime measurement.
pub fn decay_streams(
    emitter: &EmitterParams,
    det: &DetectorParams,
    n_pulses: u64,
    seed: u64,
) -> Result<(TagStream, TagStream)> {
    let photons = generate_photons(emitter, n_pulses, seed)?;
    let arrivals: Vec<u64> = photons.iter().map(|p| p.emission_time_ps).collect();
    let total = span(emitter, n_pulses);
    let detected = apply_detector(
        &arrivals,
        det,
        1,
        total,
        derive_seed(seed, purpose::DETECTOR, 1),
    )?;
    let sync: Vec<TimeTag> = (0..n_pulses)
        .map(|k| TimeTag::new(0, (k as f64 * emitter.t_rep_ps).round() as u64))
        .collect();
    let sync = TagStream::with_metadata(
        sync,
        1,
        total.max(detected.duration_ps()),
        Default::default(),
    )?;
    Ok((sync, detected))
}

/// Summed cross-correlation histogram of an HBT run.
pub fn hbt_histogram(
    emitter: &EmitterParams,
    cfg: &HbtConfig,
    n_pulses: u64,
    seed: u64,
    spec: &HistogramSpec,
) -> Result<CorrelationHistogram> {
    segmented(n_pulses, seed, spec, |n, s| {
        let (a, b) = hbt_streams(emitter, cfg, n, s)?;
        correlate(a.tags(), b.tags(), spec)
    })
}

/// Summed cross-correlation histogram of an HOM run.
pub fn hom_histogram(
    emitter: &EmitterParams,
    cfg: &HomConfig,
    n_pulses: u64,
    seed: u64,
    spec: &HistogramSpec,
) -> Result<CorrelationHistogram> {
    segmented(n_pulses, seed, spec, |n, s| {
        let (a, b) = hom_streams(emitter, cfg, n, s)?;
        correlate(a.tags(), b.tags(), spec)
    })
}

/// Start-stop histogram of detector tags against the laser sync.
pub fn decay_histogram(
    emitter: &EmitterParams,
    det: &DetectorParams,
    n_pulses: u64,
    seed: u64,
    spec: &HistogramSpec,
) -> Result<CorrelationHistogram> {
    if spec.delay_max_ps - spec.delay_min_ps > emitter.t_rep_ps as i64 {
        return Err(invalid(
            "decay histogram range must not exceed one repetition period",
        ));
    }
    segmented(n_pulses, seed, spec, |n, s| {
        let (sync, det) = decay_streams(emitter, det, n, s)?;
        correlate_start_stop(sync.tags(), det.tags(), spec)
    })
}
