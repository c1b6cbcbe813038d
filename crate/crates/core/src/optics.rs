//! Interferometers and detectors.
//!
//! Photons are routed through either an HBT beam splitter or an unbalanced
//! Mach-Zehnder (the HOM setup), then each detector applies efficiency,
//! Gaussian timing jitter, dark counts and dead time.
//!
//! HOM interference is modeled pairwise: two arrivals at the second beam
//! splitter that come from opposite first-splitter outputs and are adjacent
//! in time interfere with overlap `I(dt) = v_intrinsic * exp(-|dt| / tau_dip)`
//! (co-polarized) or `I = 0` (cross-polarized). The overlap uses the arrival
//! difference before jitter.

use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emitter::{EmitterParams, PhotonRecord};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, purpose, rng_for};
use crate::timetag::{TagStream, TimeTag};

/// FWHM to standard deviation for a Gaussian, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub jitter_fwhm_ps: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: u64,
}

impl Default for DetectorParams {
    /// Ideal efficiency, 50/sqrt(2) ps jitter so that two such detectors give
    /// a 50 ps FWHM difference-time response, no dark counts, no dead time.
    fn default() -> Self {
        DetectorParams {
            efficiency: 1.0,
            jitter_fwhm_ps: 50.0 / std::f64::consts::SQRT_2,
            dark_rate_hz: 0.0,
            dead_time_ps: 0,
        }
    }
}

impl DetectorParams {
    pub fn ideal() -> Self {
        DetectorParams {
            efficiency: 1.0,
            jitter_fwhm_ps: 0.0,
            dark_rate_hz: 0.0,
            dead_time_ps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid(format!(
                "detector efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if !(self.jitter_fwhm_ps >= 0.0 && self.jitter_fwhm_ps.is_finite()) {
            return Err(invalid(
                "jitter_fwhm_ps must be a finite non-negative number",
            ));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(invalid("dark_rate_hz must be a finite non-negative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtConfig {
    /// Probability that a photon goes to detector 0.
    pub splitting_ratio: f64,
    pub det0: DetectorParams,
    pub det1: DetectorParams,
}

impl Default for HbtConfig {
    fn default() -> Self {
        HbtConfig {
            splitting_ratio: 0.5,
            det0: DetectorParams::default(),
            det1: DetectorParams::default(),
        }
    }
}

impl HbtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.splitting_ratio > 0.0 && self.splitting_ratio < 1.0) {
            return Err(invalid("splitting_ratio must lie in (0, 1)"));
        }
        self.det0.validate()?;
        self.det1.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    Co,
    Cross,
}

impl std::str::FromStr for Polarization {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "co" => Ok(Polarization::Co),
            "cross" => Ok(Polarization::Cross),
            other => Err(invalid(format!(
                "polarization must be co or cross, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomConfig {
    /// Long-minus-short path delay.
    pub delay_ps: u64,
    pub polarization: Polarization,
    /// Probability of taking the long arm at the first splitter.
    pub bs1_ratio: f64,
    /// Transmission of the second splitter.
    pub bs2_ratio: f64,
    pub det0: DetectorParams,
    pub det1: DetectorParams,
}

impl Default for HomConfig {
    fn default() -> Self {
        HomConfig {
            delay_ps: 12_500,
            polarization: Polarization::Co,
            bs1_ratio: 0.5,
            bs2_ratio: 0.5,
            det0: DetectorParams::default(),
            det1: DetectorParams::default(),
        }
    }
}

impl HomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay_ps == 0 {
            return Err(invalid("HOM delay_ps must be positive"));
        }
        for (name, r) in [("bs1_ratio", self.bs1_ratio), ("bs2_ratio", self.bs2_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        self.det0.validate()?;
        self.det1.validate()
    }
}

/// Routes photons to two detectors at a beam splitter and detects them.
/// `span_ps` is the acquisition span over which dark counts are drawn.
pub fn simulate_hbt(
    photons: &[PhotonRecord],
    cfg: &HbtConfig,
    span_ps: u64,
    seed: u64,
) -> Result<(TagStream, TagStream)> {
    cfg.validate()?;
    let mut rng = rng_for(seed, purpose::HBT_ROUTING, 0);
    let mut arm0 = Vec::with_capacity(photons.len() / 2 + 16);
    let mut arm1 = Vec::with_capacity(photons.len() / 2 + 16);
    for p in photons {
        if rng.gen::<f64>() < cfg.splitting_ratio {
            arm0.push(p.emission_time_ps);
        } else {
            arm1.push(p.emission_time_ps);
        }
    }
    let a = apply_detector(
        &arm0,
        &cfg.det0,
        0,
        span_ps,
        derive_seed(seed, purpose::DETECTOR, 0),
    )?;
    let b = apply_detector(
        &arm1,
        &cfg.det1,
        1,
        span_ps,
        derive_seed(seed, purpose::DETECTOR, 1),
    )?;
    Ok((a, b))
}

/// Outcome counters of the second-splitter scan, for diagnostics and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HomRouting {
    pub pairs: u64,
    pub pair_coincidences: u64,
    pub unpaired: u64,
}

/// Arrivals at the two outputs of the second splitter, before detection.
pub fn route_hom(
    photons: &[PhotonRecord],
    emitter: &EmitterParams,
    cfg: &HomConfig,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>, HomRouting)> {
    cfg.validate()?;
    emitter.validate()?;
    let mut rng = rng_for(seed, purpose::HOM_ROUTING, 0);

    // First splitter. Each arrival remembers its interferometer time bin:
    // the pulse index, advanced by the delay in periods on the long arm.
    let bin_shift = (cfg.delay_ps as f64 / emitter.t_rep_ps).round() as u64;
    let mut short = Vec::with_capacity(photons.len() / 2 + 16);
    let mut long = Vec::with_capacity(photons.len() / 2 + 16);
    for p in photons {
        if rng.gen::<f64>() < cfg.bs1_ratio {
            long.push(Arrival {
                time: p.emission_time_ps + cfg.delay_ps,
                long: true,
                bin: p.pulse_index + bin_shift,
            });
        } else {
            short.push(Arrival {
                time: p.emission_time_ps,
                long: false,
                bin: p.pulse_index,
            });
        }
    }
    let arrivals = merge_arms(&short, &long);

    let overlap_scale = match cfg.polarization {
        Polarization::Co => emitter.v_intrinsic,
        Polarization::Cross => 0.0,
    };
    let r = cfg.bs2_ratio;
    let t = 1.0 - r;
    let p_distinguishable_opposite = r * r + t * t;
    // Short-arm photon exits port A on transmission, long-arm one on reflection.
    let p_exit_a = |is_long: bool| if is_long { t } else { r };

    let partner = pair_within_bins(&arrivals);
    let mut out_a = Vec::with_capacity(photons.len() / 2 + 16);
    let mut out_b = Vec::with_capacity(photons.len() / 2 + 16);
    let mut stats = HomRouting::default();
    for (i, arr) in arrivals.iter().enumerate() {
        let (t0, long0) = (arr.time, arr.long);
        match partner[i] {
            Some(j) if j > i => {
                let t1 = arrivals[j].time;
                let dt = (t1 - t0) as f64;
                let overlap = overlap_scale * (-dt / emitter.tau_dip_ps).exp();
                let p_opposite = p_distinguishable_opposite - 2.0 * r * t * overlap;
                let u: f64 = rng.gen();
                stats.pairs += 1;
                if u < p_opposite {
                    stats.pair_coincidences += 1;
                    // Which photon went where, among the two opposite-port outcomes.
                    let first_to_a = {
                        let short_first = !long0;
                        let p_short_a = r * r / p_distinguishable_opposite;
                        let short_to_a = rng.gen::<f64>() < p_short_a;
                        short_to_a == short_first
                    };
                    if first_to_a {
                        out_a.push(t0);
                        out_b.push(t1);
                    } else {
                        out_b.push(t0);
                        out_a.push(t1);
                    }
                } else if rng.gen::<f64>() < 0.5 {
                    out_a.push(t0);
                    out_a.push(t1);
                } else {
                    out_b.push(t0);
                    out_b.push(t1);
                }
            }
            Some(_) => {}
            None => {
                stats.unpaired += 1;
                if rng.gen::<f64>() < p_exit_a(long0) {
                    out_a.push(t0);
                } else {
                    out_b.push(t0);
                }
            }
        }
    }
    // Pair partners are pushed together, so a later photon of another pair
    // may precede them; the outputs are nearly sorted.
    out_a.sort_unstable();
    out_b.sort_unstable();
    Ok((out_a, out_b, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Arrival {
    time: u64,
    long: bool,
    bin: u64,
}

/// Interfering pairs: only photons sharing a time bin (pulse `k - 1` on the
/// long arm, pulse `k` on the short arm) can pair. Within a bin, couples of
/// time-adjacent opposite-arm arrivals are taken greedily in order of
/// increasing gap (ties by time) while both members are free.
fn pair_within_bins(arrivals: &[Arrival]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by_key(|&i| (arrivals[i].bin, arrivals[i].time, i));
    let mut partner = vec![None; arrivals.len()];
    let mut start = 0;
    while start < order.len() {
        let bin = arrivals[order[start]].bin;
        let mut end = start + 1;
        while end < order.len() && arrivals[order[end]].bin == bin {
            end += 1;
        }
        let group = &order[start..end];
        if group.len() == 2 {
            let (i, j) = (group[0], group[1]);
            if arrivals[i].long != arrivals[j].long {
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
        } else if group.len() > 2 {
            let mut candidates: Vec<(u64, usize)> = group
                .windows(2)
                .enumerate()
                .filter(|(_, w)| arrivals[w[0]].long != arrivals[w[1]].long)
                .map(|(k, w)| (arrivals[w[1]].time - arrivals[w[0]].time, k))
                .collect();
            candidates.sort_unstable();
            for (_, k) in candidates {
                let (i, j) = (group[k], group[k + 1]);
                if partner[i].is_none() && partner[j].is_none() {
                    partner[i] = Some(j);
                    partner[j] = Some(i);
                }
            }
        }
        start = end;
    }
    partner
}

fn merge_arms(short: &[Arrival], long: &[Arrival]) -> Vec<Arrival> {
    let mut out = Vec::with_capacity(short.len() + long.len());
    let (mut i, mut j) = (0, 0);
    while i < short.len() && j < long.len() {
        if short[i].time <= long[j].time {
            out.push(short[i]);
            i += 1;
        } else {
            out.push(long[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&short[i..]);
    out.extend_from_slice(&long[j..]);
    out
}

/// Full HOM measurement: interferometer routing followed by detection on
/// both outputs. Emitter parameters supply the overlap model.
pub fn simulate_hom(
    photons: &[PhotonRecord],
    emitter: &EmitterParams,
    cfg: &HomConfig,
    span_ps: u64,
    seed: u64,
) -> Result<(TagStream, TagStream)> {
    let (a, b, _) = route_hom(photons, emitter, cfg, seed)?;
    let span = span_ps + cfg.delay_ps;
    let a = apply_detector(
        &a,
        &cfg.det0,
        0,
        span,
        derive_seed(seed, purpose::DETECTOR, 0),
    )?;
    let b = apply_detector(
        &b,
        &cfg.det1,
        1,
        span,
        derive_seed(seed, purpose::DETECTOR, 1),
    )?;
    Ok((a, b))
}

/// Turns sorted arrival times into detector tags on `channel`.
///
/// Order of effects: efficiency thinning, Gaussian jitter (clamped at 0),
/// Poisson dark counts uniform over `[0, span_ps)`, re-sort, then
/// non-paralyzable dead time.
pub fn apply_detector(
    arrivals: &[u64],
    params: &DetectorParams,
    channel: u16,
    span_ps: u64,
    seed: u64,
) -> Result<TagStream> {
    params.validate()?;
    let mut rng = rng_for(seed, purpose::DETECTOR, u64::from(channel));
    let sigma = sigma_from_fwhm(params.jitter_fwhm_ps);
    let mut times = Vec::with_capacity((arrivals.len() as f64 * params.efficiency) as usize + 16);
    for &t in arrivals {
        if params.efficiency < 1.0 && rng.gen::<f64>() >= params.efficiency {
            continue;
        }
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            let shifted = (t as f64 + sigma * z).round();
            times.push(if shifted < 0.0 { 0 } else { shifted as u64 });
        } else {
            times.push(t);
        }
    }

    let mean_dark = params.dark_rate_hz * span_ps as f64 * 1e-12;
    if mean_dark > 0.0 && span_ps > 0 {
        let n_dark =
            rng.sample(Poisson::new(mean_dark).map_err(|e| invalid(e.to_string()))?) as u64;
        times.extend((0..n_dark).map(|_| rng.gen_range(0..span_ps)));
    }
    times.sort_unstable();

    if params.dead_time_ps > 0 {
        let mut last: Option<u64> = None;
        times.retain(|&t| match last {
            Some(prev) if t - prev < params.dead_time_ps => false,
            _ => {
                last = Some(t);
                true
            }
        });
    }

    let duration = times.last().map_or(span_ps, |&t| t.max(span_ps));
    let tags = times
        .into_iter()
        .map(|t| TimeTag::new(channel, t))
        .collect();
    TagStream::with_metadata(tags, 1, duration, Default::default())
}
