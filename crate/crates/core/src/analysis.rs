//! Visibility estimation with temporal postselection, peak decomposition
//! and the collection-efficiency chain.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::exp_gauss_kernel;
use crate::optics::sigma_from_fwhm;
use crate::timetag::CorrelationHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityResult {
    pub window_ps: i64,
    /// Co-polarized counts in `[-W/2, W/2)`.
    pub c_co: u64,
    /// Cross-polarized counts in the same window, before normalization.
    pub c_cross: u64,
    /// Factor applied to the cross counts so both side-peak sums match.
    pub normalization_factor: f64,
    pub visibility: f64,
    /// One-sigma Poisson error.
    pub visibility_err: f64,
    /// `C_co(W) / C_co(T_rep)`.
    pub retained_fraction: f64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Sum of the `|n| >= 2` peak areas (window `T_rep`) shared by both histograms.
fn side_sum(hist: &CorrelationHistogram, t_rep: i64, n_max: i64) -> Result<u64> {
    let mut s = 0;
    for n in 2..=n_max {
        s += hist.window_sum(n * t_rep, t_rep)?;
        s += hist.window_sum(-n * t_rep, t_rep)?;
    }
    Ok(s)
}

fn reach_peaks(hist: &CorrelationHistogram, t_rep: i64) -> i64 {
    let reach = hist.spec.delay_max_ps.min(-hist.spec.delay_min_ps);
    // Largest n with [nT - T/2, nT + T/2] inside the range (2 reach >= (2n+1) T).
    ((2 * reach / t_rep) - 1).div_euclid(2)
}

/// Two-photon interference visibility `1 - C_co(W) / C_cross(W)` with the
/// cross histogram rescaled so its `|n| >= 2` peak areas equal the co ones.
///
/// The window is centered on zero delay and `window_ps` is its total width.
/// `V` is not clipped, so noise can make it slightly negative.
pub fn visibility(
    co: &CorrelationHistogram,
    cross: &CorrelationHistogram,
    window_ps: i64,
    t_rep_ps: i64,
) -> Result<VisibilityResult> {
    if t_rep_ps <= 0 {
        return Err(invalid("t_rep_ps must be positive"));
    }
    if window_ps <= 0 || window_ps > t_rep_ps {
        return Err(Error::WindowOutOfRange { window_ps });
    }
    let n_max = reach_peaks(co, t_rep_ps).min(reach_peaks(cross, t_rep_ps));
    if n_max < 2 {
        return Err(invalid(
            "histograms must cover the peaks at +/-2 repetition periods",
        ));
    }
    let c_co = co.window_sum(0, window_ps)?;
    let c_cross = cross.window_sum(0, window_ps)?;
    let co_full = co.window_sum(0, t_rep_ps)?;
    let s_co = side_sum(co, t_rep_ps, n_max)?;
    let s_cross = side_sum(cross, t_rep_ps, n_max)?;
    if c_cross == 0 {
        return Err(Error::UndefinedVisibility { window_ps });
    }
    if s_co == 0 || s_cross == 0 {
        return Err(Error::Degenerate(
            "no counts in the side peaks used for normalization".into(),
        ));
    }

    // 1 - (c_co s_cross) / (c_cross s_co), reduced exactly so any common
    // factor in the cross counts cancels bit for bit.
    let num = c_co as u128 * s_cross as u128;
    let den = c_cross as u128 * s_co as u128;
    let g = gcd(num, den);
    let ratio = (num / g) as f64 / (den / g) as f64;
    let visibility = 1.0 - ratio;

    let inv = |c: u64| if c == 0 { 0.0 } else { 1.0 / c as f64 };
    let rel_var = inv(c_co) + inv(c_cross) + inv(s_co) + inv(s_cross);
    Ok(VisibilityResult {
        window_ps,
        c_co,
        c_cross,
        normalization_factor: s_co as f64 / s_cross as f64,
        visibility,
        visibility_err: ratio * rel_var.sqrt(),
        retained_fraction: if co_full == 0 {
            0.0
        } else {
            c_co as f64 / co_full as f64
        },
    })
}

/// [`visibility`] for each window. A failing window yields its error in
/// place; the others are still evaluated.
pub fn postselection_sweep(
    co: &CorrelationHistogram,
    cross: &CorrelationHistogram,
    windows_ps: &[i64],
    t_rep_ps: i64,
) -> Result<Vec<Result<VisibilityResult>>> {
    if windows_ps.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("windows must be sorted ascending"));
    }
    if let Some(&w) = windows_ps.iter().find(|&&w| w > t_rep_ps) {
        return Err(Error::WindowOutOfRange { window_ps: w });
    }
    Ok(windows_ps
        .iter()
        .map(|&w| visibility(co, cross, w, t_rep_ps))
        .collect())
}

/// `window_ps,visibility,visibility_err,retained_fraction`; failed windows
/// are skipped.
pub fn write_sweep_csv(path: &Path, results: &[Result<VisibilityResult>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "window_ps,visibility,visibility_err,retained_fraction")?;
    for r in results.iter().flatten() {
        writeln!(
            w,
            "{},{},{},{}",
            r.window_ps, r.visibility, r.visibility_err, r.retained_fraction
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `"100,250,500"` into window widths.
pub fn parse_window_list(s: &str) -> Result<Vec<i64>> {
    let windows: Vec<i64> = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<i64>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| invalid(format!("bad window width {t:?}")))
        })
        .collect::<Result<_>>()?;
    if windows.is_empty() {
        return Err(invalid("empty window list"));
    }
    Ok(windows)
}

/// Peak areas from a weighted linear least-squares fit of unit-area
/// exponential-Gaussian peaks at every multiple of `T_rep`.
///
/// Unlike [`crate::correlator::peak_areas`], neighbouring tails are assigned
/// to the peak they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakDecomposition {
    pub areas: BTreeMap<i32, f64>,
    pub std_errors: BTreeMap<i32, f64>,
}

impl PeakDecomposition {
    /// `area(n) / mean(area(|m| >= 2))` with its propagated error, ignoring
    /// the correlation between the two terms.
    pub fn ratio_to_outer(&self, n: i32) -> Option<(f64, f64)> {
        let outer: Vec<i32> = self
            .areas
            .keys()
            .copied()
            .filter(|k| k.abs() >= 2)
            .collect();
        if outer.is_empty() {
            return None;
        }
        let a = *self.areas.get(&n)?;
        let sa = self.std_errors[&n];
        let m = outer.iter().map(|k| self.areas[k]).sum::<f64>() / outer.len() as f64;
        let sm = outer
            .iter()
            .map(|k| self.std_errors[k].powi(2))
            .sum::<f64>()
            .sqrt()
            / outer.len() as f64;
        let r = a / m;
        Some((r, r * ((sa / a).powi(2) + (sm / m).powi(2)).sqrt()))
    }
}

pub fn decompose_peaks(
    hist: &CorrelationHistogram,
    t_rep_ps: i64,
    tau1_ps: f64,
    irf_fwhm_ps: f64,
) -> Result<PeakDecomposition> {
    if t_rep_ps <= 0 || !(tau1_ps > 0.0) {
        return Err(invalid("t_rep_ps and tau1_ps must be positive"));
    }
    let n_in = reach_peaks(hist, t_rep_ps);
    if n_in < 0 {
        return Err(invalid("histogram does not cover the zero-delay peak"));
    }
    // One extra peak per side absorbs the tails leaking in from beyond the
    // range; further peaks would be collinear with it.
    let n_basis = n_in as i32 + 1;
    let sigma = sigma_from_fwhm(irf_fwhm_ps);
    let w = hist.spec.bin_width_ps as f64;
    let norm = 1.0 / (2.0 * tau1_ps);
    let peaks: Vec<i32> = (-n_basis..=n_basis).collect();
    let m = hist.counts.len();
    let mut design = DMatrix::zeros(m, peaks.len());
    let mut rhs = DVector::zeros(m);
    for i in 0..m {
        let l = hist.spec.bin_left(i) as f64;
        let sw = 1.0 / (hist.counts[i] as f64).max(1.0).sqrt();
        for (j, &n) in peaks.iter().enumerate() {
            let c = n as f64 * t_rep_ps as f64;
            let k = |t: f64| exp_gauss_kernel(t - c, tau1_ps, sigma);
            let avg = (k(l) + 4.0 * k(l + 0.5 * w) + k(l + w)) / 6.0;
            design[(i, j)] = avg * w * norm * sw;
        }
        rhs[i] = hist.counts[i] as f64 * sw;
    }
    let normal = design.transpose() * &design;
    let cov = normal
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("peak basis is singular".into()))?;
    let coef = &cov * (design.transpose() * rhs);
    let mut areas = BTreeMap::new();
    let mut std_errors = BTreeMap::new();
    for (j, &n) in peaks.iter().enumerate() {
        if n.abs() as i64 <= n_in {
            areas.insert(n, coef[j]);
            std_errors.insert(n, cov[(j, j)].sqrt());
        }
    }
    Ok(PeakDecomposition { areas, std_errors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyChain {
    pub detected_rate_hz: f64,
    pub setup_efficiency: f64,
    pub detector_efficiency: f64,
    pub rep_rate_hz: f64,
    pub first_lens_rate_hz: f64,
    /// Photons at the first lens per excitation pulse.
    pub first_lens_efficiency: f64,
}

/// Refers a detected count rate back to the first collection lens.
pub fn efficiency_chain(
    detected_rate_hz: f64,
    setup_efficiency: f64,
    detector_efficiency: f64,
    rep_rate_hz: f64,
) -> Result<EfficiencyChain> {
    if setup_efficiency == 0.0 {
        return Err(Error::ZeroEfficiency("setup_efficiency"));
    }
    if detector_efficiency == 0.0 {
        return Err(Error::ZeroEfficiency("detector_efficiency"));
    }
    for (name, e) in [
        ("setup_efficiency", setup_efficiency),
        ("detector_efficiency", detector_efficiency),
    ] {
        if !(e > 0.0 && e <= 1.0) {
            return Err(invalid(format!("{name} must lie in (0, 1], got {e}")));
        }
    }
    if !(detected_rate_hz >= 0.0 && detected_rate_hz.is_finite()) {
        return Err(invalid("detected_rate_hz must be non-negative"));
    }
    if !(rep_rate_hz > 0.0 && rep_rate_hz.is_finite()) {
        return Err(invalid("rep_rate_hz must be positive"));
    }
    let first_lens_rate_hz = detected_rate_hz / (setup_efficiency * detector_efficiency);
    Ok(EfficiencyChain {
        detected_rate_hz,
        setup_efficiency,
        detector_efficiency,
        rep_rate_hz,
        first_lens_rate_hz,
        first_lens_efficiency: first_lens_rate_hz / rep_rate_hz,
    })
}

impl EfficiencyChain {
    /// Rounded one-line report, e.g. `~22 MHz at the first lens, 28% of excitation pulses`.
    pub fn summary(&self) -> String {
        format!(
            "~{:.0} MHz at the first lens, {:.0}% of excitation pulses",
            self.first_lens_rate_hz / 1e6,
            self.first_lens_efficiency * 100.0
        )
    }

    /// Detected rate implied by a first-lens efficiency, the inverse chain.
    pub fn detected_rate_for(
        first_lens_efficiency: f64,
        setup: f64,
        detector: f64,
        rep_rate_hz: f64,
    ) -> f64 {
        first_lens_efficiency * rep_rate_hz * setup * detector
    }
}
