//! Analytic correlation models with a Gaussian instrument response.
//!
//! Every peak is the two-sided exponential `exp(-|t|/tau)` convolved with a
//! unit-area Gaussian of standard deviation `sigma` ([`exp_gauss_kernel`]).
//! The HBT model is a train of such peaks with a scaled zero-delay peak.
//! The HOM models use the pulsed unbalanced-interferometer weights
//! (1/2 at zero delay, 3/4 at one period, 1 beyond), and the co-polarized
//! central peak carries a dip `1 - v exp(-|t|/tau_dip)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::optics::sigma_from_fwhm;
use crate::quadrature::integrate_with_breaks;
use crate::special::{erfc, scaled_exp_erfc};

pub const DEFAULT_SIDE_PEAKS: u32 = 8;

/// `exp(-|t|/tau)` convolved with a unit-area Gaussian of std `sigma`.
///
/// `1/2 e^{s^2/2tau^2} [e^{-t/tau} erfc((s^2/tau - t)/(sqrt2 s)) + e^{t/tau} erfc((s^2/tau + t)/(sqrt2 s))]`,
/// evaluated through [`scaled_exp_erfc`] so neither branch overflows.
#[inline]
pub fn exp_gauss_kernel(t_ps: f64, tau_ps: f64, sigma_ps: f64) -> f64 {
    if sigma_ps == 0.0 {
        return (-t_ps.abs() / tau_ps).exp();
    }
    0.5 * (scaled_exp_erfc(t_ps, tau_ps, sigma_ps) + scaled_exp_erfc(-t_ps, tau_ps, sigma_ps))
}

/// Survival function of a one-sided exponential decay (mean `tau`) smeared
/// by Gaussian jitter: the probability that a detection lands after `t`.
pub fn decay_survival(t_ps: f64, tau_ps: f64, sigma_ps: f64) -> f64 {
    if sigma_ps == 0.0 {
        return if t_ps < 0.0 {
            1.0
        } else {
            (-t_ps / tau_ps).exp()
        };
    }
    0.5 * erfc(t_ps / (std::f64::consts::SQRT_2 * sigma_ps))
        + 0.5 * scaled_exp_erfc(t_ps, tau_ps, sigma_ps)
}

/// Fraction of decays started at 0 that are detected in `[l, r)`. With a
/// `period`, decays started whole periods earlier (and one period later)
/// are added, as seen by a start-stop histogram against a pulse train.
pub fn decay_bin_fraction(
    l: f64,
    r: f64,
    tau_ps: f64,
    sigma_ps: f64,
    period_ps: Option<f64>,
) -> f64 {
    let once = |shift: f64| {
        decay_survival(l + shift, tau_ps, sigma_ps) - decay_survival(r + shift, tau_ps, sigma_ps)
    };
    let Some(t) = period_ps else {
        return once(0.0);
    };
    let reach = 40.0 * tau_ps + 10.0 * sigma_ps;
    let mut v = once(-t);
    let mut m = 0.0;
    while l + m * t <= reach {
        v += once(m * t);
        m += 1.0;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtModelParams {
    pub amplitude: f64,
    pub g2_zero: f64,
    pub tau1_ps: f64,
    pub t_rep_ps: f64,
    pub n_side_peaks: u32,
    pub irf_fwhm_ps: f64,
}

impl HbtModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.tau1_ps > 0.0 && self.t_rep_ps > 0.0) {
            return Err(invalid("amplitude, tau1_ps and t_rep_ps must be positive"));
        }
        if !(self.g2_zero >= 0.0) || !(self.irf_fwhm_ps >= 0.0) || self.n_side_peaks < 1 {
            return Err(invalid(
                "need g2_zero >= 0, irf_fwhm_ps >= 0 and n_side_peaks >= 1",
            ));
        }
        Ok(())
    }
}

/// Expected coincidence density of the pulsed HBT correlation.
pub fn hbt_model(tau_ps: f64, p: &HbtModelParams) -> f64 {
    let sigma = sigma_from_fwhm(p.irf_fwhm_ps);
    let k = |t: f64| exp_gauss_kernel(t, p.tau1_ps, sigma);
    let n = p.n_side_peaks as i32;
    let side: f64 = (-n..=n)
        .filter(|&m| m != 0)
        .map(|m| k(tau_ps - m as f64 * p.t_rep_ps))
        .sum();
    p.amplitude * (p.g2_zero * k(tau_ps) + side)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomModelParams {
    pub amplitude: f64,
    pub tau1_ps: f64,
    pub t_rep_ps: f64,
    /// Zero-delay dip contrast.
    pub v_ps: f64,
    pub tau_dip_ps: f64,
    pub irf_fwhm_ps: f64,
    pub n_side_peaks: u32,
}

impl HomModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0
            && self.tau1_ps > 0.0
            && self.t_rep_ps > 0.0
            && self.tau_dip_ps > 0.0)
        {
            return Err(invalid(
                "amplitude, tau1_ps, t_rep_ps and tau_dip_ps must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.v_ps) {
            return Err(invalid(format!(
                "v_ps must lie in [0, 1], got {}",
                self.v_ps
            )));
        }
        if !(self.irf_fwhm_ps >= 0.0) || self.n_side_peaks < 2 {
            return Err(invalid("need irf_fwhm_ps >= 0 and n_side_peaks >= 2"));
        }
        Ok(())
    }

    /// Decay constant of `exp(-|t|/tau1) exp(-|t|/tau_dip)`.
    pub fn tau_q_ps(&self) -> f64 {
        1.0 / (1.0 / self.tau1_ps + 1.0 / self.tau_dip_ps)
    }
}

fn hom_model(tau_ps: f64, p: &HomModelParams, v: f64) -> f64 {
    let sigma = sigma_from_fwhm(p.irf_fwhm_ps);
    let k = |t: f64| exp_gauss_kernel(t, p.tau1_ps, sigma);
    let t_rep = p.t_rep_ps;
    let mut central = k(tau_ps);
    if v != 0.0 {
        central -= v * exp_gauss_kernel(tau_ps, p.tau_q_ps(), sigma);
    }
    let mut sum = 0.5 * central + 0.75 * (k(tau_ps - t_rep) + k(tau_ps + t_rep));
    for m in 2..=p.n_side_peaks {
        let off = m as f64 * t_rep;
        sum += k(tau_ps - off) + k(tau_ps + off);
    }
    p.amplitude * sum
}

/// Co-polarized HOM correlation density.
pub fn hom_co_model(tau_ps: f64, p: &HomModelParams) -> f64 {
    hom_model(tau_ps, p, p.v_ps)
}

/// Cross-polarized (fully distinguishable) HOM correlation density.
pub fn hom_cross_model(tau_ps: f64, p: &HomModelParams) -> f64 {
    hom_model(tau_ps, p, 0.0)
}

const VISIBILITY_REL_TOL: f64 = 1e-10;

fn central_integral(f: impl Fn(f64) -> f64, half_width: f64, p: &HomModelParams) -> f64 {
    // Break at the cusp and at the dip scale so the adaptive rule never has
    // to discover them.
    let tq = p.tau_q_ps();
    let breaks = [0.0, -tq, tq, -5.0 * tq, 5.0 * tq];
    integrate_with_breaks(f, -half_width, half_width, &breaks, VISIBILITY_REL_TOL)
}

/// Visibility `1 - int(co) / int(cross)` over `[-W/2, W/2]` and the share of
/// the zero-peak co-polarized coincidences retained by the window (relative
/// to a full period).
pub fn analytic_visibility(window_ps: f64, p: &HomModelParams) -> Result<(f64, f64)> {
    p.validate()?;
    if !(window_ps > 0.0 && window_ps <= p.t_rep_ps) {
        return Err(invalid(format!(
            "window {window_ps} ps must lie in (0, T_rep]"
        )));
    }
    let half = 0.5 * window_ps;
    let co = central_integral(|t| hom_co_model(t, p), half, p);
    let cross = central_integral(|t| hom_cross_model(t, p), half, p);
    let co_full = if window_ps == p.t_rep_ps {
        co
    } else {
        central_integral(|t| hom_co_model(t, p), 0.5 * p.t_rep_ps, p)
    };
    Ok((1.0 - co / cross, co / co_full))
}

/// `v_ps` giving visibility `target` in window `window_ps`.
///
/// The visibility is exactly linear in `v_ps` (the dip term enters the
/// co-polarized integral linearly), so it is evaluated once at `v_ps = 1`.
/// Errors when the required contrast exceeds 1.
pub fn solve_v_for_visibility(target: f64, window_ps: f64, p: &HomModelParams) -> Result<f64> {
    let unit = HomModelParams { v_ps: 1.0, ..*p };
    let (v_max, _) = analytic_visibility(window_ps, &unit)?;
    let v = target / v_max;
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!(
            "visibility {target} unreachable in a {window_ps} ps window: the maximum at v_ps = 1 is {v_max:.6}"
        )));
    }
    Ok(v)
}

/// Samples `f` on `n` evenly spaced delays in `[lo, hi]` for curve export.
pub fn sample_curve(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    if n < 2 {
        return vec![(lo, f(lo))];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = lo + step * i as f64;
            (t, f(t))
        })
        .collect()
}
