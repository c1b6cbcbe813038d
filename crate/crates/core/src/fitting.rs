//! Weighted least-squares fits of the correlation models to histograms.
//!
//! Each fit minimizes `sum (y - m)^2 / max(y, 1)` over the bins in range.
//! A bounded Nelder-Mead simplex runs to convergence, is restarted three
//! times from jittered copies of the best point, and the winner is polished
//! with damped Gauss-Newton steps on a finite-difference Jacobian. Standard
//! errors come from the inverse normal matrix scaled by chi2/dof.
//!
//! Model predictions are bin averages (Simpson's rule on edges and center)
//! multiplied by the bin width, so amplitudes are densities per picosecond.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::correlator::peak_areas;
use crate::error::{invalid, Error, Result};
use crate::models::{
    decay_bin_fraction, hbt_model, hom_co_model, HbtModelParams, HomModelParams, DEFAULT_SIDE_PEAKS,
};
use crate::optics::sigma_from_fwhm;
use crate::rng::SimRng;
use crate::timetag::CorrelationHistogram;

const MAX_ITERATIONS: usize = 10_000;
const REL_TOL: f64 = 1e-10;
const RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    pub chi2_per_dof: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Free parameters that ended on a bound.
    #[serde(default)]
    pub at_bounds: Vec<String>,
    /// Parameters held fixed during the fit, with their values.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> f64 {
        self.parameters.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn err(&self, name: &str) -> f64 {
        self.std_errors.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Param {
    name: &'static str,
    value: f64,
    lower: f64,
    upper: f64,
    fixed: bool,
}

impl Param {
    fn free(name: &'static str, value: f64, lower: f64, upper: f64) -> Self {
        Param {
            name,
            value: value.clamp(lower, upper),
            lower,
            upper,
            fixed: false,
        }
    }

    fn fixed_or_free(
        name: &'static str,
        fixed: Option<f64>,
        guess: f64,
        lower: f64,
        upper: f64,
    ) -> Self {
        match fixed {
            Some(v) => Param {
                name,
                value: v,
                lower,
                upper,
                fixed: true,
            },
            None => Param::free(name, guess, lower, upper),
        }
    }
}

/// Bins selected for fitting: left/right edges and observed counts.
#[derive(Debug, Clone)]
struct Data {
    left: Vec<f64>,
    right: Vec<f64>,
    y: Vec<f64>,
    weight: Vec<f64>,
}

impl Data {
    fn from_hist(hist: &CorrelationHistogram, range: Option<(i64, i64)>) -> Result<Data> {
        let (lo, hi) = range.unwrap_or((hist.spec.delay_min_ps, hist.spec.delay_max_ps));
        let w = hist.spec.bin_width_ps;
        let mut d = Data {
            left: Vec::new(),
            right: Vec::new(),
            y: Vec::new(),
            weight: Vec::new(),
        };
        for (i, &c) in hist.counts.iter().enumerate() {
            let l = hist.spec.bin_left(i);
            if l >= lo && l + w <= hi {
                d.left.push(l as f64);
                d.right.push((l + w) as f64);
                d.y.push(c as f64);
                d.weight.push(1.0 / (c as f64).max(1.0));
            }
        }
        if d.y.is_empty() {
            return Err(Error::Degenerate(
                "no histogram bins inside the fit range".into(),
            ));
        }
        if d.y.iter().all(|&y| y == 0.0) {
            return Err(Error::Degenerate(
                "histogram has no counts in the fit range".into(),
            ));
        }
        Ok(d)
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

/// Bin-averaged density times bin width, Simpson's rule over each bin.
/// Adjacent bins share edge evaluations.
fn simpson_counts(data: &Data, density: impl Fn(f64) -> f64, out: &mut [f64]) {
    let mut prev_right: Option<(f64, f64)> = None;
    for i in 0..data.len() {
        let (l, r) = (data.left[i], data.right[i]);
        let fl = match prev_right {
            Some((x, v)) if x == l => v,
            _ => density(l),
        };
        let fc = density(0.5 * (l + r));
        let fr = density(r);
        out[i] = (r - l) * (fl + 4.0 * fc + fr) / 6.0;
        prev_right = Some((r, fr));
    }
}

struct Problem<'a> {
    data: &'a Data,
    params: Vec<Param>,
    predict: Box<dyn Fn(&[f64], &mut [f64]) + 'a>,
}

impl Problem<'_> {
    fn free_indices(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| !self.params[i].fixed)
            .collect()
    }

    fn full(&self, free: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = self.params.iter().map(|p| p.value).collect();
        for (k, &i) in self.free_indices().iter().enumerate() {
            p[i] = free[k];
        }
        p
    }

    fn clamp(&self, free: &mut [f64]) {
        for (k, i) in self.free_indices().into_iter().enumerate() {
            free[k] = free[k].clamp(self.params[i].lower, self.params[i].upper);
        }
    }

    fn objective(&self, free: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.data.len(), 0.0);
        (self.predict)(&self.full(free), scratch);
        let d = self.data;
        let mut s = 0.0;
        for i in 0..d.len() {
            let r = d.y[i] - scratch[i];
            s += r * r * d.weight[i];
        }
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    }
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

fn nelder_mead(prob: &Problem, start: &[f64], step: &[f64]) -> Minimum {
    let n = start.len();
    let mut scratch = Vec::new();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for k in 0..n {
        let mut p = start.to_vec();
        p[k] += step[k];
        prob.clamp(&mut p);
        if p[k] == start[k] {
            p[k] -= step[k];
            prob.clamp(&mut p);
        }
        simplex.push(p);
    }
    let mut fv: Vec<f64> = simplex
        .iter()
        .map(|p| prob.objective(p, &mut scratch))
        .collect();

    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let (best, worst) = (fv[0], fv[n]);
        let spread = (worst - best).abs();
        if spread <= REL_TOL * best.abs().max(1e-300) || spread == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for k in 0..n {
                centroid[k] += p[k] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..n)
                .map(|k| centroid[k] + t * (simplex[n][k] - centroid[k]))
                .collect();
            prob.clamp(&mut x);
            x
        };

        let xr = along(-alpha);
        let fr = prob.objective(&xr, &mut scratch);
        if fr < fv[0] {
            let xe = along(-gamma);
            let fe = prob.objective(&xe, &mut scratch);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[n] {
            let x = along(-rho * alpha);
            let f = prob.objective(&x, &mut scratch);
            (x, f)
        } else {
            let x = along(rho);
            let f = prob.objective(&x, &mut scratch);
            (x, f)
        };
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        for i in 1..=n {
            let mut x: Vec<f64> = (0..n)
                .map(|k| simplex[0][k] + shrink * (simplex[i][k] - simplex[0][k]))
                .collect();
            prob.clamp(&mut x);
            fv[i] = prob.objective(&x, &mut scratch);
            simplex[i] = x;
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();
    Minimum {
        x: simplex[best].clone(),
        f: fv[best],
        iterations,
        converged,
    }
}

fn fd_step(x: f64, scale: f64) -> f64 {
    1e-6 * x.abs().max(scale)
}

/// Weighted residual Jacobian by central differences, kept inside bounds.
fn jacobian(prob: &Problem, x: &[f64], scales: &[f64]) -> DMatrix<f64> {
    let m = prob.data.len();
    let n = x.len();
    let free = prob.free_indices();
    let mut jac = DMatrix::zeros(m, n);
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for k in 0..n {
        let param = prob.params[free[k]];
        let h = fd_step(x[k], scales[k]);
        let hi = (x[k] + h).min(param.upper);
        let lo = (x[k] - h).max(param.lower);
        let mut xp = x.to_vec();
        xp[k] = hi;
        let mut xm = x.to_vec();
        xm[k] = lo;
        (prob.predict)(&prob.full(&xp), &mut plus);
        (prob.predict)(&prob.full(&xm), &mut minus);
        let denom = hi - lo;
        for i in 0..m {
            // d(residual)/dp = -dm/dp, weighted by sqrt(w).
            jac[(i, k)] = -(plus[i] - minus[i]) / denom * prob.data.weight[i].sqrt();
        }
    }
    jac
}

fn weighted_residuals(prob: &Problem, x: &[f64]) -> DVector<f64> {
    let m = prob.data.len();
    let mut pred = vec![0.0; m];
    (prob.predict)(&prob.full(x), &mut pred);
    DVector::from_iterator(
        m,
        (0..m).map(|i| (prob.data.y[i] - pred[i]) * prob.data.weight[i].sqrt()),
    )
}

/// Levenberg-damped Gauss-Newton polish from a converged simplex point.
fn polish(prob: &Problem, start: Minimum, scales: &[f64]) -> Minimum {
    let mut x = start.x;
    let mut f = start.f;
    let mut lambda = 1e-3;
    let mut scratch = Vec::new();
    let mut iterations = start.iterations;
    for _ in 0..100 {
        iterations += 1;
        let jac = jacobian(prob, &x, scales);
        let r = weighted_residuals(prob, &x);
        let jtj = jac.transpose() * &jac;
        // Gradient of 0.5 * sum r^2 is J^T r; step solves (JtJ + lambda D) d = -J^T r.
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..x.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            prob.clamp(&mut xn);
            let fnew = prob.objective(&xn, &mut scratch);
            if fnew <= f {
                let rel = (f - fnew) / f.max(1e-300);
                x = xn;
                f = fnew;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-13 {
                    return Minimum {
                        x,
                        f,
                        iterations,
                        converged: start.converged,
                    };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Minimum {
        x,
        f,
        iterations,
        converged: start.converged,
    }
}

fn run_fit(prob: Problem, scales: Vec<f64>) -> Result<FitResult> {
    let free = prob.free_indices();
    let n_free = free.len();
    let dof = prob.data.len() as f64 - n_free as f64;
    if dof <= 0.0 {
        return Err(Error::Degenerate(format!(
            "{} bins cannot constrain {} free parameters",
            prob.data.len(),
            n_free
        )));
    }

    let mut best = if n_free == 0 {
        Minimum {
            x: Vec::new(),
            f: prob.objective(&[], &mut Vec::new()),
            iterations: 0,
            converged: true,
        }
    } else {
        let start: Vec<f64> = free.iter().map(|&i| prob.params[i].value).collect();
        let step: Vec<f64> = start
            .iter()
            .zip(&scales)
            .map(|(x, s)| 0.1 * x.abs().max(*s))
            .collect();
        let mut best = nelder_mead(&prob, &start, &step);
        let mut rng = SimRng::seed_from_u64(0x5eed_f17);
        let mut total_iterations = best.iterations;
        for _ in 0..RESTARTS {
            let mut x: Vec<f64> = best
                .x
                .iter()
                .zip(&scales)
                .map(|(x, s)| x + rng.gen_range(-0.1..0.1) * x.abs().max(*s))
                .collect();
            prob.clamp(&mut x);
            let step: Vec<f64> = x
                .iter()
                .zip(&scales)
                .map(|(x, s)| 0.05 * x.abs().max(*s))
                .collect();
            let m = nelder_mead(&prob, &x, &step);
            total_iterations += m.iterations;
            if m.f < best.f {
                best = Minimum {
                    converged: m.converged,
                    ..m
                };
            }
        }
        best.iterations = total_iterations;
        polish(&prob, best, &scales)
    };
    if !best.f.is_finite() {
        best.converged = false;
    }

    let chi2_per_dof = best.f / dof;
    let full = prob.full(&best.x);
    let mut parameters = BTreeMap::new();
    let mut fixed = BTreeMap::new();
    for (p, &v) in prob.params.iter().zip(&full) {
        if p.fixed {
            fixed.insert(p.name.to_string(), v);
        }
        parameters.insert(p.name.to_string(), v);
    }

    let mut std_errors = BTreeMap::new();
    let mut at_bounds = Vec::new();
    if n_free > 0 {
        let jac = jacobian(&prob, &best.x, &scales);
        let jtj = jac.transpose() * &jac;
        let cov = jtj.clone().try_inverse().unwrap_or_else(|| {
            jtj.pseudo_inverse(1e-300)
                .unwrap_or_else(|_| DMatrix::from_element(n_free, n_free, f64::NAN))
        });
        for (k, &i) in free.iter().enumerate() {
            let p = prob.params[i];
            std_errors.insert(p.name.to_string(), (cov[(k, k)] * chi2_per_dof).sqrt());
            if best.x[k] <= p.lower || best.x[k] >= p.upper {
                at_bounds.push(p.name.to_string());
            }
        }
    }

    Ok(FitResult {
        parameters,
        std_errors,
        chi2_per_dof,
        n_iterations: best.iterations,
        converged: best.converged,
        at_bounds,
        fixed,
    })
}

// ---------------------------------------------------------------------------
// Initialization heuristics

/// Slope of ln(counts) over bins with centers in `[lo, hi)`; returns the
/// decay constant or `None` if the flank is unusable.
fn log_linear_decay(hist: &CorrelationHistogram, lo: f64, hi: f64) -> Option<f64> {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &c) in hist.counts.iter().enumerate() {
        let x = hist.spec.bin_center(i);
        if x >= lo && x < hi && c > 0 {
            let y = (c as f64).ln();
            let wgt = c as f64;
            n += wgt;
            sx += wgt * x;
            sy += wgt * y;
            sxx += wgt * x * x;
            sxy += wgt * x * y;
        }
    }
    let denom = n * sxx - sx * sx;
    if n == 0.0 || denom <= 0.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    (slope < 0.0).then(|| -1.0 / slope)
}

/// Mean area of the |n| >= `min_n` peaks that fit inside the histogram.
fn mean_side_area(hist: &CorrelationHistogram, t_rep: i64, min_n: i32) -> Option<f64> {
    let max_n = hist.spec.delay_max_ps.min(-hist.spec.delay_min_ps) / t_rep.max(1);
    let areas = peak_areas(hist, t_rep, t_rep, max_n.max(0) as u32).ok()?;
    let side: Vec<f64> = areas
        .iter()
        .filter(|(k, _)| k.abs() >= min_n)
        .map(|(_, &v)| v as f64)
        .collect();
    if side.is_empty() {
        None
    } else {
        Some(side.iter().sum::<f64>() / side.len() as f64)
    }
}

fn side_peak_guesses(
    hist: &CorrelationHistogram,
    t_rep: f64,
    sigma: f64,
    flank_peak: f64,
) -> (f64, f64, f64) {
    let t_rep_i = t_rep.round() as i64;
    let flank_lo = flank_peak * t_rep + 3.0 * sigma + 2.0 * hist.spec.bin_width_ps as f64;
    let tau = log_linear_decay(hist, flank_lo, flank_peak * t_rep + 0.35 * t_rep)
        .filter(|t| t.is_finite() && *t > 0.0 && *t < t_rep)
        .unwrap_or(0.2 * t_rep);
    let side = mean_side_area(hist, t_rep_i, 2)
        .or_else(|| mean_side_area(hist, t_rep_i, 1))
        .unwrap_or_else(|| {
            hist.total_pairs as f64 / hist.counts.len().max(1) as f64 * t_rep
                / hist.spec.bin_width_ps as f64
        });
    // Peak area of A * K over a period is about 2 A tau.
    let amplitude = (side / (2.0 * tau)).max(1e-12);
    (amplitude, tau, side)
}

// ---------------------------------------------------------------------------
// Lifetime

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeFitOptions {
    pub irf_fwhm_ps: f64,
    pub range: Option<(i64, i64)>,
    /// Excitation period of a start-stop histogram. When set, the tails of
    /// earlier pulses that wrap into the window are part of the model.
    pub period_ps: Option<f64>,
}

/// Fits `amplitude * [S(l - t0) - S(r - t0)] + baseline` per bin, where `S` is
/// the survival function of a one-sided exponential decay smeared by the
/// Gaussian IRF. `amplitude` is the total decay counts and `baseline` a flat
/// per-bin background. [`LifetimeFitOptions::period_ps`] adds the wrapped
/// tails of earlier pulses.
pub fn fit_lifetime(
    hist: &CorrelationHistogram,
    irf_fwhm_ps: f64,
    range: Option<(i64, i64)>,
) -> Result<FitResult> {
    fit_lifetime_with(
        hist,
        &LifetimeFitOptions {
            irf_fwhm_ps,
            range,
            period_ps: None,
        },
    )
}

pub fn fit_lifetime_with(
    hist: &CorrelationHistogram,
    opts: &LifetimeFitOptions,
) -> Result<FitResult> {
    if !(opts.irf_fwhm_ps >= 0.0) {
        return Err(invalid("irf_fwhm_ps must be non-negative"));
    }
    if let Some(p) = opts.period_ps {
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid("period_ps must be positive"));
        }
    }
    let data = Data::from_hist(hist, opts.range)?;
    let nonzero = data.y.iter().filter(|&&y| y > 0.0).count();
    if nonzero < 10 {
        return Err(Error::Degenerate(format!(
            "only {nonzero} non-empty bins in the fit range"
        )));
    }
    let sigma = sigma_from_fwhm(opts.irf_fwhm_ps);
    let width = hist.spec.bin_width_ps as f64;
    let lo = data.left[0];
    let hi = *data.right.last().unwrap();

    // Baseline from the quietest tenth of bins, t0 at the steepest rise
    // before the maximum, tau from the flank after it.
    let mut sorted = data.y.clone();
    sorted.sort_by(f64::total_cmp);
    let baseline0 = sorted[..(sorted.len() / 10).max(1)].iter().sum::<f64>()
        / (sorted.len() / 10).max(1) as f64;
    let peak = (0..data.len())
        .max_by(|&a, &b| data.y[a].total_cmp(&data.y[b]))
        .unwrap();
    let half = baseline0 + 0.5 * (data.y[peak] - baseline0);
    let rise = (0..=peak)
        .rev()
        .find(|&i| data.y[i] < half)
        .map_or(peak, |i| i + 1);
    let t0_0 = 0.5 * (data.left[rise] + data.right[rise]);
    let peak_x = 0.5 * (data.left[peak] + data.right[peak]);
    let tau0 = log_linear_decay(
        hist,
        peak_x + 3.0 * sigma + 2.0 * width,
        peak_x + 0.5 * (hi - peak_x),
    )
    .filter(|t| t.is_finite() && *t > 0.0)
    .unwrap_or(0.2 * (hi - lo));
    let amplitude0 = (data.y.iter().map(|y| (y - baseline0).max(0.0)).sum::<f64>()).max(1.0);

    let params = vec![
        Param::free("amplitude", amplitude0, 0.0, f64::INFINITY),
        Param::free("tau_ps", tau0, 1e-3 * width, 100.0 * (hi - lo)),
        Param::free("t0_ps", t0_0, lo - (hi - lo), hi),
        Param::free("baseline", baseline0, 0.0, f64::INFINITY),
    ];
    let scales = vec![amplitude0, tau0, width.max(sigma), baseline0.max(1.0)];
    let data_ref = &data;
    let period = opts.period_ps;
    let predict = move |p: &[f64], out: &mut [f64]| {
        let (a, tau, t0, b) = (p[0], p[1], p[2], p[3]);
        for i in 0..data_ref.len() {
            let v = decay_bin_fraction(
                data_ref.left[i] - t0,
                data_ref.right[i] - t0,
                tau,
                sigma,
                period,
            );
            out[i] = a * v + b;
        }
    };
    run_fit(
        Problem {
            data: &data,
            params,
            predict: Box::new(predict),
        },
        scales,
    )
}

// ---------------------------------------------------------------------------
// HBT

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbtFitOptions {
    pub t_rep_ps: f64,
    pub irf_fwhm_ps: f64,
    pub n_side_peaks: u32,
    pub range: Option<(i64, i64)>,
}

impl HbtFitOptions {
    pub fn new(t_rep_ps: f64, irf_fwhm_ps: f64) -> Self {
        HbtFitOptions {
            t_rep_ps,
            irf_fwhm_ps,
            n_side_peaks: DEFAULT_SIDE_PEAKS,
            range: None,
        }
    }
}

/// Fits the pulsed HBT model with free amplitude, `g2_zero >= 0` and `tau1_ps`.
pub fn fit_hbt(hist: &CorrelationHistogram, t_rep_ps: f64, irf_fwhm_ps: f64) -> Result<FitResult> {
    fit_hbt_with(hist, &HbtFitOptions::new(t_rep_ps, irf_fwhm_ps))
}

pub fn fit_hbt_with(hist: &CorrelationHistogram, opts: &HbtFitOptions) -> Result<FitResult> {
    check_periodic(hist, opts.t_rep_ps, 2)?;
    let data = Data::from_hist(hist, opts.range)?;
    let sigma = sigma_from_fwhm(opts.irf_fwhm_ps);
    let t_rep_i = opts.t_rep_ps.round() as i64;
    let (amplitude0, tau0, side) = side_peak_guesses(hist, opts.t_rep_ps, sigma, 1.0);
    let zero = hist.window_sum(0, t_rep_i).map(|v| v as f64).unwrap_or(0.0);
    let g2_0 = (zero / side).clamp(0.0, 1.0);

    let params = vec![
        Param::free("amplitude", amplitude0, 0.0, f64::INFINITY),
        Param::free("g2_zero", g2_0, 0.0, 10.0),
        Param::free("tau1_ps", tau0, 1.0, opts.t_rep_ps),
    ];
    let scales = vec![amplitude0, 0.01, tau0];
    let base = HbtModelParams {
        amplitude: 1.0,
        g2_zero: 0.0,
        tau1_ps: 1.0,
        t_rep_ps: opts.t_rep_ps,
        n_side_peaks: opts.n_side_peaks,
        irf_fwhm_ps: opts.irf_fwhm_ps,
    };
    let data_ref = &data;
    let predict = move |p: &[f64], out: &mut [f64]| {
        let m = HbtModelParams {
            amplitude: p[0],
            g2_zero: p[1],
            tau1_ps: p[2],
            ..base
        };
        simpson_counts(data_ref, |t| hbt_model(t, &m), out);
    };
    run_fit(
        Problem {
            data: &data,
            params,
            predict: Box::new(predict),
        },
        scales,
    )
}

fn check_periodic(hist: &CorrelationHistogram, t_rep_ps: f64, min_side: i64) -> Result<()> {
    if !(t_rep_ps > 0.0) {
        return Err(invalid("t_rep_ps must be positive"));
    }
    let reach = hist.spec.delay_max_ps.min(-hist.spec.delay_min_ps) as f64;
    if reach < (min_side as f64 + 0.5) * t_rep_ps {
        return Err(invalid(format!(
            "histogram must cover at least +/-{} repetition periods",
            min_side as f64 + 0.5
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// HOM

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HomFixed {
    pub amplitude: Option<f64>,
    pub v_ps: Option<f64>,
    pub tau_dip_ps: Option<f64>,
    pub tau1_ps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomFitOptions {
    pub t_rep_ps: f64,
    pub irf_fwhm_ps: f64,
    pub n_side_peaks: u32,
    pub range: Option<(i64, i64)>,
    pub fixed: HomFixed,
}

impl HomFitOptions {
    pub fn new(t_rep_ps: f64, irf_fwhm_ps: f64) -> Self {
        HomFitOptions {
            t_rep_ps,
            irf_fwhm_ps,
            n_side_peaks: DEFAULT_SIDE_PEAKS,
            range: None,
            fixed: HomFixed::default(),
        }
    }
}

/// Fits the co-polarized HOM model with free amplitude, `v_ps` in [0, 1],
/// `tau_dip_ps`, and `tau1_ps` unless `fixed_tau1` is given.
pub fn fit_hom(
    hist: &CorrelationHistogram,
    t_rep_ps: f64,
    irf_fwhm_ps: f64,
    fixed_tau1: Option<f64>,
) -> Result<FitResult> {
    let mut opts = HomFitOptions::new(t_rep_ps, irf_fwhm_ps);
    opts.fixed.tau1_ps = fixed_tau1;
    fit_hom_with(hist, &opts)
}

pub fn fit_hom_with(hist: &CorrelationHistogram, opts: &HomFitOptions) -> Result<FitResult> {
    check_periodic(hist, opts.t_rep_ps, 2)?;
    let data = Data::from_hist(hist, opts.range)?;
    let sigma = sigma_from_fwhm(opts.irf_fwhm_ps);
    let (amplitude0, tau0, _) = side_peak_guesses(hist, opts.t_rep_ps, sigma, 2.0);
    let tau1_0 = opts.fixed.tau1_ps.unwrap_or(tau0);
    let amplitude0 = opts.fixed.amplitude.unwrap_or(amplitude0);
    let (v0, tau_dip0) = dip_guesses(hist, amplitude0, tau1_0, opts);

    let params = vec![
        Param::fixed_or_free(
            "amplitude",
            opts.fixed.amplitude,
            amplitude0,
            0.0,
            f64::INFINITY,
        ),
        Param::fixed_or_free("v_ps", opts.fixed.v_ps, v0, 0.0, 1.0),
        Param::fixed_or_free(
            "tau_dip_ps",
            opts.fixed.tau_dip_ps,
            tau_dip0,
            1.0,
            opts.t_rep_ps,
        ),
        Param::fixed_or_free("tau1_ps", opts.fixed.tau1_ps, tau1_0, 1.0, opts.t_rep_ps),
    ];
    let all_scales = [amplitude0, 0.05, tau_dip0, tau1_0];
    let scales = params
        .iter()
        .zip(all_scales)
        .filter(|(p, _)| !p.fixed)
        .map(|(_, s)| s)
        .collect();
    let base = HomModelParams {
        amplitude: 1.0,
        tau1_ps: 1.0,
        t_rep_ps: opts.t_rep_ps,
        v_ps: 0.0,
        tau_dip_ps: 1.0,
        irf_fwhm_ps: opts.irf_fwhm_ps,
        n_side_peaks: opts.n_side_peaks,
    };
    let data_ref = &data;
    let predict = move |p: &[f64], out: &mut [f64]| {
        let m = HomModelParams {
            amplitude: p[0],
            v_ps: p[1],
            tau_dip_ps: p[2],
            tau1_ps: p[3],
            ..base
        };
        simpson_counts(data_ref, |t| hom_co_model(t, &m), out);
    };
    run_fit(
        Problem {
            data: &data,
            params,
            predict: Box::new(predict),
        },
        scales,
    )
}

/// Dip depth from the bins around zero against the undipped model, and the
/// half-depth width converted to an exponential constant.
fn dip_guesses(
    hist: &CorrelationHistogram,
    amplitude: f64,
    tau1: f64,
    opts: &HomFitOptions,
) -> (f64, f64) {
    let undipped = HomModelParams {
        amplitude,
        tau1_ps: tau1,
        t_rep_ps: opts.t_rep_ps,
        v_ps: 0.0,
        tau_dip_ps: 1.0,
        irf_fwhm_ps: opts.irf_fwhm_ps,
        n_side_peaks: opts.n_side_peaks,
    };
    let w = hist.spec.bin_width_ps as f64;
    let expected = |x: f64| hom_co_model(x, &undipped) * w;
    let Some(center) = hist.spec.bin_index(0) else {
        return (0.5, 0.05 * tau1);
    };
    let deficit = |i: usize| expected(hist.spec.bin_center(i)) - hist.counts[i] as f64;
    let depth0 = deficit(center).max(0.0);
    let v0 = (depth0 / expected(hist.spec.bin_center(center))).clamp(0.05, 0.99);
    let mut half_width = None;
    for i in center..hist.counts.len() {
        if deficit(i) < 0.5 * depth0 {
            half_width = Some(hist.spec.bin_center(i).max(w));
            break;
        }
    }
    let tau_dip0 = half_width
        .map(|h| h / std::f64::consts::LN_2)
        .unwrap_or(0.05 * tau1)
        .clamp(5.0, 0.25 * opts.t_rep_ps);
    (v0, tau_dip0)
}
