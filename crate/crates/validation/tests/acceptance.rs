//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion,
//! followed by indented detail lines, and exits non-zero if any fails.
//!
//! `cargo test -p spsim-validation --test acceptance -- 3 7` runs a subset.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use spsim_core::analysis::{decompose_peaks, efficiency_chain, postselection_sweep};
use spsim_core::correlator::correlate;
use spsim_core::emitter::{expected_g2_zero, p_two_for_g2, EmitterParams};
use spsim_core::fitting::{
    fit_hbt_with, fit_hom_with, fit_lifetime_with, HbtFitOptions, HomFitOptions, LifetimeFitOptions,
};
use spsim_core::io::{write_tag_file, TagFormat};
use spsim_core::models::{
    analytic_visibility, exp_gauss_kernel, solve_v_for_visibility, HomModelParams,
};
use spsim_core::optics::{DetectorParams, HbtConfig, HomConfig, Polarization};
use spsim_core::pipeline::{
    decay_histogram, decay_streams, hbt_histogram, hbt_streams, hom_histogram, hom_streams,
};
use spsim_core::{HistogramSpec, TimeTag};
use spsim_validation::{brute_force_histogram, Quadrature};

const T_REP: f64 = 12_500.0;
const IRF_FWHM: f64 = 50.0;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "kernel exactness", kernel_exactness),
        (2, "correlator oracle", correlator_oracle),
        (3, "g2(0) closed loop", g2_closed_loop),
        (4, "lifetime closed loop", lifetime_closed_loop),
        (5, "distinguishable peak pattern", distinguishable_peaks),
        (6, "HOM model consistency", hom_model_consistency),
        (7, "visibility sweep", visibility_sweep),
        (8, "efficiency arithmetic", efficiency_arithmetic),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id} ({name}): {} [{secs:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.summary
        );
        for d in &out.details {
            println!("      {d}");
        }
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn kernel_exactness() -> Outcome {
    let q = Quadrature::default();
    let mut worst = (0.0f64, 0.0, 0.0, 0.0);
    let mut kernel_secs = 0.0;
    for tau in [2350.0, 3110.0, 190.0, 179.0] {
        for sigma in [0.0, 21.23, 50.0] {
            let grid: Vec<f64> = (0..10_000)
                .map(|i| -10.0 * tau + 20.0 * tau * i as f64 / 9_999.0)
                .collect();
            let start = Instant::now();
            let values: Vec<f64> = grid
                .iter()
                .map(|&t| exp_gauss_kernel(t, tau, sigma))
                .collect();
            kernel_secs += start.elapsed().as_secs_f64();
            for (&t, &k) in grid.iter().zip(&values) {
                let oracle = q.exp_gauss_convolution(t, tau, sigma);
                let rel = (k / oracle - 1.0).abs();
                if !(rel <= worst.0) {
                    worst = (rel, tau, sigma, t);
                }
            }
        }
    }
    let pass = worst.0 < 1e-9 && kernel_secs < 10.0;
    Outcome::new(
        pass,
        format!(
            "max relative error {:.2e} (limit 1e-9) at tau={} sigma={} t={:.1}; 1.2e5 kernel calls in {kernel_secs:.3} s (limit 10 s)",
            worst.0, worst.1, worst.2, worst.3
        ),
    )
}

fn sorted_times(rng: &mut Xoshiro256PlusPlus, n: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|_| rng.gen_range(0..span)).collect();
    v.sort_unstable();
    v
}

fn tags(times: &[u64], channel: u16) -> Vec<TimeTag> {
    times.iter().map(|&t| TimeTag::new(channel, t)).collect()
}

fn correlator_oracle() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xc0de);
    let mut mismatches = 0;
    let mut pairs = 0u64;
    for _ in 0..200 {
        let span = [10_000u64, 1_000_000, 100_000_000][rng.gen_range(0..3)];
        let (n_a, n_b) = (rng.gen_range(0..=2000), rng.gen_range(0..=2000));
        let a = sorted_times(&mut rng, n_a, span);
        let b = sorted_times(&mut rng, n_b, span);
        let width = rng.gen_range(1..=500i64);
        let lo = rng.gen_range(-500..=500i64) * width;
        let hi = lo + rng.gen_range(1..=2000i64) * width;
        let spec = HistogramSpec::new(width, lo, hi).unwrap();
        let h = correlate(&tags(&a, 0), &tags(&b, 1), &spec).unwrap();
        let want = brute_force_histogram(&a, &b, lo, hi, width);
        pairs += h.total_pairs;
        if h.counts != want || h.total_pairs != want.iter().sum::<u64>() {
            mismatches += 1;
        }
    }

    // Sparse streams: about one pair per tag.
    let n = 2_000_000;
    let span = n as u64 * 100_000;
    let a = tags(&sorted_times(&mut rng, n, span), 0);
    let b = tags(&sorted_times(&mut rng, n, span), 1);
    let spec = HistogramSpec::symmetric(100, 50_000).unwrap();
    let start = Instant::now();
    let h = correlate(&a, &b, &spec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rate = (2 * n) as f64 / secs;

    Outcome::new(
        mismatches == 0 && rate >= 5e6,
        format!(
            "{mismatches}/200 random instances differ from the brute-force histogram ({pairs} pairs checked); \
             throughput {:.1}e6 tags/s (benchmark floor 5e6)",
            rate / 1e6
        ),
    )
    .detail(format!("benchmark: 2 x {n} tags, {} pairs, {secs:.3} s", h.total_pairs))
}

fn g2_closed_loop() -> Outcome {
    let emitter = EmitterParams {
        tau1_ps: 3110.0,
        p_one: 1.0,
        p_two: p_two_for_g2(0.006, 1.0).unwrap(),
        ..Default::default()
    };
    let target = expected_g2_zero(&emitter).unwrap();
    let spec = HistogramSpec::symmetric(20, 31_260).unwrap();
    let start = Instant::now();
    let hist = hbt_histogram(&emitter, &HbtConfig::default(), 100_000_000, 3, &spec).unwrap();
    let fit = fit_hbt_with(&hist, &HbtFitOptions::new(T_REP, IRF_FWHM)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (g2, tau1) = (fit.get("g2_zero"), fit.get("tau1_ps"));
    let pass = (g2 - 0.006).abs() <= 0.003 && (tau1 / 3110.0 - 1.0).abs() <= 0.05 && secs <= 600.0;
    Outcome::new(
        pass,
        format!(
            "g2_zero = {g2:.5} +- {:.5} (accept 0.006 +- 0.003), tau1 = {tau1:.1} ps (accept 3110 +- 5%), {secs:.0} s (limit 600 s)",
            fit.err("g2_zero")
        ),
    )
    .detail(format!(
        "p_two = {:.6}, expected_g2_zero = {target:.6}, {} pairs, chi2/dof = {:.3}",
        emitter.p_two, hist.total_pairs, fit.chi2_per_dof
    ))
}

fn lifetime_closed_loop() -> Outcome {
    let emitter = EmitterParams {
        tau1_ps: 2350.0,
        ..Default::default()
    };
    let det = DetectorParams {
        jitter_fwhm_ps: IRF_FWHM,
        ..DetectorParams::ideal()
    };
    let spec = HistogramSpec::new(10, -2000, 10_500).unwrap();
    let hist = decay_histogram(&emitter, &det, 1_000_000, 4, &spec).unwrap();
    let opts = LifetimeFitOptions {
        irf_fwhm_ps: IRF_FWHM,
        range: None,
        period_ps: Some(T_REP),
    };
    let fit = fit_lifetime_with(&hist, &opts).unwrap();
    let tau = fit.get("tau_ps");
    Outcome::new(
        (tau / 2350.0 - 1.0).abs() <= 0.02,
        format!(
            "tau = {tau:.1} +- {:.1} ps (accept 2350 +- 2%)",
            fit.err("tau_ps")
        ),
    )
    .detail(format!(
        "10^6 detected photons, {} start-stop counts, chi2/dof = {:.3}",
        hist.total_pairs, fit.chi2_per_dof
    ))
}

fn hom_spec() -> HistogramSpec {
    HistogramSpec::symmetric(10, 31_250).unwrap()
}

fn hom_run(v: f64, pol: Polarization, pulses: u64, seed: u64) -> spsim_core::CorrelationHistogram {
    let emitter = EmitterParams {
        tau1_ps: 3110.0,
        tau_dip_ps: 190.0,
        v_intrinsic: v,
        ..Default::default()
    };
    let cfg = HomConfig {
        polarization: pol,
        ..Default::default()
    };
    hom_histogram(&emitter, &cfg, pulses, seed, &hom_spec()).unwrap()
}

fn distinguishable_peaks() -> Outcome {
    let hist = hom_run(0.0, Polarization::Cross, 10_000_000, 5);
    let mut opts = HomFitOptions::new(T_REP, IRF_FWHM);
    opts.fixed.v_ps = Some(0.0);
    opts.fixed.tau_dip_ps = Some(190.0);
    let tau1 = fit_hom_with(&hist, &opts).unwrap().get("tau1_ps");
    let d = decompose_peaks(&hist, T_REP as i64, tau1, IRF_FWHM).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, want) in [(0, 0.5), (-1, 0.75), (1, 0.75)] {
        let (r, err) = d.ratio_to_outer(n).unwrap();
        let z = (r - want) / err;
        pass &= z.abs() <= 3.0;
        parts.push(format!(
            "n={n}: {r:.4} +- {err:.4} ({z:+.1} sigma from {want})"
        ));
    }
    Outcome::new(pass, parts.join(", ")).detail(format!(
        "10^7 pulses, {} pairs; peak shape tau1 = {tau1:.1} ps from a v=0 fit",
        hist.total_pairs
    ))
}

fn hom_model_consistency() -> Outcome {
    let hist = hom_run(0.95, Polarization::Co, 100_000_000, 6);
    let mut opts = HomFitOptions::new(T_REP, IRF_FWHM);
    opts.fixed.v_ps = Some(0.95);
    opts.fixed.tau_dip_ps = Some(190.0);
    opts.fixed.tau1_ps = Some(3110.0);
    let amp_only = fit_hom_with(&hist, &opts).unwrap();
    let chi2 = amp_only.chi2_per_dof;
    let full = fit_hom_with(&hist, &HomFitOptions::new(T_REP, IRF_FWHM)).unwrap();
    let (tau_dip, tau_dip_err) = (full.get("tau_dip_ps"), full.err("tau_dip_ps"));
    let z = (tau_dip - 190.0) / tau_dip_err;
    Outcome::new(
        (0.8..=1.3).contains(&chi2),
        format!("amplitude-only chi2/dof = {chi2:.4} (accept 0.8..1.3)"),
    )
    .detail(format!(
        "10^8 pulses, {} pairs, {} bins of 10 ps",
        hist.total_pairs,
        hist.counts.len()
    ))
    .detail(format!(
        "free fit: v = {:.4} +- {:.4}, tau_dip = {tau_dip:.1} +- {tau_dip_err:.1} ps ({z:+.1} sigma from 190), tau1 = {:.1} ps",
        full.get("v_ps"),
        full.err("v_ps"),
        full.get("tau1_ps")
    ))
}

fn visibility_sweep() -> Outcome {
    let mut p = HomModelParams {
        amplitude: 1.0,
        tau1_ps: 3110.0,
        t_rep_ps: T_REP,
        v_ps: 1.0,
        tau_dip_ps: 190.0,
        irf_fwhm_ps: IRF_FWHM,
        n_side_peaks: 8,
    };
    let mut notes = Vec::new();
    // Calibrate v to the full-period visibility; if the target lies beyond
    // v = 1 the run proceeds at the closest reachable value.
    let (calibrated, v) = match solve_v_for_visibility(0.0558, T_REP, &p) {
        Ok(v) => (true, v),
        Err(e) => {
            notes.push(format!("calibration: {e}"));
            (false, 1.0)
        }
    };
    p.v_ps = v;
    let v_full = analytic_visibility(T_REP, &p).unwrap().0;
    let calibration_ok = calibrated && (0.8..=1.0).contains(&v) && (v_full - 0.0558).abs() < 1e-6;
    notes.push(format!(
        "v_ps = {v:.4} gives analytic V(12500) = {v_full:.5} (target 0.0558)"
    ));

    let co = hom_run(v, Polarization::Co, 100_000_000, 7);
    let cross = hom_run(0.0, Polarization::Cross, 100_000_000, 8);
    let windows = [100, 200, 300, 500, 1000, 2000, 5000, 12_500];
    let sweep = postselection_sweep(&co, &cross, &windows, T_REP as i64).unwrap();
    let mut agree = true;
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    let mut v100 = f64::NAN;
    for (w, r) in windows.iter().zip(&sweep) {
        let r = r.as_ref().unwrap();
        let (oracle, _) = analytic_visibility(*w as f64, &p).unwrap();
        let z = (r.visibility - oracle) / r.visibility_err;
        agree &= z.abs() <= 2.0;
        monotone &= r.visibility <= prev;
        prev = r.visibility;
        if *w == 100 {
            v100 = r.visibility;
        }
        notes.push(format!(
            "W = {w:>5} ps: MC V = {:.4} +- {:.4}, oracle {oracle:.4} ({z:+.2} sigma), retained {:.3}",
            r.visibility, r.visibility_err, r.retained_fraction
        ));
    }
    let narrow_ok = v100 >= 0.85;
    let mut out = Outcome::new(
        calibration_ok && agree && monotone && narrow_ok,
        format!(
            "calibration to V(12500)=0.0558 {}; sweep vs oracle within 2 sigma {}; non-increasing {}; V(100) = {v100:.4} >= 0.85 {}",
            verdict(calibration_ok),
            verdict(agree),
            verdict(monotone),
            verdict(narrow_ok)
        ),
    );
    for n in notes {
        out = out.detail(n);
    }
    out
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn efficiency_arithmetic() -> Outcome {
    let c = efficiency_chain(2e5, 0.018, 0.5, 8e7).unwrap();
    let rate = 2e5 / (0.018 * 0.5);
    let exact = c.first_lens_rate_hz == rate && c.first_lens_efficiency == rate / 8e7;
    let rounded = format!("{:.4e}", c.first_lens_rate_hz) == "2.2222e7"
        && format!("{:.4}", c.first_lens_efficiency) == "0.2778";
    let report = c.summary();
    Outcome::new(
        exact && rounded && report == "~22 MHz at the first lens, 28% of excitation pulses",
        format!(
            "rate {:.4e} Hz, efficiency {:.4}; report \"{report}\"",
            c.first_lens_rate_hz, c.first_lens_efficiency
        ),
    )
}

/// The `spsim` binary next to this test executable, when the workspace
/// build produced one.
fn cli_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let bin = dir.join(format!("spsim{}", std::env::consts::EXE_SUFFIX));
    bin.exists().then_some(bin)
}

fn run_cli(bin: &Path, args: &[&str]) -> bool {
    Command::new(bin)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let same =
        |x: &str, y: &str| std::fs::read(path(x)).unwrap() == std::fs::read(path(y)).unwrap();
    let mut checked = Vec::new();
    let mut pass = true;
    let via;
    if let Some(bin) = cli_binary() {
        via = "spsim CLI";
        for (cmd, outs) in [
            ("simulate-hbt", ["--out-a", "--out-b"]),
            ("simulate-hom", ["--out-a", "--out-b"]),
            ("simulate-decay", ["--out-sync", "--out-det"]),
        ] {
            for (run, seed) in [("r1", "42"), ("r2", "42"), ("r3", "43")] {
                let files: Vec<String> = ["x", "y"]
                    .iter()
                    .map(|s| path(&format!("{cmd}-{run}-{s}.ptag")))
                    .collect();
                let args = [
                    cmd, "--pulses", "200000", "--seed", seed, outs[0], &files[0], outs[1],
                    &files[1],
                ];
                pass &= run_cli(&bin, &args);
            }
            for s in ["x", "y"] {
                let (a, b, c) = (
                    format!("{cmd}-r1-{s}.ptag"),
                    format!("{cmd}-r2-{s}.ptag"),
                    format!("{cmd}-r3-{s}.ptag"),
                );
                // The laser sync stream does not depend on the seed.
                let seeded = !(cmd == "simulate-decay" && s == "x");
                pass &= same(&a, &b) && (!seeded || !same(&a, &c));
                pass &= same(&format!("{a}.meta.json"), &format!("{b}.meta.json"));
            }
            checked.push(cmd);
        }
    } else {
        via = "library (spsim binary not built)";
        let e = EmitterParams::default();
        let det = DetectorParams::default();
        let names = ["hbt-a", "hbt-b", "hom-a", "hom-b", "sync", "det"];
        for (run, seed) in [(0, 42), (1, 42), (2, 43)] {
            let (a, b) = hbt_streams(&e, &HbtConfig::default(), 200_000, seed).unwrap();
            let (c, d) = hom_streams(&e, &HomConfig::default(), 200_000, seed).unwrap();
            let (s, t) = decay_streams(&e, &det, 200_000, seed).unwrap();
            for (name, stream) in names.iter().zip([a, b, c, d, s, t]) {
                write_tag_file(
                    &stream,
                    Path::new(&path(&format!("{name}-{run}.ptag"))),
                    TagFormat::Binary,
                )
                .unwrap();
            }
        }
        for name in names {
            pass &= same(&format!("{name}-0.ptag"), &format!("{name}-1.ptag"));
            pass &= name == "sync" || !same(&format!("{name}-0.ptag"), &format!("{name}-2.ptag"));
        }
        checked = vec!["hbt", "hom", "decay"];
    }
    Outcome::new(
        pass,
        format!(
            "{} re-run with seed 42 byte-identical, seed 43 different except the sync stream (via {via})",
            checked.join(", ")
        ),
    )
}
