//! Monte Carlo checks of the sampling layers against binomial, multinomial
//! and distribution-free oracles.

use spsim_core::analysis::decompose_peaks;
use spsim_core::correlator::correlate;
use spsim_core::emitter::{
    expected_g2_zero, generate_photons, p_two_for_g2, EmitterParams, PhotonOrigin, PhotonRecord,
};
use spsim_core::optics::{
    apply_detector, route_hom, simulate_hbt, DetectorParams, HbtConfig, HomConfig, Polarization,
};
use spsim_core::HistogramSpec;

fn within(x: f64, mean: f64, sd: f64, k: f64) -> bool {
    (x - mean).abs() <= k * sd
}

fn binomial_ok(hits: u64, n: u64, p: f64) -> bool {
    within(
        hits as f64,
        n as f64 * p,
        (n as f64 * p * (1.0 - p)).sqrt(),
        3.0,
    )
}

fn ideal_hbt(ratio: f64) -> HbtConfig {
    HbtConfig {
        splitting_ratio: ratio,
        det0: DetectorParams::ideal(),
        det1: DetectorParams::ideal(),
    }
}

fn delays(e: &EmitterParams, photons: &[PhotonRecord]) -> Vec<f64> {
    photons
        .iter()
        .map(|p| p.emission_time_ps as f64 - p.pulse_index as f64 * e.t_rep_ps)
        .collect()
}

#[test]
fn exponential_delay_mean() {
    let e = EmitterParams {
        tau1_ps: 2350.0,
        ..Default::default()
    };
    let photons = generate_photons(&e, 1_000_000, 11).unwrap();
    assert_eq!(photons.len(), 1_000_000);
    let d = delays(&e, &photons);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    assert!(within(mean, 2350.0, 2350.0 / 1000.0, 3.0), "mean {mean}");
    // Exponential: standard deviation equals the mean.
    assert!(
        (var.sqrt() / 2350.0 - 1.0).abs() < 0.01,
        "sd {}",
        var.sqrt()
    );
}

#[test]
fn exponential_delay_passes_ks() {
    let e = EmitterParams {
        tau1_ps: 3110.0,
        ..Default::default()
    };
    let mut d = delays(&e, &generate_photons(&e, 100_000, 12).unwrap());
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    let ks = d
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-x / 3110.0).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic critical value at significance 0.01.
    let critical = 1.6276 / n.sqrt();
    assert!(ks < critical, "D = {ks}, critical {critical}");
}

#[test]
fn photon_number_distribution() {
    let e = EmitterParams {
        p_one: 0.5,
        p_two: 0.0015,
        ..Default::default()
    };
    let n = 10_000_000u64;
    let photons = generate_photons(&e, n, 13).unwrap();
    let mut per_pulse = vec![0u8; n as usize];
    for p in &photons {
        per_pulse[p.pulse_index as usize] += 1;
    }
    let mut hist = [0u64; 3];
    for &c in &per_pulse {
        hist[c as usize] += 1;
    }
    assert!(binomial_ok(hist[0], n, 0.5), "{hist:?}");
    assert!(binomial_ok(hist[1], n, 0.5 - 0.0015), "{hist:?}");
    assert!(binomial_ok(hist[2], n, 0.0015), "{hist:?}");
    let second = photons
        .iter()
        .filter(|p| p.origin == PhotonOrigin::Reexcitation)
        .count() as u64;
    assert_eq!(second, hist[2]);
}

#[test]
fn generation_is_deterministic() {
    let e = EmitterParams {
        p_two: 0.01,
        ..Default::default()
    };
    assert_eq!(
        generate_photons(&e, 50_000, 5).unwrap(),
        generate_photons(&e, 50_000, 5).unwrap()
    );
    assert_ne!(
        generate_photons(&e, 50_000, 5).unwrap(),
        generate_photons(&e, 50_000, 6).unwrap()
    );
}

#[test]
fn hbt_split_is_binomial() {
    let e = EmitterParams::default();
    let photons = generate_photons(&e, 1_000_000, 14).unwrap();
    let span = 1_000_000 * 12_500;
    for (ratio, seed) in [(0.5, 1), (0.7, 2)] {
        let (a, b) = simulate_hbt(&photons, &ideal_hbt(ratio), span, seed).unwrap();
        assert_eq!(a.len() + b.len(), photons.len());
        assert!(
            binomial_ok(a.len() as u64, photons.len() as u64, ratio),
            "{ratio}: {}",
            a.len()
        );
    }
}

#[test]
fn hbt_zero_peak_matches_expected_g2() {
    let e = EmitterParams {
        p_two: p_two_for_g2(0.006, 1.0).unwrap(),
        ..Default::default()
    };
    let expected = expected_g2_zero(&e).unwrap();
    let n = 10_000_000;
    let photons = generate_photons(&e, n, 15).unwrap();
    let (a, b) = simulate_hbt(&photons, &ideal_hbt(0.5), n * 12_500, 16).unwrap();
    let spec = HistogramSpec::symmetric(50, 31_250).unwrap();
    let h = correlate(a.tags(), b.tags(), &spec).unwrap();
    let d = decompose_peaks(&h, 12_500, e.tau1_ps, 0.0).unwrap();
    let (g2, err) = d.ratio_to_outer(0).unwrap();
    assert!(
        within(g2, expected, err, 3.0),
        "g2 {g2} +- {err}, expected {expected}"
    );
}

/// One photon per pulse, emitted at 0 or `dt` after the pulse on alternate
/// pulses, so every same-bin pair behind a one-period delay line is `dt` apart.
fn alternating(n: u64, dt: u64) -> Vec<PhotonRecord> {
    (0..n)
        .map(|k| PhotonRecord {
            emission_time_ps: k * 12_500 + if k % 2 == 1 { dt } else { 0 },
            pulse_index: k,
            origin: PhotonOrigin::Primary,
        })
        .collect()
}

#[test]
fn pair_coincidence_probability_at_one_dip_constant() {
    let e = EmitterParams {
        tau_dip_ps: 190.0,
        v_intrinsic: 1.0,
        ..Default::default()
    };
    let photons = alternating(4_400_000, 190);
    let (a, b, stats) = route_hom(&photons, &e, &HomConfig::default(), 17).unwrap();
    assert_eq!(a.len() + b.len(), photons.len());
    assert!(stats.pairs >= 1_000_000, "{stats:?}");
    let p = 0.5 * (1.0 - (-1.0f64).exp());
    assert!((p - 0.3161).abs() < 5e-5);
    assert!(
        binomial_ok(stats.pair_coincidences, stats.pairs, p),
        "{stats:?}"
    );
}

#[test]
fn co_polarized_zero_delay_pairs_never_split() {
    let e = EmitterParams {
        v_intrinsic: 1.0,
        ..Default::default()
    };
    let (_, _, stats) = route_hom(&alternating(100_000, 0), &e, &HomConfig::default(), 18).unwrap();
    assert!(stats.pairs > 20_000);
    assert_eq!(stats.pair_coincidences, 0);
}

#[test]
fn cross_polarized_single_pair_statistics() {
    let e = EmitterParams::default();
    let cfg = HomConfig {
        polarization: Polarization::Cross,
        ..Default::default()
    };
    let photons = alternating(2, 40);
    let mut outcomes = [0u64; 3];
    let mut pairs = 0;
    for seed in 0..200_000 {
        let (a, b, stats) = route_hom(&photons, &e, &cfg, seed).unwrap();
        if stats.pairs == 1 {
            pairs += 1;
            outcomes[a.len()] += 1;
            assert_eq!(a.len() + b.len(), 2);
        }
    }
    // Outcomes indexed by photons in port A: both in B, split, both in A.
    assert!(binomial_ok(pairs, 200_000, 0.25), "{pairs}");
    assert!(binomial_ok(outcomes[1], pairs, 0.5), "{outcomes:?}");
    assert!(binomial_ok(outcomes[0], pairs, 0.25), "{outcomes:?}");
    assert!(binomial_ok(outcomes[2], pairs, 0.25), "{outcomes:?}");
}

#[test]
fn routing_conserves_photons() {
    let e = EmitterParams {
        p_two: 0.05,
        ..Default::default()
    };
    let photons = generate_photons(&e, 200_000, 19).unwrap();
    for pol in [Polarization::Co, Polarization::Cross] {
        let cfg = HomConfig {
            polarization: pol,
            bs1_ratio: 0.4,
            bs2_ratio: 0.6,
            ..Default::default()
        };
        let (a, b, stats) = route_hom(&photons, &e, &cfg, 20).unwrap();
        assert_eq!(a.len() + b.len(), photons.len());
        assert_eq!(2 * stats.pairs + stats.unpaired, photons.len() as u64);
        assert!(a.windows(2).all(|w| w[0] <= w[1]) && b.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn jitter_width_matches_fwhm() {
    let arrivals: Vec<u64> = (0..1_000_000u64).map(|k| 10_000 + k * 100_000).collect();
    let det = DetectorParams {
        jitter_fwhm_ps: 50.0,
        ..DetectorParams::ideal()
    };
    let tags = apply_detector(&arrivals, &det, 0, 1_000_000 * 100_000, 21).unwrap();
    assert_eq!(tags.len(), arrivals.len());
    let d: Vec<f64> = tags
        .tags()
        .iter()
        .zip(&arrivals)
        .map(|(t, &a)| t.timestamp_ps as f64 - a as f64)
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    assert!((sd / 21.233 - 1.0).abs() < 0.01, "sd {sd}");
    assert!(mean.abs() < 0.2, "mean {mean}");
}

#[test]
fn efficiency_thinning_is_binomial() {
    let arrivals: Vec<u64> = (0..1_000_000u64).map(|k| k * 1000).collect();
    let det = DetectorParams {
        efficiency: 0.5,
        ..DetectorParams::ideal()
    };
    let tags = apply_detector(&arrivals, &det, 1, 1_000_000_000, 22).unwrap();
    assert!(
        binomial_ok(tags.len() as u64, 1_000_000, 0.5),
        "{}",
        tags.len()
    );
}
