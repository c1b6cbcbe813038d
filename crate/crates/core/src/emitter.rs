//! Monte Carlo emission from a pulsed quantum dot.
//!
//! Each excitation pulse `k` starts at `k * t_rep_ps`. With probability
//! `p_one` the dot emits a photon after an exponential delay of mean
//! `tau1_ps`. Conditioned on that first emission, with probability
//! `p_two / p_one` it is re-excited and emits a second photon a further
//! exponential delay later. Blinking is not modeled.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{purpose, rng_for};

/// Pulses per independently seeded RNG block.
pub const PULSES_PER_BLOCK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    pub t_rep_ps: f64,
    /// Radiative lifetime.
    pub tau1_ps: f64,
    /// Exponential width of the two-photon interference dip.
    pub tau_dip_ps: f64,
    pub p_one: f64,
    pub p_two: f64,
    /// Ceiling on two-photon interference contrast.
    pub v_intrinsic: f64,
}

impl Default for EmitterParams {
    fn default() -> Self {
        EmitterParams {
            t_rep_ps: 12_500.0,
            tau1_ps: 3_110.0,
            tau_dip_ps: 190.0,
            p_one: 1.0,
            p_two: 0.0,
            v_intrinsic: 1.0,
        }
    }
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_rep_ps", self.t_rep_ps),
            ("tau1_ps", self.tau1_ps),
            ("tau_dip_ps", self.tau_dip_ps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_one) {
            return Err(invalid(format!(
                "p_one must lie in [0, 1], got {}",
                self.p_one
            )));
        }
        if !(self.p_two >= 0.0 && self.p_two <= self.p_one) {
            return Err(invalid(format!(
                "p_two must lie in [0, p_one], got {} with p_one {}",
                self.p_two, self.p_one
            )));
        }
        if !(0.0..=1.0).contains(&self.v_intrinsic) {
            return Err(invalid(format!(
                "v_intrinsic must lie in [0, 1], got {}",
                self.v_intrinsic
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhotonOrigin {
    Primary,
    Reexcitation,
}

impl PhotonOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            PhotonOrigin::Primary => "primary",
            PhotonOrigin::Reexcitation => "reexcitation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonRecord {
    pub emission_time_ps: u64,
    pub pulse_index: u64,
    pub origin: PhotonOrigin,
}

/// Generates the photons of pulses `0..n_pulses`, sorted by emission time.
///
/// Pulses are processed in blocks of [`PULSES_PER_BLOCK`], each with its own
/// seed derived from `seed`, so the output is a pure function of the inputs.
pub fn generate_photons(
    params: &EmitterParams,
    n_pulses: u64,
    seed: u64,
) -> Result<Vec<PhotonRecord>> {
    params.validate()?;
    generate_pulse_range(params, 0, n_pulses, seed)
}

/// Photons for pulses `first_pulse..first_pulse + n_pulses`, sorted.
///
/// Identical to the corresponding slice of a [`generate_photons`] run
/// as long as `first_pulse` is a multiple of [`PULSES_PER_BLOCK`].
pub fn generate_pulse_range(
    params: &EmitterParams,
    first_pulse: u64,
    n_pulses: u64,
    seed: u64,
) -> Result<Vec<PhotonRecord>> {
    params.validate()?;
    let end = first_pulse + n_pulses;
    let second_prob = if params.p_one > 0.0 {
        params.p_two / params.p_one
    } else {
        0.0
    };
    let mut out =
        Vec::with_capacity((n_pulses as f64 * (params.p_one + params.p_two) * 1.01) as usize + 16);

    let mut block = first_pulse / PULSES_PER_BLOCK;
    let mut pulse = first_pulse;
    while pulse < end {
        let mut rng = rng_for(seed, purpose::EMISSION, block);
        let block_start = block * PULSES_PER_BLOCK;
        let block_end = (block_start + PULSES_PER_BLOCK).min(end);
        // Burn the draws of pulses before `first_pulse` inside a partial
        // leading block; every pulse consumes exactly four draws.
        for _ in block_start..pulse {
            let _: [f64; 4] = [rng.gen(), rng.sample(Exp1), rng.gen(), rng.sample(Exp1)];
        }
        for k in pulse..block_end {
            let emit: f64 = rng.gen();
            let delay: f64 = rng.sample(Exp1);
            let reexcite: f64 = rng.gen();
            let delay2: f64 = rng.sample(Exp1);
            if emit >= params.p_one {
                continue;
            }
            let start = k as f64 * params.t_rep_ps;
            let first = delay * params.tau1_ps;
            out.push(PhotonRecord {
                emission_time_ps: (start + first).round() as u64,
                pulse_index: k,
                origin: PhotonOrigin::Primary,
            });
            if reexcite < second_prob {
                out.push(PhotonRecord {
                    emission_time_ps: (start + first + delay2 * params.tau1_ps).round() as u64,
                    pulse_index: k,
                    origin: PhotonOrigin::Reexcitation,
                });
            }
        }
        pulse = block_end;
        block += 1;
    }
    // Nearly sorted already (only long exponential tails overtake the next
    // pulse), which the stable merge sort handles in close to linear time.
    out.sort_by_key(|p| p.emission_time_ps);
    Ok(out)
}

/// Normalized zero-delay peak area of the HBT correlation in the low-flux
/// limit: mean number of same-pulse unordered pairs over the squared mean
/// photon number per pulse, `2 p_two / (p_one + p_two)^2`.
pub fn expected_g2_zero(params: &EmitterParams) -> Result<f64> {
    if !(params.p_one > 0.0) {
        return Err(invalid("p_one must be positive"));
    }
    let mean = params.p_one + params.p_two;
    Ok(2.0 * params.p_two / (mean * mean))
}

/// Inverse of [`expected_g2_zero`] in `p_two`: the smaller root of
/// `g (p_one + x)^2 = 2 x`.
pub fn p_two_for_g2(target_g2: f64, p_one: f64) -> Result<f64> {
    if !(p_one > 0.0 && p_one <= 1.0) {
        return Err(invalid("p_one must lie in (0, 1]"));
    }
    if target_g2 == 0.0 {
        return Ok(0.0);
    }
    // Largest reachable value is at p_two = p_one.
    if !(target_g2 > 0.0 && target_g2 <= 0.5 / p_one) {
        return Err(invalid(format!(
            "g2(0) = {target_g2} is not reachable with p_one = {p_one}"
        )));
    }
    let b = 2.0 - 2.0 * target_g2 * p_one;
    let c = target_g2 * p_one * p_one;
    let disc = (b * b - 4.0 * target_g2 * c).max(0.0);
    Ok(2.0 * c / (b + disc.sqrt()))
}

/// Debug dump: `pulse_index,origin,emission_time_ps`.
pub fn write_photon_csv(path: &Path, photons: &[PhotonRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "pulse_index,origin,emission_time_ps")?;
    for p in photons {
        writeln!(
            w,
            "{},{},{}",
            p.pulse_index,
            p.origin.as_str(),
            p.emission_time_ps
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p_one: f64, p_two: f64) -> EmitterParams {
        EmitterParams {
            tau1_ps: 2350.0,
            p_one,
            p_two,
            ..Default::default()
        }
    }

    #[test]
    fn no_emission_when_p_one_zero() {
        assert!(generate_photons(&params(0.0, 0.0), 1000, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn validation() {
        assert!(params(0.5, 0.6).validate().is_err());
        assert!(params(1.1, 0.0).validate().is_err());
        assert!(EmitterParams {
            tau1_ps: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EmitterParams {
            v_intrinsic: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(params(1.0, 0.003).validate().is_ok());
    }

    #[test]
    fn deterministic_and_sorted() {
        let p = params(0.8, 0.1);
        let a = generate_photons(&p, 20_000, 9).unwrap();
        let b = generate_photons(&p, 20_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a
            .windows(2)
            .all(|w| w[0].emission_time_ps <= w[1].emission_time_ps));
        assert_ne!(a, generate_photons(&p, 20_000, 10).unwrap());
        for ph in &a {
            assert!(ph.emission_time_ps as f64 >= ph.pulse_index as f64 * p.t_rep_ps);
        }
    }

    #[test]
    fn pulse_ranges_tile_the_full_run() {
        let p = params(0.9, 0.2);
        let full = generate_photons(&p, 3 * PULSES_PER_BLOCK + 100, 4).unwrap();
        let mut parts = generate_pulse_range(&p, 0, PULSES_PER_BLOCK, 4).unwrap();
        parts.extend(
            generate_pulse_range(&p, PULSES_PER_BLOCK, 2 * PULSES_PER_BLOCK + 100, 4).unwrap(),
        );
        parts.sort_by_key(|p| p.emission_time_ps);
        assert_eq!(full, parts);
        // Partial leading block skips draws correctly.
        let tail =
            generate_pulse_range(&p, 2 * PULSES_PER_BLOCK + 17, PULSES_PER_BLOCK + 83, 4).unwrap();
        let expect: Vec<_> = full
            .iter()
            .filter(|ph| ph.pulse_index >= 2 * PULSES_PER_BLOCK + 17)
            .copied()
            .collect();
        assert_eq!(tail, expect);
    }

    #[test]
    fn g2_formula_edges() {
        assert_eq!(expected_g2_zero(&params(1.0, 0.0)).unwrap(), 0.0);
        let g = expected_g2_zero(&params(1.0, 0.00302)).unwrap();
        assert!((g - 0.006).abs() < 1e-4, "{g}");
        let g2 = expected_g2_zero(&params(1.0, 0.00604)).unwrap();
        // First order only: the (p_one + p_two)^2 denominator costs ~2 p_two.
        assert!((g2 / g - 2.0).abs() < 0.02);
        assert!(expected_g2_zero(&params(0.0, 0.0)).is_err());
    }

    #[test]
    fn p_two_inversion() {
        for &(g, p1) in &[(0.006, 1.0), (0.02, 0.5), (0.3, 0.9)] {
            let x = p_two_for_g2(g, p1).unwrap();
            let back = expected_g2_zero(&params(p1, x)).unwrap();
            assert!((back - g).abs() < 1e-14, "{g} {p1} {back}");
        }
        assert!(p_two_for_g2(0.7, 1.0).is_err());
    }
}
