//! Flat `key = value` simulation config.
//!
//! ```text
//! # emitter
//! tau1_ps = 3110
//! p_two = 0.00302
//! # optics
//! polarization = co
//! det0_jitter_fwhm_ps = 35.36
//! ```
//!
//! Keys mirror the field names of [`EmitterParams`], [`HbtConfig`] and
//! [`HomConfig`]; detector fields take a `det0_` or `det1_` prefix, or `det_`
//! to set both. `g2_zero_target` sets `p_two` through
//! [`p_two_for_g2`](crate::emitter::p_two_for_g2) and excludes `p_two`.
//! Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::emitter::{p_two_for_g2, EmitterParams};
use crate::error::{Error, Result};
use crate::optics::{DetectorParams, HbtConfig, HomConfig, Polarization};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimConfig {
    pub emitter: EmitterParams,
    pub hbt: HbtConfig,
    pub hom: HomConfig,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn set_detector(
    d: &mut DetectorParams,
    field: &str,
    value: &str,
) -> std::result::Result<bool, String> {
    match field {
        "efficiency" => d.efficiency = num(value)?,
        "jitter_fwhm_ps" => d.jitter_fwhm_ps = num(value)?,
        "dark_rate_hz" => d.dark_rate_hz = num(value)?,
        "dead_time_ps" => {
            d.dead_time_ps = value
                .parse()
                .map_err(|_| format!("expected an integer, got {value:?}"))?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn num(value: &str) -> std::result::Result<f64, String> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("expected a number, got {value:?}"))
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        let mut seen = BTreeSet::new();
        let mut g2_target = None;
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line_start = offset;
            offset += raw.len();
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err(
                    line_start,
                    format!("expected key = value, got {line:?}"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(parse_err(line_start, format!("duplicate key {key}")));
            }
            let res = apply(&mut cfg, &mut g2_target, key, value);
            match res {
                Ok(true) => {}
                Ok(false) => return Err(parse_err(line_start, format!("unknown key {key}"))),
                Err(msg) => return Err(parse_err(line_start, format!("{key}: {msg}"))),
            }
        }
        if let Some(g) = g2_target {
            if seen.contains("p_two") {
                return Err(parse_err(
                    0,
                    "g2_zero_target and p_two are mutually exclusive",
                ));
            }
            cfg.emitter.p_two = p_two_for_g2(g, cfg.emitter.p_one)?;
        }
        cfg.emitter.validate()?;
        cfg.hbt.validate()?;
        cfg.hom.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        SimConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value, in a form [`SimConfig::parse`] reads back.
    pub fn render(&self) -> String {
        let e = &self.emitter;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("t_rep_ps", e.t_rep_ps.to_string());
        kv("tau1_ps", e.tau1_ps.to_string());
        kv("tau_dip_ps", e.tau_dip_ps.to_string());
        kv("p_one", e.p_one.to_string());
        kv("p_two", e.p_two.to_string());
        kv("v_intrinsic", e.v_intrinsic.to_string());
        kv("splitting_ratio", self.hbt.splitting_ratio.to_string());
        kv("delay_ps", self.hom.delay_ps.to_string());
        kv("bs1_ratio", self.hom.bs1_ratio.to_string());
        kv("bs2_ratio", self.hom.bs2_ratio.to_string());
        let pol = match self.hom.polarization {
            Polarization::Co => "co",
            Polarization::Cross => "cross",
        };
        kv("polarization", pol.to_string());
        for (i, d) in [(0, &self.hbt.det0), (1, &self.hbt.det1)] {
            kv(&format!("det{i}_efficiency"), d.efficiency.to_string());
            kv(
                &format!("det{i}_jitter_fwhm_ps"),
                d.jitter_fwhm_ps.to_string(),
            );
            kv(&format!("det{i}_dark_rate_hz"), d.dark_rate_hz.to_string());
            kv(&format!("det{i}_dead_time_ps"), d.dead_time_ps.to_string());
        }
        s
    }
}

fn apply(
    cfg: &mut SimConfig,
    g2_target: &mut Option<f64>,
    key: &str,
    value: &str,
) -> std::result::Result<bool, String> {
    let e = &mut cfg.emitter;
    match key {
        "t_rep_ps" => e.t_rep_ps = num(value)?,
        "tau1_ps" => e.tau1_ps = num(value)?,
        "tau_dip_ps" => e.tau_dip_ps = num(value)?,
        "p_one" => e.p_one = num(value)?,
        "p_two" => e.p_two = num(value)?,
        "v_intrinsic" => e.v_intrinsic = num(value)?,
        "g2_zero_target" => *g2_target = Some(num(value)?),
        "splitting_ratio" => cfg.hbt.splitting_ratio = num(value)?,
        "delay_ps" => {
            cfg.hom.delay_ps = value
                .parse()
                .map_err(|_| format!("expected an integer, got {value:?}"))?
        }
        "bs1_ratio" => cfg.hom.bs1_ratio = num(value)?,
        "bs2_ratio" => cfg.hom.bs2_ratio = num(value)?,
        "polarization" => {
            cfg.hom.polarization = value.parse::<Polarization>().map_err(|e| e.to_string())?
        }
        _ => {
            let (which, field): (&[u8], &str) = if let Some(f) = key.strip_prefix("det0_") {
                (&[0], f)
            } else if let Some(f) = key.strip_prefix("det1_") {
                (&[1], f)
            } else if let Some(f) = key.strip_prefix("det_") {
                (&[0, 1], f)
            } else {
                return Ok(false);
            };
            return set_both(cfg, which, field, value);
        }
    }
    Ok(true)
}

/// Detector settings apply to the same physical detectors in both setups.
fn set_both(
    cfg: &mut SimConfig,
    which: &[u8],
    field: &str,
    value: &str,
) -> std::result::Result<bool, String> {
    for &i in which {
        let (h, m) = if i == 0 {
            (&mut cfg.hbt.det0, &mut cfg.hom.det0)
        } else {
            (&mut cfg.hbt.det1, &mut cfg.hom.det1)
        };
        if !set_detector(h, field, value)? || !set_detector(m, field, value)? {
            return Ok(false);
        }
    }
    Ok(true)
}
