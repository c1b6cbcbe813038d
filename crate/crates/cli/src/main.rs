use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spsim_core::analysis::{
    efficiency_chain, parse_window_list, postselection_sweep, write_sweep_csv,
};
use spsim_core::config::SimConfig;
use spsim_core::correlator::{correlate, correlate_start_stop};
use spsim_core::fitting::{
    fit_hbt_with, fit_hom_with, fit_lifetime_with, FitResult, HbtFitOptions, HomFitOptions,
    LifetimeFitOptions,
};
use spsim_core::io::{
    read_histogram_csv, read_tag_file, write_histogram_csv, write_model_curve, write_tag_file,
    TagFormat,
};
use spsim_core::models::{
    decay_bin_fraction, hbt_model, hom_co_model, HbtModelParams, HomModelParams,
};
use spsim_core::optics::{sigma_from_fwhm, Polarization};
use spsim_core::pipeline::{decay_streams, hbt_streams, hom_streams};
use spsim_core::{CorrelationHistogram, HistogramSpec, TagStream};

#[derive(Parser)]
#[command(
    name = "spsim",
    version,
    about = "Simulate and analyse pulsed single-photon source correlation measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an HBT measurement and write both detectors' tag files.
    SimulateHbt(SimArgs),
    /// Simulate an HOM measurement behind an unbalanced interferometer.
    SimulateHom {
        #[command(flatten)]
        sim: SimArgs,
        /// Overrides the config's polarization.
        #[arg(long)]
        polarization: Option<String>,
    },
    /// Simulate a lifetime measurement: laser sync tags and detector 0 tags.
    SimulateDecay {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        pulses: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_sync: PathBuf,
        #[arg(long)]
        out_det: PathBuf,
    },
    /// Cross-correlate two tag files into a histogram CSV.
    Correlate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        bin_ps: i64,
        /// Half range: delays in [-range, range).
        #[arg(long, required_unless_present_all = ["min_ps", "max_ps"])]
        range_ps: Option<i64>,
        #[arg(
            long,
            requires = "max_ps",
            conflicts_with = "range_ps",
            allow_hyphen_values = true
        )]
        min_ps: Option<i64>,
        #[arg(
            long,
            requires = "min_ps",
            conflicts_with = "range_ps",
            allow_hyphen_values = true
        )]
        max_ps: Option<i64>,
        /// Count only the first b tag after each a tag.
        #[arg(long)]
        start_stop: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the pulsed HBT model to a histogram.
    FitG2 {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        trep_ps: f64,
    },
    /// Fit an exponential decay convolved with the IRF to a start-stop histogram.
    FitLifetime {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, allow_hyphen_values = true)]
        fit_min_ps: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        fit_max_ps: Option<i64>,
        /// Excitation period; models the tails of earlier pulses wrapping into the window.
        #[arg(long)]
        trep_ps: Option<f64>,
    },
    /// Fit the co-polarized HOM model to a histogram.
    FitHom {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        trep_ps: f64,
        #[arg(long)]
        fix_tau1_ps: Option<f64>,
        #[arg(long)]
        fix_v: Option<f64>,
        #[arg(long)]
        fix_tau_dip_ps: Option<f64>,
    },
    /// Visibility versus postselection window from co and cross histograms.
    VisibilitySweep {
        #[arg(long)]
        co: PathBuf,
        #[arg(long)]
        cross: PathBuf,
        /// Comma-separated total window widths, ascending.
        #[arg(long, allow_hyphen_values = true)]
        windows_ps: String,
        #[arg(long, default_value_t = 12_500)]
        trep_ps: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Photon rate and efficiency at the first lens from a detected rate.
    Efficiency {
        #[arg(long)]
        detected_hz: f64,
        #[arg(long)]
        setup_eff: f64,
        #[arg(long)]
        det_eff: f64,
        #[arg(long)]
        rep_hz: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Key-value config file; defaults apply when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    pulses: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_a: PathBuf,
    #[arg(long)]
    out_b: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    hist: PathBuf,
    #[arg(long)]
    irf_fwhm_ps: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the fitted curve at the bin centers.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> spsim_core::Result<SimConfig> {
    path.map_or_else(|| Ok(SimConfig::default()), SimConfig::load)
}

fn write_pair(a: &TagStream, b: &TagStream, out_a: &Path, out_b: &Path) -> spsim_core::Result<()> {
    write_tag_file(a, out_a, TagFormat::from_path(out_a))?;
    write_tag_file(b, out_b, TagFormat::from_path(out_b))
}

fn write_fit(result: &FitResult, path: &Path) -> spsim_core::Result<()> {
    std::fs::write(path, result.to_json()? + "\n")?;
    if !result.converged {
        eprintln!("warning: fit did not converge");
    }
    for name in &result.at_bounds {
        eprintln!("warning: {name} ended on its bound");
    }
    Ok(())
}

fn model_curve(
    path: Option<&Path>,
    hist: &CorrelationHistogram,
    f: impl Fn(f64) -> f64,
) -> spsim_core::Result<()> {
    match path {
        Some(p) => write_model_curve(p, hist.centers().into_iter().map(|c| (c, f(c)))),
        None => Ok(()),
    }
}

fn run(cmd: Command) -> spsim_core::Result<()> {
    match cmd {
        Command::SimulateHbt(s) => {
            let cfg = load_config(s.params.as_deref())?;
            let (a, b) = hbt_streams(&cfg.emitter, &cfg.hbt, s.pulses, s.seed)?;
            write_pair(&a, &b, &s.out_a, &s.out_b)
        }
        Command::SimulateHom {
            sim: s,
            polarization,
        } => {
            let mut cfg = load_config(s.params.as_deref())?;
            if let Some(p) = polarization {
                cfg.hom.polarization = p.parse::<Polarization>()?;
            }
            let (a, b) = hom_streams(&cfg.emitter, &cfg.hom, s.pulses, s.seed)?;
            write_pair(&a, &b, &s.out_a, &s.out_b)
        }
        Command::SimulateDecay {
            params,
            pulses,
            seed,
            out_sync,
            out_det,
        } => {
            let cfg = load_config(params.as_deref())?;
            let (sync, det) = decay_streams(&cfg.emitter, &cfg.hbt.det0, pulses, seed)?;
            write_pair(&sync, &det, &out_sync, &out_det)
        }
        Command::Correlate {
            a,
            b,
            bin_ps,
            range_ps,
            min_ps,
            max_ps,
            start_stop,
            out,
        } => {
            let spec = match (range_ps, min_ps, max_ps) {
                (Some(r), _, _) => HistogramSpec::symmetric(bin_ps, r)?,
                (None, Some(lo), Some(hi)) => HistogramSpec::new(bin_ps, lo, hi)?,
                _ => unreachable!("clap enforces a range"),
            };
            let sa = read_tag_file(&a, TagFormat::from_path(&a))?;
            let sb = read_tag_file(&b, TagFormat::from_path(&b))?;
            let hist = if start_stop {
                correlate_start_stop(sa.tags(), sb.tags(), &spec)?
            } else {
                correlate(sa.tags(), sb.tags(), &spec)?
            };
            write_histogram_csv(&hist, &out)
        }
        Command::FitG2 { fit, trep_ps } => {
            let hist = read_histogram_csv(&fit.hist)?;
            let opts = HbtFitOptions::new(trep_ps, fit.irf_fwhm_ps);
            let r = fit_hbt_with(&hist, &opts)?;
            write_fit(&r, &fit.out)?;
            let p = HbtModelParams {
                amplitude: r.get("amplitude"),
                g2_zero: r.get("g2_zero"),
                tau1_ps: r.get("tau1_ps"),
                t_rep_ps: trep_ps,
                n_side_peaks: opts.n_side_peaks,
                irf_fwhm_ps: fit.irf_fwhm_ps,
            };
            let w = hist.spec.bin_width_ps as f64;
            model_curve(fit.model_out.as_deref(), &hist, |t| hbt_model(t, &p) * w)
        }
        Command::FitLifetime {
            fit,
            fit_min_ps,
            fit_max_ps,
            trep_ps,
        } => {
            let hist = read_histogram_csv(&fit.hist)?;
            let range = match (fit_min_ps, fit_max_ps) {
                (None, None) => None,
                (lo, hi) => Some((
                    lo.unwrap_or(hist.spec.delay_min_ps),
                    hi.unwrap_or(hist.spec.delay_max_ps),
                )),
            };
            let r = fit_lifetime_with(
                &hist,
                &LifetimeFitOptions {
                    irf_fwhm_ps: fit.irf_fwhm_ps,
                    range,
                    period_ps: trep_ps,
                },
            )?;
            write_fit(&r, &fit.out)?;
            let (a, tau, t0, base) = (
                r.get("amplitude"),
                r.get("tau_ps"),
                r.get("t0_ps"),
                r.get("baseline"),
            );
            let sigma = sigma_from_fwhm(fit.irf_fwhm_ps);
            let half = hist.spec.bin_width_ps as f64 / 2.0;
            model_curve(fit.model_out.as_deref(), &hist, |c| {
                a * decay_bin_fraction(c - half - t0, c + half - t0, tau, sigma, trep_ps) + base
            })
        }
        Command::FitHom {
            fit,
            trep_ps,
            fix_tau1_ps,
            fix_v,
            fix_tau_dip_ps,
        } => {
            let hist = read_histogram_csv(&fit.hist)?;
            let mut opts = HomFitOptions::new(trep_ps, fit.irf_fwhm_ps);
            opts.fixed.tau1_ps = fix_tau1_ps;
            opts.fixed.v_ps = fix_v;
            opts.fixed.tau_dip_ps = fix_tau_dip_ps;
            let r = fit_hom_with(&hist, &opts)?;
            write_fit(&r, &fit.out)?;
            let p = HomModelParams {
                amplitude: r.get("amplitude"),
                tau1_ps: r.get("tau1_ps"),
                t_rep_ps: trep_ps,
                v_ps: r.get("v_ps"),
                tau_dip_ps: r.get("tau_dip_ps"),
                irf_fwhm_ps: fit.irf_fwhm_ps,
                n_side_peaks: opts.n_side_peaks,
            };
            let w = hist.spec.bin_width_ps as f64;
            model_curve(fit.model_out.as_deref(), &hist, |t| hom_co_model(t, &p) * w)
        }
        Command::VisibilitySweep {
            co,
            cross,
            windows_ps,
            trep_ps,
            out,
        } => {
            let windows = parse_window_list(&windows_ps)?;
            let co = read_histogram_csv(&co)?;
            let cross = read_histogram_csv(&cross)?;
            let results = postselection_sweep(&co, &cross, &windows, trep_ps)?;
            for r in &results {
                if let Err(e) = r {
                    eprintln!("warning: {e}");
                }
            }
            write_sweep_csv(&out, &results)
        }
        Command::Efficiency {
            detected_hz,
            setup_eff,
            det_eff,
            rep_hz,
            out,
        } => {
            let chain = efficiency_chain(detected_hz, setup_eff, det_eff, rep_hz)?;
            let json = serde_json::to_string_pretty(&chain)? + "\n";
            if let Some(p) = out {
                std::fs::write(p, &json)?;
            }
            print!("{json}");
            eprintln!("{}", chain.summary());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
