use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nanofcs::correlator::{correlate, correlate_stream, CorrelationCurve, MultiTauScheme};
use nanofcs::fit::{fit_fcs, fit_lifetime, fit_power_series, DecayHistogram, FcsFixed, PowerFitOptions, PowerSeriesData};
use nanofcs::io;
use nanofcs::pipeline::{self, PipelineConfig};
use nanofcs::report::RateTable;
use nanofcs::rng::derive_seed;
use nanofcs::sim::{simulate, SimConfig};
use nanofcs::solver::{calibrate_kappa, enhancement, propagate_uncertainty, EnhancementReport, Measured, SolvedColumn};
use nanofcs::{Error, MeasuredInputs, Result};

#[derive(Parser)]
#[command(name = "nanofcs", version, about = "Photokinetic rates from fluorescence correlation spectroscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a photon stream from a SimConfig JSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of independent acquisitions; files are suffixed `_rNN`.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Multi-tau correlation of a stream (cross-correlation of split streams).
    Correlate {
        #[arg(long)]
        input: PathBuf,
        /// Second stream; correlates `input` against it.
        #[arg(long)]
        with: Option<PathBuf>,
        /// MultiTauScheme JSON.
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the triplet/background FCS model to a correlation curve.
    FitFcs {
        #[arg(long)]
        input: PathBuf,
        /// Background-to-total intensity ratio held fixed.
        #[arg(long)]
        b_over_i: Option<f64>,
        /// Aspect ratio held fixed.
        #[arg(long)]
        s: Option<f64>,
        /// Lower bound on the blinking time [s].
        #[arg(long)]
        tau_bt_min: Option<f64>,
        /// Upper bound on the blinking time [s].
        #[arg(long)]
        tau_bt_max: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit F_M, T_eq and 1/τ_bT against excitation power.
    FitPowerseries {
        #[arg(long)]
        input: PathBuf,
        /// PowerFitOptions JSON.
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an IRF-convolved mono-exponential decay histogram.
    FitLifetime {
        #[arg(long)]
        input: PathBuf,
        /// IRF time constant [ns].
        #[arg(long, default_value_t = nanofcs::reference::TAU_IRF_NS)]
        tau0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert MeasuredInputs JSON into rates.
    SolveRates {
        #[arg(long)]
        input: PathBuf,
        /// Replace κ by the value that yields this quantum yield.
        #[arg(long)]
        calibrate_phi: Option<f64>,
        /// Replace κ by `gain` times the κ of this solved column.
        #[arg(long, requires = "kappa_gain")]
        kappa_from: Option<PathBuf>,
        #[arg(long, requires = "kappa_from")]
        kappa_gain: Option<f64>,
        #[arg(long, default_value_t = 0.0, requires = "kappa_from")]
        kappa_gain_sigma: f64,
        /// Monte-Carlo uncertainty propagation with this many draws.
        #[arg(long)]
        mc_draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full analysis from a PipelineConfig JSON.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rate table from solved columns.
    Report {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        aperture: Option<PathBuf>,
        /// Writes `report.md`, `report.csv` and, with an aperture column,
        /// `enhancement.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn suffixed(path: &Path, repeat: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_r{repeat:02}.{}", ext.to_string_lossy()),
        None => format!("{stem}_r{repeat:02}"),
    };
    path.with_file_name(name)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out, repeats } => {
            let cfg: SimConfig = io::read_json(&config)?;
            cfg.validate()?;
            match repeats {
                None => io::write_stream(&out, &simulate(&cfg)?),
                Some(0) => Err(Error::config("repeats must be at least 1")),
                Some(n) => {
                    for r in 0..n {
                        let c = SimConfig { seed: derive_seed(cfg.seed, r as u64), ..cfg.clone() };
                        io::write_stream(&suffixed(&out, r), &simulate(&c)?)?;
                    }
                    Ok(())
                }
            }
        }
        Command::Correlate { input, with, scheme, out } => {
            let scheme = match scheme {
                Some(p) => io::read_json(&p)?,
                None => MultiTauScheme::default(),
            };
            let a = io::read_stream(&input)?;
            let curve = match with {
                Some(b) => correlate(&a, &io::read_stream(&b)?, &scheme)?,
                None => correlate_stream(&a, &scheme)?,
            };
            io::write_text(&out, &curve.to_csv())
        }
        Command::FitFcs { input, b_over_i, s, tau_bt_min, tau_bt_max, out } => {
            let curve = CorrelationCurve::from_csv(&read_text(&input)?)?;
            let fit = fit_fcs(&curve, None, FcsFixed { b_over_i, s, tau_bt_min, tau_bt_max })?;
            io::write_json(&out, &fit)
        }
        Command::FitPowerseries { input, options, out } => {
            let data = PowerSeriesData::from_csv(&read_text(&input)?)?;
            let opts: PowerFitOptions = match options {
                Some(p) => io::read_json(&p)?,
                None => PowerFitOptions::default(),
            };
            io::write_json(&out, &fit_power_series(&data, opts)?)
        }
        Command::FitLifetime { input, tau0, out } => {
            let h = DecayHistogram::from_csv(&read_text(&input)?, tau0)?;
            io::write_json(&out, &fit_lifetime(&h)?)
        }
        Command::SolveRates { input, calibrate_phi, kappa_from, kappa_gain, kappa_gain_sigma, mc_draws, seed, out } => {
            let mut inputs: MeasuredInputs = io::read_json(&input)?;
            if let Some(phi) = calibrate_phi {
                inputs.kappa = Measured::exact(calibrate_kappa(phi, &inputs)?.value);
            }
            if let (Some(p), Some(g)) = (kappa_from, kappa_gain) {
                let k = io::read_json::<SolvedColumn>(&p)?.inputs.kappa;
                inputs.kappa = Measured::new(g * k.value, kappa_gain_sigma * k.value);
            }
            let column = match mc_draws {
                None => SolvedColumn::solve(inputs)?,
                Some(n) => {
                    let solved = propagate_uncertainty(&inputs, n, seed)?;
                    SolvedColumn { inputs, solved }
                }
            };
            io::write_json(&out, &column)
        }
        Command::Pipeline { config, out } => {
            let cfg: PipelineConfig = io::read_json(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::config("no output directory: pass --out or set output_dir"))?;
            let result = pipeline::run(&cfg, &dir)?;
            print!("{}", result.report_markdown());
            Ok(())
        }
        Command::Report { solution, aperture, out } => {
            let sol: SolvedColumn = io::read_json(&solution)?;
            let aper: Option<SolvedColumn> = aperture.as_deref().map(io::read_json).transpose()?;
            let enh: Option<EnhancementReport> = aper.as_ref().map(|a| enhancement(&sol, a)).transpose()?;
            let table = RateTable::new(&sol, aper.as_ref(), enh.as_ref());
            if let Some(e) = &enh {
                io::write_json(&out.join("enhancement.json"), e)?;
            }
            io::write_text(&out.join("report.csv"), &table.to_csv())?;
            io::write_text(&out.join("report.md"), &table.to_markdown())
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("NANOFCS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
