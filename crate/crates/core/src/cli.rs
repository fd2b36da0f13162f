//! Command-line runner: ingest, repair, fit, diagnose, export, synth.
//!
//! Exit codes: 0 success, 1 validation or usage, 2 infeasible repair,
//! 3 fit failure, 4 I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::alt::{fit_dumas, fit_mixture, fit_vgvv, MixtureFitConfig, VgvvFitConfig, VgvvModel};
use crate::arbitrage::repair_quotes;
use crate::calibration::{EngineConfig, WeightScheme};
use crate::diagnostics::{diagnose, export_grid, grid_rows, GridSpec, SurfaceHandle, SurfaceModel, TailSettings};
use crate::dupire::{build_surface, AhConfig};
use crate::error::Error;
use crate::heston::HestonParams;
use crate::market_data::{parse_quotes, synthetic_surface, Format, QuoteSurface, SyntheticSpec};
use crate::svi::{fit_surface, SviFitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Svi,
    Ah,
    Srv,
    Lnv,
    Mixture,
    Dumas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

/// Run settings read from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub surface: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: Option<ModelTag>,
    pub seed: Option<u64>,
    pub engine: EngineConfig,
    pub weights: WeightScheme,
    pub svi: Option<SviFitConfig>,
    pub ah: Option<AhConfig>,
    pub mixture_components: Option<usize>,
    pub tails: Option<TailSettings>,
    pub grid: GridSpec,
    /// Export times; defaults to the surface's expiries.
    pub times: Option<Vec<f64>>,
    pub bgm: Option<HestonParams>,
    pub synth: Option<SyntheticSpec>,
}

#[derive(Debug, Parser)]
#[command(name = "volforge", version, about = "Arbitrage-free implied volatility surfaces")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct IoArgs {
    /// Quote file (CSV or JSON by extension).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Output format; inferred from the output extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate quotes and echo the normalized surface.
    Ingest(IoArgs),
    /// Repair static arbitrage inside the bid-ask band.
    Repair {
        #[command(flatten)]
        io: IoArgs,
        /// Repair report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a surface and write it as JSON.
    Fit {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, value_enum)]
        model: Option<ModelTag>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-expiry fit details (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dense arbitrage scan plus fit report of a fitted surface.
    Diagnose {
        #[command(flatten)]
        io: IoArgs,
        /// Fitted surface JSON.
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Attach wing tails before scanning.
        #[arg(long)]
        tails: bool,
    },
    /// Export a plot-ready grid of a fitted surface.
    Export {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        surface: Option<PathBuf>,
        #[arg(long)]
        tails: bool,
    },
    /// Generate quotes from the Heston expansion.
    Synth {
        #[command(flatten)]
        io: IoArgs,
        /// Heston parameters (JSON).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Synthetic grid specification (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, e: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

/// Maps a library error to an exit code; `stage_code` covers errors that are
/// neither validation nor I/O.
fn classify(e: Error, stage_code: i32) -> Failure {
    let code = match &e {
        Error::Io(_) => 4,
        Error::InfeasibleWithinSpread { .. } => 2,
        Error::Schema(_)
        | Error::Validation { .. }
        | Error::DuplicateQuote { .. }
        | Error::Parse(_)
        | Error::EmptyInput
        | Error::InputDomain(_) => 1,
        _ => stage_code,
    };
    fail(code, e)
}

fn format_of(path: Option<&Path>, flag: Option<FormatArg>, default: Format) -> Format {
    if let Some(f) = flag {
        return f.into();
    }
    match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => default,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| fail(4, format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| fail(4, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

/// Writes to `path` or stdout.
fn write_out(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> crate::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| fail(4, format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w).map_err(|e| classify(e, 4))?;
            w.flush().map_err(|e| fail(4, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w).map_err(|e| classify(e, 4))
        }
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    write_out(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load_quotes(path: Option<&Path>) -> Result<QuoteSurface, Failure> {
    let path = path.ok_or_else(|| fail(1, "no input quote file given (--input or config)"))?;
    let format = format_of(Some(path), None, Format::Csv);
    parse_quotes(open(path)?, format).map_err(|e| classify(e, 1))
}

fn load_handle(path: Option<&Path>) -> Result<SurfaceHandle, Failure> {
    let path = path.ok_or_else(|| fail(1, "no surface file given (--surface or config)"))?;
    read_json(path)
}

#[derive(Serialize)]
struct RepairReport<'a> {
    repaired: bool,
    max_adjustment: f64,
    before: &'a crate::arbitrage::ArbitrageReport,
    after: &'a crate::arbitrage::ArbitrageReport,
}

fn configure_threads() {
    if let Some(n) = std::env::var("VOLFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Fits `model` with the settings in `cfg`; returns the handle and a
/// model-specific details document.
pub fn fit_model(
    quotes: &QuoteSurface,
    model: ModelTag,
    cfg: &RunConfig,
    engine: &EngineConfig,
) -> crate::Result<(SurfaceHandle, serde_json::Value)> {
    let (model, details) = match model {
        ModelTag::Svi => {
            let mut c = cfg.svi.clone().unwrap_or_default();
            if cfg.svi.is_none() {
                c.weights = cfg.weights;
            }
            let fit = fit_surface(quotes, &c)?;
            if let Some(bad) = fit.slices.iter().find(|s| s.error.is_some()) {
                return Err(Error::NoFeasibleFit(format!(
                    "slice T={} failed: {}",
                    bad.t,
                    bad.error.as_deref().unwrap_or("")
                )));
            }
            let details = serde_json::json!({ "slices": fit.slices, "calendar_violations": fit.calendar_violations });
            (SurfaceModel::Svi { surface: fit.surface }, details)
        }
        ModelTag::Ah => {
            let mut c = cfg.ah.clone().unwrap_or_default();
            c.engine = engine.clone();
            let (surface, reports) = build_surface(quotes, &c)?;
            (SurfaceModel::Ah { surface }, serde_json::json!({ "expiries": reports }))
        }
        ModelTag::Srv | ModelTag::Lnv => {
            let vm = if model == ModelTag::Srv {
                VgvvModel::Srv
            } else {
                VgvvModel::Lnv
            };
            let fit = fit_vgvv(
                quotes,
                &VgvvFitConfig {
                    model: vm,
                    weights: cfg.weights,
                    engine: engine.clone(),
                },
            )?;
            let details = serde_json::json!({
                "fit": fit.fit, "rmse_vol": fit.rmse_vol, "failed_quotes": fit.failed_quotes
            });
            let coeffs = fit.surface.coeffs;
            let m = if vm == VgvvModel::Srv {
                SurfaceModel::Srv { coeffs }
            } else {
                SurfaceModel::Lnv { coeffs }
            };
            (m, details)
        }
        ModelTag::Mixture => {
            let fit = fit_mixture(
                quotes,
                &MixtureFitConfig {
                    components: cfg.mixture_components.unwrap_or(2),
                    weights: cfg.weights,
                    engine: engine.clone(),
                },
            )?;
            let details = serde_json::json!({
                "fit": fit.fit, "rmse_vol": fit.rmse_vol, "martingale_gap": fit.martingale_gap
            });
            (SurfaceModel::Mixture { params: fit.params }, details)
        }
        ModelTag::Dumas => {
            let fit = fit_dumas(quotes, &cfg.weights)?;
            let details = serde_json::json!({
                "objective": fit.objective, "rmse_vol": fit.rmse_vol, "min_vol": fit.min_vol
            });
            (SurfaceModel::Dumas { surface: fit.surface }, details)
        }
    };
    let mut handle = SurfaceHandle::new(model, quotes);
    handle.tails = cfg.tails;
    Ok((handle, details))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg: RunConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let pick = |flag: &Option<PathBuf>, conf: &Option<PathBuf>| flag.clone().or_else(|| conf.clone());
    match cli.command {
        Command::Ingest(io) => {
            let quotes = load_quotes(pick(&io.input, &cfg.input).as_deref())?;
            let out = pick(&io.output, &cfg.output);
            let format = format_of(out.as_deref(), io.format, Format::Json);
            write_out(out.as_deref(), |w| quotes.write(w, format))
        }
        Command::Repair { io, report } => {
            let quotes = load_quotes(pick(&io.input, &cfg.input).as_deref())?;
            let outcome = repair_quotes(&quotes).map_err(|e| classify(e, 2))?;
            let out = pick(&io.output, &cfg.output);
            let format = format_of(out.as_deref(), io.format, Format::Csv);
            write_out(out.as_deref(), |w| outcome.surface.write(w, format))?;
            let rep = RepairReport {
                repaired: outcome.repaired,
                max_adjustment: outcome.max_adjustment,
                before: &outcome.before,
                after: &outcome.after,
            };
            match pick(&report, &cfg.report) {
                Some(p) => write_json(Some(&p), &rep),
                None => {
                    eprintln!("{}", serde_json::to_string_pretty(&rep).map_err(|e| fail(4, e))?);
                    Ok(())
                }
            }
        }
        Command::Fit {
            io,
            model,
            seed,
            report,
        } => {
            let quotes = load_quotes(pick(&io.input, &cfg.input).as_deref())?;
            let model = model
                .or(cfg.model)
                .ok_or_else(|| fail(1, "no model given (--model or config)"))?;
            let mut engine = cfg.engine.clone();
            if let Some(s) = seed.or(cfg.seed) {
                engine.seed = s;
            }
            let (handle, details) = fit_model(&quotes, model, &cfg, &engine).map_err(|e| classify(e, 3))?;
            write_json(pick(&io.output, &cfg.output).as_deref(), &handle)?;
            if let Some(p) = pick(&report, &cfg.report) {
                write_json(Some(&p), &details)?;
            }
            Ok(())
        }
        Command::Diagnose { io, surface, tails } => {
            let mut handle = load_handle(pick(&surface, &cfg.surface).as_deref())?;
            if tails {
                handle.tails = Some(cfg.tails.unwrap_or_default());
            }
            let quotes = load_quotes(pick(&io.input, &cfg.input).as_deref())?;
            let bundle = diagnose(&handle, &quotes, &cfg.grid);
            write_json(pick(&io.output, &cfg.output).as_deref(), &bundle)
        }
        Command::Export { io, surface, tails } => {
            let mut handle = load_handle(pick(&surface, &cfg.surface).as_deref())?;
            if tails {
                handle.tails = Some(cfg.tails.unwrap_or_default());
            }
            let times = cfg.times.clone().unwrap_or_else(|| handle.expiries());
            let sd = handle
                .term
                .last()
                .ok_or_else(|| fail(1, "surface has no expiries"))
                .and_then(|p| handle.atm_sd(p.t).map_err(|e| classify(e, 3)))?;
            let xs = cfg.grid.strikes(sd);
            let rows = grid_rows(&handle, &times, &xs).map_err(|e| classify(e, 1))?;
            let out = pick(&io.output, &cfg.output);
            let format = format_of(out.as_deref(), io.format, Format::Csv);
            write_out(out.as_deref(), |w| export_grid(&rows, format, w))
        }
        Command::Synth { io, params, spec } => {
            let params: HestonParams = match (params, &cfg.bgm) {
                (Some(p), _) => read_json(&p)?,
                (None, Some(p)) => p.clone(),
                (None, None) => return Err(fail(1, "no Heston parameters given (--params or config)")),
            };
            let spec: SyntheticSpec = match (spec, &cfg.synth) {
                (Some(p), _) => read_json(&p)?,
                (None, Some(s)) => s.clone(),
                (None, None) => return Err(fail(1, "no synthetic spec given (--spec or config)")),
            };
            let quotes = synthetic_surface(&params, &spec).map_err(|e| classify(e, 1))?;
            let out = pick(&io.output, &cfg.output);
            let format = format_of(out.as_deref(), io.format, Format::Csv);
            write_out(out.as_deref(), |w| quotes.write(w, format))
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
