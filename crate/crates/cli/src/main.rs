use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lspart::basis::Family;
use lspart::error::{LsError, Result};
use lspart::fit::Estimator;
use lspart::harness::{
    dgp_eval, emit_plotdata, metrics_csv, model_dims, read_csv_file, run_fit, run_simulation_with, KappaChoice,
    RunConfig, SimulationSpec,
};
use lspart::inference::{BandMethod, HcKind};
use lspart::partition::KnotRule;

/// Partitioning-based least-squares regression with robust bias correction.
#[derive(Parser, Debug)]
#[command(name = "lspart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a dataset and report estimates, intervals and bands as JSON.
    Fit {
        /// CSV with header `x1,...,xd,y`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo study on one of the built-in regression models.
    Simulate {
        /// Model id, 1 to 7.
        #[arg(long)]
        model: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Write the metrics table as CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Run replications on one thread.
        #[arg(long)]
        serial: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// bspline, pp or haar.
    #[arg(long, default_value = "bspline", value_parser = parse_family)]
    family: Family,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Order of the bias-correction basis; defaults to m + 1.
    #[arg(long = "m-tilde")]
    m_tilde: Option<usize>,
    /// Cells per axis: an integer, `rot` or `dpi`.
    #[arg(long, default_value = "dpi", value_parser = parse_kappa)]
    kappa: KappaChoice,
    /// Upper bound on the selected cells per axis (5 by default for three covariates).
    #[arg(long = "kappa-max")]
    kappa_max: Option<usize>,
    /// Derivative multi-index, e.g. `1,0`.
    #[arg(long, value_delimiter = ',')]
    q: Vec<usize>,
    /// Estimators to report, e.g. `0,2`.
    #[arg(long = "j", value_delimiter = ',', default_value = "0,1,2,3")]
    j: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = BandArg::Plugin)]
    band: BandArg,
    /// Number of simulated draws for the band.
    #[arg(long = "B", default_value_t = 1000)]
    draws: usize,
    /// Band grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value = "hc0", value_parser = parse_hc)]
    hc: HcKind,
    /// even or quantile.
    #[arg(long, default_value = "even", value_parser = parse_knots)]
    knots: KnotRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pointwise evaluation points: coordinates separated by `,`, points by `;`.
    #[arg(long, value_parser = parse_points)]
    eval: Option<Points>,
    /// JSON output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the band of the first estimator as plot CSV.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: LsError| e.to_string())
}

fn parse_kappa(s: &str) -> std::result::Result<KappaChoice, String> {
    s.parse().map_err(|e: LsError| e.to_string())
}

fn parse_hc(s: &str) -> std::result::Result<HcKind, String> {
    s.parse().map_err(|e: LsError| e.to_string())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BandArg {
    Plugin,
    Bootstrap,
    None,
}

impl BandArg {
    fn method(self) -> Option<BandMethod> {
        match self {
            BandArg::Plugin => Some(BandMethod::Plugin),
            BandArg::Bootstrap => Some(BandMethod::Bootstrap),
            BandArg::None => None,
        }
    }
}

fn parse_knots(s: &str) -> std::result::Result<KnotRule, String> {
    match s.to_ascii_lowercase().as_str() {
        "even" => Ok(KnotRule::EvenlySpaced),
        "quantile" => Ok(KnotRule::QuantileSpaced),
        _ => Err(format!("knots must be even or quantile, got '{s}'")),
    }
}

#[derive(Clone, Debug)]
struct Points(Vec<Vec<f64>>);

fn parse_points(s: &str) -> std::result::Result<Points, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("bad coordinate '{v}': {e}"))
                })
                .collect()
        })
        .collect::<std::result::Result<_, _>>()
        .map(Points)
}

impl CommonArgs {
    fn config(&self) -> Result<RunConfig> {
        let estimators = self
            .j
            .iter()
            .map(|&j| Estimator::from_index(j))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunConfig {
            family: self.family,
            m: self.m,
            m_tilde: self.m_tilde,
            knots: self.knots,
            kappa: self.kappa,
            kappa_max: self.kappa_max,
            q: self.q.clone(),
            estimators,
            alpha: self.alpha,
            band: self.band.method(),
            draws: self.draws,
            grid: self.grid,
            hc: self.hc,
            seed: self.seed,
            eval_points: self.eval.clone().map(|p| p.0),
            bounds: None,
            unbounded_intervals: false,
        })
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| LsError::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, common } => {
            let cfg = common.config()?;
            let dataset = read_csv_file(&data)?;
            let report = run_fit(&cfg, &dataset)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(plot) = &common.plot {
                let band = report
                    .bands
                    .first()
                    .ok_or_else(|| LsError::Config("--plot needs a band; drop --band none".into()))?;
                write_output(Some(plot), &emit_plotdata(band, None))?;
            }
            let json = serde_json::to_string_pretty(&report).map_err(|e| LsError::Io(e.to_string()))?;
            write_output(common.out.as_deref(), &json)
        }
        Command::Simulate {
            model,
            n,
            reps,
            metrics,
            serial,
            common,
        } => {
            let mut cfg = common.config()?;
            let d = model_dims(model)?;
            cfg.bounds = Some(vec![(0.0, 1.0); d]);
            let spec = SimulationSpec { model, n, reps };
            let report = run_simulation_with(&cfg, &spec, !serial)?;
            if report.failures > 0 {
                eprintln!("warning: {} of {reps} replications failed", report.failures);
            }
            if let Some(path) = &metrics {
                write_output(Some(path), &metrics_csv(&report))?;
            }
            if let Some(plot) = &common.plot {
                // one illustrative fit on the first replication's data
                let (x, y) = lspart::harness::dgp_sample(model, n, lspart::harness::replication_seed(cfg.seed, 0))?;
                let names = (1..=d).map(|l| format!("x{l}")).chain(["y".to_string()]).collect();
                let fit = run_fit(&cfg, &lspart::harness::Dataset { names, x, y })?;
                let band = fit
                    .bands
                    .first()
                    .ok_or_else(|| LsError::Config("--plot needs a band; drop --band none".into()))?;
                let truth: Vec<f64> = band.grid.iter().map(|p| dgp_eval(model, p)).collect::<Result<_>>()?;
                write_output(Some(plot), &emit_plotdata(band, Some(&truth)))?;
            }
            let json = serde_json::to_string_pretty(&report).map_err(|e| LsError::Io(e.to_string()))?;
            write_output(common.out.as_deref(), &json)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
