use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nested_sfbm::error::{Error, Result};
use nested_sfbm::experiments::{index_gk_on_dates, run_experiment, ExperimentSpec};
use nested_sfbm::io::{export_ohlc_dir, load_ohlc_dir, write_gk_dir, DateRange, Table};
use nested_sfbm::panel::ReturnsPanel;
use nested_sfbm::pipeline::{run_calibration_input, CalibrationInput, FactorSource, PipelineConfig};
use nested_sfbm::sim::{ModelConfig, NestedSimulator, Provenance};
use nested_sfbm::theory::{
    c_upsilon_h, check_regime, error_ratio_constants_h0, g_h, g_tilde_h, r0_bound, small_intermittency_v,
    small_intermittency_w, SfbmParams,
};

#[derive(Parser)]
#[command(name = "nested-sfbm", version, about = "Nested log S-fBM factor model: simulate, calibrate, analyse")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "NESTED_SFBM_THREADS")]
    threads: Option<usize>,
    /// Override the GMM lag count Q.
    #[arg(long = "lags-Q", global = true)]
    lags_q: Option<u32>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a panel from a model TOML.
    Simulate(SimulateArgs),
    /// Run the calibration pipeline on a panel directory or OHLC files.
    Calibrate(CalibrateArgs),
    /// Evaluate closed-form kernels and regime conditions.
    Theory(TheoryArgs),
    /// Run a named experiment and write its bundle.
    Experiment(ExperimentArgs),
    /// Garman-Klass variances of every OHLC file in a directory.
    Gk(GkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write fine.csv with every fine-grid return.
    #[arg(long)]
    fine: bool,
    /// Also write one synthetic OHLC file per stock into this directory.
    #[arg(long)]
    ohlc: Option<PathBuf>,
    /// First date of the synthetic OHLC calendar.
    #[arg(long, default_value = "2000-01-03")]
    start: NaiveDate,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Pipeline TOML; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `simulate`.
    #[arg(long, conflicts_with = "ohlc", required_unless_present = "ohlc")]
    panel: Option<PathBuf>,
    /// Directory of `<ticker>.csv` OHLC files.
    #[arg(long)]
    ohlc: Option<PathBuf>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    /// auto, proxy, debiased, off-diagonal or external:<csv>.
    #[arg(long = "factor-source")]
    factor_source: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file (stdout for JSON when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct TheoryArgs {
    /// g_H(z) and g̃_H(z).
    #[arg(long, num_args = 2, value_names = ["H", "Z"])]
    gh: Option<Vec<f64>>,
    /// Autocovariance of the log measure for unit intermittency.
    #[arg(long = "c-upsilon", num_args = 4, value_names = ["H", "T", "DELTA", "TAU"])]
    c_upsilon: Option<Vec<f64>>,
    /// Small-intermittency variances W and V of two equal-weight modes.
    #[arg(long, num_args = 7, value_names = ["H1", "LAMBDA1_SQ", "H2", "LAMBDA2_SQ", "T", "TAU", "DELTA"])]
    wv: Option<Vec<f64>>,
    /// Error-ratio constants of the H → 0 limit.
    #[arg(long = "error-ratio", num_args = 3, value_names = ["LAMBDA_SQ", "T", "DELTA"])]
    error_ratio: Option<Vec<f64>>,
    /// Regime conditions of a model TOML at lag `--tau`.
    #[arg(long)]
    regime: Option<PathBuf>,
    #[arg(long, default_value_t = 16.0)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "paper-scale")]
    paper_scale: bool,
}

#[derive(Args)]
struct GkArgs {
    #[arg(long)]
    ohlc: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Calibrate(a) => calibrate(a, cli.lags_q),
        Cmd::Theory(a) => theory(a),
        Cmd::Experiment(a) => experiment(a, cli.lags_q),
        Cmd::Gk(a) => gk(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn times(n: usize, step: f64) -> Vec<f64> {
    (1..=n).map(|t| t as f64 * step).collect()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = ModelConfig::from_toml(&read_config(&a.config)?)?;
    let spec = cfg.build(a.seed)?;
    let sim = NestedSimulator::new(&spec, a.seed)?;
    let summary = sim.summary(&[])?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.display().to_string(),
        source: e,
    })?;
    let n = spec.n_stocks();
    let stock_names: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    let t = times(spec.n_periods(), spec.period());

    let mut names = vec!["f".to_string()];
    names.extend(stock_names.iter().cloned());
    let mut cols = vec![summary.truth.factor_period_returns.clone()];
    cols.extend(summary.period_returns.iter().cloned());
    Table::new(t.clone(), names, cols)?.write(a.out.join("panel.csv"))?;
    Table::new(t.clone(), stock_names.clone(), summary.stock_qv.clone())?.write(a.out.join("qv.csv"))?;
    let mut names = vec!["factor_qv".to_string()];
    names.extend(stock_names.iter().map(|s| format!("residual_qv_{s}")));
    let mut cols = vec![summary.truth.factor_qv.clone()];
    cols.extend(summary.truth.residual_qv.iter().cloned());
    Table::new(t, names, cols)?.write(a.out.join("truth.csv"))?;

    write_text(&a.out.join("spec.toml"), &cfg.to_toml())?;
    let meta = json!({
        "seed": a.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "n_stocks": n,
        "n_periods": spec.n_periods(),
        "subdivisions": spec.subdivisions(),
        "period": spec.period(),
        "betas": spec.betas(),
        "sigmas": spec.sigmas(),
        "gammas": spec.gammas(),
    });
    write_text(&a.out.join("meta.json"), &(serde_json::to_string_pretty(&meta).expect("meta") + "\n"))?;

    if a.fine || a.ohlc.is_some() {
        let panel = sim.panel()?.panel;
        if a.fine {
            let mut names = vec!["f".to_string()];
            names.extend(stock_names.iter().cloned());
            let mut cols = vec![sim.factor_returns().to_vec()];
            cols.extend(panel.fine_returns.iter().cloned());
            Table::new(times(spec.n_fine(), spec.dt()), names, cols)?.write(a.out.join("fine.csv"))?;
        }
        if let Some(dir) = &a.ohlc {
            export_ohlc_dir(dir, &stock_names, &panel.fine_returns, spec.subdivisions(), a.start)?;
        }
    }
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn parse_factor_source(arg: &str) -> Result<(FactorSource, Option<PathBuf>)> {
    Ok(match arg {
        "auto" => (FactorSource::Auto, None),
        "proxy" => (FactorSource::Proxy, None),
        "debiased" => (FactorSource::DebiasedProxy, None),
        "off-diagonal" => (FactorSource::OffDiagonal, None),
        s => match s.strip_prefix("external:") {
            Some(p) if !p.is_empty() => (FactorSource::External { values: Vec::new() }, Some(PathBuf::from(p))),
            _ => {
                return Err(Error::Config(format!(
                    "unknown factor source `{s}`; expected auto, proxy, debiased, off-diagonal or external:<csv>"
                )))
            }
        },
    })
}

fn is_ohlc_file(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let header = text.lines().next().unwrap_or_default().to_ascii_lowercase();
    Ok(header.split(',').any(|c| c.trim() == "open"))
}

/// Stock columns of a `simulate` output directory, with fine returns when present.
struct PanelDir {
    tickers: Vec<String>,
    returns: Vec<Vec<f64>>,
    qv: Vec<Vec<f64>>,
    period: f64,
    fine: Option<ReturnsPanel>,
}

fn read_panel_dir(dir: &Path) -> Result<PanelDir> {
    let returns = Table::read(dir.join("panel.csv"))?;
    let qv = Table::read(dir.join("qv.csv"))?;
    let tickers: Vec<String> = qv.names.clone();
    let cols = tickers
        .iter()
        .map(|t| {
            returns
                .column(t)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Data(format!("panel.csv has no column {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let period = match returns.time.as_slice() {
        [a, b, ..] => b - a,
        [a] => *a,
        [] => return Err(Error::Data("panel.csv has no rows".into())),
    };
    let fine_path = dir.join("fine.csv");
    let fine = if fine_path.exists() {
        let table = Table::read(&fine_path)?;
        let s = table.time.len() / returns.time.len().max(1);
        let rows = tickers
            .iter()
            .map(|t| {
                table
                    .column(t)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::Data(format!("fine.csv has no column {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(ReturnsPanel::new(rows, s, period, Provenance::Synthetic)?.with_tickers(tickers.clone())?)
    } else {
        None
    };
    Ok(PanelDir {
        tickers,
        returns: cols,
        qv: qv.columns,
        period,
        fine,
    })
}

fn calibrate(a: CalibrateArgs, lags_q: Option<u32>) -> Result<()> {
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => toml::from_str(&read_config(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(q) = lags_q {
        cfg.gmm.q = q;
    }
    let external = match &a.factor_source {
        Some(s) => {
            let (src, path) = parse_factor_source(s)?;
            cfg.factor_source = src;
            path
        }
        None => None,
    };

    let panel_dir;
    let ohlc;
    let (input, dates) = if let Some(dir) = &a.panel {
        panel_dir = read_panel_dir(dir)?;
        let input = match &panel_dir.fine {
            Some(fine) => CalibrationInput::from_fine(fine)?,
            None => CalibrationInput::from_periods(
                panel_dir.tickers.clone(),
                panel_dir.returns.clone(),
                panel_dir.qv.clone(),
                panel_dir.period,
            )?,
        };
        (input, None)
    } else {
        let dir = a.ohlc.as_ref().expect("clap requires --panel or --ohlc");
        ohlc = load_ohlc_dir(dir, DateRange { start: a.start, end: a.end })?;
        for e in &ohlc.excluded {
            eprintln!("warning: excluded {} ({:.1}% of dates missing)", e.ticker, 100.0 * e.missing_fraction);
        }
        for (ticker, err) in ohlc.row_errors() {
            eprintln!("warning: {ticker} line {}: {}", err.line, err.message);
        }
        (CalibrationInput::from_ohlc(&ohlc)?, Some(ohlc.dates.clone()))
    };

    if let Some(path) = external {
        let values = if is_ohlc_file(&path)? {
            let dates = dates.as_ref().ok_or_else(|| {
                Error::Config("an OHLC external factor needs --ohlc so that dates can be aligned".into())
            })?;
            index_gk_on_dates(&path, dates)?
        } else {
            let t = Table::read(&path)?;
            t.columns
                .into_iter()
                .next()
                .ok_or_else(|| Error::Data(format!("{} has no value column", path.display())))?
        };
        cfg.factor_source = FactorSource::External { values };
    }

    let report = run_calibration_input(&input, &cfg)?;
    for w in &report.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    match (a.format, &a.out) {
        (Format::Json, None) => println!("{}", report.to_json()),
        (Format::Json, Some(p)) => write_text(p, &(report.to_json() + "\n"))?,
        (Format::Csv, Some(p)) => report.write_stock_csv(p)?,
        (Format::Csv, None) => return Err(Error::Config("--format csv needs --out".into())),
    }
    Ok(())
}

fn theory(a: TheoryArgs) -> Result<()> {
    let mut out = serde_json::Map::new();
    if let Some(v) = &a.gh {
        let (h, z) = (v[0], v[1]);
        SfbmParams::new(h, 1.0, 1.0)?;
        out.insert(
            "g".into(),
            json!({"H": h, "z": z, "g_H": g_h(h, z), "g_tilde_H": g_tilde_h(h, z), "r0_bound": r0_bound(h, z)}),
        );
    }
    if let Some(v) = &a.c_upsilon {
        SfbmParams::new(v[0], 1.0, v[1])?;
        out.insert(
            "c_upsilon".into(),
            json!({"H": v[0], "T": v[1], "delta": v[2], "tau": v[3], "value": c_upsilon_h(v[0], v[1], v[2], v[3])}),
        );
    }
    if let Some(v) = &a.wv {
        let modes = [
            (1.0, SfbmParams::new(v[0], v[1], v[4])?),
            (1.0, SfbmParams::new(v[2], v[3], v[4])?),
        ];
        out.insert(
            "small_intermittency".into(),
            json!({
                "W": small_intermittency_w(&modes, v[5], v[6])?,
                "V": small_intermittency_v(&modes, v[5], v[6])?,
            }),
        );
    }
    if let Some(v) = &a.error_ratio {
        out.insert(
            "error_ratio".into(),
            serde_json::to_value(error_ratio_constants_h0(v[0], v[1], v[2])?).expect("constants"),
        );
    }
    if let Some(p) = &a.regime {
        let spec = ModelConfig::from_toml(&read_config(p)?)?.build(a.seed)?;
        let report = check_regime(&spec, a.tau, spec.period())?;
        out.insert("regime".into(), serde_json::to_value(report).expect("regime"));
    }
    if out.is_empty() {
        return Err(Error::Config("nothing to evaluate; pass --gh, --c-upsilon, --wv, --error-ratio or --regime".into()));
    }
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn experiment(a: ExperimentArgs, lags_q: Option<u32>) -> Result<()> {
    let mut spec = ExperimentSpec::from_toml(&read_config(&a.config)?)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.paper_scale |= a.paper_scale;
    if let Some(dir) = &spec.data_dir {
        if dir.is_relative() {
            let base = a.config.parent().unwrap_or(Path::new("."));
            spec.data_dir = Some(base.join(dir));
        }
    }
    if lags_q.is_some() {
        eprintln!("warning: --lags-Q is ignored by experiments; their fits use the default lag count");
    }
    let bundle = run_experiment(&spec)?;
    if let Some(w) = bundle.summary.get("warnings").and_then(|w| w.as_array()) {
        for w in w {
            eprintln!("warning: {}", w.as_str().unwrap_or_default());
        }
    }
    bundle.write(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn gk(a: GkArgs) -> Result<()> {
    let panel = load_ohlc_dir(&a.ohlc, DateRange { start: a.start, end: a.end })?;
    write_gk_dir(&a.out, &panel)?;
    let summary = json!({
        "tickers": panel.tickers,
        "excluded": panel.excluded.iter().map(|e| &e.ticker).collect::<Vec<_>>(),
        "n_days": panel.n_periods(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}
