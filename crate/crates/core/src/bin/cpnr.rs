use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use cpnr_core::backtest::{pass_filter, run_stock_backtest, StockReport};
use cpnr_core::config::RunConfig;
use cpnr_core::engine::{cpnr, exact_first_passage, CpnrQuery};
use cpnr_core::error::{Error, Result};
use cpnr_core::ingest::{list_price_files, load_price_series, symbol_of, write_price_csv, PriceSeries};
use cpnr_core::markov::{build_state_space, estimate_transition_matrix, ModelDump, StateSpace, TransitionModel};
use cpnr_core::optimizer::{enumerate_indifference_set, min_maintenance_ratio, select_optimal};
use cpnr_core::report::{aggregate_reports, QUANTILE_RULE};
use cpnr_core::synth::{lattice_chain, random_walk_chain, simulate_prices};

#[derive(Parser, Debug)]
#[command(name = "cpnr", version, about = "Margin-loan risk engine: CPNR, margin system deduction, backtests")]
struct Cli {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable); applied after the file and the named flags
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    history: Option<usize>,
    #[arg(long, global = true)]
    g: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long = "n-loans", global = true)]
    n_loans: Option<usize>,
    #[arg(long, global = true)]
    rate: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check price CSV files
    Validate {
        #[arg(long, conflicts_with = "prices_dir", required_unless_present = "prices_dir")]
        prices: Option<PathBuf>,
        #[arg(long = "prices-dir")]
        prices_dir: Option<PathBuf>,
    },
    /// Fit a chain on the last `history` closes and write it as JSON
    Fit {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CPNR of one margin system
    Cpnr {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        q0: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        w: f64,
        /// Also compute the exact first-passage CPNR
        #[arg(long = "diagnostic-exact")]
        diagnostic_exact: bool,
    },
    /// Deduce a margin system, or the minimal maintenance ratio when --q0 and --delta are given
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, requires = "delta")]
        q0: Option<f64>,
        #[arg(long, requires = "q0")]
        delta: Option<f64>,
        /// Write the indifference set as CSV
        #[arg(long = "set-out")]
        set_out: Option<PathBuf>,
    },
    /// Rolling backtest over every price file in a directory
    Backtest {
        #[arg(long = "prices-dir")]
        prices_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the summary tables from a backtest output directory
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate chain-driven synthetic closes
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        /// Reflecting random walk LEVELS,BASE,TICK,P_UP,P_DOWN instead of an explicit chain
        #[arg(long, value_name = "SPEC", conflicts_with = "lattice")]
        walk: Option<String>,
        /// Lattice chain LEVELS,BASE,TICK with daily moves drawn from --steps
        #[arg(long, value_name = "SPEC", requires = "steps")]
        lattice: Option<String>,
        /// Probabilities of moving -J..=J levels, comma-separated
        #[arg(long, requires = "lattice")]
        steps: Option<String>,
        /// Start state, zero-based (default: middle state)
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        len: usize,
        #[arg(long, default_value = "SYN")]
        symbol: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Fit the chain on the last `history` closes of this CSV
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Chain JSON as written by `fit`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated state representatives
    #[arg(long, requires = "matrix")]
    reps: Option<String>,
    /// Transition matrix rows separated by `;`, entries by `,`
    #[arg(long, requires = "reps")]
    matrix: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    /// Purchase price (default: last close when --prices is used)
    #[arg(long)]
    p0: Option<f64>,
    /// Current state, zero-based (default: state of p0)
    #[arg(long)]
    state: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let named: [(&str, Option<String>); 8] = [
        ("alpha", cli.alpha.map(|v| v.to_string())),
        ("history", cli.history.map(|v| v.to_string())),
        ("g", cli.g.map(|v| v.to_string())),
        ("horizon", cli.horizon.map(|v| v.to_string())),
        ("n_loans", cli.n_loans.map(|v| v.to_string())),
        ("rate", cli.rate.map(|v| v.to_string())),
        ("seed", cli.seed.map(|v| v.to_string())),
        ("threads", cli.threads.map(|v| v.to_string())),
    ];
    for (key, value) in named {
        if let Some(value) = value {
            cfg.set(key, &value)?;
        }
    }
    for assignment in &cli.overrides {
        cfg.apply_assignment(assignment)?;
    }
    if cli.verbose > cfg.verbosity {
        cfg.verbosity = cli.verbose;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Validate { prices, prices_dir } => cmd_validate(prices, prices_dir),
        Command::Fit { prices, out } => cmd_fit(&cfg, &prices, out),
        Command::Cpnr {
            model,
            point,
            q0,
            delta,
            w,
            diagnostic_exact,
        } => cmd_cpnr(&cfg, &model, &point, q0, delta, w, diagnostic_exact),
        Command::Optimize {
            model,
            point,
            q0,
            delta,
            set_out,
        } => cmd_optimize(&cfg, &model, &point, q0.zip(delta), set_out),
        Command::Backtest { prices_dir, out } => cmd_backtest(&cfg, prices_dir, out),
        Command::Report { input, out } => cmd_report(&input, &out),
        Command::Synth {
            model,
            walk,
            lattice,
            steps,
            start,
            len,
            symbol,
            out,
        } => {
            let chain = match (walk, lattice.zip(steps)) {
                (Some(spec), _) => Some(parse_walk(&spec)?),
                (None, Some((spec, steps))) => Some(parse_lattice(&spec, &steps)?),
                (None, None) => None,
            };
            cmd_synth(&cfg, &model, chain, start, len, &symbol, out)
        }
    }
}

fn cmd_validate(prices: Option<PathBuf>, prices_dir: Option<PathBuf>) -> Result<()> {
    let paths = match (prices, prices_dir) {
        (Some(p), _) => vec![p],
        (None, Some(dir)) => list_price_files(&dir)?,
        (None, None) => return Err(Error::NoInput("no input given".into())),
    };
    let mut first_error = None;
    for path in &paths {
        match load_price_series(path, &symbol_of(path)) {
            Ok(series) => println!("ok\t{}\t{} rows", path.display(), series.len()),
            Err(e) => {
                println!("invalid\t{}\t{e}", path.display());
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad number `{s}` in {what}")))
        })
        .collect()
}

fn fit_recent(cfg: &RunConfig, series: &PriceSeries) -> Result<TransitionModel> {
    let closes = series.closes();
    if closes.len() < cfg.history {
        return Err(Error::InsufficientData {
            required: cfg.history,
            available: closes.len(),
        });
    }
    let window = &closes[closes.len() - cfg.history..];
    let space = build_state_space(window, cfg.g)?;
    estimate_transition_matrix(window, &space)
}

/// Resolves the model, and the purchase price when it comes from a price file.
fn load_model(cfg: &RunConfig, args: &ModelArgs) -> Result<(TransitionModel, Option<f64>)> {
    if let Some(path) = &args.prices {
        let series = load_price_series(path, &symbol_of(path))?;
        let model = fit_recent(cfg, &series)?;
        return Ok((model, series.closes().last().copied()));
    }
    if let Some(path) = &args.model {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dump: ModelDump = serde_json::from_str(&text)?;
        return Ok((TransitionModel::from_dump(&dump)?, None));
    }
    if let (Some(reps), Some(matrix)) = (&args.reps, &args.matrix) {
        let reps = parse_list(reps, "--reps")?;
        let rows: Vec<Vec<f64>> = matrix
            .split(';')
            .map(|r| parse_list(r, "--matrix"))
            .collect::<Result<_>>()?;
        let n = reps.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!("matrix must be {n}x{n}")));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let model = TransitionModel::from_matrix(StateSpace::from_reps(reps)?, DMatrix::from_row_slice(n, n, &flat))?;
        return Ok((model, None));
    }
    Err(Error::NoInput("give --prices, --model, or --reps with --matrix".into()))
}

fn resolve_point(model: &TransitionModel, point: &PointArgs, last_close: Option<f64>) -> Result<(f64, usize)> {
    let p0 = point
        .p0
        .or(last_close)
        .ok_or_else(|| Error::InvalidParameter("--p0 is required".into()))?;
    let h = point.state.unwrap_or_else(|| model.space().state_of(p0));
    Ok((p0, h))
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn print_json(value: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, prices: &Path, out: Option<PathBuf>) -> Result<()> {
    let series = load_price_series(prices, &symbol_of(prices))?;
    let dump = serde_json::to_value(fit_recent(cfg, &series)?.dump())?;
    match out {
        Some(path) => write_json(&path, &dump),
        None => print_json(&dump),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_cpnr(
    cfg: &RunConfig,
    model_args: &ModelArgs,
    point: &PointArgs,
    q0: f64,
    delta: f64,
    w: f64,
    diagnostic_exact: bool,
) -> Result<()> {
    let (model, last) = load_model(cfg, model_args)?;
    let (p0, h) = resolve_point(&model, point, last)?;
    let query = CpnrQuery {
        model: &model,
        h,
        p0,
        q0,
        delta,
        w,
        rate: cfg.rate,
        horizon: cfg.horizon,
    };
    let result = cpnr(&query)?;
    let mut value = serde_json::to_value(&result)?;
    if diagnostic_exact {
        value["exact"] = serde_json::to_value(exact_first_passage(&query)?)?;
    }
    print_json(&value)
}

fn cmd_optimize(
    cfg: &RunConfig,
    model_args: &ModelArgs,
    point: &PointArgs,
    cash: Option<(f64, f64)>,
    set_out: Option<PathBuf>,
) -> Result<()> {
    let (model, last) = load_model(cfg, model_args)?;
    let (p0, h) = resolve_point(&model, point, last)?;
    let grid = cfg.grid()?;

    if let Some((q0, delta)) = cash {
        let w = min_maintenance_ratio(&model, h, p0, q0, delta, cfg.rate, cfg.horizon, &grid)?;
        return print_json(&json!({
            "p0": p0,
            "state": h,
            "q0": q0,
            "delta": delta,
            "min_w": w,
            "config": cfg.to_lines(),
        }));
    }

    let set = enumerate_indifference_set(&model, h, p0, cfg.rate, cfg.horizon, &grid)?;
    if let Some(path) = &set_out {
        let mut out = open_out(path)?;
        for line in metadata(cfg) {
            writeln!(out, "# {line}").map_err(|e| Error::io(path, e))?;
        }
        set.write_csv(out)?;
    }
    let selected = if set.is_empty() {
        Value::Null
    } else {
        let triple = select_optimal(&set)?;
        let value = set.elements.iter().find(|e| e.triple == triple).map(|e| e.cpnr);
        json!({ "m": triple.m(), "delta": triple.delta(), "w": triple.w(), "cpnr": value })
    };
    print_json(&json!({
        "p0": p0,
        "state": h,
        "selected": selected,
        "set_size": set.len(),
        "evaluated": set.evaluated,
        "config": cfg.to_lines(),
    }))
}

fn metadata(cfg: &RunConfig) -> Vec<String> {
    cfg.to_lines()
}

fn stock_summary(r: &StockReport) -> Value {
    json!({
        "symbol": r.symbol,
        "loans": r.loans.len(),
        "passed": r.passed,
        "neg_freq_deduced": r.neg_freq_deduced,
        "neg_freq_required": r.neg_freq_required,
        "cond_neg_freq_deduced": r.cond_neg_freq_deduced,
        "cond_neg_freq_required": r.cond_neg_freq_required,
        "n_calls_deduced": r.n_calls_deduced,
        "n_calls_required": r.n_calls_required,
        "infeasible_dates": r.infeasible_dates,
    })
}

/// Writes the five tables and `summary.json`; tables cover passing stocks,
/// or every stock when none passed.
fn write_summary(out: &Path, config: &[String], reports: Vec<StockReport>, skipped: &[Value]) -> Result<()> {
    let stocks: Vec<Value> = reports.iter().map(stock_summary).collect();
    let total = reports.len();
    let (passing, failing) = pass_filter(reports);
    let n_passed = passing.len();
    let (basis, tables) = if passing.is_empty() {
        log::warn!("no stock passed the out-of-sample test; tables cover all stocks");
        let all: Vec<StockReport> = failing;
        ("all", aggregate_reports(&all)?)
    } else {
        ("passing", aggregate_reports(&passing)?)
    };

    let mut meta: Vec<String> = config.to_vec();
    meta.push(format!("stocks={total}"));
    meta.push(format!("passed={n_passed}"));
    meta.push(format!("tables_over={basis}"));
    tables.write_dir(out, &meta)?;

    write_json(
        &out.join("summary.json"),
        &json!({
            "config": config,
            "quantile_rule": QUANTILE_RULE,
            "stocks": stocks,
            "skipped": skipped,
            "n_stocks": total,
            "n_passed": n_passed,
            "tables_over": basis,
            "tables": tables,
        }),
    )
}

fn cmd_backtest(cfg: &RunConfig, prices_dir: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let prices_dir = prices_dir
        .or_else(|| cfg.prices_dir.clone())
        .ok_or_else(|| Error::NoInput("--prices-dir is required".into()))?;
    let out = out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::InvalidParameter("--out is required".into()))?;
    let bt = cfg.backtest_config()?;
    let paths = list_price_files(&prices_dir)?;
    let series: Vec<PriceSeries> = paths
        .iter()
        .map(|p| load_price_series(p, &symbol_of(p)))
        .collect::<Result<_>>()?;

    let results: Vec<(String, Result<StockReport>)> = series
        .par_iter()
        .map(|s| {
            log::info!("backtesting {} ({} closes)", s.symbol(), s.len());
            (s.symbol().to_string(), run_stock_backtest(s, &bt))
        })
        .collect();

    let config = cfg.to_lines();
    let stocks_dir = out.join("stocks");
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (symbol, result) in results {
        match result {
            Ok(report) => {
                let path = stocks_dir.join(format!("{symbol}.json"));
                write_json(&path, &json!({ "config": config, "report": report }))?;
                reports.push(report);
            }
            Err(e @ Error::InsufficientData { .. }) => {
                log::warn!("{symbol}: skipped: {e}");
                skipped.push(json!({ "symbol": symbol, "reason": e.to_string() }));
            }
            Err(e) => return Err(e),
        }
    }
    if reports.is_empty() {
        return Err(Error::NoInput(format!(
            "no stock in {} has enough data",
            prices_dir.display()
        )));
    }
    for r in &reports {
        println!(
            "{}\tloans={}\tneg_freq_deduced={:.4}\tpassed={}\tcalls required/deduced={}/{}",
            r.symbol,
            r.loans.len(),
            r.neg_freq_deduced,
            r.passed,
            r.n_calls_required,
            r.n_calls_deduced
        );
    }
    write_summary(&out, &config, reports, &skipped)
}

fn cmd_report(input: &Path, out: &Path) -> Result<()> {
    let stocks_dir = input.join("stocks");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&stocks_dir)
        .map_err(|e| Error::io(&stocks_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::NoInput(format!("no stock reports in {}", stocks_dir.display())));
    }
    let mut config: Option<Vec<String>> = None;
    let mut reports = Vec::new();
    for path in &paths {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc: Value = serde_json::from_str(&text)?;
        let this: Vec<String> = serde_json::from_value(doc["config"].take())?;
        match &config {
            None => config = Some(this),
            Some(c) if *c != this => {
                return Err(Error::InvalidParameter(format!(
                    "{} was produced with a different config",
                    path.display()
                )));
            }
            Some(_) => {}
        }
        reports.push(serde_json::from_value::<StockReport>(doc["report"].take())?);
    }
    write_summary(out, &config.unwrap_or_default(), reports, &[])
}

fn parse_walk(spec: &str) -> Result<TransitionModel> {
    let parts = parse_list(spec, "--walk")?;
    if parts.len() != 5 || parts[0] < 1.0 || parts[0].fract() != 0.0 {
        return Err(Error::InvalidParameter(
            "--walk expects LEVELS,BASE,TICK,P_UP,P_DOWN".into(),
        ));
    }
    random_walk_chain(parts[0] as usize, parts[1], parts[2], parts[3], parts[4])
}

fn parse_lattice(spec: &str, steps: &str) -> Result<TransitionModel> {
    let parts = parse_list(spec, "--lattice")?;
    if parts.len() != 3 || parts[0] < 1.0 || parts[0].fract() != 0.0 {
        return Err(Error::InvalidParameter("--lattice expects LEVELS,BASE,TICK".into()));
    }
    lattice_chain(parts[0] as usize, parts[1], parts[2], &parse_list(steps, "--steps")?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    cfg: &RunConfig,
    model_args: &ModelArgs,
    chain: Option<TransitionModel>,
    start: Option<usize>,
    len: usize,
    symbol: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = match chain {
        Some(chain) => chain,
        None => load_model(cfg, model_args)?.0,
    };
    let start = start.unwrap_or(model.n_states() / 2);
    let closes = simulate_prices(&model, start, len, cfg.seed)?;
    let series = PriceSeries::from_closes(symbol, &closes)?;
    match out {
        Some(path) => {
            let mut w = open_out(&path)?;
            write_price_csv(&series, &mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))
        }
        None => write_price_csv(&series, std::io::stdout().lock()),
    }
}
