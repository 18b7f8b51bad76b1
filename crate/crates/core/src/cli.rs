//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for unreadable or invalid input, 3 when the
//! pipeline cannot produce a result from valid input.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::assign::{read_distributions, read_predictions, write_assignments, write_distributions};
use crate::eval::{evaluate_run, grid_search, money_map, write_money_map, LabeledStocktake, MoneyMapLevel, ParamGrid, Report};
use crate::ingest::{self, GroundTruth, IngestError};
use crate::model::{LocalCost, ParamConfig, ParamOverrides, Session, TagRegistry};
use crate::pipeline::{predict, Engine, PredictOptions};
use crate::preprocess::aggregate;
use crate::sim::{generate, SimScenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "shelfmap", version, about = "Map articles to store fixtures from RFID stocktakes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict article locations for one stocktake.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Total sales per predicted fixture or zone.
    Moneymap(MoneymapArgs),
    /// Grid-search engine parameters on labeled stocktakes.
    Tune(TuneArgs),
    /// Generate a synthetic stocktake with registry and ground truth.
    Simulate(SimulateArgs),
}

/// Per-field parameter overrides; they take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamFlags {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub rssi_quantile_dbscan: Option<f64>,
    #[arg(long)]
    pub rssi_quantile_dtw: Option<f64>,
    #[arg(long)]
    pub resample_s: Option<f64>,
    #[arg(long)]
    pub dtw_window: Option<usize>,
    #[arg(long)]
    pub rssi_shift: Option<f64>,
    /// Cluster on (time, scaled RSSI) instead of time alone.
    #[arg(long)]
    pub cluster_on_rssi: bool,
    /// Square the DTW point cost instead of taking its absolute value.
    #[arg(long)]
    pub squared_cost: bool,
}

impl ParamFlags {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            rssi_quantile_dbscan: self.rssi_quantile_dbscan,
            eps: self.eps,
            min_pts: self.min_pts,
            rssi_quantile_dtw: self.rssi_quantile_dtw,
            resample_s: self.resample_s,
            dtw_window: self.dtw_window,
            rssi_shift: self.rssi_shift,
            cluster_on_rssi: self.cluster_on_rssi.then_some(true),
            dtw_cost: self.squared_cost.then_some(LocalCost::Squared),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub stocktake: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub session: u8,
    #[arg(long, default_value_t = Engine::Dbscan)]
    pub engine: Engine,
    /// JSON parameter overrides applied on top of the session defaults.
    #[arg(long, env = "SHELFMAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Distribution JSON of an earlier stocktake to fuse with.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Keep colors of one article apart.
    #[arg(long)]
    pub color_aware: bool,
    /// Physical → logical fixture grouping CSV.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
    /// Output directory for assignments.csv and distributions.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Assignment CSV; repeat to report over several stocktakes.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Fixture grid CSV, enables the Chebyshev error.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Zone CSV, enables zone accuracy.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    /// Grouping CSV; truth is mapped to logical fixtures before scoring.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MoneymapArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub sales: PathBuf,
    /// Aggregate by zone instead of fixture.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    /// Money-map CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    /// Stocktake CSV; repeatable.
    #[arg(long, required = true)]
    pub stocktake: Vec<PathBuf>,
    /// Ground truth CSV, either one for all stocktakes or one per stocktake.
    #[arg(long, required = true)]
    pub truth: Vec<PathBuf>,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Fixture grid CSV used to break accuracy ties.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub session: u8,
    #[arg(long, default_value_t = Engine::Dbscan)]
    pub engine: Engine,
    #[arg(long)]
    pub color_aware: bool,
    /// Base parameter overrides (JSON).
    #[arg(long, env = "SHELFMAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Parameter grid JSON: lists of candidate values per field.
    #[arg(long = "param-grid")]
    pub param_grid: PathBuf,
    /// Result JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; unspecified fields take the lab-like defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Moneymap(a) => cmd_moneymap(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| input_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| input_err(path, e))
}

fn session(index: u8) -> Session {
    Session::from_index(index).expect("range checked by the parser")
}

/// Session defaults, then the config file, then flags.
fn resolve_config(session: Session, config: Option<&Path>, flags: &ParamFlags) -> Result<ParamConfig> {
    let file = match config {
        Some(path) => serde_json::from_reader(open(path)?).map_err(|e| input_err(path, e))?,
        None => ParamOverrides::default(),
    };
    let mut cfg = ParamConfig::for_session(session);
    file.merge(&flags.overrides()).apply(&mut cfg);
    let bad = cfg.invalid_fields();
    if !bad.is_empty() {
        return Err(CliError::Input(format!("invalid parameter values: {}", bad.join(", "))));
    }
    Ok(cfg)
}

fn load_registry(path: &Path, groups: Option<&Path>) -> Result<TagRegistry> {
    let mut reg = ingest::load_registry(path)?;
    if let Some(g) = groups {
        ingest::load_groups(g, &mut reg)?;
    }
    Ok(reg)
}

/// Writes to `out`, or stdout when `None`.
fn with_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let res = match out {
        Some(path) => {
            let mut w = create(path)?;
            f(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    };
    res.map_err(|e| CliError::Input(format!("writing output: {e}")))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let session = session(args.session);
    let registry = load_registry(&args.registry, args.groups.as_deref())?;
    let stocktake = ingest::load_stocktake(&args.stocktake, session)?;
    let config = resolve_config(session, args.config.as_deref(), &args.params)?;
    let history = match &args.history {
        Some(path) => Some(read_distributions(open(path)?).map_err(|e| input_err(path, e))?),
        None => None,
    };
    let opts = PredictOptions { engine: args.engine, config, color_aware: args.color_aware };
    let out = predict(&stocktake, &registry, &opts, history.as_ref()).map_err(|e| CliError::Pipeline(e.to_string()))?;
    if out.assignments.assigned.is_empty() {
        return Err(CliError::Pipeline("no article could be assigned".into()));
    }
    for (article, err) in &out.assignments.failed {
        eprintln!("shelfmap: skipping {article}: {err}");
    }

    std::fs::create_dir_all(&args.out).map_err(|e| input_err(&args.out, e))?;
    let csv_path = args.out.join("assignments.csv");
    write_assignments(create(&csv_path)?, &out.assignments).map_err(|e| input_err(&csv_path, e))?;
    let json_path = args.out.join("distributions.json");
    let mut w = create(&json_path)?;
    write_distributions(&mut w, &out.assignments.distributions())
        .map_err(io::Error::from)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| input_err(&json_path, e))?;
    Ok(())
}

/// Drops colors from the truth when the predictions carry none.
fn align_truth(truth: GroundTruth, colorless: bool) -> Result<GroundTruth> {
    if colorless {
        Ok(truth.without_colors()?)
    } else {
        Ok(truth)
    }
}

fn load_truth(path: &Path, groups: Option<&Path>) -> Result<GroundTruth> {
    let truth = ingest::load_ground_truth(path, None)?;
    Ok(match groups {
        Some(g) => {
            let mut reg = TagRegistry::default();
            ingest::load_groups(g, &mut reg)?;
            truth.to_logical(&reg)
        }
        None => truth,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let truth = load_truth(&args.truth, args.groups.as_deref())?;
    let grid = args.grid.as_deref().map(ingest::load_grid).transpose()?;
    let zones = args.zones.as_deref().map(ingest::load_zone_map).transpose()?;
    let mut runs = Vec::with_capacity(args.pred.len());
    for path in &args.pred {
        let preds = read_predictions(open(path)?).map_err(|e| input_err(path, e))?;
        let truth = align_truth(truth.clone(), preds.keys().all(|k| k.color.is_none()))?;
        let run = evaluate_run(&preds, &truth, grid.as_ref(), zones.as_ref()).map_err(|e| input_err(path, e))?;
        runs.push(run);
    }
    let report = Report::from_runs(&runs).map_err(|e| CliError::Pipeline(e.to_string()))?;
    with_output(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        w.write_all(b"\n")
    })
}

pub fn cmd_moneymap(args: &MoneymapArgs) -> Result<()> {
    let preds = read_predictions(open(&args.pred)?).map_err(|e| input_err(&args.pred, e))?;
    let sales = ingest::load_sales(&args.sales)?;
    let zones = args.zones.as_deref().map(ingest::load_zone_map).transpose()?;
    let level = match &zones {
        Some(z) => MoneyMapLevel::Zone(z),
        None => MoneyMapLevel::Fixture,
    };
    let map = money_map(&preds, &sales, level);
    if !map.unassigned_articles.is_empty() {
        let names: Vec<String> = map.unassigned_articles.iter().map(ToString::to_string).collect();
        eprintln!("shelfmap: sales without a prediction: {}", names.join(", "));
    }
    with_output(args.out.as_deref(), |w| write_money_map(w, &map).map_err(io::Error::other))
}

pub fn cmd_tune(args: &TuneArgs) -> Result<()> {
    if args.truth.len() != 1 && args.truth.len() != args.stocktake.len() {
        return Err(CliError::Input(format!(
            "got {} truth files for {} stocktakes; pass one or one per stocktake",
            args.truth.len(),
            args.stocktake.len()
        )));
    }
    let session = session(args.session);
    let registry = load_registry(&args.registry, args.groups.as_deref())?;
    let grid = args.grid.as_deref().map(ingest::load_grid).transpose()?;
    let base = resolve_config(session, args.config.as_deref(), &ParamFlags::default())?;
    let param_grid: ParamGrid = serde_json::from_reader(open(&args.param_grid)?).map_err(|e| input_err(&args.param_grid, e))?;
    let configs = param_grid.expand(&base);
    if let Some(bad) = configs.iter().map(ParamConfig::invalid_fields).find(|b| !b.is_empty()) {
        return Err(CliError::Input(format!("parameter grid has invalid values: {}", bad.join(", "))));
    }

    let mut runs = Vec::with_capacity(args.stocktake.len());
    for (i, path) in args.stocktake.iter().enumerate() {
        let stocktake = ingest::load_stocktake(path, session)?;
        let truth_path = &args.truth[if args.truth.len() == 1 { 0 } else { i }];
        let truth = ingest::load_ground_truth(truth_path, Some(&registry))?.to_logical(&registry);
        let truth = align_truth(truth, !args.color_aware)?;
        runs.push(LabeledStocktake { series: aggregate(&stocktake, &registry, args.color_aware), truth, grid: grid.clone() });
    }
    let result = grid_search(&runs, args.engine, &configs).map_err(|e| CliError::Pipeline(e.to_string()))?;
    with_output(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &result)?;
        w.write_all(b"\n")
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario: SimScenario = match &args.scenario {
        Some(path) => serde_json::from_reader(open(path)?).map_err(|e| input_err(path, e))?,
        None => SimScenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let out = generate(&scenario).map_err(|e| CliError::Input(e.to_string()))?;
    out.write_to_dir(&args.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"eps": 0.05, "min_pts": 3}"#).unwrap();
        let flags = ParamFlags { min_pts: Some(5), ..ParamFlags::default() };
        let cfg = resolve_config(Session::S1, Some(&path), &flags).unwrap();
        assert_eq!((cfg.eps, cfg.min_pts, cfg.dtw_window), (0.05, 5, ParamConfig::session1().dtw_window));
    }

    #[test]
    fn invalid_config_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"epsilon": 0.05}"#).unwrap();
        assert_eq!(resolve_config(Session::S0, Some(&path), &ParamFlags::default()).unwrap_err().exit_code(), 2);
        let flags = ParamFlags { eps: Some(-1.0), ..ParamFlags::default() };
        assert_eq!(resolve_config(Session::S0, None, &flags).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "shelfmap",
            "predict",
            "--stocktake",
            "s.csv",
            "--registry",
            "r.csv",
            "--session",
            "1",
            "--engine",
            "dtw",
            "--out",
            "o",
        ])
        .unwrap();
        match cli.command {
            Command::Predict(a) => assert_eq!((a.session, a.engine), (1, Engine::Dtw)),
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from([
            "shelfmap",
            "predict",
            "--stocktake",
            "s",
            "--registry",
            "r",
            "--session",
            "2",
            "--out",
            "o"
        ])
        .is_err());
    }
}
