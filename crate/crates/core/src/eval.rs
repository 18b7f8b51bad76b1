//! Accuracy, grid distance error, zone accuracy, money mapping and the
//! parameter grid search.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::assign_all_with;
use crate::ingest::{Cents, GroundTruth, SalesRecord};
use crate::model::{ArticleKey, FixtureGrid, FixtureId, ParamConfig, ZoneId};
use crate::par::Exec;
use crate::pipeline::{distance_matrix_with, Engine};
use crate::preprocess::Aggregated;

pub type Predictions = BTreeMap<ArticleKey, FixtureId>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("article {0} has no ground truth")]
    MissingTruth(ArticleKey),
    #[error("fixture {0} has no grid cell")]
    MissingCell(FixtureId),
    #[error("fixture {0} is not in any zone")]
    UnmappedFixture(FixtureId),
    #[error("nothing to evaluate")]
    NoPredictions,
    #[error("grid search needs at least one labeled stocktake and one config")]
    EmptyGrid,
}

fn truth_of<'a>(truth: &'a GroundTruth, article: &ArticleKey) -> Result<&'a FixtureId, EvalError> {
    truth.truth.get(article).ok_or_else(|| EvalError::MissingTruth(article.clone()))
}

/// Fraction of predicted articles placed on their true fixture.
pub fn accuracy(predicted: &Predictions, truth: &GroundTruth) -> Result<f64, EvalError> {
    if predicted.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let mut correct = 0usize;
    for (article, fixture) in predicted {
        if truth_of(truth, article)? == fixture {
            correct += 1;
        }
    }
    Ok(correct as f64 / predicted.len() as f64)
}

/// Mean and standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Summary { mean, std, count: values.len() })
    }
}

/// Chebyshev grid distance between predicted and true fixture for each
/// wrong prediction.
pub fn chebyshev_errors(
    predicted: &Predictions,
    truth: &GroundTruth,
    grid: &FixtureGrid,
) -> Result<Vec<(ArticleKey, i64)>, EvalError> {
    let mut out = Vec::new();
    for (article, fixture) in predicted {
        let actual = truth_of(truth, article)?;
        if actual == fixture {
            continue;
        }
        for f in [fixture, actual] {
            if grid.cell(f).is_none() {
                return Err(EvalError::MissingCell(f.clone()));
            }
        }
        out.push((article.clone(), grid.chebyshev(fixture, actual).unwrap()));
    }
    Ok(out)
}

/// Mean Chebyshev error over wrong predictions; `None` when every prediction is right.
pub fn chebyshev_error(predicted: &Predictions, truth: &GroundTruth, grid: &FixtureGrid) -> Result<Option<Summary>, EvalError> {
    let errs: Vec<f64> = chebyshev_errors(predicted, truth, grid)?.into_iter().map(|(_, e)| e as f64).collect();
    Ok(Summary::of(&errs))
}

/// Fraction of articles predicted into the right zone.
pub fn zone_accuracy(
    predicted: &Predictions,
    truth: &GroundTruth,
    zones: &BTreeMap<FixtureId, ZoneId>,
) -> Result<f64, EvalError> {
    if predicted.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let zone = |f: &FixtureId| zones.get(f).ok_or_else(|| EvalError::UnmappedFixture(f.clone()));
    let mut correct = 0usize;
    for (article, fixture) in predicted {
        if zone(fixture)? == zone(truth_of(truth, article)?)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub revenue_cents: i64,
    pub units: u64,
}

impl Totals {
    fn add(&mut self, rec: &SalesRecord) {
        self.revenue_cents += rec.revenue.0;
        self.units += rec.units;
    }

    pub fn revenue(&self) -> Cents {
        Cents(self.revenue_cents)
    }
}

pub enum MoneyMapLevel<'a> {
    Fixture,
    Zone(&'a BTreeMap<FixtureId, ZoneId>),
}

/// Sales totals per predicted location.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MoneyMap {
    pub locations: BTreeMap<String, Totals>,
    /// Sales of articles without a usable prediction.
    pub unassigned: Totals,
    pub unassigned_articles: Vec<ArticleKey>,
}

impl MoneyMap {
    pub fn total(&self) -> Totals {
        let mut t = self.unassigned;
        for l in self.locations.values() {
            t.revenue_cents += l.revenue_cents;
            t.units += l.units;
        }
        t
    }
}

/// Groups sales by the predicted fixture (or its zone).
///
/// A sales row matches the prediction for its exact article/color key, or
/// failing that the color-less key. Every predicted location appears in
/// the map even without sales.
pub fn money_map(predicted: &Predictions, sales: &[SalesRecord], level: MoneyMapLevel<'_>) -> MoneyMap {
    let location = |fixture: &FixtureId| -> Option<String> {
        match &level {
            MoneyMapLevel::Fixture => Some(fixture.clone()),
            MoneyMapLevel::Zone(zones) => zones.get(fixture).cloned(),
        }
    };
    let mut map = MoneyMap::default();
    for fixture in predicted.values() {
        if let Some(loc) = location(fixture) {
            map.locations.entry(loc).or_default();
        }
    }
    for rec in sales {
        let fixture = predicted.get(&rec.article).or_else(|| predicted.get(&rec.article.aggregation_key(false)));
        match fixture.and_then(location) {
            Some(loc) => map.locations.entry(loc).or_default().add(rec),
            None => {
                map.unassigned.add(rec);
                if !map.unassigned_articles.contains(&rec.article) {
                    map.unassigned_articles.push(rec.article.clone());
                }
            }
        }
    }
    map
}

pub const UNASSIGNED_LOCATION: &str = "(unassigned)";

/// Writes `location_id,revenue,units`; unassigned sales go on a final
/// `(unassigned)` row when there are any.
pub fn write_money_map<W: Write>(w: W, map: &MoneyMap) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["location_id", "revenue", "units"])?;
    for (loc, t) in &map.locations {
        out.write_record([loc.as_str(), &t.revenue().to_string(), &t.units.to_string()])?;
    }
    if map.unassigned != Totals::default() {
        out.write_record([UNASSIGNED_LOCATION, &map.unassigned.revenue().to_string(), &map.unassigned.units.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleOutcome {
    pub article_id: String,
    pub color: Option<String>,
    pub predicted: FixtureId,
    pub truth: FixtureId,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cheb_error: Option<i64>,
}

/// Metrics of one labeled stocktake.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub zone_accuracy: Option<f64>,
    pub cheb_errors: Vec<i64>,
    pub per_article: Vec<ArticleOutcome>,
}

pub fn evaluate_run(
    predicted: &Predictions,
    truth: &GroundTruth,
    grid: Option<&FixtureGrid>,
    zones: Option<&BTreeMap<FixtureId, ZoneId>>,
) -> Result<RunMetrics, EvalError> {
    let accuracy = accuracy(predicted, truth)?;
    let zone_accuracy = zones.map(|z| zone_accuracy(predicted, truth, z)).transpose()?;
    let errors: BTreeMap<ArticleKey, i64> = match grid {
        Some(g) => chebyshev_errors(predicted, truth, g)?.into_iter().collect(),
        None => BTreeMap::new(),
    };
    let per_article = predicted
        .iter()
        .map(|(k, f)| {
            let t = &truth.truth[k];
            ArticleOutcome {
                article_id: k.article_id.clone(),
                color: k.color.clone(),
                predicted: f.clone(),
                truth: t.clone(),
                correct: f == t,
                cheb_error: errors.get(k).copied(),
            }
        })
        .collect();
    Ok(RunMetrics { accuracy, zone_accuracy, cheb_errors: errors.into_values().collect(), per_article })
}

/// Evaluation report over one or more stocktakes.
///
/// Chebyshev error is given both as the mean of per-stocktake means and
/// pooled over all wrong predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub cheb_error_mean: Option<f64>,
    pub cheb_error_std: Option<f64>,
    pub cheb_error_pooled_mean: Option<f64>,
    pub cheb_error_pooled_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zone_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zone_accuracy_std: Option<f64>,
    pub stocktakes: usize,
    pub per_article: Vec<ArticleOutcome>,
}

impl Report {
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Report, EvalError> {
        let acc = Summary::of(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>()).ok_or(EvalError::NoPredictions)?;
        let per_run_cheb: Vec<f64> = runs
            .iter()
            .filter_map(|r| Summary::of(&r.cheb_errors.iter().map(|&e| e as f64).collect::<Vec<_>>()))
            .map(|s| s.mean)
            .collect();
        let per_run = Summary::of(&per_run_cheb);
        let pooled: Vec<f64> = runs.iter().flat_map(|r| r.cheb_errors.iter().map(|&e| e as f64)).collect();
        let pooled = Summary::of(&pooled);
        let zones: Vec<f64> = runs.iter().filter_map(|r| r.zone_accuracy).collect();
        let zones = Summary::of(&zones);
        Ok(Report {
            accuracy: acc.mean,
            accuracy_std: acc.std,
            cheb_error_mean: per_run.map(|s| s.mean),
            cheb_error_std: per_run.map(|s| s.std),
            cheb_error_pooled_mean: pooled.map(|s| s.mean),
            cheb_error_pooled_std: pooled.map(|s| s.std),
            zone_accuracy: zones.map(|s| s.mean),
            zone_accuracy_std: zones.map(|s| s.std),
            stocktakes: runs.len(),
            per_article: if runs.len() == 1 { runs[0].per_article.clone() } else { Vec::new() },
        })
    }
}

// ---------------------------------------------------------------------------
// grid search

/// A preprocessed stocktake with known article locations.
#[derive(Debug, Clone)]
pub struct LabeledStocktake {
    pub series: Aggregated,
    pub truth: GroundTruth,
    pub grid: Option<FixtureGrid>,
}

/// Lists of candidate values; the search runs over their Cartesian product.
/// Empty lists keep the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub rssi_quantile_dbscan: Vec<f64>,
    pub eps: Vec<f64>,
    pub min_pts: Vec<usize>,
    pub rssi_quantile_dtw: Vec<f64>,
    pub resample_s: Vec<f64>,
    pub dtw_window: Vec<usize>,
    pub rssi_shift: Vec<f64>,
}

impl ParamGrid {
    /// Every combination, varying the last-listed field fastest.
    pub fn expand(&self, base: &ParamConfig) -> Vec<ParamConfig> {
        let mut configs = vec![base.clone()];
        macro_rules! axis {
            ($f:ident) => {
                if !self.$f.is_empty() {
                    configs = configs
                        .into_iter()
                        .flat_map(|c| self.$f.iter().map(move |&v| ParamConfig { $f: v, ..c.clone() }))
                        .collect();
                }
            };
        }
        axis!(rssi_quantile_dbscan);
        axis!(eps);
        axis!(min_pts);
        axis!(rssi_quantile_dtw);
        axis!(resample_s);
        axis!(dtw_window);
        axis!(rssi_shift);
        configs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub config: ParamConfig,
    pub mean_accuracy: f64,
    /// Mean over stocktakes with at least one wrong prediction and a grid.
    pub mean_cheb_error: Option<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: ParamConfig,
    pub table: Vec<GridRow>,
}

fn score_config(runs: &[LabeledStocktake], engine: Engine, cfg: &ParamConfig) -> GridRow {
    let mut accs = Vec::with_capacity(runs.len());
    let mut chebs = Vec::new();
    let mut failed = 0;
    for run in runs {
        let outcome = distance_matrix_with(engine, &run.series, cfg, Exec::Sequential).ok().and_then(|m| {
            let preds = assign_all_with(&m, None, Exec::Sequential).predictions();
            let acc = accuracy(&preds, &run.truth).ok()?;
            let cheb = run.grid.as_ref().and_then(|g| chebyshev_error(&preds, &run.truth, g).ok().flatten());
            Some((acc, cheb))
        });
        match outcome {
            Some((acc, cheb)) => {
                accs.push(acc);
                chebs.extend(cheb.map(|c| c.mean));
            }
            None => {
                failed += 1;
                accs.push(0.0);
            }
        }
    }
    GridRow {
        config: cfg.clone(),
        mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        mean_cheb_error: Summary::of(&chebs).map(|s| s.mean),
        failed_runs: failed,
    }
}

/// Exhaustive search over `configs`. Best is highest mean accuracy, then
/// lowest mean Chebyshev error (no error counts as 0), then grid order.
pub fn grid_search(runs: &[LabeledStocktake], engine: Engine, configs: &[ParamConfig]) -> Result<GridSearchResult, EvalError> {
    grid_search_with(runs, engine, configs, Exec::default())
}

pub fn grid_search_with(
    runs: &[LabeledStocktake],
    engine: Engine,
    configs: &[ParamConfig],
    exec: Exec,
) -> Result<GridSearchResult, EvalError> {
    if runs.is_empty() || configs.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let table = exec.map(configs, |cfg| score_config(runs, engine, cfg));
    let mut best_index = 0;
    for (i, row) in table.iter().enumerate().skip(1) {
        let best = &table[best_index];
        let cheb = |r: &GridRow| r.mean_cheb_error.unwrap_or(0.0);
        if row.mean_accuracy > best.mean_accuracy || (row.mean_accuracy == best.mean_accuracy && cheb(row) < cheb(best)) {
            best_index = i;
        }
    }
    Ok(GridSearchResult { best_index, best: table[best_index].config.clone(), table })
}
