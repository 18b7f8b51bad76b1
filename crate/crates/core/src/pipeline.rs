//! End-to-end prediction: aggregate → distance engine → assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::{assign_all_with, Assignments};
use crate::cluster::dbscan_engine_with;
use crate::model::{ArticleKey, AssignmentDistribution, DistanceMatrix, ParamConfig, Stocktake, TagRegistry};
use crate::par::Exec;
use crate::preprocess::{aggregate, Aggregated, PreprocessError};
use crate::warp::dtw_engine_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Dbscan,
    Dtw,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Dbscan => "dbscan",
            Engine::Dtw => "dtw",
        })
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dbscan" => Ok(Engine::Dbscan),
            "dtw" => Ok(Engine::Dtw),
            _ => Err(format!("unknown engine {s:?} (expected dbscan or dtw)")),
        }
    }
}

pub fn distance_matrix(engine: Engine, series: &Aggregated, cfg: &ParamConfig) -> Result<DistanceMatrix, PreprocessError> {
    distance_matrix_with(engine, series, cfg, Exec::default())
}

pub fn distance_matrix_with(
    engine: Engine,
    series: &Aggregated,
    cfg: &ParamConfig,
    exec: Exec,
) -> Result<DistanceMatrix, PreprocessError> {
    match engine {
        Engine::Dbscan => dbscan_engine_with(series, cfg, exec),
        Engine::Dtw => dtw_engine_with(series, cfg, exec),
    }
}

/// Options of a single prediction run.
#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub engine: Engine,
    pub config: ParamConfig,
    pub color_aware: bool,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub series: Aggregated,
    pub matrix: DistanceMatrix,
    pub assignments: Assignments,
}

pub fn predict(
    stocktake: &Stocktake,
    registry: &TagRegistry,
    opts: &PredictOptions,
    history: Option<&BTreeMap<ArticleKey, AssignmentDistribution>>,
) -> Result<Prediction, PreprocessError> {
    let series = aggregate(stocktake, registry, opts.color_aware);
    let matrix = distance_matrix(opts.engine, &series, &opts.config)?;
    let assignments = assign_all_with(&matrix, history, Exec::default());
    Ok(Prediction { series, matrix, assignments })
}
