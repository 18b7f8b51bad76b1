//! Turning distances into fixture probabilities and picking a fixture.
//!
//! Probabilities are inverse squared distances, normalised per article:
//! `p_j = d_j⁻² / Σ_k d_k⁻²`. Certainty is `1 − H / log2 N` with `H` the
//! Shannon entropy (bits) of the distribution over its `N` fixtures.
//! Earlier stocktakes are folded in by weighting each distribution by its
//! certainty, adding, and renormalising.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ArticleKey, AssignmentDistribution, DistanceMatrix, FixtureId};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("no finite distance for article {0}")]
    NoFiniteDistance(ArticleKey),
}

/// Inverse-squared-distance probabilities over every fixture in `distances`.
///
/// `None`, negative or non-finite entries get probability 0. If some
/// distances are exactly 0, the mass is shared equally among those
/// fixtures (the limit of the formula as they approach 0).
pub fn idw_probabilities(
    article: &ArticleKey,
    distances: &BTreeMap<FixtureId, Option<f64>>,
) -> Result<AssignmentDistribution, AssignError> {
    let usable = |d: &Option<f64>| d.filter(|d| d.is_finite() && *d >= 0.0);
    let finite: Vec<f64> = distances.values().filter_map(usable).collect();
    if finite.is_empty() {
        return Err(AssignError::NoFiniteDistance(article.clone()));
    }
    let zeros = finite.iter().filter(|&&d| d == 0.0).count();
    let probs: BTreeMap<FixtureId, f64> = if zeros > 0 {
        let share = 1.0 / zeros as f64;
        distances.iter().map(|(f, d)| (f.clone(), if usable(d) == Some(0.0) { share } else { 0.0 })).collect()
    } else {
        // dividing by the smallest distance first avoids overflow of 1/d² for tiny d
        let d_min = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let weight = |d: f64| {
            let r = d_min / d;
            r * r
        };
        let total: f64 = finite.iter().map(|&d| weight(d)).sum();
        distances.iter().map(|(f, d)| (f.clone(), usable(d).map_or(0.0, |d| weight(d) / total))).collect()
    };
    let certainty = certainty(probs.values().copied());
    Ok(AssignmentDistribution { article: article.clone(), probs, certainty })
}

/// `1 − H / log2 N` over a probability vector of `N` entries, in [0, 1].
///
/// A single-entry distribution has certainty 1. Residual rounding below
/// 1e-12 is flushed so that uniform vectors score exactly 0.
pub fn certainty(probs: impl IntoIterator<Item = f64>) -> f64 {
    let probs: Vec<f64> = probs.into_iter().collect();
    let n = probs.len();
    if n <= 1 {
        return 1.0;
    }
    let entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    let c = (1.0 - entropy / (n as f64).log2()).clamp(0.0, 1.0);
    if c < 1e-12 {
        0.0
    } else {
        c
    }
}

/// Most probable fixture; exact ties go to the smallest fixture id.
pub fn pick_fixture(dist: &AssignmentDistribution) -> Option<&FixtureId> {
    let mut best: Option<(&FixtureId, f64)> = None;
    for (f, &p) in &dist.probs {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((f, p));
        }
    }
    best.map(|(f, _)| f)
}

/// Certainty-weighted mixture of the current and previous distributions.
///
/// Fixtures present in only one of them count as 0 in the other. If both
/// certainties are 0 the result is uniform over the union.
pub fn fuse_history(current: &AssignmentDistribution, previous: &AssignmentDistribution) -> AssignmentDistribution {
    let universe: BTreeSet<&FixtureId> = current.probs.keys().chain(previous.probs.keys()).collect();
    let (wc, wp) = (current.certainty, previous.certainty);
    let raw: Vec<(FixtureId, f64)> = universe
        .iter()
        .map(|&f| {
            let pc = current.probs.get(f).copied().unwrap_or(0.0);
            let pp = previous.probs.get(f).copied().unwrap_or(0.0);
            (f.clone(), wc * pc + wp * pp)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, v)| v).sum();
    let probs: BTreeMap<FixtureId, f64> = if total > 0.0 {
        raw.into_iter().map(|(f, v)| (f, v / total)).collect()
    } else {
        let u = 1.0 / universe.len() as f64;
        raw.into_iter().map(|(f, _)| (f, u)).collect()
    };
    let certainty = certainty(probs.values().copied());
    AssignmentDistribution { article: current.article.clone(), probs, certainty }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub distribution: AssignmentDistribution,
    pub fixture: FixtureId,
}

/// Per-article results of one stocktake.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignments {
    pub assigned: BTreeMap<ArticleKey, Assignment>,
    pub failed: BTreeMap<ArticleKey, AssignError>,
}

impl Assignments {
    pub fn predictions(&self) -> BTreeMap<ArticleKey, FixtureId> {
        self.assigned.iter().map(|(k, a)| (k.clone(), a.fixture.clone())).collect()
    }

    pub fn distributions(&self) -> Vec<AssignmentDistribution> {
        self.assigned.values().map(|a| a.distribution.clone()).collect()
    }
}

/// Distribution and picked fixture for every article of the matrix,
/// fused with `history` where the article has a previous distribution.
pub fn assign_all(matrix: &DistanceMatrix, history: Option<&BTreeMap<ArticleKey, AssignmentDistribution>>) -> Assignments {
    assign_all_with(matrix, history, Exec::default())
}

pub fn assign_all_with(
    matrix: &DistanceMatrix,
    history: Option<&BTreeMap<ArticleKey, AssignmentDistribution>>,
    exec: Exec,
) -> Assignments {
    let results = exec.map_range(matrix.articles.len(), |i| {
        let key = &matrix.articles[i];
        idw_probabilities(key, &matrix.row(i)).map(|current| match history.and_then(|h| h.get(key)) {
            Some(prev) => fuse_history(&current, prev),
            None => current,
        })
    });
    let mut out = Assignments::default();
    for (key, res) in matrix.articles.iter().zip(results) {
        match res {
            Ok(distribution) => {
                let fixture = pick_fixture(&distribution).expect("distribution has at least one fixture").clone();
                out.assigned.insert(key.clone(), Assignment { distribution, fixture });
            }
            Err(e) => {
                out.failed.insert(key.clone(), e);
            }
        }
    }
    out
}

pub const ASSIGNMENT_HEADER: &[&str] = &["article_id", "color", "fixture_id", "probability", "certainty"];

/// Writes `article_id,color,fixture_id,probability,certainty`, one row per assigned article.
pub fn write_assignments<W: Write>(w: W, assignments: &Assignments) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ASSIGNMENT_HEADER)?;
    for (key, a) in &assignments.assigned {
        let p = a.distribution.probs[&a.fixture];
        out.write_record([
            key.article_id.as_str(),
            key.color_str(),
            a.fixture.as_str(),
            &p.to_string(),
            &a.distribution.certainty.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an assignment CSV back into article → fixture predictions.
pub fn read_predictions<R: std::io::Read>(rdr: R) -> Result<BTreeMap<ArticleKey, FixtureId>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let color = (!rec[1].is_empty()).then(|| rec[1].to_string());
        out.insert(ArticleKey { article_id: rec[0].to_string(), color }, rec[2].to_string());
    }
    Ok(out)
}

/// Full distributions as pretty JSON; readable back with [`read_distributions`].
pub fn write_distributions<W: Write>(w: W, dists: &[AssignmentDistribution]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(w, dists)
}

pub fn read_distributions<R: std::io::Read>(rdr: R) -> serde_json::Result<BTreeMap<ArticleKey, AssignmentDistribution>> {
    let list: Vec<AssignmentDistribution> = serde_json::from_reader(rdr)?;
    Ok(list.into_iter().map(|d| (d.article.clone(), d)).collect())
}
