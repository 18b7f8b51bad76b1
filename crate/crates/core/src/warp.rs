//! DTW distance engine.
//!
//! Series are quantile-filtered, shifted to positive values and summed into
//! equal bins over the stocktake's span. Each article/fixture pair is then
//! compared with band-constrained dynamic time warping.

use thiserror::Error;

use crate::model::{DistanceMatrix, LocalCost, ParamConfig, ReadSeries};
use crate::par::Exec;
use crate::preprocess::{resample, rssi_quantile_filter, Aggregated, PreprocessError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WarpError {
    #[error("cannot warp an empty series")]
    EmptySeries,
    #[error("window {window} is narrower than the length difference {diff}")]
    InfeasibleWindow { window: usize, diff: usize },
}

impl LocalCost {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalCost::Absolute => (a - b).abs(),
            LocalCost::Squared => (a - b) * (a - b),
        }
    }
}

/// Minimal cumulative cost of a monotone alignment of `a` and `b` from the
/// first to the last elements, using steps (1,0), (0,1), (1,1) and keeping
/// `|i − j| ≤ window`.
///
/// Runs in O(|a|·window) time with two rows of O(min(|a|, |b|)) memory.
pub fn dtw_distance(a: &[f64], b: &[f64], window: usize, cost: LocalCost) -> Result<f64, WarpError> {
    if a.is_empty() || b.is_empty() {
        return Err(WarpError::EmptySeries);
    }
    let diff = a.len().abs_diff(b.len());
    if window < diff {
        return Err(WarpError::InfeasibleWindow { window, diff });
    }
    // keep the shorter series on the inner axis; the cost is symmetric
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let m = inner.len();
    let band = |i: usize| (i.saturating_sub(window), (i + window).min(m - 1));

    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    let (mut prev_lo, mut prev_hi) = (1, 0); // empty
    for (i, &x) in outer.iter().enumerate() {
        let (lo, hi) = band(i);
        let at_prev = |prev: &[f64], j: usize| if j >= prev_lo && j <= prev_hi { prev[j] } else { f64::INFINITY };
        for j in lo..=hi {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = at_prev(&prev, j);
                let diag = if j > 0 { at_prev(&prev, j - 1) } else { f64::INFINITY };
                let left = if j > lo { cur[j - 1] } else { f64::INFINITY };
                up.min(diag).min(left)
            };
            cur[j] = best + cost.eval(x, inner[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
        prev_lo = lo;
        prev_hi = hi;
    }
    Ok(prev[m - 1])
}

/// Resampled, shifted value vector of one series over the stocktake span.
pub fn series_vector(series: &ReadSeries, cfg: &ParamConfig, t_start_ms: i64, t_end_ms: i64) -> Vec<f64> {
    let kept = rssi_quantile_filter(series, cfg.rssi_quantile_dtw);
    resample(&kept, cfg.resample_s, t_start_ms, t_end_ms, cfg.rssi_shift)
}

/// Article × fixture DTW cost matrix. Every entry is finite because all
/// vectors share one length.
pub fn dtw_engine(agg: &Aggregated, cfg: &ParamConfig) -> Result<DistanceMatrix, PreprocessError> {
    dtw_engine_with(agg, cfg, Exec::default())
}

pub fn dtw_engine_with(agg: &Aggregated, cfg: &ParamConfig, exec: Exec) -> Result<DistanceMatrix, PreprocessError> {
    let frame = agg.time_frame()?;
    // end is exclusive; +1 ms keeps the last read inside the final bin
    let (start, end) = (frame.t_min, frame.t_max + 1);
    let articles: Vec<&ReadSeries> = agg.articles.values().collect();
    let fixtures: Vec<&ReadSeries> = agg.fixtures.values().collect();
    let article_vecs = exec.map(&articles, |s| series_vector(s, cfg, start, end));
    let fixture_vecs = exec.map(&fixtures, |s| series_vector(s, cfg, start, end));
    let values = exec.map(&article_vecs, |a| {
        fixture_vecs
            .iter()
            .map(|f| dtw_distance(a, f, cfg.dtw_window.max(a.len().abs_diff(f.len())), cfg.dtw_cost).ok())
            .collect()
    });
    Ok(DistanceMatrix {
        articles: agg.articles.keys().cloned().collect(),
        fixtures: agg.fixtures.keys().cloned().collect(),
        values,
    })
}
