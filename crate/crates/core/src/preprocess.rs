//! Aggregation of raw reads into series, plus the scaling, filtering and
//! resampling steps both distance engines share.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ArticleKey, FixtureId, ReadPoint, ReadSeries, SeriesKey, Stocktake, TagRegistry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("all reads share one timestamp; time cannot be scaled")]
    DegenerateTime,
    #[error("no reads of registered tags")]
    NoSeries,
}

/// Reads grouped per article and per (logical) fixture.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregated {
    pub articles: BTreeMap<ArticleKey, ReadSeries>,
    pub fixtures: BTreeMap<FixtureId, ReadSeries>,
    /// Reads whose EPC is not in the registry.
    pub unknown: usize,
}

impl Aggregated {
    pub fn all_series(&self) -> impl Iterator<Item = &ReadSeries> {
        self.articles.values().chain(self.fixtures.values())
    }

    pub fn total_points(&self) -> usize {
        self.all_series().map(ReadSeries::len).sum()
    }

    /// Shared time frame spanning every series.
    pub fn time_frame(&self) -> Result<TimeFrame, PreprocessError> {
        TimeFrame::spanning(self.all_series())
    }
}

/// Groups reads by article (item tags) and by logical fixture (reference tags).
///
pub fn aggregate(stocktake: &Stocktake, registry: &TagRegistry, color_aware: bool) -> Aggregated {
    let mut articles: BTreeMap<ArticleKey, Vec<ReadPoint>> = BTreeMap::new();
    let mut fixtures: BTreeMap<FixtureId, Vec<ReadPoint>> = BTreeMap::new();
    let mut unknown = 0;
    for ev in &stocktake.events {
        let point = ReadPoint { t_ms: ev.t_ms, rssi_dbm: ev.rssi_dbm };
        if let Some(key) = registry.item_map.get(&ev.epc) {
            articles.entry(key.aggregation_key(color_aware)).or_default().push(point);
        } else if let Some(fixture) = registry.reference_map.get(&ev.epc) {
            fixtures.entry(registry.logical_fixture(fixture).to_string()).or_default().push(point);
        } else {
            unknown += 1;
        }
    }
    // (time, rssi) order makes every series independent of input event order
    let finish = |mut points: Vec<ReadPoint>| {
        points.sort_by(|a, b| a.t_ms.cmp(&b.t_ms).then(a.rssi_dbm.total_cmp(&b.rssi_dbm)));
        points
    };
    Aggregated {
        articles: articles.into_iter().map(|(k, p)| (k.clone(), ReadSeries::new(SeriesKey::Article(k), finish(p)))).collect(),
        fixtures: fixtures.into_iter().map(|(k, p)| (k.clone(), ReadSeries::new(SeriesKey::Fixture(k), finish(p)))).collect(),
        unknown,
    }
}

/// Global [t_min, t_max] of a stocktake, mapping time onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFrame {
    pub t_min: i64,
    pub t_max: i64,
}

impl TimeFrame {
    pub fn spanning<'a>(series: impl IntoIterator<Item = &'a ReadSeries>) -> Result<Self, PreprocessError> {
        let mut bounds: Option<(i64, i64)> = None;
        for s in series {
            if let (Some(first), Some(last)) = (s.points.first(), s.points.last()) {
                bounds = Some(match bounds {
                    None => (first.t_ms, last.t_ms),
                    Some((lo, hi)) => (lo.min(first.t_ms), hi.max(last.t_ms)),
                });
            }
        }
        let (t_min, t_max) = bounds.ok_or(PreprocessError::NoSeries)?;
        if t_max == t_min {
            return Err(PreprocessError::DegenerateTime);
        }
        Ok(Self { t_min, t_max })
    }

    #[inline]
    pub fn scale(&self, t_ms: i64) -> f64 {
        (t_ms - self.t_min) as f64 / (self.t_max - self.t_min) as f64
    }
}

/// Min-max scales every series' timestamps with one shared frame.
pub fn minmax_scale_time(series: &[ReadSeries]) -> Result<(TimeFrame, Vec<Vec<f64>>), PreprocessError> {
    let frame = TimeFrame::spanning(series)?;
    let scaled = series.iter().map(|s| s.points.iter().map(|p| frame.scale(p.t_ms)).collect()).collect();
    Ok((frame, scaled))
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`, the usual "type 7" rule). `values` must be non-empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let (a, b) = (sorted[lo], sorted[hi]);
    (a + (h - lo as f64) * (b - a)).clamp(a, b)
}

/// Keeps reads whose RSSI is at least the series' own `q` quantile.
/// The strongest read always survives.
pub fn rssi_quantile_filter(series: &ReadSeries, q: f64) -> ReadSeries {
    if series.is_empty() || q <= 0.0 {
        return series.clone();
    }
    let rssi: Vec<f64> = series.rssi().collect();
    let threshold = quantile(&rssi, q);
    ReadSeries { key: series.key.clone(), points: series.points.iter().copied().filter(|p| p.rssi_dbm >= threshold).collect() }
}

/// Sums shifted RSSI into equal bins over `[t_start_ms, t_end_ms)`.
///
/// Bin `k` covers `[t_start + k·res, t_start + (k+1)·res)`; empty bins are 0
/// and reads outside the span are ignored. The vector has
/// `ceil((t_end − t_start) / res)` entries.
pub fn resample(series: &ReadSeries, resolution_s: f64, t_start_ms: i64, t_end_ms: i64, shift: f64) -> Vec<f64> {
    assert!(resolution_s > 0.0, "resolution must be positive");
    let res_ms = resolution_s * 1000.0;
    let len = bin_count(t_start_ms, t_end_ms, res_ms);
    let mut bins = vec![0.0; len];
    for p in &series.points {
        if p.t_ms < t_start_ms || p.t_ms >= t_end_ms {
            continue;
        }
        let k = ((p.t_ms - t_start_ms) as f64 / res_ms).floor() as usize;
        if let Some(b) = bins.get_mut(k) {
            *b += p.rssi_dbm + shift;
        }
    }
    bins
}

fn bin_count(t_start_ms: i64, t_end_ms: i64, res_ms: f64) -> usize {
    if t_end_ms <= t_start_ms {
        return 0;
    }
    ((t_end_ms - t_start_ms) as f64 / res_ms).ceil() as usize
}
