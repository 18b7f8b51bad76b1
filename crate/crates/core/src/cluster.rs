//! DBSCAN distance engine.
//!
//! Each article and fixture series is reduced to its strongest reads,
//! clustered on the shared [0, 1] time axis, and summarised by cluster
//! centroids. The article–fixture distance is the smallest gap between
//! an article centroid and a fixture centroid.
//!
//! Neighborhoods are closed (`|a − b| ≤ eps`) and count the point itself.
//! A border point within reach of two clusters joins the one discovered
//! first in ascending time order.

use thiserror::Error;

use crate::model::{DistanceMatrix, ParamConfig, ReadSeries};
use crate::par::Exec;
use crate::preprocess::{rssi_quantile_filter, Aggregated, PreprocessError, TimeFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Article,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("{0:?} series produced no cluster")]
    NoCluster(Side),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<f64>,
    pub centroid: f64,
}

/// DBSCAN result over timestamps: disjoint clusters plus noise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub noise: Vec<f64>,
}

impl ClusterSet {
    /// Builds clusters from per-point labels (`None` = noise).
    pub fn from_labels(times: &[f64], labels: &[Option<usize>]) -> Self {
        let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); count];
        let mut noise = Vec::new();
        for (&t, label) in times.iter().zip(labels) {
            match label {
                Some(c) => members[*c].push(t),
                None => noise.push(t),
            }
        }
        let clusters = members
            .into_iter()
            .filter(|m| !m.is_empty())
            .map(|m| {
                let centroid = m.iter().sum::<f64>() / m.len() as f64;
                Cluster { members: m, centroid }
            })
            .collect();
        Self { clusters, noise }
    }

    pub fn centroids(&self) -> impl Iterator<Item = f64> + '_ {
        self.clusters.iter().map(|c| c.centroid)
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Cluster label of every point of a sorted 1-D sample.
///
/// Neighborhoods are contiguous index ranges in a sorted sample, so they are
/// found with two sliding pointers in O(n).
pub fn dbscan_1d_labels(points: &[f64], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>, ClusterError> {
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    debug_assert!(points.windows(2).all(|w| w[0] <= w[1]), "points must be sorted");
    let mut lo = vec![0usize; n];
    let mut hi = vec![0usize; n];
    let (mut l, mut h) = (0usize, 0usize);
    for i in 0..n {
        while points[i] - points[l] > eps {
            l += 1;
        }
        h = h.max(i);
        while h + 1 < n && points[h + 1] - points[i] <= eps {
            h += 1;
        }
        lo[i] = l;
        hi[i] = h;
    }
    let is_core: Vec<bool> = (0..n).map(|i| hi[i] - lo[i] + 1 >= min_pts).collect();

    // consecutive core points within eps share a cluster
    let mut labels = vec![None; n];
    let mut next_label = 0;
    let mut prev_core: Option<usize> = None;
    for i in (0..n).filter(|&i| is_core[i]) {
        let label = match prev_core {
            Some(p) if points[i] - points[p] <= eps => labels[p].unwrap(),
            _ => {
                next_label += 1;
                next_label - 1
            }
        };
        labels[i] = Some(label);
        prev_core = Some(i);
    }

    // next_core[j]: first core index >= j
    let mut next_core = vec![usize::MAX; n + 1];
    for j in (0..n).rev() {
        next_core[j] = if is_core[j] { j } else { next_core[j + 1] };
    }
    for i in (0..n).filter(|&i| !is_core[i]) {
        let c = next_core[lo[i]];
        if c <= hi[i] {
            labels[i] = labels[c];
        }
    }
    Ok(labels)
}

/// DBSCAN over sorted, normalized timestamps.
pub fn dbscan_1d(points: &[f64], eps: f64, min_pts: usize) -> Result<ClusterSet, ClusterError> {
    let labels = dbscan_1d_labels(points, eps, min_pts)?;
    Ok(ClusterSet::from_labels(points, &labels))
}

/// DBSCAN over (time, value) pairs sorted by time, Euclidean metric.
/// Clusters are discovered in scan order; a border point keeps the first
/// cluster that reaches it.
pub fn dbscan_2d_labels(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>, ClusterError> {
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    debug_assert!(points.windows(2).all(|w| w[0].0 <= w[1].0), "points must be sorted by time");
    let neighbors = |i: usize| -> Vec<usize> {
        let (ti, vi) = points[i];
        let start = points.partition_point(|p| ti - p.0 > eps);
        points[start..]
            .iter()
            .take_while(|p| p.0 - ti <= eps)
            .enumerate()
            .filter(|(_, p)| ((p.0 - ti).powi(2) + (p.1 - vi).powi(2)).sqrt() <= eps)
            .map(|(k, _)| start + k)
            .collect()
    };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_label = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seed = neighbors(i);
        if seed.len() < min_pts {
            continue;
        }
        let label = next_label;
        next_label += 1;
        labels[i] = Some(label);
        let mut queue = seed;
        while let Some(j) = queue.pop() {
            if labels[j].is_none() {
                labels[j] = Some(label);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
    }
    Ok(labels)
}

/// Smallest gap between any article centroid and any fixture centroid.
pub fn cluster_distance(article: &ClusterSet, fixture: &ClusterSet) -> Result<f64, ClusterError> {
    if article.is_empty() {
        return Err(ClusterError::NoCluster(Side::Article));
    }
    if fixture.is_empty() {
        return Err(ClusterError::NoCluster(Side::Fixture));
    }
    Ok(article.centroids().flat_map(|a| fixture.centroids().map(move |f| (a - f).abs())).fold(f64::INFINITY, f64::min))
}

/// Filters, scales and clusters one series.
pub fn cluster_series(series: &ReadSeries, frame: &TimeFrame, rssi_range: (f64, f64), cfg: &ParamConfig) -> ClusterSet {
    let kept = rssi_quantile_filter(series, cfg.rssi_quantile_dbscan);
    let times: Vec<f64> = kept.points.iter().map(|p| frame.scale(p.t_ms)).collect();
    let labels = if cfg.cluster_on_rssi {
        let (lo, hi) = rssi_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let pts: Vec<(f64, f64)> = kept.points.iter().zip(&times).map(|(p, &t)| (t, (p.rssi_dbm - lo) / span)).collect();
        dbscan_2d_labels(&pts, cfg.eps, cfg.min_pts)
    } else {
        dbscan_1d_labels(&times, cfg.eps, cfg.min_pts)
    };
    match labels {
        Ok(labels) => ClusterSet::from_labels(&times, &labels),
        Err(_) => ClusterSet::default(),
    }
}

/// Article × fixture distance matrix from centroid gaps. Pairs where either
/// side has no cluster are `None`.
pub fn dbscan_engine(agg: &Aggregated, cfg: &ParamConfig) -> Result<DistanceMatrix, PreprocessError> {
    dbscan_engine_with(agg, cfg, Exec::default())
}

pub fn dbscan_engine_with(agg: &Aggregated, cfg: &ParamConfig, exec: Exec) -> Result<DistanceMatrix, PreprocessError> {
    let frame = agg.time_frame()?;
    let rssi_range = agg
        .all_series()
        .flat_map(ReadSeries::rssi)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let articles: Vec<&ReadSeries> = agg.articles.values().collect();
    let fixtures: Vec<&ReadSeries> = agg.fixtures.values().collect();
    let article_sets = exec.map(&articles, |s| cluster_series(s, &frame, rssi_range, cfg));
    let fixture_sets = exec.map(&fixtures, |s| cluster_series(s, &frame, rssi_range, cfg));
    let values = exec.map(&article_sets, |a| fixture_sets.iter().map(|f| cluster_distance(a, f).ok()).collect());
    Ok(DistanceMatrix {
        articles: agg.articles.keys().cloned().collect(),
        fixtures: agg.fixtures.keys().cloned().collect(),
        values,
    })
}
