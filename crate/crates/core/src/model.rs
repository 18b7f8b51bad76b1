//! Domain types shared across the pipeline.
//!
//! Everything here is plain data: built once, then shared read-only
//! (all types are `Send + Sync`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Fixture identifier as it appears in the registry (physical or logical).
pub type FixtureId = String;

/// Zone identifier.
pub type ZoneId = String;

/// Lowest RSSI accepted for a read.
pub const RSSI_MIN_DBM: f64 = -100.0;
/// Highest RSSI accepted for a read.
pub const RSSI_MAX_DBM: f64 = 0.0;

/// A single tag response recorded by the handheld reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadEvent {
    pub epc: String,
    pub t_ms: i64,
    pub rssi_dbm: f64,
}

impl ReadEvent {
    pub fn new(epc: impl Into<String>, t_ms: i64, rssi_dbm: f64) -> Self {
        Self { epc: epc.into(), t_ms, rssi_dbm }
    }

    pub fn is_valid(&self) -> bool {
        self.t_ms >= 0 && (RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&self.rssi_dbm)
    }
}

/// Identifies an article, optionally narrowed to one color.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArticleKey {
    pub article_id: String,
    pub color: Option<String>,
}

impl ArticleKey {
    pub fn new(article_id: impl Into<String>) -> Self {
        Self { article_id: article_id.into(), color: None }
    }

    pub fn with_color(article_id: impl Into<String>, color: impl Into<String>) -> Self {
        Self { article_id: article_id.into(), color: Some(color.into()) }
    }

    /// Key used when aggregating: colors are kept only in color-aware mode.
    pub fn aggregation_key(&self, color_aware: bool) -> ArticleKey {
        if color_aware {
            self.clone()
        } else {
            ArticleKey { article_id: self.article_id.clone(), color: None }
        }
    }

    /// Color as written to CSV (empty when absent).
    pub fn color_str(&self) -> &str {
        self.color.as_deref().unwrap_or("")
    }
}

impl fmt::Display for ArticleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.color {
            Some(c) => write!(f, "{}/{}", self.article_id, c),
            None => f.write_str(&self.article_id),
        }
    }
}

/// Problems found by [`TagRegistry::validate`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegistryViolation {
    /// The EPC is bound both as an item tag and as a reference tag.
    DuplicateEpc(String),
    /// A zone or group entry names a fixture that has no reference tag.
    UnknownFixture(FixtureId),
    /// An item tag with an empty article id.
    EmptyArticle(String),
}

impl fmt::Display for RegistryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateEpc(e) => write!(f, "EPC {e} is both an item and a reference tag"),
            Self::UnknownFixture(x) => write!(f, "fixture {x} has no reference tag"),
            Self::EmptyArticle(e) => write!(f, "item tag {e} has an empty article id"),
        }
    }
}

/// Binds EPCs to articles (item tags) or fixtures (reference tags).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagRegistry {
    pub item_map: BTreeMap<String, ArticleKey>,
    pub reference_map: BTreeMap<String, FixtureId>,
    /// Physical fixture → logical fixture. Unlisted fixtures map to themselves.
    pub fixture_groups: BTreeMap<FixtureId, FixtureId>,
    /// Fixture → zone.
    pub zone_map: BTreeMap<FixtureId, ZoneId>,
}

impl TagRegistry {
    /// Physical fixtures that carry at least one reference tag.
    pub fn physical_fixtures(&self) -> BTreeSet<FixtureId> {
        self.reference_map.values().cloned().collect()
    }

    /// Logical fixture for a physical one.
    pub fn logical_fixture<'a>(&'a self, fixture: &'a str) -> &'a str {
        self.fixture_groups.get(fixture).map(String::as_str).unwrap_or(fixture)
    }

    /// Fixtures after grouping is applied.
    pub fn logical_fixtures(&self) -> BTreeSet<FixtureId> {
        self.reference_map.values().map(|f| self.logical_fixture(f).to_string()).collect()
    }

    /// True if `id` names a physical fixture or a logical group.
    pub fn knows_fixture(&self, id: &str) -> bool {
        self.reference_map.values().any(|f| f == id) || self.fixture_groups.values().any(|g| g == id)
    }

    pub fn knows_article(&self, article_id: &str) -> bool {
        self.item_map.values().any(|k| k.article_id == article_id)
    }

    /// Zone of a fixture, looking through logical grouping when the
    /// logical id itself is not zoned.
    pub fn zone_of(&self, fixture: &str) -> Option<&ZoneId> {
        self.zone_map.get(fixture).or_else(|| {
            self.fixture_groups
                .iter()
                .find(|(_, logical)| logical.as_str() == fixture)
                .and_then(|(physical, _)| self.zone_map.get(physical))
        })
    }

    /// Returns every violated registry invariant; empty when the registry is sound.
    pub fn validate(&self) -> Vec<RegistryViolation> {
        let mut out = Vec::new();
        for epc in self.item_map.keys() {
            if self.reference_map.contains_key(epc) {
                out.push(RegistryViolation::DuplicateEpc(epc.clone()));
            }
        }
        for (epc, key) in &self.item_map {
            if key.article_id.is_empty() {
                out.push(RegistryViolation::EmptyArticle(epc.clone()));
            }
        }
        let fixtures = self.physical_fixtures();
        // zones may name a logical fixture; group members must be physical
        let unknown: BTreeSet<&FixtureId> = self
            .zone_map
            .keys()
            .filter(|f| !fixtures.contains(*f) && !self.fixture_groups.values().any(|g| g == *f))
            .chain(self.fixture_groups.keys().filter(|f| !fixtures.contains(*f)))
            .collect();
        out.extend(unknown.into_iter().map(|f| RegistryViolation::UnknownFixture(f.clone())));
        out
    }
}

/// Inventory mode of the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Session {
    #[default]
    S0,
    S1,
}

impl Session {
    pub fn from_index(i: u8) -> Option<Session> {
        match i {
            0 => Some(Session::S0),
            1 => Some(Session::S1),
            _ => None,
        }
    }
}

/// One walk-through scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Stocktake {
    pub id: String,
    pub session: Session,
    pub events: Vec<ReadEvent>,
}

impl Stocktake {
    /// Builds a stocktake with events stably sorted by timestamp.
    pub fn new(id: impl Into<String>, session: Session, mut events: Vec<ReadEvent>) -> Self {
        events.sort_by_key(|e| e.t_ms);
        Self { id: id.into(), session, events }
    }
}

/// What a [`ReadSeries`] aggregates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeriesKey {
    Article(ArticleKey),
    Fixture(FixtureId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadPoint {
    pub t_ms: i64,
    pub rssi_dbm: f64,
}

/// Time-ordered reads of one article or one (logical) fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadSeries {
    pub key: SeriesKey,
    pub points: Vec<ReadPoint>,
}

impl ReadSeries {
    pub fn new(key: SeriesKey, points: Vec<ReadPoint>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
        Self { key, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rssi(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.rssi_dbm)
    }
}

/// Local cost used inside dynamic time warping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalCost {
    #[default]
    Absolute,
    Squared,
}

/// Tuning parameters of both distance engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConfig {
    /// Reads below this per-series RSSI quantile are dropped before clustering.
    pub rssi_quantile_dbscan: f64,
    /// DBSCAN neighborhood radius on the [0, 1] time axis.
    pub eps: f64,
    /// Minimum neighborhood size (self included) of a core point.
    pub min_pts: usize,
    /// Reads below this per-series RSSI quantile are dropped before resampling.
    pub rssi_quantile_dtw: f64,
    /// Resampling bin width in seconds.
    pub resample_s: f64,
    /// Maximum index shift allowed by the warping band.
    pub dtw_window: usize,
    /// Offset added to dBm values before summing into bins.
    pub rssi_shift: f64,
    /// Cluster on (time, scaled RSSI) instead of time alone.
    #[serde(default)]
    pub cluster_on_rssi: bool,
    #[serde(default)]
    pub dtw_cost: LocalCost,
}

impl ParamConfig {
    pub fn session0() -> Self {
        Self {
            rssi_quantile_dbscan: 0.8,
            eps: 0.085,
            min_pts: 8,
            rssi_quantile_dtw: 0.4,
            resample_s: 0.2,
            dtw_window: 9,
            rssi_shift: 100.0,
            cluster_on_rssi: false,
            dtw_cost: LocalCost::Absolute,
        }
    }

    pub fn session1() -> Self {
        Self {
            rssi_quantile_dbscan: 0.77,
            eps: 0.068,
            min_pts: 7,
            rssi_quantile_dtw: 0.5,
            resample_s: 0.1,
            dtw_window: 12,
            ..Self::session0()
        }
    }

    pub fn for_session(session: Session) -> Self {
        match session {
            Session::S0 => Self::session0(),
            Session::S1 => Self::session1(),
        }
    }

    /// Names of out-of-range fields, empty when the config is usable.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.rssi_quantile_dbscan) {
            bad.push("rssi_quantile_dbscan");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            bad.push("eps");
        }
        if self.min_pts < 1 {
            bad.push("min_pts");
        }
        if !(0.0..1.0).contains(&self.rssi_quantile_dtw) {
            bad.push("rssi_quantile_dtw");
        }
        if !(self.resample_s > 0.0 && self.resample_s.is_finite()) {
            bad.push("resample_s");
        }
        if !self.rssi_shift.is_finite() {
            bad.push("rssi_shift");
        }
        bad
    }
}

/// Field-by-field override of a [`ParamConfig`], as read from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub rssi_quantile_dbscan: Option<f64>,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub rssi_quantile_dtw: Option<f64>,
    pub resample_s: Option<f64>,
    pub dtw_window: Option<usize>,
    pub rssi_shift: Option<f64>,
    pub cluster_on_rssi: Option<bool>,
    pub dtw_cost: Option<LocalCost>,
}

impl ParamOverrides {
    pub fn apply(&self, base: &mut ParamConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { base.$f = v; })*};
        }
        set!(
            rssi_quantile_dbscan,
            eps,
            min_pts,
            rssi_quantile_dtw,
            resample_s,
            dtw_window,
            rssi_shift,
            cluster_on_rssi,
            dtw_cost
        );
    }

    /// Later overrides win.
    pub fn merge(mut self, other: &ParamOverrides) -> ParamOverrides {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f; })*};
        }
        take!(
            rssi_quantile_dbscan,
            eps,
            min_pts,
            rssi_quantile_dtw,
            resample_s,
            dtw_window,
            rssi_shift,
            cluster_on_rssi,
            dtw_cost
        );
        self
    }
}

/// Probability of an article sitting on each fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDistribution {
    pub article: ArticleKey,
    pub probs: BTreeMap<FixtureId, f64>,
    pub certainty: f64,
}

impl AssignmentDistribution {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }
}

/// Grid cell of every fixture on the floor plan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureGrid {
    pub cells: BTreeMap<FixtureId, (i64, i64)>,
}

impl FixtureGrid {
    pub fn cell(&self, fixture: &str) -> Option<(i64, i64)> {
        self.cells.get(fixture).copied()
    }

    /// Chebyshev distance between two fixtures, `None` if either lacks a cell.
    pub fn chebyshev(&self, a: &str, b: &str) -> Option<i64> {
        let (ax, ay) = self.cell(a)?;
        let (bx, by) = self.cell(b)?;
        Some((ax - bx).abs().max((ay - by).abs()))
    }
}

/// Article × fixture distances; `None` marks a pair without a usable distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub articles: Vec<ArticleKey>,
    pub fixtures: Vec<FixtureId>,
    /// Row-major, `articles.len()` rows of `fixtures.len()` entries.
    pub values: Vec<Vec<Option<f64>>>,
}

impl DistanceMatrix {
    pub fn get(&self, article: usize, fixture: usize) -> Option<f64> {
        self.values[article][fixture]
    }

    /// One article's row keyed by fixture.
    pub fn row(&self, article: usize) -> BTreeMap<FixtureId, Option<f64>> {
        self.fixtures.iter().cloned().zip(self.values[article].iter().copied()).collect()
    }
}
