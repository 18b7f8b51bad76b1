//! Canonical CSV formats: reading, writing and validation.
//!
//! | file         | header                                      |
//! |--------------|---------------------------------------------|
//! | stocktake    | `epc,t_ms,rssi_dbm`                         |
//! | registry     | `epc,role,article_id,color,fixture_id`      |
//! | grid         | `fixture_id,grid_x,grid_y`                  |
//! | zones        | `fixture_id,zone_id`                        |
//! | groups       | `fixture_id,logical_fixture_id`             |
//! | ground truth | `article_id,color,fixture_id`               |
//! | sales        | `article_id,color,revenue,units`            |
//!
//! Files are UTF-8 with LF line endings and `.` as decimal separator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ArticleKey, FixtureGrid, FixtureId, ReadEvent, RegistryViolation, Session, Stocktake, TagRegistry, ZoneId};

pub const STOCKTAKE_HEADER: &[&str] = &["epc", "t_ms", "rssi_dbm"];
pub const REGISTRY_HEADER: &[&str] = &["epc", "role", "article_id", "color", "fixture_id"];
pub const GRID_HEADER: &[&str] = &["fixture_id", "grid_x", "grid_y"];
pub const ZONES_HEADER: &[&str] = &["fixture_id", "zone_id"];
pub const GROUPS_HEADER: &[&str] = &["fixture_id", "logical_fixture_id"];
pub const TRUTH_HEADER: &[&str] = &["article_id", "color", "fixture_id"];
pub const SALES_HEADER: &[&str] = &["article_id", "color", "revenue", "units"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}: unexpected header {found:?}, expected {expected:?}")]
    BadHeader { source_name: String, found: Vec<String>, expected: Vec<String> },
    #[error("{source_name}: malformed row at line {line}: {reason}")]
    MalformedRow { source_name: String, line: u64, reason: String },
    #[error("{0}: stocktake contains no read events")]
    EmptyStocktake(String),
    #[error("conflicting binding for EPC {0}")]
    ConflictingBinding(String),
    #[error("registry contains no reference tags")]
    NoReferenceTags,
    #[error("registry is inconsistent: {}", join(.0))]
    InvalidRegistry(Vec<RegistryViolation>),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("id {0} listed more than once")]
    DuplicateId(String),
    #[error("{0}")]
    Write(#[from] csv::Error),
}

fn join(v: &[RegistryViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl IngestError {
    /// Line number for row-level errors.
    pub fn line(&self) -> Option<u64> {
        match self {
            Self::MalformedRow { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Money amount in cents, parsed exactly from decimal text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cents(pub i64);

impl FromStr for Cents {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() && frac.is_empty() {
            return Err("empty amount".into());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("not a non-negative decimal amount: {s:?}"));
        }
        if frac.len() > 2 {
            return Err(format!("more than two decimals: {s:?}"));
        }
        let whole: i64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| format!("amount too large: {s:?}"))? };
        let mut frac_cents: i64 = if frac.is_empty() { 0 } else { frac.parse().unwrap() };
        if frac.len() == 1 {
            frac_cents *= 10;
        }
        whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .map(Cents)
            .ok_or_else(|| format!("amount too large: {s:?}"))
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl std::ops::Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        iter.fold(Cents(0), |a, b| a + b)
    }
}

/// Manually recorded article → fixture mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub truth: BTreeMap<ArticleKey, FixtureId>,
}

impl GroundTruth {
    /// Collapses colors. Fails if two colors of one article disagree on the fixture.
    pub fn without_colors(&self) -> Result<GroundTruth> {
        let mut truth = BTreeMap::new();
        for (key, fixture) in &self.truth {
            let plain = key.aggregation_key(false);
            if let Some(prev) = truth.insert(plain.clone(), fixture.clone()) {
                if &prev != fixture {
                    return Err(IngestError::ConflictingBinding(plain.article_id));
                }
            }
        }
        Ok(GroundTruth { truth })
    }

    /// Maps every fixture through the registry's logical grouping.
    pub fn to_logical(&self, registry: &TagRegistry) -> GroundTruth {
        GroundTruth { truth: self.truth.iter().map(|(k, f)| (k.clone(), registry.logical_fixture(f).to_string())).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalesRecord {
    pub article: ArticleKey,
    pub revenue: Cents,
    pub units: u64,
}

// ---------------------------------------------------------------------------
// generic row reading

struct Rows<R: Read> {
    name: String,
    reader: csv::Reader<R>,
}

impl<R: Read> Rows<R> {
    fn open(name: &str, rdr: R, header: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
        let found: Vec<String> = reader.headers().map_err(|e| csv_err(name, e))?.iter().map(str::to_string).collect();
        if found != header {
            return Err(IngestError::BadHeader {
                source_name: name.to_string(),
                found,
                expected: header.iter().map(|s| s.to_string()).collect(),
            });
        }
        Ok(Self { name: name.to_string(), reader })
    }

    fn for_each(mut self, mut f: impl FnMut(&csv::StringRecord, Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(&record, Row { name: &self.name, line })?;
                }
                Err(e) => return Err(csv_err(&self.name, e)),
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Row<'a> {
    name: &'a str,
    line: u64,
}

impl Row<'_> {
    fn malformed(&self, reason: impl Into<String>) -> IngestError {
        IngestError::MalformedRow { source_name: self.name.to_string(), line: self.line, reason: reason.into() }
    }

    fn parse<T: FromStr>(&self, field: &str, what: &str) -> Result<T> {
        field.parse().map_err(|_| self.malformed(format!("invalid {what}: {field:?}")))
    }

    fn non_empty<'f>(&self, field: &'f str, what: &str) -> Result<&'f str> {
        if field.is_empty() {
            Err(self.malformed(format!("empty {what}")))
        } else {
            Ok(field)
        }
    }
}

fn csv_err(name: &str, e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::MalformedRow { source_name: name.to_string(), line, reason: e.to_string() }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn opt(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

// ---------------------------------------------------------------------------
// stocktake

pub fn read_stocktake<R: Read>(rdr: R, id: &str, session: Session) -> Result<Stocktake> {
    let mut events = Vec::new();
    Rows::open(id, rdr, STOCKTAKE_HEADER)?.for_each(|rec, row| {
        let epc = row.non_empty(&rec[0], "epc")?;
        // integer milliseconds only; fractional input is rejected rather than rounded
        let t_ms: i64 = row.parse(&rec[1], "t_ms")?;
        let rssi: f64 = row.parse(&rec[2], "rssi_dbm")?;
        let ev = ReadEvent::new(epc, t_ms, rssi);
        if !ev.is_valid() {
            return Err(row.malformed(format!("t_ms must be >= 0 and rssi_dbm within [-100, 0], got {t_ms}, {rssi}")));
        }
        events.push(ev);
        Ok(())
    })?;
    if events.is_empty() {
        return Err(IngestError::EmptyStocktake(id.to_string()));
    }
    Ok(Stocktake::new(id, session, events))
}

/// Loads a stocktake CSV. The stocktake id is the file stem.
pub fn load_stocktake(path: &Path, session: Session) -> Result<Stocktake> {
    let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    read_stocktake(open(path)?, &id, session).map_err(|e| with_path(e, path))
}

fn with_path(e: IngestError, path: &Path) -> IngestError {
    match e {
        IngestError::MalformedRow { line, reason, .. } => {
            IngestError::MalformedRow { source_name: path.display().to_string(), line, reason }
        }
        other => other,
    }
}

pub fn write_stocktake<W: Write>(w: W, stocktake: &Stocktake) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(STOCKTAKE_HEADER)?;
    for e in &stocktake.events {
        out.write_record([e.epc.as_str(), &e.t_ms.to_string(), &e.rssi_dbm.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// registry

#[derive(PartialEq)]
enum Binding {
    Item(ArticleKey),
    Reference(FixtureId),
}

pub fn read_registry<R: Read>(rdr: R, name: &str) -> Result<TagRegistry> {
    let mut bindings: BTreeMap<String, Binding> = BTreeMap::new();
    Rows::open(name, rdr, REGISTRY_HEADER)?.for_each(|rec, row| {
        let epc = row.non_empty(&rec[0], "epc")?;
        let binding = match &rec[1] {
            "item" => {
                Binding::Item(ArticleKey { article_id: row.non_empty(&rec[2], "article_id")?.to_string(), color: opt(&rec[3]) })
            }
            "ref" => Binding::Reference(row.non_empty(&rec[4], "fixture_id")?.to_string()),
            other => return Err(row.malformed(format!("role must be item or ref, got {other:?}"))),
        };
        match bindings.get(epc) {
            Some(prev) if *prev != binding => Err(IngestError::ConflictingBinding(epc.to_string())),
            Some(_) => Ok(()),
            None => {
                bindings.insert(epc.to_string(), binding);
                Ok(())
            }
        }
    })?;
    let mut reg = TagRegistry::default();
    for (epc, b) in bindings {
        match b {
            Binding::Item(k) => {
                reg.item_map.insert(epc, k);
            }
            Binding::Reference(f) => {
                reg.reference_map.insert(epc, f);
            }
        }
    }
    if reg.reference_map.is_empty() {
        return Err(IngestError::NoReferenceTags);
    }
    check_registry(&reg)?;
    Ok(reg)
}

fn check_registry(reg: &TagRegistry) -> Result<()> {
    let violations = reg.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(IngestError::InvalidRegistry(violations))
    }
}

pub fn load_registry(path: &Path) -> Result<TagRegistry> {
    read_registry(open(path)?, &path.display().to_string())
}

pub fn write_registry<W: Write>(w: W, reg: &TagRegistry) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REGISTRY_HEADER)?;
    for (epc, k) in &reg.item_map {
        out.write_record([epc.as_str(), "item", &k.article_id, k.color_str(), ""])?;
    }
    for (epc, f) in &reg.reference_map {
        out.write_record([epc.as_str(), "ref", "", "", f.as_str()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_pairs<R: Read>(rdr: R, name: &str, header: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    Rows::open(name, rdr, header)?.for_each(|rec, row| {
        let k = row.non_empty(&rec[0], header[0])?;
        let v = row.non_empty(&rec[1], header[1])?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(IngestError::DuplicateId(k.to_string()));
        }
        Ok(())
    })?;
    Ok(map)
}

fn write_pairs<W: Write>(w: W, header: &[&str], map: &BTreeMap<String, String>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for (k, v) in map {
        out.write_record([k, v])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a zone map and attaches it to the registry.
pub fn read_zones<R: Read>(rdr: R, name: &str, reg: &mut TagRegistry) -> Result<()> {
    reg.zone_map = read_pairs(rdr, name, ZONES_HEADER)?;
    check_registry(reg)
}

pub fn load_zones(path: &Path, reg: &mut TagRegistry) -> Result<()> {
    read_zones(open(path)?, &path.display().to_string(), reg)
}

/// Reads a zone map without a registry (evaluation only needs fixture → zone).
pub fn load_zone_map(path: &Path) -> Result<BTreeMap<FixtureId, ZoneId>> {
    read_pairs(open(path)?, &path.display().to_string(), ZONES_HEADER)
}

pub fn write_zones<W: Write>(w: W, zones: &BTreeMap<FixtureId, ZoneId>) -> Result<()> {
    write_pairs(w, ZONES_HEADER, zones)
}

/// Reads a physical → logical fixture grouping and attaches it to the registry.
pub fn read_groups<R: Read>(rdr: R, name: &str, reg: &mut TagRegistry) -> Result<()> {
    reg.fixture_groups = read_pairs(rdr, name, GROUPS_HEADER)?;
    check_registry(reg)
}

pub fn load_groups(path: &Path, reg: &mut TagRegistry) -> Result<()> {
    read_groups(open(path)?, &path.display().to_string(), reg)
}

pub fn write_groups<W: Write>(w: W, groups: &BTreeMap<FixtureId, FixtureId>) -> Result<()> {
    write_pairs(w, GROUPS_HEADER, groups)
}

// ---------------------------------------------------------------------------
// grid

pub fn read_grid<R: Read>(rdr: R, name: &str) -> Result<FixtureGrid> {
    let mut grid = FixtureGrid::default();
    Rows::open(name, rdr, GRID_HEADER)?.for_each(|rec, row| {
        let id = row.non_empty(&rec[0], "fixture_id")?;
        let x: i64 = row.parse(&rec[1], "grid_x")?;
        let y: i64 = row.parse(&rec[2], "grid_y")?;
        if grid.cells.insert(id.to_string(), (x, y)).is_some() {
            return Err(IngestError::DuplicateId(id.to_string()));
        }
        Ok(())
    })?;
    Ok(grid)
}

pub fn load_grid(path: &Path) -> Result<FixtureGrid> {
    read_grid(open(path)?, &path.display().to_string())
}

pub fn write_grid<W: Write>(w: W, grid: &FixtureGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(GRID_HEADER)?;
    for (id, (x, y)) in &grid.cells {
        out.write_record([id.as_str(), &x.to_string(), &y.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ground truth

/// Reads ground truth. With a registry, unknown articles and fixtures are rejected.
pub fn read_ground_truth<R: Read>(rdr: R, name: &str, registry: Option<&TagRegistry>) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    Rows::open(name, rdr, TRUTH_HEADER)?.for_each(|rec, row| {
        let key = ArticleKey { article_id: row.non_empty(&rec[0], "article_id")?.to_string(), color: opt(&rec[1]) };
        let fixture = row.non_empty(&rec[2], "fixture_id")?.to_string();
        if let Some(reg) = registry {
            if !reg.knows_article(&key.article_id) {
                return Err(IngestError::UnknownId(key.article_id));
            }
            if !reg.knows_fixture(&fixture) {
                return Err(IngestError::UnknownId(fixture));
            }
        }
        if gt.truth.insert(key.clone(), fixture).is_some() {
            return Err(IngestError::DuplicateId(key.to_string()));
        }
        Ok(())
    })?;
    Ok(gt)
}

pub fn load_ground_truth(path: &Path, registry: Option<&TagRegistry>) -> Result<GroundTruth> {
    read_ground_truth(open(path)?, &path.display().to_string(), registry)
}

pub fn write_ground_truth<W: Write>(w: W, gt: &GroundTruth) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRUTH_HEADER)?;
    for (k, f) in &gt.truth {
        out.write_record([k.article_id.as_str(), k.color_str(), f.as_str()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sales

pub fn read_sales<R: Read>(rdr: R, name: &str) -> Result<Vec<SalesRecord>> {
    let mut out = Vec::new();
    Rows::open(name, rdr, SALES_HEADER)?.for_each(|rec, row| {
        let article = ArticleKey { article_id: row.non_empty(&rec[0], "article_id")?.to_string(), color: opt(&rec[1]) };
        let revenue: Cents = rec[2].parse().map_err(|e: String| row.malformed(e))?;
        let units: u64 = row.parse(&rec[3], "units")?;
        out.push(SalesRecord { article, revenue, units });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_sales(path: &Path) -> Result<Vec<SalesRecord>> {
    read_sales(open(path)?, &path.display().to_string())
}

pub fn write_sales<W: Write>(w: W, sales: &[SalesRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SALES_HEADER)?;
    for s in sales {
        out.write_record([s.article.article_id.as_str(), s.article.color_str(), &s.revenue.to_string(), &s.units.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// foreign read-event logs

/// Unit of the timestamp column in a foreign log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Milliseconds,
    Seconds,
}

/// Describes where the read-event columns live in a foreign CSV export.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnMapping {
    pub epc: String,
    pub timestamp: String,
    pub rssi: String,
    pub time_unit: TimeUnit,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

/// Parses `12.345` seconds into 12345 ms; more than millisecond precision is rejected.
fn seconds_to_ms(s: &str) -> Option<i64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    let frac = frac.trim_end_matches('0');
    if frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: i64 = whole.parse().ok()?;
    let frac_ms: i64 = if frac.is_empty() { 0 } else { format!("{frac:0<3}").parse().ok()? };
    whole.checked_mul(1000)?.checked_add(frac_ms)
}

/// Converts a foreign read-event export into a canonical stocktake.
/// Columns not named in the mapping are ignored.
pub fn adapt_stocktake<R: Read>(rdr: R, id: &str, session: Session, mapping: &ColumnMapping) -> Result<Stocktake> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).delimiter(mapping.delimiter as u8).from_reader(rdr);
    let headers = reader.headers().map_err(|e| csv_err(id, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| IngestError::BadHeader {
            source_name: id.to_string(),
            found: headers.iter().map(str::to_string).collect(),
            expected: vec![mapping.epc.clone(), mapping.timestamp.clone(), mapping.rssi.clone()],
        })
    };
    let (ce, ct, cr) = (col(&mapping.epc)?, col(&mapping.timestamp)?, col(&mapping.rssi)?);
    let mut events = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(id, e))?;
        let row = Row { name: id, line: rec.position().map_or(0, |p| p.line()) };
        let field = |i: usize| rec.get(i).ok_or_else(|| row.malformed("missing column"));
        let epc = row.non_empty(field(ce)?, "epc")?;
        let t_raw = field(ct)?;
        let t_ms = match mapping.time_unit {
            TimeUnit::Milliseconds => row.parse(t_raw, "timestamp")?,
            TimeUnit::Seconds => seconds_to_ms(t_raw).ok_or_else(|| row.malformed(format!("invalid timestamp {t_raw:?}")))?,
        };
        let ev = ReadEvent::new(epc, t_ms, row.parse(field(cr)?, "rssi")?);
        if !ev.is_valid() {
            return Err(row.malformed("timestamp or rssi out of range"));
        }
        events.push(ev);
    }
    if events.is_empty() {
        return Err(IngestError::EmptyStocktake(id.to_string()));
    }
    Ok(Stocktake::new(id, session, events))
}
