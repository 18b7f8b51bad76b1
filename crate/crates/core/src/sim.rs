//! Seeded stocktake simulator.
//!
//! A reader walks past fixtures laid out on a grid, dwelling at each one.
//! Every inventory round, tags on the visited fixture answer with high
//! probability and strong signal; tags elsewhere answer rarely, with signal
//! decaying linearly per grid cell of separation. RSSI noise is Gaussian.
//! The model is meant to produce easy-to-hard regimes for testing, not
//! radio fidelity.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{self, GroundTruth, IngestError};
use crate::model::{ArticleKey, FixtureGrid, FixtureId, ReadEvent, Session, Stocktake, TagRegistry, ZoneId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssiModel {
    /// Mean RSSI of a tag on the fixture being visited.
    pub at_fixture_dbm: f64,
    /// Mean loss per grid cell between tag and reader.
    pub decay_per_cell_db: f64,
    pub noise_sigma_db: f64,
}

impl Default for RssiModel {
    fn default() -> Self {
        Self { at_fixture_dbm: -50.0, decay_per_cell_db: 8.0, noise_sigma_db: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkStep {
    /// Zero-based fixture index.
    pub fixture: usize,
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub fixtures: usize,
    /// Fixtures are placed row-major on a grid this many cells wide.
    pub grid_columns: usize,
    /// Separately tagged, co-located parts per fixture (1 = no parts).
    pub parts_per_fixture: usize,
    /// Articles are planted round-robin over fixtures.
    pub articles: usize,
    /// Colors per article; with more than one, colors sit on different fixtures.
    pub colors_per_article: usize,
    pub items_per_article: usize,
    pub ref_tags_per_fixture: usize,
    /// Visit order; empty means every fixture once, in index order, for `dwell_s`.
    pub walk: Vec<WalkStep>,
    pub dwell_s: f64,
    pub session: Session,
    /// Inventory rounds per second in Session 0.
    pub read_rate_hz: f64,
    /// Session 1 round rate relative to Session 0.
    pub s1_rate_factor: f64,
    /// Chance a tag on the visited fixture answers in a round.
    pub read_probability: f64,
    pub rssi: RssiModel,
    /// Chance a tag on any other fixture answers in a round.
    pub cross_read_rate: f64,
    /// Zones are square blocks of this many grid cells.
    pub zone_width: usize,
    pub start_ms: i64,
    pub seed: u64,
}

impl Default for SimScenario {
    /// A desk-scale lab: 10 fixtures, 27 articles, 70 reference tags.
    fn default() -> Self {
        Self {
            fixtures: 10,
            grid_columns: 5,
            parts_per_fixture: 1,
            articles: 27,
            colors_per_article: 1,
            items_per_article: 6,
            ref_tags_per_fixture: 7,
            walk: Vec::new(),
            dwell_s: 10.0,
            session: Session::S0,
            read_rate_hz: 4.0,
            s1_rate_factor: 0.715,
            read_probability: 0.9,
            rssi: RssiModel::default(),
            cross_read_rate: 0.02,
            zone_width: 2,
            start_ms: 1_600_000_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario field {0} is out of range")]
    OutOfRange(&'static str),
    #[error("walk visits fixture {0}, which does not exist")]
    UnknownFixture(usize),
}

/// Everything a simulated stocktake produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub stocktake: Stocktake,
    /// Registry with zones; groups are set when fixtures have parts.
    pub registry: TagRegistry,
    /// Physical (part-level) locations.
    pub truth: GroundTruth,
    pub grid: FixtureGrid,
}

impl SimOutput {
    pub fn zones(&self) -> &BTreeMap<FixtureId, ZoneId> {
        &self.registry.zone_map
    }

    /// Writes every file in the canonical CSV formats.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), IngestError> {
        std::fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
        let create = |name: &str| {
            let path = dir.join(name);
            File::create(&path).map(BufWriter::new).map_err(|source| IngestError::Io { path, source })
        };
        ingest::write_stocktake(create("stocktake.csv")?, &self.stocktake)?;
        ingest::write_registry(create("registry.csv")?, &self.registry)?;
        ingest::write_ground_truth(create("truth.csv")?, &self.truth)?;
        ingest::write_grid(create("grid.csv")?, &self.grid)?;
        ingest::write_zones(create("zones.csv")?, &self.registry.zone_map)?;
        if !self.registry.fixture_groups.is_empty() {
            ingest::write_groups(create("groups.csv")?, &self.registry.fixture_groups)?;
        }
        Ok(())
    }
}

struct Tag {
    epc: String,
    fixture: usize,
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let checks: [(bool, &'static str); 13] = [
            (self.fixtures >= 1, "fixtures"),
            (self.grid_columns >= 1, "grid_columns"),
            (self.parts_per_fixture >= 1, "parts_per_fixture"),
            (self.colors_per_article >= 1, "colors_per_article"),
            (self.ref_tags_per_fixture >= 1, "ref_tags_per_fixture"),
            (self.dwell_s > 0.0 && self.dwell_s.is_finite(), "dwell_s"),
            (self.read_rate_hz > 0.0 && self.read_rate_hz.is_finite(), "read_rate_hz"),
            (self.s1_rate_factor > 0.0 && self.s1_rate_factor <= 1.0, "s1_rate_factor"),
            (prob(self.read_probability), "read_probability"),
            (prob(self.cross_read_rate), "cross_read_rate"),
            (self.rssi.noise_sigma_db >= 0.0 && self.rssi.noise_sigma_db.is_finite(), "rssi.noise_sigma_db"),
            (self.zone_width >= 1, "zone_width"),
            (self.start_ms >= 0, "start_ms"),
        ];
        if let Some((_, name)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(ScenarioError::OutOfRange(name));
        }
        for step in &self.walk {
            if step.fixture >= self.fixtures {
                return Err(ScenarioError::UnknownFixture(step.fixture));
            }
            if !(step.dwell_s > 0.0 && step.dwell_s.is_finite()) {
                return Err(ScenarioError::OutOfRange("walk.dwell_s"));
            }
        }
        Ok(())
    }

    fn fixture_name(&self, i: usize) -> String {
        let width = self.fixtures.to_string().len().max(2);
        format!("F{:0width$}", i + 1)
    }

    /// Name of a physical fixture part.
    fn part_name(&self, fixture: usize, part: usize) -> String {
        if self.parts_per_fixture == 1 {
            self.fixture_name(fixture)
        } else {
            format!("{}{}", self.fixture_name(fixture), (b'a' + (part % 26) as u8) as char)
        }
    }

    fn cell(&self, fixture: usize) -> (i64, i64) {
        ((fixture % self.grid_columns) as i64, (fixture / self.grid_columns) as i64)
    }

    fn rounds_per_second(&self) -> f64 {
        match self.session {
            Session::S0 => self.read_rate_hz,
            Session::S1 => self.read_rate_hz * self.s1_rate_factor,
        }
    }

    fn walk_steps(&self) -> Vec<WalkStep> {
        if self.walk.is_empty() {
            (0..self.fixtures).map(|fixture| WalkStep { fixture, dwell_s: self.dwell_s }).collect()
        } else {
            self.walk.clone()
        }
    }
}

/// Generates one stocktake with its registry, ground truth and grid.
/// The same scenario (including seed) always yields identical output.
pub fn generate(scenario: &SimScenario) -> Result<SimOutput, ScenarioError> {
    scenario.validate()?;
    let s = scenario;
    let mut registry = TagRegistry::default();
    let mut truth = GroundTruth::default();
    let mut grid = FixtureGrid::default();
    let mut tags: Vec<Tag> = Vec::new();

    for f in 0..s.fixtures {
        let (x, y) = s.cell(f);
        let zone = format!("Z{}-{}", x as usize / s.zone_width, y as usize / s.zone_width);
        for part in 0..s.parts_per_fixture {
            let name = s.part_name(f, part);
            grid.cells.insert(name.clone(), (x, y));
            registry.zone_map.insert(name.clone(), zone.clone());
            if s.parts_per_fixture > 1 {
                registry.fixture_groups.insert(name.clone(), s.fixture_name(f));
            }
            for r in 0..s.ref_tags_per_fixture {
                let epc = format!("REF-{name}-{r:02}");
                registry.reference_map.insert(epc.clone(), name.clone());
                tags.push(Tag { epc, fixture: f });
            }
        }
    }

    let article_width = s.articles.to_string().len().max(3);
    let color_step = (s.fixtures / s.colors_per_article).max(1);
    for a in 0..s.articles {
        let article_id = format!("A{:0article_width$}", a + 1);
        for c in 0..s.colors_per_article {
            let key = if s.colors_per_article == 1 {
                ArticleKey::new(article_id.clone())
            } else {
                ArticleKey::with_color(article_id.clone(), format!("c{c}"))
            };
            let fixture = (a + c * color_step) % s.fixtures;
            let part = (a / s.fixtures) % s.parts_per_fixture;
            truth.truth.insert(key.clone(), s.part_name(fixture, part));
            for i in 0..s.items_per_article {
                let epc = format!("ITM-{}-{}-{i:03}", article_id, key.color_str());
                registry.item_map.insert(epc.clone(), key.clone());
                tags.push(Tag { epc, fixture });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let noise = Normal::new(0.0, s.rssi.noise_sigma_db).expect("sigma validated");
    let round_ms = 1000.0 / s.rounds_per_second();
    let mut events = Vec::new();
    let mut clock = s.start_ms as f64;
    let mut last_t = s.start_ms - 1;
    for step in s.walk_steps() {
        let rounds = (step.dwell_s * s.rounds_per_second()).round().max(1.0) as usize;
        let here = s.cell(step.fixture);
        for _ in 0..rounds {
            let round_start = clock.round() as i64;
            for tag in &tags {
                let p = if tag.fixture == step.fixture { s.read_probability } else { s.cross_read_rate };
                if !rng.random_bool(p) {
                    continue;
                }
                let (tx, ty) = s.cell(tag.fixture);
                let cells = (tx - here.0).abs().max((ty - here.1).abs()) as f64;
                let mean = s.rssi.at_fixture_dbm - s.rssi.decay_per_cell_db * cells;
                let rssi = (mean + noise.sample(&mut rng)).round().clamp(-100.0, 0.0);
                last_t = (last_t + 1).max(round_start);
                events.push(ReadEvent::new(tag.epc.clone(), last_t, rssi));
            }
            clock += round_ms;
        }
    }
    let stocktake = Stocktake::new(format!("sim-{}", s.seed), s.session, events);
    Ok(SimOutput { stocktake, registry, truth, grid })
}

/// Staff-style disturbances applied to a clean stocktake.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Fraction of item-tag reads removed.
    pub drop_item_rate: f64,
    /// Fraction of reference-tag reads removed.
    pub drop_reference_rate: f64,
    /// Chance each read is echoed at a uniformly random time in the span,
    /// as when the reader sweeps across the floor.
    pub interleave_rate: f64,
    /// Signal loss of echoed reads.
    pub interleave_attenuation_db: f64,
    pub seed: u64,
}

impl NoiseProfile {
    pub fn is_empty(&self) -> bool {
        self.drop_item_rate == 0.0 && self.drop_reference_rate == 0.0 && self.interleave_rate == 0.0
    }
}

/// Applies `profile` to a stocktake. An empty profile returns it unchanged.
pub fn degrade(stocktake: &Stocktake, registry: &TagRegistry, profile: &NoiseProfile) -> Stocktake {
    if profile.is_empty() || stocktake.events.is_empty() {
        return stocktake.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let t_min = stocktake.events.first().unwrap().t_ms;
    let t_max = stocktake.events.last().unwrap().t_ms;
    let mut out = Vec::with_capacity(stocktake.events.len());
    for ev in &stocktake.events {
        let drop = if registry.item_map.contains_key(&ev.epc) {
            profile.drop_item_rate
        } else if registry.reference_map.contains_key(&ev.epc) {
            profile.drop_reference_rate
        } else {
            0.0
        };
        if drop > 0.0 && rng.random_bool(drop.clamp(0.0, 1.0)) {
            continue;
        }
        out.push(ev.clone());
        if profile.interleave_rate > 0.0 && rng.random_bool(profile.interleave_rate.clamp(0.0, 1.0)) {
            let t = rng.random_range(t_min..=t_max);
            let rssi = (ev.rssi_dbm - profile.interleave_attenuation_db).clamp(-100.0, 0.0);
            out.push(ReadEvent::new(ev.epc.clone(), t, rssi));
        }
    }
    Stocktake::new(stocktake.id.clone(), stocktake.session, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_scenario_reads_only_visited_fixture() {
        let sc = SimScenario {
            cross_read_rate: 0.0,
            rssi: RssiModel { noise_sigma_db: 0.0, ..RssiModel::default() },
            ..SimScenario::default()
        };
        let out = generate(&sc).unwrap();
        let rounds_per_fixture = (sc.dwell_s * sc.read_rate_hz) as i64;
        let round_ms = (1000.0 / sc.read_rate_hz) as i64;
        let dwell_ms = rounds_per_fixture * round_ms;
        for ev in &out.stocktake.events {
            let visited = ((ev.t_ms - sc.start_ms) / dwell_ms) as usize;
            let fixture = match (out.registry.item_map.get(&ev.epc), out.registry.reference_map.get(&ev.epc)) {
                (Some(k), None) => out.truth.truth[k].clone(),
                (None, Some(f)) => f.clone(),
                _ => panic!("unregistered epc"),
            };
            assert_eq!(fixture, sc.fixture_name(visited));
            assert_eq!(ev.rssi_dbm, -50.0);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let sc = SimScenario { seed: 42, ..SimScenario::default() };
        assert_eq!(generate(&sc).unwrap(), generate(&sc).unwrap());
        let other = SimScenario { seed: 43, ..SimScenario::default() };
        assert_ne!(generate(&sc).unwrap().stocktake, generate(&other).unwrap().stocktake);
    }

    #[test]
    fn output_passes_registry_validation_and_is_time_ordered() {
        let sc = SimScenario { parts_per_fixture: 2, colors_per_article: 2, ..SimScenario::default() };
        let out = generate(&sc).unwrap();
        assert!(out.registry.validate().is_empty());
        assert!(out.stocktake.events.windows(2).all(|w| w[0].t_ms < w[1].t_ms));
        assert_eq!(out.truth.truth.len(), 54);
        assert_eq!(out.registry.logical_fixtures().len(), 10);
        assert_eq!(out.registry.physical_fixtures().len(), 20);
        for f in out.truth.truth.values() {
            assert!(out.grid.cell(f).is_some());
        }
    }

    #[test]
    fn session1_reads_less() {
        let s0 = generate(&SimScenario::default()).unwrap().stocktake.events.len() as f64;
        let s1 = generate(&SimScenario { session: Session::S1, ..SimScenario::default() }).unwrap().stocktake.events.len() as f64;
        assert!((s1 / s0 - 0.715).abs() < 0.05, "ratio {}", s1 / s0);
    }

    #[test]
    fn lab_like_counts() {
        let out = generate(&SimScenario::default()).unwrap();
        assert_eq!(out.registry.physical_fixtures().len(), 10);
        assert_eq!(out.truth.truth.len(), 27);
        assert_eq!(out.registry.reference_map.len(), 70);
    }

    #[test]
    fn bad_scenarios_are_rejected() {
        let sc = SimScenario { cross_read_rate: 1.5, ..SimScenario::default() };
        assert_eq!(generate(&sc), Err(ScenarioError::OutOfRange("cross_read_rate")));
        let sc = SimScenario { walk: vec![WalkStep { fixture: 10, dwell_s: 1.0 }], ..SimScenario::default() };
        assert_eq!(generate(&sc), Err(ScenarioError::UnknownFixture(10)));
    }

    #[test]
    fn scenario_json_roundtrip() {
        let sc = SimScenario { walk: vec![WalkStep { fixture: 3, dwell_s: 2.5 }], seed: 9, ..SimScenario::default() };
        let json = serde_json::to_string(&sc).unwrap();
        assert_eq!(serde_json::from_str::<SimScenario>(&json).unwrap(), sc);
        let partial: SimScenario = serde_json::from_str(r#"{"fixtures": 4, "seed": 1}"#).unwrap();
        assert_eq!((partial.fixtures, partial.articles), (4, 27));
    }

    #[test]
    fn degrade_profiles() {
        let out = generate(&SimScenario::default()).unwrap();
        assert_eq!(degrade(&out.stocktake, &out.registry, &NoiseProfile::default()), out.stocktake);

        let refs_only = degrade(&out.stocktake, &out.registry, &NoiseProfile { drop_item_rate: 1.0, ..Default::default() });
        assert!(!refs_only.events.is_empty());
        assert!(refs_only.events.iter().all(|e| out.registry.reference_map.contains_key(&e.epc)));
        let n_refs = out.stocktake.events.iter().filter(|e| out.registry.reference_map.contains_key(&e.epc)).count();
        assert_eq!(refs_only.events.len(), n_refs);

        let noisy = NoiseProfile { interleave_rate: 0.5, seed: 3, ..Default::default() };
        let a = degrade(&out.stocktake, &out.registry, &noisy);
        assert_eq!(a, degrade(&out.stocktake, &out.registry, &noisy));
        assert!(a.events.len() > out.stocktake.events.len());
    }
}
