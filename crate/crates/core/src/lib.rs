//! Locating retail articles on store fixtures from handheld RFID stocktakes.
//!
//! A stocktake is a stream of tag reads captured while a reader walks the
//! store. Items are tagged per article and every fixture carries reference
//! tags. An article is placed on the fixture whose reference tags were read
//! at the same time as the article's own tags, compared either by density
//! clustering of read times ([`cluster`]) or by dynamic time warping of
//! resampled signal curves ([`warp`]). Distances become fixture
//! probabilities in [`assign`], optionally fused with an earlier stocktake.
//!
//! ```
//! use shelfmap::{predict, Engine, ParamConfig, PredictOptions};
//! use shelfmap::sim::{generate, SimScenario};
//!
//! let lab = generate(&SimScenario { seed: 7, ..SimScenario::default() }).unwrap();
//! let opts = PredictOptions { engine: Engine::Dbscan, config: ParamConfig::session0(), color_aware: false };
//! let out = predict(&lab.stocktake, &lab.registry, &opts, None).unwrap();
//! assert_eq!(out.assignments.assigned.len(), 27);
//! ```

pub mod assign;
pub mod cli;
pub mod cluster;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod warp;

pub use model::{
    ArticleKey, AssignmentDistribution, DistanceMatrix, FixtureGrid, FixtureId, LocalCost, ParamConfig, ParamOverrides,
    ReadEvent, Session, Stocktake, TagRegistry, ZoneId,
};
pub use par::Exec;
pub use pipeline::{predict, Engine, PredictOptions, Prediction};
