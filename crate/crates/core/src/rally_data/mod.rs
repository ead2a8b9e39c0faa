//! Rally and stroke records, CSV ingestion, per-match splitting,
//! coordinate centering and the synthetic rally generator.
//!
//! Court frame: the server's side of the net is negative `y`, the net is
//! `y = 0`, and one unit is half the court width.

mod csv_io;
mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{
    load_rallies, load_rallies_from_path, write_rallies, write_rallies_to_path, LoadReport,
    RallyRejection, HEADER,
};
pub use synth::{gen_synthetic, Archetype, LandingComponent, PlayerSpec, SynthConfig};

/// Longest rally accepted anywhere in the pipeline.
pub const MAX_RALLY_LEN: usize = 35;

/// Number of shot-type classes including the padding class.
pub const NUM_SHOT_CLASSES: usize = 11;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("split ratio must be in (0, 1), got {0}")]
    Ratio(f64),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("unknown player `{0}`")]
    UnknownPlayer(String),
}

/// The ten expert-defined shot types. Class index 0 is reserved for padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShotType {
    NetShot,
    Clear,
    PushRush,
    Smash,
    DefensiveShot,
    Drive,
    Lob,
    Drop,
    ShortService,
    LongService,
}

impl ShotType {
    pub const ALL: [ShotType; 10] = [
        ShotType::NetShot,
        ShotType::Clear,
        ShotType::PushRush,
        ShotType::Smash,
        ShotType::DefensiveShot,
        ShotType::Drive,
        ShotType::Lob,
        ShotType::Drop,
        ShotType::ShortService,
        ShotType::LongService,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShotType::NetShot => "net shot",
            ShotType::Clear => "clear",
            ShotType::PushRush => "push/rush",
            ShotType::Smash => "smash",
            ShotType::DefensiveShot => "defensive shot",
            ShotType::Drive => "drive",
            ShotType::Lob => "lob",
            ShotType::Drop => "drop",
            ShotType::ShortService => "short service",
            ShotType::LongService => "long service",
        }
    }

    /// Position in [`ShotType::ALL`], `0..10`.
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    /// Embedding/class index, `1..=10` (0 is padding).
    pub fn class_index(self) -> usize {
        self.ordinal() + 1
    }

    pub fn from_class_index(idx: usize) -> Option<ShotType> {
        idx.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn is_service(self) -> bool {
        matches!(self, ShotType::ShortService | ShotType::LongService)
    }
}

impl fmt::Display for ShotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShotType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown shot type `{s}`"))
    }
}

/// Index into a [`PlayerRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlayerId(pub usize);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerRegistry {
    names: Vec<String>,
}

impl PlayerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let mut reg = Self::new();
        for n in names {
            reg.intern(&n.into());
        }
        reg
    }

    pub fn intern(&mut self, name: &str) -> PlayerId {
        if let Some(id) = self.lookup(name) {
            return id;
        }
        self.names.push(name.to_string());
        PlayerId(self.names.len() - 1)
    }

    pub fn lookup(&self, name: &str) -> Option<PlayerId> {
        self.names.iter().position(|n| n == name).map(PlayerId)
    }

    pub fn name(&self, id: PlayerId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    /// 1-based order within the rally.
    pub seq_no: usize,
    pub player: PlayerId,
    pub shot_type: ShotType,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rally {
    pub rally_id: String,
    pub match_id: String,
    /// The server.
    pub player_a: PlayerId,
    pub player_b: PlayerId,
    pub strokes: Vec<Stroke>,
}

impl Rally {
    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn players(&self) -> Vec<PlayerId> {
        self.strokes.iter().map(|s| s.player).collect()
    }

    /// Player expected at 0-based position `i` under strict alternation.
    pub fn player_at(&self, i: usize) -> PlayerId {
        if i.is_multiple_of(2) {
            self.player_a
        } else {
            self.player_b
        }
    }

    /// Checks every rally invariant: length bounds, serve type, server
    /// identity, strict alternation, sequence numbering and finite coordinates.
    pub fn validate(&self, max_len: usize) -> Result<(), String> {
        if self.strokes.len() < 2 {
            return Err(format!(
                "rally has {} strokes, need at least 2",
                self.strokes.len()
            ));
        }
        if self.strokes.len() > max_len {
            return Err(format!(
                "rally has {} strokes, exceeds max length {max_len}",
                self.strokes.len()
            ));
        }
        if self.player_a == self.player_b {
            return Err("rally needs two distinct players".into());
        }
        if !self.strokes[0].shot_type.is_service() {
            return Err(format!(
                "first stroke must be a service, found `{}`",
                self.strokes[0].shot_type
            ));
        }
        for (i, s) in self.strokes.iter().enumerate() {
            if s.seq_no != i + 1 {
                return Err(format!("stroke {} has seq_no {}", i + 1, s.seq_no));
            }
            if s.player != self.player_at(i) {
                return Err(format!("players do not alternate at stroke {}", i + 1));
            }
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(format!("non-finite coordinate at stroke {}", i + 1));
            }
        }
        Ok(())
    }
}

/// Coordinate offset subtracted during normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordMean {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rallies: Vec<Rally>,
    pub players: PlayerRegistry,
    /// Set once the coordinates have been centered.
    pub coord_mean: Option<CoordMean>,
}

impl Dataset {
    pub fn new(rallies: Vec<Rally>, players: PlayerRegistry) -> Self {
        Self {
            rallies,
            players,
            coord_mean: None,
        }
    }

    pub fn stroke_count(&self) -> usize {
        self.rallies.iter().map(Rally::len).sum()
    }

    /// Mean landing coordinate over every stroke.
    pub fn coordinate_mean(&self) -> CoordMean {
        let n = self.stroke_count().max(1) as f64;
        let (sx, sy) = self
            .rallies
            .iter()
            .flat_map(|r| &r.strokes)
            .fold((0.0, 0.0), |(ax, ay), s| (ax + s.x, ay + s.y));
        CoordMean {
            x: sx / n,
            y: sy / n,
        }
    }

    /// Subtracts `mean` from every coordinate and records it.
    ///
    /// Panics if the dataset is already normalized.
    pub fn normalize_with(&self, mean: CoordMean) -> Dataset {
        assert!(self.coord_mean.is_none(), "dataset already normalized");
        let mut out = self.shifted(-mean.x, -mean.y);
        out.coord_mean = Some(mean);
        out
    }

    /// Undoes [`Dataset::normalize_with`]; a no-op on raw data.
    pub fn denormalize(&self) -> Dataset {
        match self.coord_mean {
            None => self.clone(),
            Some(m) => {
                let mut out = self.shifted(m.x, m.y);
                out.coord_mean = None;
                out
            }
        }
    }

    fn shifted(&self, dx: f64, dy: f64) -> Dataset {
        let mut out = self.clone();
        for s in out.rallies.iter_mut().flat_map(|r| r.strokes.iter_mut()) {
            s.x += dx;
            s.y += dy;
        }
        out
    }

    /// Match ids in order of first appearance.
    pub fn match_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.rallies {
            if seen.insert(r.match_id.clone()) {
                out.push(r.match_id.clone());
            }
        }
        out
    }

    pub fn subset(&self, rallies: Vec<Rally>) -> Dataset {
        Dataset {
            rallies,
            players: self.players.clone(),
            coord_mean: self.coord_mean,
        }
    }
}

/// Centers a dataset on its own mean.
pub fn normalize_coords(d: &Dataset) -> Dataset {
    d.normalize_with(d.coordinate_mean())
}

/// Per match, the first `floor(ratio * n)` rallies (at least one) go to
/// training and the rest to testing. Rallies are assumed chronological.
pub fn split_dataset(d: &Dataset, ratio: f64) -> Result<(Dataset, Dataset), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Ratio(ratio));
    }
    let mut by_match: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in d.rallies.iter().enumerate() {
        by_match.entry(r.match_id.as_str()).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for m in d.match_ids() {
        let idx = &by_match[m.as_str()];
        let n = idx.len();
        if n == 1 {
            log::warn!("match `{m}` has a single rally; it goes entirely to training");
        }
        let k = ((ratio * n as f64).floor() as usize).max(1).min(n);
        train_idx.extend_from_slice(&idx[..k]);
        test_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| d.rallies[i].clone())
            .collect::<Vec<_>>()
    };
    let train = d.subset(pick(&train_idx));
    let test = d.subset(pick(&test_idx));

    let train_players: BTreeSet<PlayerId> = train
        .rallies
        .iter()
        .flat_map(|r| [r.player_a, r.player_b])
        .collect();
    for r in &test.rallies {
        for p in [r.player_a, r.player_b] {
            if !train_players.contains(&p) {
                log::warn!(
                    "player `{}` appears in test rally `{}` but never in training",
                    d.players.name(p),
                    r.rally_id
                );
            }
        }
    }
    Ok((train, test))
}
