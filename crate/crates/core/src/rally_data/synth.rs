//! Synthetic rallies from player archetypes.
//!
//! Each archetype is a response-type transition matrix (row = incoming shot
//! type, column = returned shot type), a serve preference and, per shot type,
//! a two-component landing mixture. Landing components are expressed as
//! lateral offset `x` and `depth` past the net; depth is mapped to `+y` for the
//! server's shots and `-y` for the receiver's.

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, PlayerId, PlayerRegistry, Rally, ShotType, Stroke, MAX_RALLY_LEN};
use crate::numerics::Rng;

const COURT_HALF_WIDTH: f64 = 1.0;
const COURT_DEPTH: f64 = 2.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandingComponent {
    pub weight: f64,
    pub x: f64,
    pub depth: f64,
    pub sd_x: f64,
    pub sd_depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// Weights for (short service, long service).
    pub serve: [f64; 2],
    /// 10 × 10, indexed `[incoming][response]` in [`ShotType::ALL`] order.
    pub transitions: Vec<Vec<f64>>,
    /// Per shot type (in [`ShotType::ALL`] order), exactly two components.
    pub landing: Vec<Vec<LandingComponent>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    pub name: String,
    pub archetype: String,
}

/// Generator settings; serializable as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub matches: usize,
    pub rallies_per_match: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Target mean rally length before clipping at `max_len`.
    pub mean_len: f64,
    pub players: Vec<PlayerSpec>,
    pub archetypes: Vec<Archetype>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let archetypes = vec![Archetype::attacker(), Archetype::defender()];
        let players = [
            ("ATK-1", "attacker"),
            ("ATK-2", "attacker"),
            ("DEF-1", "defender"),
            ("DEF-2", "defender"),
        ]
        .into_iter()
        .map(|(n, a)| PlayerSpec {
            name: n.into(),
            archetype: a.into(),
        })
        .collect();
        Self {
            matches: 6,
            rallies_per_match: 30,
            min_len: 4,
            max_len: MAX_RALLY_LEN,
            mean_len: 10.0,
            players,
            archetypes,
        }
    }
}

// Typical landing depth per shot type, in ShotType::ALL order.
const BASE_DEPTH: [f64; 10] = [0.35, 2.3, 1.5, 1.3, 0.7, 1.4, 2.3, 0.5, 0.75, 2.3];

fn landing_table(lateral: f64, weight_left: f64, depth_shift: f64) -> Vec<Vec<LandingComponent>> {
    BASE_DEPTH
        .iter()
        .map(|&d| {
            let depth = (d + depth_shift).clamp(0.2, 2.45);
            vec![
                LandingComponent {
                    weight: weight_left,
                    x: -lateral,
                    depth,
                    sd_x: 0.15,
                    sd_depth: 0.15,
                },
                LandingComponent {
                    weight: 1.0 - weight_left,
                    x: lateral,
                    depth,
                    sd_x: 0.15,
                    sd_depth: 0.15,
                },
            ]
        })
        .collect()
}

impl Archetype {
    /// Net-rushing, smash-heavy style aiming at the sidelines.
    pub fn attacker() -> Self {
        let t = vec![
            vec![0.35, 0.02, 0.45, 0.0, 0.0, 0.08, 0.10, 0.0, 0.0, 0.0],
            vec![0.0, 0.05, 0.0, 0.75, 0.0, 0.05, 0.0, 0.15, 0.0, 0.0],
            vec![0.10, 0.0, 0.10, 0.0, 0.10, 0.60, 0.10, 0.0, 0.0, 0.0],
            vec![0.30, 0.0, 0.10, 0.0, 0.40, 0.20, 0.0, 0.0, 0.0, 0.0],
            vec![0.40, 0.0, 0.40, 0.10, 0.0, 0.10, 0.0, 0.0, 0.0, 0.0],
            vec![0.05, 0.0, 0.25, 0.05, 0.0, 0.65, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.05, 0.0, 0.80, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0],
            vec![0.45, 0.0, 0.40, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0, 0.0],
            vec![0.20, 0.0, 0.70, 0.0, 0.0, 0.0, 0.10, 0.0, 0.0, 0.0],
            vec![0.0, 0.10, 0.0, 0.75, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0],
        ];
        Self {
            name: "attacker".into(),
            serve: [0.8, 0.2],
            transitions: t,
            landing: landing_table(0.7, 0.8, -0.2),
        }
    }

    /// Lob-and-clear style aiming at the middle of the court.
    pub fn defender() -> Self {
        let t = vec![
            vec![0.15, 0.0, 0.05, 0.0, 0.0, 0.0, 0.80, 0.0, 0.0, 0.0],
            vec![0.0, 0.70, 0.0, 0.05, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.20, 0.10, 0.70, 0.0, 0.0, 0.0],
            vec![0.05, 0.0, 0.0, 0.0, 0.85, 0.0, 0.10, 0.0, 0.0, 0.0],
            vec![0.10, 0.10, 0.0, 0.0, 0.0, 0.0, 0.80, 0.0, 0.0, 0.0],
            vec![0.0, 0.10, 0.10, 0.0, 0.20, 0.50, 0.10, 0.0, 0.0, 0.0],
            vec![0.0, 0.65, 0.0, 0.05, 0.0, 0.0, 0.0, 0.30, 0.0, 0.0],
            vec![0.20, 0.0, 0.0, 0.0, 0.0, 0.0, 0.80, 0.0, 0.0, 0.0],
            vec![0.20, 0.0, 0.10, 0.0, 0.0, 0.0, 0.70, 0.0, 0.0, 0.0],
            vec![0.0, 0.70, 0.0, 0.0, 0.0, 0.0, 0.0, 0.30, 0.0, 0.0],
        ];
        Self {
            name: "defender".into(),
            serve: [0.3, 0.7],
            transitions: t,
            landing: landing_table(0.25, 0.3, 0.2),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let name = &self.name;
        if !(self.serve.iter().all(|w| w.is_finite() && *w >= 0.0)
            && self.serve.iter().sum::<f64>() > 0.0)
        {
            return Err(format!(
                "archetype `{name}`: serve weights must be nonnegative with a positive sum"
            ));
        }
        if self.transitions.len() != 10 {
            return Err(format!(
                "archetype `{name}`: transition matrix needs 10 rows"
            ));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            let incoming = ShotType::ALL[i];
            if row.len() != 10 {
                return Err(format!(
                    "archetype `{name}`: row `{incoming}` needs 10 entries"
                ));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(format!(
                    "archetype `{name}`: row `{incoming}` has negative or non-finite weights"
                ));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(format!(
                    "archetype `{name}`: row `{incoming}` is degenerate (zero mass)"
                ));
            }
            if ShotType::ALL
                .iter()
                .zip(row)
                .any(|(t, w)| t.is_service() && *w > 0.0)
            {
                return Err(format!(
                    "archetype `{name}`: row `{incoming}` puts mass on a service"
                ));
            }
        }
        if self.landing.len() != 10 {
            return Err(format!(
                "archetype `{name}`: landing table needs 10 entries"
            ));
        }
        for (i, comps) in self.landing.iter().enumerate() {
            let t = ShotType::ALL[i];
            if comps.len() != 2 {
                return Err(format!(
                    "archetype `{name}`: landing for `{t}` needs exactly 2 components"
                ));
            }
            let ok = comps.iter().all(|c| {
                c.weight.is_finite()
                    && c.weight >= 0.0
                    && c.x.is_finite()
                    && c.depth.is_finite()
                    && c.sd_x > 0.0
                    && c.sd_depth > 0.0
            }) && comps.iter().map(|c| c.weight).sum::<f64>() > 0.0;
            if !ok {
                return Err(format!(
                    "archetype `{name}`: invalid landing mixture for `{t}`"
                ));
            }
        }
        Ok(())
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        if self.matches == 0 || self.rallies_per_match == 0 {
            return err("matches and rallies_per_match must be positive".into());
        }
        if self.min_len < 2 || self.max_len > MAX_RALLY_LEN || self.min_len > self.max_len {
            return err(format!(
                "need 2 <= min_len <= max_len <= {MAX_RALLY_LEN}, got [{}, {}]",
                self.min_len, self.max_len
            ));
        }
        if !(self.mean_len.is_finite() && self.mean_len > self.min_len as f64) {
            return err(format!(
                "mean_len must exceed min_len, got {}",
                self.mean_len
            ));
        }
        if self.archetypes.len() < 2 {
            return err("at least two archetypes are required".into());
        }
        for a in &self.archetypes {
            a.validate().map_err(DataError::Config)?;
        }
        if self.players.len() < 2 {
            return err("at least two players are required".into());
        }
        for p in &self.players {
            if !self.archetypes.iter().any(|a| a.name == p.archetype) {
                return err(format!(
                    "player `{}` uses unknown archetype `{}`",
                    p.name, p.archetype
                ));
            }
        }
        let mut names: Vec<&str> = self.players.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.players.len() {
            return err("duplicate player names".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DataError> {
        let cfg: SynthConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("synth config always serializes")
    }

    fn archetype_of(&self, player: usize) -> &Archetype {
        let name = &self.players[player].archetype;
        self.archetypes.iter().find(|a| &a.name == name).unwrap()
    }
}

fn sample_length(cfg: &SynthConfig, rng: &mut Rng) -> usize {
    // min_len + Geometric(p) failures, mean (1 - p) / p = mean_len - min_len
    let p = 1.0 / (cfg.mean_len - cfg.min_len as f64 + 1.0);
    let u = 1.0 - rng.uniform();
    let extra = (u.ln() / (1.0 - p).ln()).floor();
    let extra = if extra.is_finite() {
        extra as usize
    } else {
        cfg.max_len
    };
    (cfg.min_len + extra).min(cfg.max_len)
}

fn sample_landing(arch: &Archetype, shot: ShotType, rng: &mut Rng) -> (f64, f64) {
    let comps = &arch.landing[shot.ordinal()];
    let weights: Vec<f64> = comps.iter().map(|c| c.weight).collect();
    let c = &comps[rng.categorical(&weights)];
    let x = (c.x + c.sd_x * rng.standard_normal()).clamp(-COURT_HALF_WIDTH, COURT_HALF_WIDTH);
    let depth = (c.depth + c.sd_depth * rng.standard_normal()).clamp(0.05, COURT_DEPTH);
    (x, depth)
}

/// Generates `matches × rallies_per_match` rallies that satisfy every rally
/// invariant. Each match pairs two distinct roster players; the server of each
/// rally is drawn uniformly from the pair.
pub fn gen_synthetic(cfg: &SynthConfig, rng: &mut Rng) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let players = PlayerRegistry::from_names(cfg.players.iter().map(|p| p.name.clone()));
    let mut rallies = Vec::with_capacity(cfg.matches * cfg.rallies_per_match);
    for m in 0..cfg.matches {
        let first = rng.below(cfg.players.len());
        let mut second = rng.below(cfg.players.len() - 1);
        if second >= first {
            second += 1;
        }
        for r in 0..cfg.rallies_per_match {
            let (a, b) = if rng.uniform() < 0.5 {
                (first, second)
            } else {
                (second, first)
            };
            let len = sample_length(cfg, rng);
            let mut strokes = Vec::with_capacity(len);
            let mut prev: Option<ShotType> = None;
            for i in 0..len {
                let hitter = if i % 2 == 0 { a } else { b };
                let arch = cfg.archetype_of(hitter);
                let shot = match prev {
                    None => {
                        if rng.categorical(&arch.serve) == 0 {
                            ShotType::ShortService
                        } else {
                            ShotType::LongService
                        }
                    }
                    Some(p) => ShotType::ALL[rng.categorical(&arch.transitions[p.ordinal()])],
                };
                let (x, depth) = sample_landing(arch, shot, rng);
                // the server stands on the negative side, so their shots land at +y
                let y = if i % 2 == 0 { depth } else { -depth };
                strokes.push(Stroke {
                    seq_no: i + 1,
                    player: PlayerId(hitter),
                    shot_type: shot,
                    x,
                    y,
                });
                prev = Some(shot);
            }
            rallies.push(Rally {
                rally_id: format!("m{m:03}-r{r:03}"),
                match_id: format!("m{m:03}"),
                player_a: PlayerId(a),
                player_b: PlayerId(b),
                strokes,
            });
        }
    }
    Ok(Dataset::new(rallies, players))
}
