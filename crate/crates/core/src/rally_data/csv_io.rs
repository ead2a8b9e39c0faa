//! Rally CSV: `rally_id,match_id,seq_no,player,shot_type,x,y`, UTF-8,
//! header required, rows grouped by rally in stroke order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Dataset, PlayerRegistry, Rally, ShotType, Stroke, MAX_RALLY_LEN};

pub const HEADER: [&str; 7] = [
    "rally_id",
    "match_id",
    "seq_no",
    "player",
    "shot_type",
    "x",
    "y",
];

/// One rally that failed validation. `row` is the 1-based line number in the
/// file (the header is line 1).
#[derive(Clone, Debug, PartialEq)]
pub struct RallyRejection {
    pub rally_id: String,
    pub row: usize,
    pub reason: String,
}

impl std::fmt::Display for RallyRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rally `{}` rejected at row {}: {}",
            self.rally_id, self.row, self.reason
        )
    }
}

#[derive(Clone, Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub rejected: Vec<RallyRejection>,
}

struct RawRow {
    line: usize,
    rally_id: String,
    match_id: String,
    seq_no: String,
    player: String,
    shot_type: String,
    x: String,
    y: String,
}

pub fn load_rallies_from_path(path: impl AsRef<Path>) -> Result<LoadReport, DataError> {
    load_rallies(File::open(path)?)
}

/// Parses and validates rallies. Structural problems (header, I/O) are errors;
/// invalid rallies are skipped and listed in [`LoadReport::rejected`].
pub fn load_rallies<R: Read>(source: R) -> Result<LoadReport, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != HEADER {
        return Err(DataError::Header {
            expected: HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut groups: Vec<Vec<RawRow>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let field = |k: usize| rec.get(k).unwrap_or("").to_string();
        let row = RawRow {
            line,
            rally_id: field(0),
            match_id: field(1),
            seq_no: field(2),
            player: field(3),
            shot_type: field(4),
            x: field(5),
            y: field(6),
        };
        match groups.last_mut() {
            Some(g) if g[0].rally_id == row.rally_id => g.push(row),
            _ => groups.push(vec![row]),
        }
    }

    let mut players = PlayerRegistry::new();
    let mut rallies = Vec::new();
    let mut rejected = Vec::new();
    let mut seen_ids = HashSet::new();
    for group in groups {
        let id = group[0].rally_id.clone();
        if !seen_ids.insert(id.clone()) {
            rejected.push(RallyRejection {
                rally_id: id,
                row: group[0].line,
                reason: "rows of this rally are not contiguous".into(),
            });
            continue;
        }
        match build_rally(&group, &mut players) {
            Ok(r) => rallies.push(r),
            Err((row, reason)) => {
                log::warn!("rally `{id}` rejected at row {row}: {reason}");
                rejected.push(RallyRejection {
                    rally_id: id,
                    row,
                    reason,
                });
            }
        }
    }
    Ok(LoadReport {
        dataset: Dataset::new(rallies, players),
        rejected,
    })
}

fn build_rally(rows: &[RawRow], players: &mut PlayerRegistry) -> Result<Rally, (usize, String)> {
    let mut strokes = Vec::with_capacity(rows.len());
    // Intern names only once the rally is accepted.
    let mut names: Vec<&str> = Vec::new();
    for row in rows {
        let bad = |msg: String| (row.line, msg);
        if row.match_id != rows[0].match_id {
            return Err(bad("match_id changes within the rally".into()));
        }
        let seq_no: usize = row
            .seq_no
            .parse()
            .map_err(|_| bad(format!("bad seq_no `{}`", row.seq_no)))?;
        let shot_type: ShotType = row.shot_type.parse().map_err(bad)?;
        let x: f64 = row
            .x
            .parse()
            .map_err(|_| bad(format!("bad x `{}`", row.x)))?;
        let y: f64 = row
            .y
            .parse()
            .map_err(|_| bad(format!("bad y `{}`", row.y)))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(bad("non-finite coordinate".into()));
        }
        if row.player.is_empty() {
            return Err(bad("empty player".into()));
        }
        if seq_no != strokes.len() + 1 {
            return Err(bad(format!(
                "seq_no {seq_no} out of order (expected {})",
                strokes.len() + 1
            )));
        }
        let i = strokes.len();
        if i >= 2 && row.player != names[i - 2] {
            return Err(bad("players do not alternate".into()));
        }
        if i == 1 && row.player == names[0] {
            return Err(bad("players do not alternate".into()));
        }
        names.push(&row.player);
        strokes.push((seq_no, shot_type, x, y));
    }
    let first_row = rows[0].line;
    if rows.len() < 2 || rows.len() > MAX_RALLY_LEN {
        return Err((
            first_row,
            format!("rally length {} outside [2, {MAX_RALLY_LEN}]", rows.len()),
        ));
    }
    if !strokes[0].1.is_service() {
        return Err((
            first_row,
            format!("first stroke must be a service, found `{}`", strokes[0].1),
        ));
    }

    let a = players.intern(names[0]);
    let b = players.intern(names[1]);
    let rally = Rally {
        rally_id: rows[0].rally_id.clone(),
        match_id: rows[0].match_id.clone(),
        player_a: a,
        player_b: b,
        strokes: strokes
            .into_iter()
            .enumerate()
            .map(|(i, (seq_no, shot_type, x, y))| Stroke {
                seq_no,
                player: if i % 2 == 0 { a } else { b },
                shot_type,
                x,
                y,
            })
            .collect(),
    };
    debug_assert!(rally.validate(MAX_RALLY_LEN).is_ok());
    Ok(rally)
}

pub fn write_rallies_to_path(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_rallies(d, File::create(path)?)
}

/// Writes raw court coordinates; a normalized dataset is denormalized first.
pub fn write_rallies<W: Write>(d: &Dataset, sink: W) -> Result<(), DataError> {
    let d = d.denormalize();
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(HEADER)?;
    for r in &d.rallies {
        for s in &r.strokes {
            w.write_record([
                r.rally_id.as_str(),
                r.match_id.as_str(),
                &s.seq_no.to_string(),
                d.players.name(s.player),
                s.shot_type.name(),
                &s.x.to_string(),
                &s.y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "rally_id,match_id,seq_no,player,shot_type,x,y
r1,m1,1,Alice,short service,0.1,0.5
r1,m1,2,Bob,net shot,-0.2,-0.3
r1,m1,3,Alice,lob,0.4,2.1
r1,m1,4,Bob,smash,0.05,-1.5
";

    #[test]
    fn minimal_parse() {
        let rep = load_rallies(GOOD.as_bytes()).unwrap();
        assert!(rep.rejected.is_empty());
        assert_eq!(rep.dataset.rallies.len(), 1);
        let r = &rep.dataset.rallies[0];
        assert_eq!(r.len(), 4);
        assert_eq!(rep.dataset.players.name(r.player_a), "Alice");
        assert_eq!(r.strokes[3].shot_type, ShotType::Smash);
        assert_eq!(r.strokes[2].y, 2.1);
    }

    #[test]
    fn unknown_shot_type_names_the_row() {
        let src = GOOD.replace("r1,m1,3,Alice,lob", "r1,m1,3,Alice,spike");
        let rep = load_rallies(src.as_bytes()).unwrap();
        assert!(rep.dataset.rallies.is_empty());
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].row, 4);
        assert!(rep.rejected[0].reason.contains("spike"));
    }

    #[test]
    fn non_alternating_and_non_finite_rejected() {
        let src = GOOD.replace("r1,m1,4,Bob", "r1,m1,4,Alice");
        let rep = load_rallies(src.as_bytes()).unwrap();
        assert_eq!(rep.rejected[0].row, 5);
        assert!(rep.rejected[0].reason.contains("alternate"));

        let src = GOOD.replace("-0.2,-0.3", "NaN,-0.3");
        let rep = load_rallies(src.as_bytes()).unwrap();
        assert_eq!(rep.rejected[0].row, 3);
        assert!(rep.rejected[0].reason.contains("non-finite"));
    }

    #[test]
    fn one_bad_rally_does_not_block_others() {
        let src = format!(
            "{GOOD}r2,m1,1,Bob,clear,0,0\nr2,m1,2,Alice,clear,0,0\nr3,m1,1,Bob,long service,0,1\nr3,m1,2,Alice,clear,0,-2\n"
        );
        let rep = load_rallies(src.as_bytes()).unwrap();
        assert_eq!(rep.dataset.rallies.len(), 2);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].rally_id, "r2");
        assert!(rep.rejected[0].reason.contains("service"));
        // r3 is served by Bob
        let r3 = &rep.dataset.rallies[1];
        assert_eq!(rep.dataset.players.name(r3.player_a), "Bob");
    }

    #[test]
    fn header_is_required() {
        let src = GOOD.replacen("rally_id,", "id,", 1);
        assert!(matches!(
            load_rallies(src.as_bytes()),
            Err(DataError::Header { .. })
        ));
    }

    #[test]
    fn write_then_load_is_identity() {
        let rep = load_rallies(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_rallies(&rep.dataset, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), GOOD);
        let again = load_rallies(buf.as_slice()).unwrap();
        assert_eq!(again.dataset, rep.dataset);
    }
}
