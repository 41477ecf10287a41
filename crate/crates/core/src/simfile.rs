//! `.sm` stepchart files: parsing, writing, timing and mirror augmentation.
//!
//! Only 4-panel `dance-single` charts are kept. Each note row is stored as a
//! [`StepSymbol`], a base-4 number over the columns (Left, Down, Up, Right)
//! with digits 0 = nothing, 1 = tap, 2 = hold start, 3 = hold release.

use std::fmt;
use std::str::FromStr;

use log::warn;
use thiserror::Error;

/// Number of arrow columns in a dance-single chart.
pub const COLUMNS: usize = 4;
/// Number of distinct row symbols.
pub const SYMBOL_COUNT: usize = 256;
/// Finest beat subdivision supported on the chart grid.
pub const GRID_PER_BEAT: u32 = 48;

const BEATS_PER_MEASURE: u32 = 4;
const WRITER_SUBDIVISIONS: [u32; 10] = [4, 8, 12, 16, 24, 32, 48, 64, 96, 192];

#[derive(Debug, Error, PartialEq)]
pub enum SimfileError {
    #[error("line {line}: unterminated tag block `#{tag}`")]
    Unterminated { tag: String, line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid note character {ch:?} in measure {measure}")]
    InvalidNote { ch: char, measure: usize },
    #[error("broken hold pairing in column {column} at beat {beat}: {reason}")]
    HoldPairing {
        beat: f64,
        column: usize,
        reason: &'static str,
    },
    #[error("non-positive BPM {bpm} at beat {beat}")]
    NonPositiveBpm { beat: f64, bpm: f64 },
    #[error("invalid timing data: {0}")]
    Timing(String),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("row beat {0} is not on the 1/48 beat grid")]
    OffGrid(f64),
}

/// One of the 256 per-row arrow states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StepSymbol(u8);

impl StepSymbol {
    pub const EMPTY: StepSymbol = StepSymbol(0);

    pub fn from_index(index: u8) -> Self {
        StepSymbol(index)
    }

    /// Builds a symbol from column digits in (Left, Down, Up, Right) order.
    pub fn from_digits(digits: [u8; COLUMNS]) -> Result<Self, SimfileError> {
        let mut index = 0u8;
        for &d in &digits {
            if d > 3 {
                return Err(SimfileError::InvalidChart(format!(
                    "digit {d} out of range"
                )));
            }
            index = index * 4 + d;
        }
        Ok(StepSymbol(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn digits(self) -> [u8; COLUMNS] {
        let i = self.0;
        [(i >> 6) & 3, (i >> 4) & 3, (i >> 2) & 3, i & 3]
    }

    pub fn digit(self, column: usize) -> u8 {
        (self.0 >> (2 * (COLUMNS - 1 - column))) & 3
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn has_hold_start(self) -> bool {
        self.digits().contains(&2)
    }

    /// True when every column is either empty or a plain tap.
    pub fn is_tap_only(self) -> bool {
        self.digits().iter().all(|&d| d <= 1)
    }

    fn permuted(self, perm: [usize; COLUMNS]) -> Self {
        let d = self.digits();
        let mut out = [0u8; COLUMNS];
        for (dst, &src) in perm.iter().enumerate() {
            out[dst] = d[src];
        }
        StepSymbol::from_digits(out).expect("digits come from a valid symbol")
    }
}

impl fmt::Display for StepSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for StepSymbol {
    type Err = SimfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != COLUMNS {
            return Err(SimfileError::InvalidChart(format!(
                "symbol {s:?} must have 4 digits"
            )));
        }
        let mut digits = [0u8; COLUMNS];
        for (slot, c) in digits.iter_mut().zip(chars) {
            *slot = match c {
                '0'..='3' => c as u8 - b'0',
                _ => {
                    return Err(SimfileError::InvalidChart(format!(
                        "symbol {s:?} has digit {c:?}"
                    )))
                }
            };
        }
        StepSymbol::from_digits(digits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoarseDifficulty {
    Beginner,
    Easy,
    Medium,
    Hard,
    Challenge,
}

impl CoarseDifficulty {
    pub const ALL: [CoarseDifficulty; 5] = [
        CoarseDifficulty::Beginner,
        CoarseDifficulty::Easy,
        CoarseDifficulty::Medium,
        CoarseDifficulty::Hard,
        CoarseDifficulty::Challenge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoarseDifficulty::Beginner => "Beginner",
            CoarseDifficulty::Easy => "Easy",
            CoarseDifficulty::Medium => "Medium",
            CoarseDifficulty::Hard => "Hard",
            CoarseDifficulty::Challenge => "Challenge",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "beginner" => Some(CoarseDifficulty::Beginner),
            "easy" | "basic" => Some(CoarseDifficulty::Easy),
            "medium" | "another" | "trick" => Some(CoarseDifficulty::Medium),
            "hard" | "maniac" => Some(CoarseDifficulty::Hard),
            "challenge" | "expert" | "smaniac" => Some(CoarseDifficulty::Challenge),
            _ => None,
        }
    }
}

impl fmt::Display for CoarseDifficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub beat: f64,
    pub symbol: StepSymbol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub coarse_difficulty: CoarseDifficulty,
    pub fine_difficulty: u32,
    pub rows: Vec<Row>,
}

impl Chart {
    /// Checks row ordering, the no-empty-row rule and hold pairing.
    pub fn validate(&self) -> Result<(), SimfileError> {
        if self.fine_difficulty < 1 {
            return Err(SimfileError::InvalidChart(
                "fine difficulty must be >= 1".into(),
            ));
        }
        for pair in self.rows.windows(2) {
            if !(pair[1].beat > pair[0].beat) {
                return Err(SimfileError::InvalidChart(format!(
                    "rows not strictly increasing at beat {}",
                    pair[1].beat
                )));
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.symbol.is_empty()) {
            return Err(SimfileError::InvalidChart(format!(
                "empty row stored at beat {}",
                r.beat
            )));
        }
        if let Some(r) = self
            .rows
            .iter()
            .find(|r| !(r.beat >= 0.0) || !r.beat.is_finite())
        {
            return Err(SimfileError::InvalidChart(format!(
                "invalid row beat {}",
                r.beat
            )));
        }
        check_hold_pairing(&self.rows)
    }
}

/// Verifies that per column, hold starts and releases strictly alternate,
/// beginning with a start and ending with a release.
pub fn check_hold_pairing(rows: &[Row]) -> Result<(), SimfileError> {
    let mut open: [Option<f64>; COLUMNS] = [None; COLUMNS];
    for row in rows {
        for (column, d) in row.symbol.digits().into_iter().enumerate() {
            match (d, open[column]) {
                (2, Some(_)) => {
                    return Err(SimfileError::HoldPairing {
                        beat: row.beat,
                        column,
                        reason: "hold start while a hold is already open",
                    })
                }
                (2, None) => open[column] = Some(row.beat),
                (3, None) => {
                    return Err(SimfileError::HoldPairing {
                        beat: row.beat,
                        column,
                        reason: "release without an open hold",
                    })
                }
                (3, Some(_)) => open[column] = None,
                _ => {}
            }
        }
    }
    if let Some((column, beat)) = open.iter().enumerate().find_map(|(c, b)| b.map(|b| (c, b))) {
        return Err(SimfileError::HoldPairing {
            beat,
            column,
            reason: "hold never released",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpmSegment {
    pub start_beat: f64,
    pub bpm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopSegment {
    pub beat: f64,
    pub duration_s: f64,
}

/// Song metadata plus its charts. `offset_s` holds the raw `#OFFSET` value:
/// beat 0 sounds at time `-offset_s`, as in StepMania.
#[derive(Debug, Clone, PartialEq)]
pub struct Simfile {
    pub title: String,
    pub music_path: String,
    pub offset_s: f64,
    pub bpm_segments: Vec<BpmSegment>,
    pub stop_segments: Vec<StopSegment>,
    pub charts: Vec<Chart>,
}

impl Simfile {
    /// A constant-tempo simfile with no charts.
    pub fn constant_bpm(title: &str, music_path: &str, bpm: f64, offset_s: f64) -> Self {
        Simfile {
            title: title.to_string(),
            music_path: music_path.to_string(),
            offset_s,
            bpm_segments: vec![BpmSegment {
                start_beat: 0.0,
                bpm,
            }],
            stop_segments: Vec::new(),
            charts: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimfileError> {
        validate_timing(&self.bpm_segments, &self.stop_segments)?;
        self.charts.iter().try_for_each(Chart::validate)
    }

    /// Tempo in effect at `beat`.
    pub fn bpm_at(&self, beat: f64) -> f64 {
        self.bpm_segments
            .iter()
            .take_while(|s| s.start_beat <= beat)
            .last()
            .unwrap_or(&self.bpm_segments[0])
            .bpm
    }

    pub fn beat_to_time(&self, beat: f64) -> f64 {
        beat_to_time(self, beat)
    }
}

fn validate_timing(bpms: &[BpmSegment], stops: &[StopSegment]) -> Result<(), SimfileError> {
    let first = bpms
        .first()
        .ok_or_else(|| SimfileError::Timing("no BPM segments".into()))?;
    if first.start_beat != 0.0 {
        return Err(SimfileError::Timing(
            "first BPM segment must start at beat 0".into(),
        ));
    }
    for seg in bpms {
        if !(seg.bpm > 0.0) || !seg.bpm.is_finite() {
            return Err(SimfileError::NonPositiveBpm {
                beat: seg.start_beat,
                bpm: seg.bpm,
            });
        }
    }
    if bpms
        .windows(2)
        .any(|w| !(w[1].start_beat > w[0].start_beat))
    {
        return Err(SimfileError::Timing(
            "BPM segments not strictly increasing".into(),
        ));
    }
    if stops.windows(2).any(|w| !(w[1].beat > w[0].beat)) {
        return Err(SimfileError::Timing("stops not strictly increasing".into()));
    }
    if let Some(s) = stops.iter().find(|s| !(s.duration_s >= 0.0)) {
        return Err(SimfileError::Timing(format!(
            "negative stop at beat {}",
            s.beat
        )));
    }
    Ok(())
}

/// Seconds from the start of the audio to `beat`, following BPM changes and
/// counting every stop placed strictly before `beat`.
pub fn beat_to_time(sim: &Simfile, beat: f64) -> f64 {
    let mut time = -sim.offset_s;
    for (i, seg) in sim.bpm_segments.iter().enumerate() {
        if seg.start_beat >= beat {
            break;
        }
        let end = sim
            .bpm_segments
            .get(i + 1)
            .map_or(beat, |next| next.start_beat.min(beat));
        time += (end - seg.start_beat) * 60.0 / seg.bpm;
    }
    time + sim
        .stop_segments
        .iter()
        .filter(|s| s.beat < beat)
        .map(|s| s.duration_s)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorAxis {
    LeftRight,
    UpDown,
    Both,
}

pub fn mirror(chart: &Chart, axis: MirrorAxis) -> Chart {
    // perm[dst] = src over (Left, Down, Up, Right)
    let perm = match axis {
        MirrorAxis::LeftRight => [3, 1, 2, 0],
        MirrorAxis::UpDown => [0, 2, 1, 3],
        MirrorAxis::Both => [3, 2, 1, 0],
    };
    Chart {
        coarse_difficulty: chart.coarse_difficulty,
        fine_difficulty: chart.fine_difficulty,
        rows: chart
            .rows
            .iter()
            .map(|r| Row {
                beat: r.beat,
                symbol: r.symbol.permuted(perm),
            })
            .collect(),
    }
}

/// Each input chart followed by its left-right, up-down and doubly mirrored
/// variants.
pub fn augment_dataset(charts: &[Chart]) -> Vec<Chart> {
    charts
        .iter()
        .flat_map(|c| {
            [
                c.clone(),
                mirror(c, MirrorAxis::LeftRight),
                mirror(c, MirrorAxis::UpDown),
                mirror(c, MirrorAxis::Both),
            ]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Parsing

struct TagBlock<'a> {
    name: String,
    value: &'a str,
    line: usize,
}

fn strip_comments(source: &str) -> String {
    source
        .lines()
        .map(|l| match l.find("//") {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn tag_blocks(source: &str) -> Result<Vec<TagBlock<'_>>, SimfileError> {
    let mut blocks = Vec::new();
    let mut rest = source;
    let mut consumed = 0usize;
    while let Some(hash) = rest.find('#') {
        let start = consumed + hash;
        let line = source[..start].matches('\n').count() + 1;
        let body = &source[start + 1..];
        let colon = body.find(':');
        let semi = body.find(';');
        let colon = match (colon, semi) {
            (Some(c), Some(s)) if c < s => c,
            (Some(c), None) => {
                return Err(SimfileError::Unterminated {
                    tag: body[..c].trim().to_string(),
                    line,
                })
            }
            _ => {
                return Err(SimfileError::Syntax {
                    line,
                    message: "tag without `:`".into(),
                })
            }
        };
        let name = body[..colon].trim().to_ascii_uppercase();
        let after = &body[colon + 1..];
        let end = after.find(';').ok_or(SimfileError::Unterminated {
            tag: name.clone(),
            line,
        })?;
        // A `#` inside the value means the previous tag lost its terminator.
        if after[..end].contains('#') {
            return Err(SimfileError::Unterminated { tag: name, line });
        }
        blocks.push(TagBlock {
            name,
            value: &after[..end],
            line,
        });
        let next = start + 1 + colon + 1 + end + 1;
        consumed = next;
        rest = &source[next..];
    }
    Ok(blocks)
}

fn parse_number(text: &str, line: usize, what: &str) -> Result<f64, SimfileError> {
    let t = text.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SimfileError::Syntax {
            line,
            message: format!("bad {what} value {t:?}"),
        })
}

fn parse_pairs(value: &str, line: usize, what: &str) -> Result<Vec<(f64, f64)>, SimfileError> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (a, b) = part.split_once('=').ok_or_else(|| SimfileError::Syntax {
            line,
            message: format!("malformed {what} entry {part:?}"),
        })?;
        out.push((parse_number(a, line, what)?, parse_number(b, line, what)?));
    }
    Ok(out)
}

/// Parses `.sm` text. Non-`dance-single` charts are skipped.
pub fn parse_simfile(source: &str) -> Result<Simfile, SimfileError> {
    let cleaned = strip_comments(source);
    let mut sim = Simfile {
        title: String::new(),
        music_path: String::new(),
        offset_s: 0.0,
        bpm_segments: Vec::new(),
        stop_segments: Vec::new(),
        charts: Vec::new(),
    };
    let mut saw_bpms = false;
    for block in tag_blocks(&cleaned)? {
        match block.name.as_str() {
            "TITLE" => sim.title = block.value.trim().to_string(),
            "MUSIC" => sim.music_path = block.value.trim().to_string(),
            "OFFSET" => sim.offset_s = parse_number(block.value, block.line, "OFFSET")?,
            "BPMS" => {
                saw_bpms = true;
                sim.bpm_segments = parse_pairs(block.value, block.line, "BPMS")?
                    .into_iter()
                    .map(|(start_beat, bpm)| BpmSegment { start_beat, bpm })
                    .collect();
            }
            "STOPS" | "FREEZES" => {
                sim.stop_segments = parse_pairs(block.value, block.line, "STOPS")?
                    .into_iter()
                    .map(|(beat, duration_s)| StopSegment { beat, duration_s })
                    .collect();
            }
            "NOTES" => {
                if let Some(chart) = parse_notes(block.value, block.line)? {
                    sim.charts.push(chart);
                }
            }
            _ => {}
        }
    }
    if !saw_bpms {
        return Err(SimfileError::Timing("missing #BPMS".into()));
    }
    validate_timing(&sim.bpm_segments, &sim.stop_segments)?;
    Ok(sim)
}

fn parse_notes(value: &str, line: usize) -> Result<Option<Chart>, SimfileError> {
    let fields: Vec<&str> = value.splitn(6, ':').collect();
    if fields.len() != 6 {
        return Err(SimfileError::Syntax {
            line,
            message: format!("#NOTES needs 6 fields, found {}", fields.len()),
        });
    }
    let chart_type = fields[0].trim();
    if !chart_type.eq_ignore_ascii_case("dance-single") {
        warn!("skipping {chart_type} chart at line {line}");
        return Ok(None);
    }
    let coarse = match CoarseDifficulty::parse(fields[2]) {
        Some(c) => c,
        None => {
            warn!(
                "skipping chart with difficulty {:?} at line {line}",
                fields[2].trim()
            );
            return Ok(None);
        }
    };
    let fine = fields[3]
        .trim()
        .parse::<u32>()
        .ok()
        .filter(|&m| m >= 1)
        .ok_or_else(|| SimfileError::Syntax {
            line,
            message: format!("bad meter {:?}", fields[3].trim()),
        })?;
    let rows = parse_note_data(fields[5])?;
    check_hold_pairing(&rows)?;
    Ok(Some(Chart {
        coarse_difficulty: coarse,
        fine_difficulty: fine,
        rows,
    }))
}

fn parse_note_data(data: &str) -> Result<Vec<Row>, SimfileError> {
    let mut rows = Vec::new();
    let measures: Vec<&str> = data.split(',').collect();
    let last = measures.len() - 1;
    for (m, measure) in measures.iter().enumerate() {
        let lines: Vec<&str> = measure
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            if m == last && m > 0 {
                // tolerate a trailing comma
                continue;
            }
            return Err(SimfileError::Syntax {
                line: 0,
                message: format!("measure {m} has no rows"),
            });
        }
        let count = lines.len() as u64;
        for (r, text) in lines.iter().enumerate() {
            let chars: Vec<char> = text.chars().collect();
            if chars.len() != COLUMNS {
                return Err(SimfileError::Syntax {
                    line: 0,
                    message: format!("measure {m} row {r}: expected 4 columns, found {text:?}"),
                });
            }
            let mut digits = [0u8; COLUMNS];
            for (slot, &c) in digits.iter_mut().zip(&chars) {
                *slot = match c {
                    '0' => 0,
                    '1' => 1,
                    '2' | '4' => 2,
                    '3' => 3,
                    'M' | 'm' => 0,
                    'L' | 'F' | 'K' | 'l' | 'f' | 'k' => {
                        warn!("measure {m}: unsupported note {c:?} treated as empty");
                        0
                    }
                    other => {
                        return Err(SimfileError::InvalidNote {
                            ch: other,
                            measure: m,
                        })
                    }
                };
            }
            let symbol = StepSymbol::from_digits(digits)?;
            if symbol.is_empty() {
                continue;
            }
            // Single rounding of the exact rational (4m·N + 4r)/N.
            let numer = BEATS_PER_MEASURE as u64 * (m as u64 * count + r as u64);
            rows.push(Row {
                beat: numer as f64 / count as f64,
                symbol,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Writing

fn grid_index(beat: f64) -> Result<u64, SimfileError> {
    if !(beat >= 0.0) || !beat.is_finite() {
        return Err(SimfileError::OffGrid(beat));
    }
    let k = (beat * GRID_PER_BEAT as f64).round();
    if (k / GRID_PER_BEAT as f64 - beat).abs() > 1e-9 * beat.max(1.0) {
        return Err(SimfileError::OffGrid(beat));
    }
    Ok(k as u64)
}

/// Serializes to `.sm` text, choosing per measure the coarsest subdivision
/// that places every row exactly.
pub fn write_simfile(sim: &Simfile) -> Result<String, SimfileError> {
    let mut out = String::new();
    out.push_str(&format!("#TITLE:{};\n", sim.title));
    out.push_str(&format!("#MUSIC:{};\n", sim.music_path));
    out.push_str(&format!("#OFFSET:{};\n", sim.offset_s));
    let bpms: Vec<String> = sim
        .bpm_segments
        .iter()
        .map(|s| format!("{}={}", s.start_beat, s.bpm))
        .collect();
    out.push_str(&format!("#BPMS:{};\n", bpms.join(",")));
    let stops: Vec<String> = sim
        .stop_segments
        .iter()
        .map(|s| format!("{}={}", s.beat, s.duration_s))
        .collect();
    out.push_str(&format!("#STOPS:{};\n", stops.join(",")));
    for chart in &sim.charts {
        out.push('\n');
        out.push_str(&write_chart(chart)?);
    }
    Ok(out)
}

fn write_chart(chart: &Chart) -> Result<String, SimfileError> {
    let per_measure = (GRID_PER_BEAT * BEATS_PER_MEASURE) as u64;
    let mut located = Vec::with_capacity(chart.rows.len());
    for row in &chart.rows {
        located.push((grid_index(row.beat)?, row.symbol));
    }
    let measures = located
        .last()
        .map_or(1, |(k, _)| (k / per_measure + 1) as usize);
    let mut buckets: Vec<Vec<(u64, StepSymbol)>> = vec![Vec::new(); measures];
    for (k, sym) in located {
        buckets[(k / per_measure) as usize].push((k % per_measure, sym));
    }

    let mut text = String::new();
    text.push_str("#NOTES:\n     dance-single:\n     :\n");
    text.push_str(&format!("     {}:\n", chart.coarse_difficulty.name()));
    text.push_str(&format!("     {}:\n", chart.fine_difficulty));
    text.push_str("     0,0,0,0,0:\n");
    for (m, bucket) in buckets.iter().enumerate() {
        if m > 0 {
            text.push_str(",\n");
        }
        let n = WRITER_SUBDIVISIONS
            .iter()
            .copied()
            .map(u64::from)
            .find(|&n| bucket.iter().all(|(u, _)| (u * n) % per_measure == 0))
            .expect("192 rows per measure represents every grid position");
        let mut lines = vec![StepSymbol::EMPTY; n as usize];
        for &(u, sym) in bucket {
            lines[(u * n / per_measure) as usize] = sym;
        }
        for sym in lines {
            text.push_str(&sym.to_string());
            text.push('\n');
        }
    }
    text.push_str(";\n");
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> StepSymbol {
        s.parse().unwrap()
    }

    fn one_chart(notes: &str) -> String {
        format!(
            "#TITLE:t;\n#MUSIC:a.wav;\n#OFFSET:0;\n#BPMS:0=120;\n#NOTES:\n dance-single:\n :\n Hard:\n 9:\n 0,0,0,0,0:\n{notes}\n;\n"
        )
    }

    #[test]
    fn symbol_index_is_base4_left_most_significant() {
        assert_eq!(sym("1000").index(), 64);
        assert_eq!(sym("0001").index(), 1);
        assert_eq!(sym("3333").index(), 255);
        assert_eq!(StepSymbol::from_index(64).to_string(), "1000");
        assert_eq!(sym("0230").digits(), [0, 2, 3, 0]);
        assert_eq!(sym("0230").digit(2), 3);
    }

    #[test]
    fn minimal_single_tap() {
        let sim = parse_simfile(&one_chart("1000\n0000\n0000\n0000")).unwrap();
        assert_eq!(sim.charts.len(), 1);
        assert_eq!(
            sim.charts[0].rows,
            vec![Row {
                beat: 0.0,
                symbol: sym("1000")
            }]
        );
        assert_eq!(
            sim.bpm_segments,
            vec![BpmSegment {
                start_beat: 0.0,
                bpm: 120.0
            }]
        );
    }

    #[test]
    fn eight_row_measure_places_eighths() {
        let sim =
            parse_simfile(&one_chart("0000\n1000\n0000\n0000\n0000\n0100\n0000\n0000")).unwrap();
        let beats: Vec<f64> = sim.charts[0].rows.iter().map(|r| r.beat).collect();
        assert_eq!(beats, vec![0.5, 2.5]);
    }

    #[test]
    fn mines_rolls_and_lifts_are_mapped() {
        let sim = parse_simfile(&one_chart("M100\n4000\n3L00\n0000")).unwrap();
        let syms: Vec<String> = sim.charts[0]
            .rows
            .iter()
            .map(|r| r.symbol.to_string())
            .collect();
        assert_eq!(syms, vec!["0100", "2000", "3000"]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_simfile("#TITLE:x;\n#BPMS:0=120\n"),
            Err(SimfileError::Unterminated { .. })
        ));
        assert!(matches!(
            parse_simfile(&one_chart("1X00\n0000\n0000\n0000")),
            Err(SimfileError::InvalidNote { ch: 'X', .. })
        ));
        match parse_simfile(&one_chart("0000\n0020\n0000\n0000")) {
            Err(SimfileError::HoldPairing { beat, column, .. }) => {
                assert_eq!(beat, 1.0);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_simfile(&one_chart("3000\n0000\n0000\n0000")),
            Err(SimfileError::HoldPairing { .. })
        ));
        let bad_bpm = one_chart("1000\n0000\n0000\n0000").replace("0=120", "0=-5");
        assert!(matches!(
            parse_simfile(&bad_bpm),
            Err(SimfileError::NonPositiveBpm { .. })
        ));
    }

    #[test]
    fn other_chart_types_are_skipped() {
        let text = one_chart("1000\n0000\n0000\n0000").replace("dance-single", "dance-double");
        assert!(parse_simfile(&text).unwrap().charts.is_empty());
    }

    #[test]
    fn writer_subdivisions() {
        let mut sim = Simfile::constant_bpm("t", "a.wav", 120.0, 0.0);
        let chart = |beats: &[f64]| Chart {
            coarse_difficulty: CoarseDifficulty::Easy,
            fine_difficulty: 3,
            rows: beats
                .iter()
                .map(|&beat| Row {
                    beat,
                    symbol: sym("1000"),
                })
                .collect(),
        };
        let measure_rows = |text: &str| -> usize {
            let body = text.split("0,0,0,0,0:\n").nth(1).unwrap();
            body.lines().take_while(|l| l.len() == 4).count()
        };
        sim.charts = vec![chart(&[0.0, 0.5])];
        assert_eq!(measure_rows(&write_simfile(&sim).unwrap()), 8);
        sim.charts = vec![chart(&[1.0 / 12.0])];
        assert_eq!(measure_rows(&write_simfile(&sim).unwrap()), 48);
        sim.charts = vec![chart(&[])];
        let text = write_simfile(&sim).unwrap();
        assert_eq!(measure_rows(&text), 4);
        assert!(text.contains("0000\n0000\n0000\n0000\n;"));
        sim.charts = vec![chart(&[0.01])];
        assert!(matches!(write_simfile(&sim), Err(SimfileError::OffGrid(_))));
    }

    #[test]
    fn mirror_examples() {
        let chart = |s: &str| Chart {
            coarse_difficulty: CoarseDifficulty::Easy,
            fine_difficulty: 3,
            rows: vec![Row {
                beat: 0.0,
                symbol: sym(s),
            }],
        };
        assert_eq!(
            mirror(&chart("1000"), MirrorAxis::LeftRight).rows[0].symbol,
            sym("0001")
        );
        assert_eq!(
            mirror(&chart("1200"), MirrorAxis::UpDown).rows[0].symbol,
            sym("1020")
        );
        assert_eq!(
            mirror(&chart("1200"), MirrorAxis::Both).rows[0].symbol,
            sym("0021")
        );
        let c = chart("1230");
        for axis in [MirrorAxis::LeftRight, MirrorAxis::UpDown, MirrorAxis::Both] {
            assert_eq!(mirror(&mirror(&c, axis), axis), c);
        }
    }

    #[test]
    fn augment_counts() {
        let c = Chart {
            coarse_difficulty: CoarseDifficulty::Easy,
            fine_difficulty: 3,
            rows: vec![],
        };
        assert_eq!(augment_dataset(&[c.clone()]).len(), 4);
        assert_eq!(augment_dataset(&[]).len(), 0);
        assert_eq!(augment_dataset(&vec![c; 95]).len(), 380);
    }

    #[test]
    fn beat_to_time_examples() {
        let mut sim = Simfile::constant_bpm("t", "a", 120.0, 0.0);
        assert_eq!(beat_to_time(&sim, 2.0), 1.0);
        sim.bpm_segments.push(BpmSegment {
            start_beat: 4.0,
            bpm: 240.0,
        });
        assert_eq!(beat_to_time(&sim, 6.0), 2.5);
        let mut sim = Simfile::constant_bpm("t", "a", 60.0, 0.0);
        sim.stop_segments.push(StopSegment {
            beat: 1.0,
            duration_s: 1.0,
        });
        assert_eq!(beat_to_time(&sim, 2.0), 3.0);
        assert_eq!(beat_to_time(&sim, 1.0), 1.0);
        let shifted = Simfile::constant_bpm("t", "a", 120.0, -0.25);
        assert_eq!(beat_to_time(&shifted, 0.0), 0.25);
    }

    #[test]
    fn bpm_at_follows_segments() {
        let mut sim = Simfile::constant_bpm("t", "a", 120.0, 0.0);
        sim.bpm_segments.push(BpmSegment {
            start_beat: 4.0,
            bpm: 240.0,
        });
        assert_eq!(sim.bpm_at(3.9), 120.0);
        assert_eq!(sim.bpm_at(4.0), 240.0);
    }
}
