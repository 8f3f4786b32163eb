//! Tracker detection logs, label files and the detection-coverage gate.
//!
//! Trial document (JSON):
//!
//! ```text
//! {"trial_id": "...", "fps": 24.0,
//!  "frames": [{"i": 0, "t": 0.0, "dog": [x, y] | null, "person": [x, y] | null,
//!              "dog_conf": c | null, "person_conf": c | null}, ...]}
//! ```
//!
//! Label file (CSV with header): `trial_id,rater1,rater2,rater3,sda,oda,sdf,nsf,srb,asb,exc,ps`
//! with an optional trailing `final_sign` column.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, collapse_5_to_sign, majority_vote, Score5, SignClass};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("timestamps not strictly increasing at frame {frame_index}")]
    NonMonotoneTimestamps { frame_index: u64 },
    #[error("unknown C-BARQ factor code {0:?}")]
    UnknownFactorCode(String),
    #[error("score out of range: {0}")]
    ScoreOutOfRange(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Clamp both coordinates into [0, 1]; returns the clamped point and
    /// whether anything changed.
    pub fn clamped(self) -> (Point2D, bool) {
        let x = self.x.clamp(0.0, 1.0);
        let y = self.y.clamp(0.0, 1.0);
        (Point2D { x, y }, x != self.x || y != self.y)
    }

    pub fn lerp(a: Point2D, b: Point2D, w: f64) -> Point2D {
        Point2D { x: a.x + (b.x - a.x) * w, y: a.y + (b.y - a.y) * w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub dog: Option<Point2D>,
    pub person: Option<Point2D>,
    pub dog_conf: Option<f64>,
    pub person_conf: Option<f64>,
}

impl FrameDetection {
    pub fn both_present(&self) -> bool {
        self.dog.is_some() && self.person.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub trial_id: String,
    pub fps_native: f64,
    pub frames: Vec<FrameDetection>,
    /// Number of coordinates clamped into [0, 1] while parsing.
    pub clamp_count: usize,
}

impl RawTrial {
    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp_s - a.timestamp_s,
            _ => 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TrialDoc {
    trial_id: String,
    fps: f64,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
struct FrameDoc {
    i: u64,
    t: f64,
    dog: Option<[f64; 2]>,
    person: Option<[f64; 2]>,
    #[serde(default)]
    dog_conf: Option<f64>,
    #[serde(default)]
    person_conf: Option<f64>,
}

fn classify(e: serde_json::Error) -> IoError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => IoError::SchemaViolation(e.to_string()),
        Category::Io | Category::Syntax | Category::Eof => IoError::MalformedDocument(e.to_string()),
    }
}

/// Parse and validate one trial document.
///
/// Frames are sorted by index; coordinates outside [0, 1] are clamped and
/// counted in [`RawTrial::clamp_count`].
pub fn parse_trial<R: Read>(source: R) -> Result<RawTrial> {
    let doc: TrialDoc = serde_json::from_reader(source).map_err(classify)?;
    trial_from_doc(doc)
}

pub fn parse_trial_str(source: &str) -> Result<RawTrial> {
    let doc: TrialDoc = serde_json::from_str(source).map_err(classify)?;
    trial_from_doc(doc)
}

fn trial_from_doc(doc: TrialDoc) -> Result<RawTrial> {
    if !(doc.fps.is_finite() && doc.fps > 0.0) {
        return Err(IoError::SchemaViolation(format!("fps must be positive, got {}", doc.fps)));
    }
    if doc.frames.is_empty() {
        return Err(IoError::SchemaViolation("frames must be nonempty".into()));
    }
    let mut clamp_count = 0;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for f in doc.frames {
        if !(f.t.is_finite() && f.t >= 0.0) {
            return Err(IoError::SchemaViolation(format!("frame {}: bad timestamp {}", f.i, f.t)));
        }
        for (name, conf) in [("dog_conf", f.dog_conf), ("person_conf", f.person_conf)] {
            if let Some(c) = conf {
                if !(0.0..=1.0).contains(&c) {
                    return Err(IoError::SchemaViolation(format!(
                        "frame {}: {name} {c} outside [0, 1]",
                        f.i
                    )));
                }
            }
        }
        let mut point = |xy: Option<[f64; 2]>| {
            xy.map(|[x, y]| {
                let (p, changed) = Point2D::new(x, y).clamped();
                clamp_count += usize::from(changed);
                p
            })
        };
        let dog = point(f.dog);
        let person = point(f.person);
        frames.push(FrameDetection {
            frame_index: f.i,
            timestamp_s: f.t,
            dog,
            person,
            dog_conf: dog.and(f.dog_conf),
            person_conf: person.and(f.person_conf),
        });
    }
    frames.sort_by_key(|f| f.frame_index);
    for w in frames.windows(2) {
        if w[0].frame_index == w[1].frame_index {
            return Err(IoError::SchemaViolation(format!("duplicate frame index {}", w[0].frame_index)));
        }
        if w[1].timestamp_s <= w[0].timestamp_s {
            return Err(IoError::NonMonotoneTimestamps { frame_index: w[1].frame_index });
        }
    }
    let trial = RawTrial { trial_id: doc.trial_id, fps_native: doc.fps, frames, clamp_count };
    check_fps(&trial)?;
    Ok(trial)
}

/// The declared rate must agree with the median frame interval within 1%.
fn check_fps(trial: &RawTrial) -> Result<()> {
    if trial.frames.len() < 2 {
        return Ok(());
    }
    let gaps: Vec<f64> = trial
        .frames
        .windows(2)
        .map(|w| (w[1].timestamp_s - w[0].timestamp_s) / (w[1].frame_index - w[0].frame_index) as f64)
        .collect();
    let median = stats::median(&gaps).unwrap_or(0.0);
    let implied = 1.0 / median;
    if ((implied - trial.fps_native) / trial.fps_native).abs() > 0.01 {
        return Err(IoError::SchemaViolation(format!(
            "declared fps {} disagrees with median frame interval (implies {implied:.4})",
            trial.fps_native
        )));
    }
    Ok(())
}

pub fn serialize_trial<W: Write>(trial: &RawTrial, out: W) -> Result<()> {
    let doc = TrialDoc {
        trial_id: trial.trial_id.clone(),
        fps: trial.fps_native,
        frames: trial
            .frames
            .iter()
            .map(|f| FrameDoc {
                i: f.frame_index,
                t: f.timestamp_s,
                dog: f.dog.map(|p| [p.x, p.y]),
                person: f.person.map(|p| [p.x, p.y]),
                dog_conf: f.dog_conf,
                person_conf: f.person_conf,
            })
            .collect(),
    };
    serde_json::to_writer(out, &doc).map_err(|e| IoError::MalformedDocument(e.to_string()))
}

pub fn serialize_trial_string(trial: &RawTrial) -> String {
    let mut buf = Vec::new();
    serialize_trial(trial, &mut buf).expect("in-memory serialization");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Fraction of frames in which both the dog and the person were detected.
pub fn detection_coverage(trial: &RawTrial) -> f64 {
    if trial.frames.is_empty() {
        return 0.0;
    }
    let both = trial.frames.iter().filter(|f| f.both_present()).count();
    both as f64 / trial.frames.len() as f64
}

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.8;

/// Split trials into those meeting the coverage threshold (inclusive) and
/// the rest, preserving order.
pub fn quality_gate(trials: Vec<RawTrial>, threshold: f64) -> (Vec<RawTrial>, Vec<RawTrial>) {
    trials.into_iter().partition(|t| detection_coverage(t) >= threshold)
}

/// Owner-questionnaire behavioral factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CbarqFactor {
    /// Stranger-directed aggression
    Sda,
    /// Owner-directed aggression
    Oda,
    /// Stranger-directed fear
    Sdf,
    /// Nonsocial fear
    Nsf,
    /// Separation-related behavior
    Srb,
    /// Attachment or attention-seeking behavior
    Asb,
    /// Excitability
    Exc,
    /// Pain sensitivity
    Ps,
}

impl CbarqFactor {
    pub const ALL: [CbarqFactor; 8] = [
        CbarqFactor::Sda,
        CbarqFactor::Oda,
        CbarqFactor::Sdf,
        CbarqFactor::Nsf,
        CbarqFactor::Srb,
        CbarqFactor::Asb,
        CbarqFactor::Exc,
        CbarqFactor::Ps,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CbarqFactor::Sda => "SDA",
            CbarqFactor::Oda => "ODA",
            CbarqFactor::Sdf => "SDF",
            CbarqFactor::Nsf => "NSF",
            CbarqFactor::Srb => "SRB",
            CbarqFactor::Asb => "ASB",
            CbarqFactor::Exc => "EXC",
            CbarqFactor::Ps => "PS",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CbarqFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CbarqFactor {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        CbarqFactor::ALL
            .into_iter()
            .find(|f| f.code() == upper)
            .ok_or_else(|| IoError::UnknownFactorCode(s.to_string()))
    }
}

pub const CBARQ_MAX: f64 = 4.0;

/// Scores for all eight factors, each in [0, 4].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbarqScores(pub [f64; 8]);

impl CbarqScores {
    pub fn new(values: [f64; 8]) -> Result<Self> {
        for (f, v) in CbarqFactor::ALL.iter().zip(values) {
            if !(0.0..=CBARQ_MAX).contains(&v) {
                return Err(IoError::ScoreOutOfRange(format!("{f}={v} outside [0, 4]")));
            }
        }
        Ok(Self(values))
    }

    pub fn get(&self, factor: CbarqFactor) -> f64 {
        self.0[factor.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub trial_id: String,
    pub rater_scores: [Score5; 3],
    /// Majority of the raters' sign classes; `None` when all three differ.
    pub final_sign: Option<SignClass>,
    pub cbarq: Option<CbarqScores>,
}

impl ScoreRecord {
    pub fn rater_signs(&self) -> [SignClass; 3] {
        self.rater_scores.map(collapse_5_to_sign)
    }

    pub fn from_scores(trial_id: String, rater_scores: [Score5; 3], cbarq: Option<CbarqScores>) -> Self {
        let final_sign = majority_vote(rater_scores.map(collapse_5_to_sign)).ok();
        Self { trial_id, rater_scores, final_sign, cbarq }
    }
}

const RATER_COLUMNS: [&str; 3] = ["rater1", "rater2", "rater3"];

/// Read a label CSV. `final_sign` is derived from the raters when the
/// column is missing or empty, and must match the majority when present.
pub fn load_labels<R: Read>(source: R) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| IoError::MalformedDocument(e.to_string()))?
        .clone();
    let mut trial_col = None;
    let mut rater_cols = [None; 3];
    let mut factor_cols = [None; 8];
    let mut sign_col = None;
    for (idx, name) in headers.iter().enumerate() {
        let lower = name.to_ascii_lowercase();
        if lower == "trial_id" {
            trial_col = Some(idx);
        } else if let Some(r) = RATER_COLUMNS.iter().position(|c| *c == lower) {
            rater_cols[r] = Some(idx);
        } else if lower == "final_sign" {
            sign_col = Some(idx);
        } else {
            let factor: CbarqFactor = lower.parse()?;
            factor_cols[factor.index()] = Some(idx);
        }
    }
    let trial_col = trial_col.ok_or_else(|| IoError::SchemaViolation("missing column trial_id".into()))?;
    let rater_cols = rater_cols
        .iter()
        .zip(RATER_COLUMNS)
        .map(|(c, name)| c.ok_or_else(|| IoError::SchemaViolation(format!("missing column {name}"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(pos) = factor_cols.iter().position(Option::is_none) {
        return Err(IoError::SchemaViolation(format!(
            "missing column {}",
            CbarqFactor::ALL[pos].code().to_ascii_lowercase()
        )));
    }

    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IoError::MalformedDocument(e.to_string()))?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let trial_id = field(trial_col).to_string();
        if trial_id.is_empty() {
            return Err(IoError::SchemaViolation(format!("line {line}: empty trial_id")));
        }
        let mut scores = [Score5::new(0).expect("0 in range"); 3];
        for (slot, &col) in scores.iter_mut().zip(&rater_cols) {
            let v: i32 = field(col)
                .parse()
                .map_err(|_| IoError::SchemaViolation(format!("line {line}: bad rater score {:?}", field(col))))?;
            *slot = Score5::new(v).map_err(|e| IoError::ScoreOutOfRange(format!("line {line}: {e}")))?;
        }
        let cells: Vec<&str> = factor_cols.iter().map(|c| field(c.expect("checked above"))).collect();
        let cbarq = if cells.iter().all(|c| c.is_empty()) {
            None
        } else if cells.iter().any(|c| c.is_empty()) {
            return Err(IoError::SchemaViolation(format!(
                "line {line}: C-BARQ factors must be all present or all empty"
            )));
        } else {
            let mut values = [0.0; 8];
            for (i, cell) in cells.iter().enumerate() {
                values[i] = cell.parse().map_err(|_| {
                    IoError::SchemaViolation(format!("line {line}: bad factor value {cell:?}"))
                })?;
            }
            Some(CbarqScores::new(values).map_err(|e| match e {
                IoError::ScoreOutOfRange(m) => IoError::ScoreOutOfRange(format!("line {line}: {m}")),
                other => other,
            })?)
        };
        let record = ScoreRecord::from_scores(trial_id, scores, cbarq);
        if let Some(col) = sign_col {
            let cell = field(col);
            if !cell.is_empty() {
                let declared: SignClass = cell
                    .parse()
                    .map_err(|e: stats::StatsError| IoError::SchemaViolation(format!("line {line}: {e}")))?;
                if record.final_sign != Some(declared) {
                    return Err(IoError::SchemaViolation(format!(
                        "line {line}: final_sign {declared} disagrees with rater majority"
                    )));
                }
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records in the label CSV layout, including the derived `final_sign`.
pub fn write_labels<W: Write>(records: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["trial_id".into()];
    header.extend(RATER_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(CbarqFactor::ALL.iter().map(|f| f.code().to_ascii_lowercase()));
    header.push("final_sign".into());
    let csv_err = |e: csv::Error| IoError::MalformedDocument(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.trial_id.clone()];
        row.extend(r.rater_scores.iter().map(|s| s.value().to_string()));
        match &r.cbarq {
            Some(c) => row.extend(c.0.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 8)),
        }
        row.push(r.final_sign.map(|s| s.as_str().to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(i: u64, t: f64, dog: Option<(f64, f64)>, person: Option<(f64, f64)>) -> FrameDetection {
        FrameDetection {
            frame_index: i,
            timestamp_s: t,
            dog: dog.map(|(x, y)| Point2D::new(x, y)),
            person: person.map(|(x, y)| Point2D::new(x, y)),
            dog_conf: None,
            person_conf: None,
        }
    }

    fn trial(frames: Vec<FrameDetection>) -> RawTrial {
        RawTrial { trial_id: "t".into(), fps_native: 10.0, frames, clamp_count: 0 }
    }

    #[test]
    fn minimal_document() {
        let t = parse_trial_str(
            r#"{"trial_id":"a","fps":24,"frames":[{"i":0,"t":0.0,"dog":[0.5,0.5],"person":null}]}"#,
        )
        .unwrap();
        assert_eq!(t.frames.len(), 1);
        assert_eq!(t.frames[0].dog, Some(Point2D::new(0.5, 0.5)));
        assert!(t.frames[0].person.is_none());
        assert_eq!(t.duration_s(), 0.0);
    }

    #[test]
    fn clamps_and_counts() {
        let t = parse_trial_str(
            r#"{"trial_id":"a","fps":24,"frames":[{"i":0,"t":0.0,"dog":[1.2,0.5],"person":[0.5,0.5]}]}"#,
        )
        .unwrap();
        assert_eq!(t.frames[0].dog.unwrap().x, 1.0);
        assert_eq!(t.clamp_count, 1);
    }

    #[test]
    fn rejects_bad_documents() {
        let nonmono = r#"{"trial_id":"a","fps":10,"frames":[
            {"i":0,"t":0.0,"dog":null,"person":null},
            {"i":1,"t":0.1,"dog":null,"person":null},
            {"i":2,"t":0.05,"dog":null,"person":null}]}"#;
        assert!(matches!(parse_trial_str(nonmono), Err(IoError::NonMonotoneTimestamps { frame_index: 2 })));
        assert!(matches!(parse_trial_str("{not json"), Err(IoError::MalformedDocument(_))));
        assert!(matches!(
            parse_trial_str(r#"{"trial_id":"a","frames":[]}"#),
            Err(IoError::SchemaViolation(_))
        ));
        assert!(matches!(
            parse_trial_str(r#"{"trial_id":"a","fps":24,"frames":[]}"#),
            Err(IoError::SchemaViolation(_))
        ));
        let bad_fps = r#"{"trial_id":"a","fps":24,"frames":[
            {"i":0,"t":0.0,"dog":null,"person":null},
            {"i":1,"t":0.1,"dog":null,"person":null}]}"#;
        assert!(matches!(parse_trial_str(bad_fps), Err(IoError::SchemaViolation(_))));
    }

    #[test]
    fn coverage_counts_frames_with_both() {
        let full = trial((0..10).map(|i| frame(i, i as f64 * 0.1, Some((0.1, 0.1)), Some((0.5, 0.5)))).collect());
        assert_eq!(detection_coverage(&full), 1.0);
        let partial = trial(
            (0..10)
                .map(|i| frame(i, i as f64 * 0.1, Some((0.1, 0.1)), if i < 8 { Some((0.5, 0.5)) } else { None }))
                .collect(),
        );
        assert_eq!(detection_coverage(&partial), 0.8);
        let mixed = trial(vec![
            frame(0, 0.0, Some((0.1, 0.1)), Some((0.5, 0.5))),
            frame(1, 0.1, Some((0.1, 0.1)), Some((0.5, 0.5))),
            frame(2, 0.2, None, None),
            frame(3, 0.3, None, Some((0.5, 0.5))),
        ]);
        assert_eq!(detection_coverage(&mixed), 0.5);
    }

    fn with_coverage(id: &str, present: usize, total: usize) -> RawTrial {
        let frames = (0..total)
            .map(|i| frame(i as u64, i as f64 * 0.1, Some((0.2, 0.2)), (i < present).then_some((0.5, 0.5))))
            .collect();
        RawTrial { trial_id: id.into(), fps_native: 10.0, frames, clamp_count: 0 }
    }

    #[test]
    fn gate_inclusive_boundary() {
        let trials = vec![with_coverage("a", 79, 100), with_coverage("b", 80, 100), with_coverage("c", 95, 100)];
        let (kept, excluded) = quality_gate(trials, DEFAULT_COVERAGE_THRESHOLD);
        assert_eq!(kept.iter().map(|t| t.trial_id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(excluded.len(), 1);

        let (kept, excluded) = quality_gate(Vec::new(), 0.8);
        assert!(kept.is_empty() && excluded.is_empty());
    }

    #[test]
    fn gate_fifty_with_three_below() {
        let trials: Vec<RawTrial> = (0..50)
            .map(|i| with_coverage(&format!("t{i}"), if i % 17 == 5 { 70 } else { 90 }, 100))
            .collect();
        let (kept, excluded) = quality_gate(trials, 0.8);
        assert_eq!((kept.len(), excluded.len()), (47, 3));
        let (again, none) = quality_gate(kept.clone(), 0.8);
        assert_eq!(again, kept);
        assert!(none.is_empty());
    }

    const HEADER: &str = "trial_id,rater1,rater2,rater3,sda,oda,sdf,nsf,srb,asb,exc,ps\n";

    #[test]
    fn labels_majority_and_bounds() {
        let csv = format!("{HEADER}a,0,0,1,,,,,,,,\nb,-2,-1,0,0,0,0,0,0,0,1.5,0\n");
        let recs = load_labels(csv.as_bytes()).unwrap();
        assert_eq!(recs[0].final_sign, Some(SignClass::Neutral));
        assert!(recs[0].cbarq.is_none());
        assert_eq!(recs[1].final_sign, Some(SignClass::Negative));
        assert_eq!(recs[1].cbarq.unwrap().get(CbarqFactor::Exc), 1.5);

        let csv = format!("{HEADER}a,0,0,1,0,0,0,0,0,0,4.5,0\n");
        assert!(matches!(load_labels(csv.as_bytes()), Err(IoError::ScoreOutOfRange(_))));
        let csv = format!("{HEADER}a,0,3,1,,,,,,,,\n");
        assert!(matches!(load_labels(csv.as_bytes()), Err(IoError::ScoreOutOfRange(_))));
        let csv = "trial_id,rater1,rater2,rater3,sda,oda,sdf,nsf,srb,asb,exc,ps,xyz\n";
        assert!(matches!(load_labels(csv.as_bytes()), Err(IoError::UnknownFactorCode(_))));
        let csv = "trial_id,rater1,rater2,sda,oda,sdf,nsf,srb,asb,exc,ps\n";
        assert!(matches!(load_labels(csv.as_bytes()), Err(IoError::SchemaViolation(_))));
        let csv = format!("{HEADER}a,0,0,1,1,,,,,,,\n");
        assert!(matches!(load_labels(csv.as_bytes()), Err(IoError::SchemaViolation(_))));
    }

    #[test]
    fn labels_declared_sign_checked() {
        let head = HEADER.trim_end().to_string() + ",final_sign\n";
        let ok = format!("{head}a,1,2,0,,,,,,,,,+\n");
        assert_eq!(load_labels(ok.as_bytes()).unwrap()[0].final_sign, Some(SignClass::Positive));
        let bad = format!("{head}a,1,2,0,,,,,,,,,0\n");
        assert!(matches!(load_labels(bad.as_bytes()), Err(IoError::SchemaViolation(_))));
    }

    #[test]
    fn labels_write_read_back() {
        let csv = format!("{HEADER}a,0,0,1,,,,,,,,\nb,-2,-1,0,0.25,0,0,0,0,0,1.5,4\n");
        let recs = load_labels(csv.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_labels(&recs, &mut buf).unwrap();
        assert_eq!(load_labels(buf.as_slice()).unwrap(), recs);
    }

    fn coord() -> impl Strategy<Value = f64> {
        (0u32..=1_000_000).prop_map(|v| v as f64 / 1e6)
    }

    fn arb_trial() -> impl Strategy<Value = RawTrial> {
        proptest::collection::vec(
            (proptest::option::of((coord(), coord())), proptest::option::of((coord(), coord()))),
            1..30,
        )
        .prop_map(|points| {
            let frames = points
                .into_iter()
                .enumerate()
                .map(|(i, (d, p))| {
                    let mut f = frame(i as u64, i as f64 / 24.0, d, p);
                    f.dog_conf = f.dog.map(|_| 0.9);
                    f
                })
                .collect();
            RawTrial { trial_id: "rt".into(), fps_native: 24.0, frames, clamp_count: 0 }
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip(t in arb_trial()) {
            let text = serialize_trial_string(&t);
            prop_assert_eq!(parse_trial_str(&text).unwrap(), t);
        }

        #[test]
        fn coverage_ignores_document_order(t in arb_trial(), rot in 0usize..30) {
            let mut doc: serde_json::Value = serde_json::from_str(&serialize_trial_string(&t)).unwrap();
            let frames = doc["frames"].as_array_mut().unwrap();
            let k = rot % frames.len();
            frames.rotate_left(k);
            let shuffled = parse_trial_str(&doc.to_string()).unwrap();
            prop_assert_eq!(detection_coverage(&shuffled), detection_coverage(&t));
        }
    }
}
