//! Fixed-rate, gap-free, fixed-length trial series.
//!
//! Order of operations in the pipeline: [`resample`] to the standard rate,
//! [`fill_gaps`], [`smooth`] each trajectory, [`standardize_lengths`] to the
//! shortest trial, then [`build_matrix`] to obtain the `(n, 4, m)` tensor.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory_io::{FrameDetection, Point2D, RawTrial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("trial {0}: at least two frames are required")]
    TooFewFrames(String),
    #[error("trial {trial}: {channel} channel has fewer than two detections")]
    ChannelTooSparse { trial: String, channel: &'static str },
    #[error("smoothing window {window} invalid for series of length {len}")]
    BadWindow { window: usize, len: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("trial {0} still has missing detections")]
    Incomplete(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("trial {trial} has rate {found}, expected {expected}")]
    RateMismatch { trial: String, found: f64, expected: f64 },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

pub const STANDARD_FPS: f64 = 24.0;
pub const DEFAULT_SMOOTH_WINDOW: usize = 5;

/// Channel layout of every sample tensor.
pub const CHANNELS: [&str; 4] = ["dog_x", "dog_y", "person_x", "person_y"];

/// Timestamps closer than this are treated as the same instant.
const TIME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point2D>,
    pub fps: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSeries {
    pub trial_id: String,
    pub dog: Trajectory,
    pub person: Trajectory,
}

impl TrialSeries {
    pub fn m(&self) -> usize {
        self.dog.len()
    }

    /// Build from a trial whose frames all carry both detections.
    pub fn from_filled(trial: &RawTrial) -> Result<Self> {
        let mut dog = Vec::with_capacity(trial.frames.len());
        let mut person = Vec::with_capacity(trial.frames.len());
        for f in &trial.frames {
            match (f.dog, f.person) {
                (Some(d), Some(p)) => {
                    dog.push(d);
                    person.push(p);
                }
                _ => return Err(PreprocessError::Incomplete(trial.trial_id.clone())),
            }
        }
        if dog.len() < 2 {
            return Err(PreprocessError::TooFewFrames(trial.trial_id.clone()));
        }
        let fps = trial.fps_native;
        Ok(Self {
            trial_id: trial.trial_id.clone(),
            dog: Trajectory { points: dog, fps },
            person: Trajectory { points: person, fps },
        })
    }

    /// Intermediate dump: `i,dog_x,dog_y,person_x,person_y`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
        w.write_record(["i", "dog_x", "dog_y", "person_x", "person_y"]).map_err(to_io)?;
        for (i, (d, p)) in self.dog.points.iter().zip(&self.person.points).enumerate() {
            w.write_record([
                i.to_string(),
                d.x.to_string(),
                d.y.to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<TrialSeries>,
    pub m: usize,
    pub fps: f64,
}

/// Row-major `(n, 4, m)` tensor; each sample is a contiguous `4 × m` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTensor {
    pub n: usize,
    pub channels: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl SampleTensor {
    pub fn from_samples(channels: usize, m: usize, samples: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(samples.len() * channels * m);
        for s in samples {
            assert_eq!(s.len(), channels * m, "sample size");
            data.extend_from_slice(s);
        }
        Self { n: samples.len(), channels, m, data }
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.channels * self.m;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.channels, self.m)
    }

    /// Tensor holding only the listed samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.m);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self { n: indices.len(), channels: self.channels, m: self.m, data }
    }
}

fn interp_channel(
    frames: &[FrameDetection],
    get: impl Fn(&FrameDetection) -> Option<Point2D>,
    conf: impl Fn(&FrameDetection) -> Option<f64>,
    lo: usize,
    t: f64,
) -> (Option<Point2D>, Option<f64>) {
    let a = &frames[lo];
    if (a.timestamp_s - t).abs() <= TIME_TOL {
        return (get(a), conf(a));
    }
    let Some(b) = frames.get(lo + 1) else {
        return (None, None);
    };
    if (b.timestamp_s - t).abs() <= TIME_TOL {
        return (get(b), conf(b));
    }
    match (get(a), get(b)) {
        (Some(pa), Some(pb)) => {
            let w = (t - a.timestamp_s) / (b.timestamp_s - a.timestamp_s);
            let c = match (conf(a), conf(b)) {
                (Some(x), Some(y)) => Some(x.min(y)),
                _ => None,
            };
            (Some(Point2D::lerp(pa, pb, w)), c)
        }
        _ => (None, None),
    }
}

/// Resample to uniform timestamps `t0 + k / target_fps` over the trial span.
///
/// Each channel is linearly interpolated between the native frames that
/// bracket the target instant; if either bracketing frame lacks the
/// channel, the output frame lacks it too.
pub fn resample(trial: &RawTrial, target_fps: f64) -> Result<RawTrial> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(PreprocessError::BadParameter(format!("target fps {target_fps}")));
    }
    if trial.frames.len() < 2 {
        return Err(PreprocessError::TooFewFrames(trial.trial_id.clone()));
    }
    let t0 = trial.frames[0].timestamp_s;
    let count = (trial.duration_s() * target_fps + TIME_TOL * target_fps).floor() as usize + 1;
    let mut frames = Vec::with_capacity(count);
    let mut lo = 0;
    for k in 0..count {
        let t = t0 + k as f64 / target_fps;
        while lo + 1 < trial.frames.len() && trial.frames[lo + 1].timestamp_s <= t + TIME_TOL {
            lo += 1;
        }
        let (dog, dog_conf) = interp_channel(&trial.frames, |f| f.dog, |f| f.dog_conf, lo, t);
        let (person, person_conf) = interp_channel(&trial.frames, |f| f.person, |f| f.person_conf, lo, t);
        frames.push(FrameDetection { frame_index: k as u64, timestamp_s: t, dog, person, dog_conf, person_conf });
    }
    Ok(RawTrial { trial_id: trial.trial_id.clone(), fps_native: target_fps, frames, clamp_count: trial.clamp_count })
}

fn fill_channel(
    trial_id: &str,
    name: &'static str,
    times: &[f64],
    values: &mut [Option<Point2D>],
) -> Result<()> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if known.len() < 2 {
        return Err(PreprocessError::ChannelTooSparse { trial: trial_id.to_string(), channel: name });
    }
    let at = |i: usize, vals: &[Option<Point2D>]| vals[i].expect("known index");
    let project = |i0: usize, i1: usize, target: usize, vals: &[Option<Point2D>]| {
        let w = (times[target] - times[i0]) / (times[i1] - times[i0]);
        Point2D::lerp(at(i0, vals), at(i1, vals), w).clamped().0
    };
    let first = known[0];
    let last = known[known.len() - 1];
    for i in 0..first {
        values[i] = Some(project(known[0], known[1], i, values));
    }
    for i in last + 1..values.len() {
        values[i] = Some(project(known[known.len() - 2], last, i, values));
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for i in a + 1..b {
            values[i] = Some(project(a, b, i, values));
        }
    }
    Ok(())
}

/// Fill missing detections: interior gaps by interpolation between the
/// bounding detections, leading and trailing gaps by linear extrapolation
/// from the two nearest detections, clamped to [0, 1].
pub fn fill_gaps(trial: &RawTrial) -> Result<RawTrial> {
    let times: Vec<f64> = trial.frames.iter().map(|f| f.timestamp_s).collect();
    let mut dog: Vec<Option<Point2D>> = trial.frames.iter().map(|f| f.dog).collect();
    let mut person: Vec<Option<Point2D>> = trial.frames.iter().map(|f| f.person).collect();
    fill_channel(&trial.trial_id, "dog", &times, &mut dog)?;
    fill_channel(&trial.trial_id, "person", &times, &mut person)?;
    let frames = trial
        .frames
        .iter()
        .zip(dog.into_iter().zip(person))
        .map(|(f, (d, p))| FrameDetection {
            dog: d,
            person: p,
            // filled frames carry no detector confidence
            dog_conf: f.dog.and(f.dog_conf),
            person_conf: f.person.and(f.person_conf),
            ..f.clone()
        })
        .collect();
    Ok(RawTrial { frames, ..trial.clone() })
}

/// Centered moving average over an odd window; near the ends the window
/// shrinks symmetrically, so the first and last points are kept.
pub fn smooth(traj: &Trajectory, window: usize) -> Result<Trajectory> {
    let n = traj.len();
    if window == 0 || window.is_multiple_of(2) || window > n {
        return Err(PreprocessError::BadWindow { window, len: n });
    }
    let half = window / 2;
    let points = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &traj.points[i - h..=i + h];
            let w = span.len() as f64;
            Point2D {
                x: span.iter().map(|p| p.x).sum::<f64>() / w,
                y: span.iter().map(|p| p.y).sum::<f64>() / w,
            }
        })
        .collect();
    Ok(Trajectory { points, fps: traj.fps })
}

pub fn smooth_series(series: &TrialSeries, window: usize) -> Result<TrialSeries> {
    Ok(TrialSeries {
        trial_id: series.trial_id.clone(),
        dog: smooth(&series.dog, window)?,
        person: smooth(&series.person, window)?,
    })
}

/// Truncate every sample to the shortest length, keeping the initial segment.
pub fn standardize_lengths(trials: Vec<TrialSeries>) -> Result<Dataset> {
    let first = trials.first().ok_or(PreprocessError::EmptyInput)?;
    let fps = first.dog.fps;
    for t in &trials {
        for traj in [&t.dog, &t.person] {
            if (traj.fps - fps).abs() > 1e-9 {
                return Err(PreprocessError::RateMismatch { trial: t.trial_id.clone(), found: traj.fps, expected: fps });
            }
        }
        if t.dog.len() != t.person.len() {
            return Err(PreprocessError::BadParameter(format!("trial {}: dog/person length differ", t.trial_id)));
        }
    }
    let m = trials.iter().map(TrialSeries::m).min().expect("nonempty");
    let samples = trials
        .into_iter()
        .map(|mut t| {
            t.dog.points.truncate(m);
            t.person.points.truncate(m);
            t
        })
        .collect();
    Ok(Dataset { samples, m, fps })
}

/// Stack the dataset into an `(n, 4, m)` tensor with channel order
/// `[dog.x, dog.y, person.x, person.y]`.
pub fn build_matrix(dataset: &Dataset) -> Result<SampleTensor> {
    if dataset.samples.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let m = dataset.m;
    let mut data = Vec::with_capacity(dataset.samples.len() * 4 * m);
    for s in &dataset.samples {
        data.extend(s.dog.points.iter().map(|p| p.x));
        data.extend(s.dog.points.iter().map(|p| p.y));
        data.extend(s.person.points.iter().map(|p| p.x));
        data.extend(s.person.points.iter().map(|p| p.y));
    }
    Ok(SampleTensor { n: dataset.samples.len(), channels: 4, m, data })
}

/// Resample, fill and smooth one gated trial.
pub fn prepare_trial(trial: &RawTrial, target_fps: f64, window: usize) -> Result<TrialSeries> {
    let resampled = resample(trial, target_fps)?;
    let filled = fill_gaps(&resampled)?;
    let series = TrialSeries::from_filled(&filled)?;
    smooth_series(&series, window)
}
