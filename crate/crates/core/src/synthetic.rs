//! Seeded generator of labeled arena trials.
//!
//! The person sits at the arena center. The dog starts near the door and
//! follows a drift–diffusion process whose drift depends on the behavior
//! profile. Every trial comes with its true sign class, eight questionnaire
//! factor values and three simulated rater scores.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
use crate::stats::{Score5, SignClass};
use crate::trajectory_io::{self, CbarqFactor, CbarqScores, FrameDetection, Point2D, RawTrial, ScoreRecord, CBARQ_MAX};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] trajectory_io::IoError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileKind {
    Neutral,
    Excessive,
    Avoidant,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 3] = [ProfileKind::Neutral, ProfileKind::Excessive, ProfileKind::Avoidant];

    pub fn sign(self) -> SignClass {
        match self {
            ProfileKind::Neutral => SignClass::Neutral,
            ProfileKind::Excessive => SignClass::Positive,
            ProfileKind::Avoidant => SignClass::Negative,
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neutral" => Ok(ProfileKind::Neutral),
            "excessive" => Ok(ProfileKind::Excessive),
            "avoidant" => Ok(ProfileKind::Avoidant),
            _ => Err(SynthError::BadConfig(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub kind: ProfileKind,
    /// Speed toward the person, arena widths per second.
    pub approach_rate: f64,
    /// Radius around the person inside which the dog stops approaching.
    pub dwell_radius: f64,
    /// Amplitude of the oscillation bursts that follow each event.
    pub jump_amplitude: f64,
    /// Speed away from the arena center, arena widths per second.
    pub wall_affinity: f64,
}

impl BehaviorProfile {
    pub fn new(kind: ProfileKind) -> Self {
        let (approach_rate, jump_amplitude, wall_affinity) = match kind {
            ProfileKind::Neutral => (0.0, 0.0, 0.0),
            ProfileKind::Excessive => (0.15, 0.03, 0.0),
            ProfileKind::Avoidant => (0.0, 0.0, 0.05),
        };
        Self { kind, approach_rate, dwell_radius: 0.08, jump_amplitude, wall_affinity }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.approach_rate, self.jump_amplitude, self.wall_affinity];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(SynthError::BadConfig("profile rates must be nonnegative".into()));
        }
        if !(self.dwell_radius > 0.0 && self.dwell_radius < 0.5) {
            return Err(SynthError::BadConfig(format!("dwell_radius {} outside (0, 0.5)", self.dwell_radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub duration_s: f64,
    pub fps: f64,
    pub noise_sd: f64,
    pub missing_rate: f64,
    pub event_times_s: Vec<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { duration_s: 60.0, fps: 24.0, noise_sd: 0.005, missing_rate: 0.0, event_times_s: vec![10.0, 20.0, 30.0], seed: 0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SynthError::BadConfig("duration_s must be positive".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(SynthError::BadConfig("fps must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(SynthError::BadConfig("noise_sd must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(SynthError::BadConfig(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        if let Some(t) = self.event_times_s.iter().find(|t| !(0.0..=self.duration_s).contains(*t)) {
            return Err(SynthError::BadConfig(format!("event time {t} outside the trial")));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }
}

const CENTER: Point2D = Point2D { x: 0.5, y: 0.5 };
/// Mean reversion toward the resting point, per second.
const REVERSION: f64 = 0.5;
/// Diffusion of the dog's position, per square-root second.
const DIFFUSION: f64 = 0.02;
const BURST_S: f64 = 2.0;
const BURST_HZ: f64 = 3.0;
const FACTOR_BASE: f64 = 1.0;
const FACTOR_SD: f64 = 0.3;
const EXC_HIGH: f64 = 3.0;
const SDF_HIGH: f64 = 2.8;

/// A generated trial with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticTrial {
    #[serde(skip)]
    pub trial: RawTrial,
    pub trial_id: String,
    pub profile: ProfileKind,
    pub true_sign: SignClass,
    pub factors: CbarqScores,
    pub seed: u64,
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

fn true_factors(kind: ProfileKind, rng: &mut ChaCha8Rng) -> CbarqScores {
    let mut v = [0.0; 8];
    for (i, slot) in v.iter_mut().enumerate() {
        let mean = match (kind, CbarqFactor::ALL[i]) {
            (ProfileKind::Excessive, CbarqFactor::Exc) => EXC_HIGH,
            (ProfileKind::Avoidant, CbarqFactor::Sdf) => SDF_HIGH,
            _ => FACTOR_BASE,
        };
        *slot = round_to((mean + gauss(rng, FACTOR_SD)).clamp(0.0, CBARQ_MAX), 2);
    }
    CbarqScores::new(v).expect("clamped into range")
}

fn unit(dx: f64, dy: f64) -> (f64, f64) {
    let n = dx.hypot(dy);
    if n < 1e-12 {
        (0.0, 0.0)
    } else {
        (dx / n, dy / n)
    }
}

/// One trial for `profile`, seeded by `config.seed`.
pub fn gen_trial(profile: &BehaviorProfile, config: &GenConfig, trial_id: &str) -> Result<SyntheticTrial> {
    profile.validate()?;
    config.validate()?;
    let mut rng = seeds::rng(config.seed);
    let dt = 1.0 / config.fps;
    let step_sd = DIFFUSION * dt.sqrt();
    let home = Point2D::new(rng.random_range(0.4..0.6), rng.random_range(0.8..0.9));
    let mut dog = home;
    let mut frames = Vec::with_capacity(config.frame_count());
    let mut burst_dir = (1.0, 0.0);
    let mut burst_start = f64::NEG_INFINITY;
    let mut events = config.event_times_s.clone();
    events.sort_by(f64::total_cmp);
    let mut next_event = 0;
    for i in 0..config.frame_count() {
        let t = i as f64 * dt;
        let person = Point2D::new(CENTER.x + gauss(&mut rng, config.noise_sd), CENTER.y + gauss(&mut rng, config.noise_sd));
        let (mut vx, mut vy) = match profile.kind {
            ProfileKind::Neutral => (REVERSION * (home.x - dog.x), REVERSION * (home.y - dog.y)),
            ProfileKind::Excessive => {
                let (dx, dy) = (CENTER.x - dog.x, CENTER.y - dog.y);
                if dx.hypot(dy) > profile.dwell_radius {
                    let (ux, uy) = unit(dx, dy);
                    (profile.approach_rate * ux, profile.approach_rate * uy)
                } else {
                    (REVERSION * dx, REVERSION * dy)
                }
            }
            ProfileKind::Avoidant => {
                let (ux, uy) = unit(dog.x - CENTER.x, dog.y - CENTER.y);
                (profile.wall_affinity * ux, profile.wall_affinity * uy)
            }
        };
        vx = vx * dt + gauss(&mut rng, step_sd);
        vy = vy * dt + gauss(&mut rng, step_sd);
        dog = Point2D::new(dog.x + vx, dog.y + vy).clamped().0;

        while next_event < events.len() && events[next_event] <= t {
            burst_start = events[next_event];
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            burst_dir = (a.cos(), a.sin());
            next_event += 1;
        }
        let mut shown = dog;
        if profile.jump_amplitude > 0.0 && t - burst_start < BURST_S {
            let s = profile.jump_amplitude * (std::f64::consts::TAU * BURST_HZ * (t - burst_start)).sin();
            shown = Point2D::new(dog.x + s * burst_dir.0, dog.y + s * burst_dir.1);
        }

        let detect = |p: Point2D, rng: &mut ChaCha8Rng| {
            if config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate {
                (None, None)
            } else {
                let c = p.clamped().0;
                (Some(Point2D::new(round_to(c.x, 6), round_to(c.y, 6))), Some(round_to(rng.random_range(0.7..1.0), 3)))
            }
        };
        let (dog_pt, dog_conf) = detect(shown, &mut rng);
        let (person_pt, person_conf) = detect(person, &mut rng);
        frames.push(FrameDetection { frame_index: i as u64, timestamp_s: t, dog: dog_pt, person: person_pt, dog_conf, person_conf });
    }
    let factors = true_factors(profile.kind, &mut rng);
    Ok(SyntheticTrial {
        trial: RawTrial { trial_id: trial_id.to_string(), fps_native: config.fps, frames, clamp_count: 0 },
        trial_id: trial_id.to_string(),
        profile: profile.kind,
        true_sign: profile.kind.sign(),
        factors,
        seed: config.seed,
    })
}

/// One simulated rater: keeps the true sign with probability
/// `1 - confusion`, otherwise reports one of the other two classes.
pub fn rate(truth: SignClass, confusion: f64, rng: &mut ChaCha8Rng) -> Score5 {
    let sign = if rng.random::<f64>() < confusion {
        let others: Vec<SignClass> = SignClass::ALL.into_iter().filter(|s| *s != truth).collect();
        others[rng.random_range(0..others.len())]
    } else {
        truth
    };
    let magnitude = rng.random_range(1..=2);
    let v = match sign {
        SignClass::Negative => -magnitude,
        SignClass::Neutral => 0,
        SignClass::Positive => magnitude,
    };
    Score5::new(v).expect("within -2..=2")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_per_profile: usize,
    pub profiles: Vec<BehaviorProfile>,
    pub rater_confusion: f64,
    pub gen: GenConfig,
}

impl DatasetConfig {
    pub fn new(n_per_profile: usize, kinds: &[ProfileKind], gen: GenConfig) -> Self {
        Self { n_per_profile, profiles: kinds.iter().map(|k| BehaviorProfile::new(*k)).collect(), rater_confusion: 0.1, gen }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: DatasetConfig,
    pub trials: Vec<SyntheticTrial>,
    pub labels: Vec<ScoreRecord>,
}

impl Corpus {
    pub fn raw_trials(&self) -> Vec<RawTrial> {
        self.trials.iter().map(|t| t.trial.clone()).collect()
    }
}

pub fn trial_id(index: usize) -> String {
    format!("syn-{:04}", index + 1)
}

/// `n_per_profile` trials for each profile, in profile order, with labels.
pub fn gen_dataset(config: &DatasetConfig) -> Result<Corpus> {
    if config.n_per_profile == 0 {
        return Err(SynthError::BadConfig("n_per_profile must be at least 1".into()));
    }
    if config.profiles.is_empty() {
        return Err(SynthError::BadConfig("no profiles".into()));
    }
    if !(0.0..=1.0).contains(&config.rater_confusion) {
        return Err(SynthError::BadConfig(format!("rater_confusion {} outside [0, 1]", config.rater_confusion)));
    }
    config.gen.validate()?;
    let jobs: Vec<(usize, BehaviorProfile)> = config
        .profiles
        .iter()
        .flat_map(|p| std::iter::repeat_n(*p, config.n_per_profile))
        .enumerate()
        .collect();
    let trials = jobs
        .par_iter()
        .map(|(i, p)| {
            let gen = GenConfig { seed: seeds::derive(config.gen.seed, *i as u64), ..config.gen.clone() };
            gen_trial(p, &gen, &trial_id(*i))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeds::rng(seeds::derive_named(config.gen.seed, "raters"));
    let labels = trials
        .iter()
        .map(|t| {
            let scores = [(); 3].map(|_| rate(t.true_sign, config.rater_confusion, &mut rng));
            ScoreRecord::from_scores(t.trial_id.clone(), scores, Some(t.factors))
        })
        .collect();
    Ok(Corpus { config: config.clone(), trials, labels })
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    generative_map: GenerativeMap,
    config: &'a DatasetConfig,
    trials: &'a [SyntheticTrial],
}

#[derive(Serialize)]
struct GenerativeMap {
    person: String,
    dog_start: String,
    neutral: String,
    excessive: String,
    avoidant: String,
    factors: String,
    raters: String,
}

impl GenerativeMap {
    fn describe() -> Self {
        Self {
            person: "center (0.5, 0.5) plus Gaussian jitter with sd noise_sd per frame".into(),
            dog_start: "home ~ (U(0.4, 0.6), U(0.8, 0.9))".into(),
            neutral: format!("reverts to home at rate {REVERSION}/s, diffusion {DIFFUSION}/sqrt(s)"),
            excessive: format!(
                "moves toward the person at approach_rate until within dwell_radius, then reverts to the person at {REVERSION}/s; \
                 {BURST_HZ} Hz oscillation of jump_amplitude for {BURST_S} s after each event"
            ),
            avoidant: "drifts radially away from the center at wall_affinity, clamped at the walls".into(),
            factors: format!(
                "all factors N({FACTOR_BASE}, {FACTOR_SD}); EXC N({EXC_HIGH}, {FACTOR_SD}) for excessive; \
                 SDF N({SDF_HIGH}, {FACTOR_SD}) for avoidant; clamped to [0, 4], 2 decimals"
            ),
            raters: "true sign kept with probability 1 - rater_confusion, else uniform over the other two; magnitude 1 or 2".into(),
        }
    }
}

/// Writes `trials/<id>.json`, `labels.csv` and `manifest.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let trials_dir = dir.join("trials");
    fs::create_dir_all(&trials_dir)?;
    for t in &corpus.trials {
        let f = fs::File::create(trials_dir.join(format!("{}.json", t.trial_id)))?;
        trajectory_io::serialize_trial(&t.trial, std::io::BufWriter::new(f))?;
    }
    trajectory_io::write_labels(&corpus.labels, fs::File::create(dir.join("labels.csv"))?)?;
    let manifest = Manifest {
        generator: "trailmark synthetic",
        generative_map: GenerativeMap::describe(),
        config: &corpus.config,
        trials: &corpus.trials,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::BadConfig(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mann_whitney, percent_agreement};
    use crate::trajectory_io::detection_coverage;

    fn short(seed: u64) -> GenConfig {
        GenConfig { duration_s: 20.0, event_times_s: vec![10.0], seed, ..GenConfig::default() }
    }

    fn mean_distance(t: &RawTrial) -> f64 {
        let d: Vec<f64> = t.frames.iter().filter_map(|f| Some(f.dog?.distance(f.person?))).collect();
        d.iter().sum::<f64>() / d.len() as f64
    }

    #[test]
    fn no_missing_means_full_coverage() {
        let t = gen_trial(&BehaviorProfile::new(ProfileKind::Excessive), &short(1), "a").unwrap();
        assert_eq!(detection_coverage(&t.trial), 1.0);
        assert_eq!(t.trial.frames.len(), 480);
    }

    #[test]
    fn person_stays_centered() {
        let t = gen_trial(&BehaviorProfile::new(ProfileKind::Neutral), &GenConfig { seed: 4, ..GenConfig::default() }, "a").unwrap();
        let n = t.trial.frames.len() as f64;
        let mx = t.trial.frames.iter().map(|f| f.person.unwrap().x).sum::<f64>() / n;
        let my = t.trial.frames.iter().map(|f| f.person.unwrap().y).sum::<f64>() / n;
        assert!((mx - 0.5).abs() < 0.02 && (my - 0.5).abs() < 0.02);
    }

    #[test]
    fn coordinates_in_unit_square_and_uniform_time() {
        let cfg = GenConfig { missing_rate: 0.2, ..short(9) };
        for kind in ProfileKind::ALL {
            let t = gen_trial(&BehaviorProfile::new(kind), &cfg, "a").unwrap();
            for (i, f) in t.trial.frames.iter().enumerate() {
                assert!((f.timestamp_s - i as f64 / 24.0).abs() < 1e-12);
                for p in [f.dog, f.person].into_iter().flatten() {
                    assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
                }
            }
            let cov = detection_coverage(&t.trial);
            assert!((cov - 0.64).abs() < 0.1, "{cov}");
        }
    }

    #[test]
    fn profiles_order_mean_distance() {
        let dist = |kind| -> Vec<f64> {
            (0..50)
                .map(|s| mean_distance(&gen_trial(&BehaviorProfile::new(kind), &short(1000 + s), "a").unwrap().trial))
                .collect()
        };
        let (e, n, a) = (dist(ProfileKind::Excessive), dist(ProfileKind::Neutral), dist(ProfileKind::Avoidant));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&e) < mean(&n) && mean(&n) < mean(&a));
        assert!(mann_whitney(&e, &n).unwrap().p_two_sided < 0.01);
        assert!(mann_whitney(&n, &a).unwrap().p_two_sided < 0.01);
    }

    #[test]
    fn one_trial_one_label() {
        let c = gen_dataset(&DatasetConfig::new(1, &[ProfileKind::Neutral], short(2))).unwrap();
        assert_eq!((c.trials.len(), c.labels.len()), (1, 1));
        assert_eq!(c.labels[0].trial_id, "syn-0001");
    }

    #[test]
    fn perfect_raters_agree() {
        let gen = GenConfig { duration_s: 1.0, event_times_s: vec![], ..short(3) };
        let mut cfg = DatasetConfig::new(5, &ProfileKind::ALL, gen);
        cfg.rater_confusion = 0.0;
        let c = gen_dataset(&cfg).unwrap();
        let panel: Vec<[SignClass; 3]> = c.labels.iter().map(|l| l.rater_signs()).collect();
        assert_eq!(percent_agreement(&panel).unwrap(), 1.0);
        for (l, t) in c.labels.iter().zip(&c.trials) {
            assert_eq!(l.final_sign, Some(t.true_sign));
        }
    }

    #[test]
    fn rater_noise_gives_expected_agreement() {
        let gen = GenConfig { duration_s: 1.0, event_times_s: vec![], ..GenConfig::default() };
        let mut values = Vec::new();
        for seed in 0..10 {
            let c = gen_dataset(&DatasetConfig::new(100, &ProfileKind::ALL, GenConfig { seed, ..gen.clone() })).unwrap();
            let panel: Vec<[SignClass; 3]> = c.labels.iter().map(|l| l.rater_signs()).collect();
            values.push(percent_agreement(&panel).unwrap());
        }
        // per subject the agreeing-pair fraction is 1, 1/3 or 0
        let c = 0.1_f64;
        let all_same = (1.0 - c).powi(3) + 2.0 * (c / 2.0).powi(3);
        let all_differ = 6.0 * (1.0 - c) * (c / 2.0) * (c / 2.0);
        let two_same = 1.0 - all_same - all_differ;
        let expected = all_same + two_same / 3.0;
        assert!((expected - ((1.0 - c).powi(2) + c * c / 2.0)).abs() < 1e-12);
        let sd = ((all_same + two_same / 9.0 - expected * expected) / 300.0).sqrt();
        for pa in &values {
            assert!((pa - expected).abs() <= 4.0 * sd, "{values:?}");
        }
        let mean = values.iter().sum::<f64>() / 10.0;
        assert!((mean - expected).abs() <= 4.0 * sd / 10f64.sqrt(), "{mean}");
    }

    #[test]
    fn factors_follow_profile() {
        let gen = GenConfig { duration_s: 1.0, event_times_s: vec![], ..short(5) };
        let c = gen_dataset(&DatasetConfig::new(20, &ProfileKind::ALL, gen)).unwrap();
        let mean_of = |kind, f| {
            let v: Vec<f64> = c.trials.iter().filter(|t| t.profile == kind).map(|t| t.factors.get(f)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of(ProfileKind::Excessive, CbarqFactor::Exc) > 2.5);
        assert!(mean_of(ProfileKind::Neutral, CbarqFactor::Exc) < 1.5);
        assert!(mean_of(ProfileKind::Avoidant, CbarqFactor::Sdf) > 2.3);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(GenConfig { missing_rate: 1.0, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { event_times_s: vec![70.0], ..GenConfig::default() }.validate().is_err());
        let mut p = BehaviorProfile::new(ProfileKind::Excessive);
        p.dwell_radius = 0.5;
        assert!(p.validate().is_err());
        assert!(gen_dataset(&DatasetConfig::new(0, &[ProfileKind::Neutral], short(1))).is_err());
    }
}
