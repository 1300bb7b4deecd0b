//! Seeded two-class synthetic gaze cohorts.
//!
//! Each task has a base gaze process. Patients get the same process with
//! extra structure scaled by the separability `epsilon`: square-wave jerks,
//! more regressions and refixations, slower reading and noisier pupils.
//! Controls run the identical code with the effect set to zero, so at
//! `epsilon = 0` both classes are draws from one distribution.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazedata::{write_recording, DatasetManifest, Label, ManifestEntry, RawSample, Recording, Task, SAMPLE_RATE_HZ};
use crate::seed::derive_seed;

/// Target mean and standard deviation of recording lengths, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthTarget {
    pub mean: f64,
    pub std: f64,
}

impl LengthTarget {
    /// Whole-cohort length statistics of the clinical recordings.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Calibration => LengthTarget { mean: 1403.0, std: 249.0 },
            Task::PictureDescription => LengthTarget { mean: 7948.0, std: 4626.0 },
            Task::Reading => LengthTarget { mean: 7080.0, std: 2719.0 },
        }
    }

    /// `(mu, sigma)` of the lognormal with this mean and std.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let s2 = (1.0 + (self.std / self.mean).powi(2)).ln();
        (self.mean.ln() - s2 / 2.0, s2.sqrt())
    }
}

/// Magnitudes of the class effects at `epsilon = 1`, and of the base
/// processes. Illustrative constructions only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotifParams {
    /// Square-wave jerks per second.
    pub swj_rate_hz: f64,
    pub swj_amplitude: (f64, f64),
    pub swj_duration_ms: (f64, f64),
    /// Probability that a reading saccade goes backwards.
    pub regression_base: f64,
    pub regression_delta: f64,
    /// Reading speed is multiplied by `1 - speed_drop * effect`.
    pub speed_drop: f64,
    /// Probability that a picture hop returns to the previous region.
    pub refixation_base: f64,
    pub refixation_delta: f64,
    pub pupil_noise_mm: f64,
    pub fixation_jitter: f64,
}

impl Default for MotifParams {
    fn default() -> Self {
        MotifParams {
            swj_rate_hz: 2.0,
            swj_amplitude: (0.02, 0.04),
            swj_duration_ms: (20.0, 80.0),
            regression_base: 0.10,
            regression_delta: 0.25,
            speed_drop: 0.3,
            refixation_base: 0.15,
            refixation_delta: 0.30,
            pupil_noise_mm: 0.04,
            fixation_jitter: 0.004,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_controls: usize,
    pub task: Task,
    pub epsilon: f64,
    pub seed: u64,
    pub lengths: LengthTarget,
    /// Shortest generated recording.
    pub min_length: usize,
    pub motifs: MotifParams,
}

impl SynthConfig {
    pub fn new(task: Task, n_patients: usize, n_controls: usize, epsilon: f64, seed: u64) -> Self {
        SynthConfig {
            n_patients,
            n_controls,
            task,
            epsilon,
            seed,
            lengths: LengthTarget::for_task(task),
            min_length: 64,
            motifs: MotifParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.n_controls == 0 {
            return Err(Error::InvalidArgument("each class needs at least one user".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.lengths.mean > 0.0 && self.lengths.std >= 0.0) {
            return Err(Error::InvalidArgument("length target must have positive mean".into()));
        }
        if self.min_length < 2 {
            return Err(Error::InvalidArgument("min_length must be at least 2".into()));
        }
        Ok(())
    }

    /// `P001.., C001..` with their labels, patients first.
    pub fn users(&self) -> Vec<(String, Label)> {
        let p = (1..=self.n_patients).map(|i| (format!("P{i:03}"), Label::Patient));
        let c = (1..=self.n_controls).map(|i| (format!("C{i:03}"), Label::Control));
        p.chain(c).collect()
    }

    /// Seed of the generator stream of one user.
    pub fn user_seed(&self, user_id: &str) -> u64 {
        let stream = user_id.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
        derive_seed(self.seed, stream)
    }
}

const DT_MS: f64 = 1000.0 / SAMPLE_RATE_HZ;

/// Draws a recording length from the task's lognormal.
pub fn draw_length<R: Rng + ?Sized>(target: &LengthTarget, min_length: usize, rng: &mut R) -> usize {
    let (mu, sigma) = target.lognormal_params();
    let v: f64 = LogNormal::new(mu, sigma).expect("finite lognormal").sample(rng);
    (v.round() as usize).max(min_length)
}

/// Planned gaze target over time.
struct GazePlan<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    motifs: MotifParams,
    effect: f64,
    task: Task,
    // current fixation target and remaining samples
    target: (f64, f64),
    remaining: usize,
    // reading state
    line: usize,
    // picture state
    regions: Vec<(f64, f64)>,
    region: usize,
    prev_region: usize,
}

const READING_LINES: usize = 10;
const READING_LEFT: f64 = 0.1;
const READING_RIGHT: f64 = 0.9;
const PICTURE_REGIONS: usize = 8;

impl<'a, R: Rng + ?Sized> GazePlan<'a, R> {
    fn new(task: Task, motifs: MotifParams, effect: f64, rng: &'a mut R) -> Self {
        let regions: Vec<(f64, f64)> = (0..PICTURE_REGIONS)
            .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)))
            .collect();
        let start = match task {
            Task::Calibration => (0.5, 0.5),
            Task::Reading => (READING_LEFT, line_y(0)),
            Task::PictureDescription => regions[0],
        };
        GazePlan {
            rng,
            motifs,
            effect,
            task,
            target: start,
            remaining: 0,
            line: 0,
            regions,
            region: 0,
            prev_region: 0,
        }
    }

    fn dwell(&mut self, mean_ms: f64) -> usize {
        let ms = mean_ms * (0.5 + self.rng.random::<f64>());
        ((ms / DT_MS).round() as usize).max(1)
    }

    fn next_fixation(&mut self) {
        match self.task {
            Task::Calibration => {
                self.target = (0.5, 0.5);
                self.remaining = self.dwell(400.0);
            }
            Task::Reading => {
                let speed = 1.0 - self.motifs.speed_drop * self.effect;
                let p_reg = self.motifs.regression_base + self.motifs.regression_delta * self.effect;
                let regress = self.rng.random::<f64>() < p_reg;
                let step = self.rng.random_range(0.04..0.08);
                let (x, _) = self.target;
                let x = if regress {
                    (x - step).max(READING_LEFT)
                } else if x + step > READING_RIGHT {
                    self.line = (self.line + 1) % READING_LINES;
                    READING_LEFT
                } else {
                    x + step
                };
                self.target = (x, line_y(self.line));
                self.remaining = self.dwell(220.0 / speed);
            }
            Task::PictureDescription => {
                let p_back = self.motifs.refixation_base + self.motifs.refixation_delta * self.effect;
                let back = self.rng.random::<f64>() < p_back;
                let hop = self.rng.random_range(1..PICTURE_REGIONS);
                let next = if back {
                    self.prev_region
                } else {
                    (self.region + hop) % PICTURE_REGIONS
                };
                self.prev_region = self.region;
                self.region = next;
                let (cx, cy) = self.regions[next];
                let ox = self.rng.random_range(-0.03..0.03);
                let oy = self.rng.random_range(-0.03..0.03);
                self.target = (cx + ox, cy + oy);
                self.remaining = self.dwell(320.0);
            }
        }
    }

    fn advance(&mut self) -> (f64, f64) {
        if self.remaining == 0 {
            self.next_fixation();
        }
        self.remaining -= 1;
        self.target
    }
}

fn line_y(line: usize) -> f64 {
    0.2 + 0.6 * line as f64 / (READING_LINES - 1) as f64
}

/// One synthetic recording of `length` samples.
pub fn gen_recording_with_length<R: Rng + ?Sized>(
    config: &SynthConfig,
    user_id: &str,
    label: Label,
    length: usize,
    rng: &mut R,
) -> Result<Recording> {
    let m = config.motifs;
    let effect = if label.is_positive() { config.epsilon } else { 0.0 };
    let jitter = Normal::new(0.0, m.fixation_jitter).expect("jitter std");
    let hd_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let pupil = Normal::new(0.0, m.pupil_noise_mm * (1.0 + effect)).expect("pupil std");
    let swj_hazard = m.swj_rate_hz * effect / SAMPLE_RATE_HZ;

    let hd_base = 650.0 + 40.0 * (rng.random::<f64>() - 0.5);
    let p_base = 3.5 + 0.6 * (rng.random::<f64>() - 0.5);
    let (mut hd_l, mut hd_r) = (0.0f64, 0.0f64);
    let (mut p_l, mut p_r) = (0.0f64, 0.0f64);
    let mut swj_left = 0usize;
    let mut swj_offset = 0.0;

    let mut samples = Vec::with_capacity(length);
    let mut plan = GazePlan::new(config.task, m, effect, rng);
    for i in 0..length {
        let (tx, ty) = plan.advance();
        let rng = &mut *plan.rng;
        let u: f64 = rng.random();
        if swj_left == 0 && u < swj_hazard {
            let amp = rng.random_range(m.swj_amplitude.0..=m.swj_amplitude.1);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let ms = rng.random_range(m.swj_duration_ms.0..=m.swj_duration_ms.1);
            swj_left = ((ms / DT_MS).round() as usize).max(1);
            swj_offset = sign * amp;
        }
        let dx = if swj_left > 0 {
            swj_left -= 1;
            swj_offset
        } else {
            0.0
        };
        let gx = tx + dx + jitter.sample(rng);
        let gy = ty + jitter.sample(rng);

        hd_l = 0.99 * hd_l + hd_noise.sample(rng);
        hd_r = 0.99 * hd_r + hd_noise.sample(rng);
        p_l = 0.9 * p_l + pupil.sample(rng);
        p_r = 0.9 * p_r + pupil.sample(rng);
        samples.push(RawSample {
            t: i as f64 * DT_MS,
            gx,
            gy,
            hd_l: (hd_base + hd_l).max(1.0),
            hd_r: (hd_base + 3.0 + hd_r).max(1.0),
            p_l: (p_base + p_l).max(0.5),
            p_r: (p_base + p_r).max(0.5),
        });
    }
    Recording::new(user_id, config.task, label, samples)
}

/// One synthetic recording with a length drawn from the task's lognormal.
pub fn gen_recording<R: Rng + ?Sized>(
    config: &SynthConfig,
    user_id: &str,
    label: Label,
    rng: &mut R,
) -> Result<Recording> {
    let length = draw_length(&config.lengths, config.min_length, rng);
    gen_recording_with_length(config, user_id, label, length, rng)
}

/// Every recording of the cohort, in `users()` order, without touching disk.
pub fn gen_cohort(config: &SynthConfig) -> Result<Vec<Recording>> {
    config.validate()?;
    config
        .users()
        .iter()
        .map(|(user, label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.user_seed(user));
            gen_recording(config, user, *label, &mut rng)
        })
        .collect()
}

pub fn recording_file_name(user_id: &str, task: Task) -> String {
    format!("{user_id}_{}.csv", task.as_str())
}

/// Writes one canonical CSV per user and `manifest.json` into `dir`.
/// Returns the manifest and its path.
pub fn gen_dataset(config: &SynthConfig, dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let recordings = gen_cohort(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in &recordings {
        let name = recording_file_name(&rec.user_id, rec.task);
        let path = dir.join(&name);
        let file = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        write_recording(rec, BufWriter::new(file))?;
        entries.push(ManifestEntry {
            user_id: rec.user_id.clone(),
            label: rec.label,
            task: rec.task,
            path: PathBuf::from(name),
        });
    }
    let provenance = format!(
        "synthetic task={} patients={} controls={} epsilon={} seed={}",
        config.task, config.n_patients, config.n_controls, config.epsilon, config.seed
    );
    let manifest = DatasetManifest::new(provenance, entries);
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok((manifest, manifest_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gazedata::{parse_recording, LengthStats};

    #[test]
    fn lognormal_moments() {
        let t = LengthTarget { mean: 7948.0, std: 4626.0 };
        let (mu, s) = t.lognormal_params();
        let mean = (mu + s * s / 2.0).exp();
        let var = ((s * s).exp() - 1.0) * (2.0 * mu + s * s).exp();
        assert!((mean - 7948.0).abs() < 1e-6);
        assert!((var.sqrt() - 4626.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::new(Task::Reading, 2, 2, 0.7, 9);
        assert_eq!(gen_cohort(&cfg).unwrap(), gen_cohort(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 10;
        assert_ne!(gen_cohort(&cfg).unwrap(), gen_cohort(&other).unwrap());
    }

    #[test]
    fn zero_epsilon_classes_share_code_path() {
        let cfg = SynthConfig::new(Task::Calibration, 1, 1, 0.0, 3);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let p = gen_recording(&cfg, "X", Label::Patient, &mut a).unwrap();
        let c = gen_recording(&cfg, "X", Label::Control, &mut b).unwrap();
        assert_eq!(p.samples(), c.samples());
    }

    #[test]
    fn positive_epsilon_changes_patients_only() {
        let mut cfg = SynthConfig::new(Task::Reading, 1, 1, 0.0, 3);
        let draw = |cfg: &SynthConfig, label| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            gen_recording(cfg, "X", label, &mut rng).unwrap()
        };
        let c0 = draw(&cfg, Label::Control);
        let p0 = draw(&cfg, Label::Patient);
        cfg.epsilon = 1.0;
        assert_eq!(draw(&cfg, Label::Control), c0);
        assert_ne!(draw(&cfg, Label::Patient), p0);
    }

    #[test]
    fn timestamps_and_channels() {
        let cfg = SynthConfig::new(Task::PictureDescription, 1, 1, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = gen_recording_with_length(&cfg, "P001", Label::Patient, 500, &mut rng).unwrap();
        assert_eq!(r.len(), 500);
        for (i, s) in r.samples().iter().enumerate() {
            assert_eq!(s.t, i as f64 * (1000.0 / 120.0));
            assert!(s.is_valid());
            assert!((600.0..700.0).contains(&s.hd_l));
            assert!((1.0..6.0).contains(&s.p_r));
        }
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SynthConfig::new(Task::Reading, 1, 1, 0.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = gen_recording_with_length(&cfg, "C001", Label::Control, 300, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_recording(&r, &mut buf).unwrap();
        let back = parse_recording(buf.as_slice(), "C001", Task::Reading, Label::Control).unwrap();
        assert_eq!(back.dropped, 0);
        assert_eq!(back.recording, r);
    }

    #[test]
    fn picture_lengths_match_targets() {
        let cfg = SynthConfig::new(Task::PictureDescription, 1, 1, 0.0, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let lengths: Vec<usize> = (0..200).map(|_| draw_length(&cfg.lengths, cfg.min_length, &mut rng)).collect();
        let s = LengthStats::from_lengths(&lengths).unwrap();
        assert!((s.mean - 7948.0).abs() / 7948.0 < 0.15, "mean {}", s.mean);
        assert!((s.std - 4626.0).abs() / 4626.0 < 0.35, "std {}", s.std);
    }

    #[test]
    fn epsilon_out_of_range() {
        let cfg = SynthConfig::new(Task::Reading, 1, 1, 2.0, 0);
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::new(Task::Reading, 1, 1, 0.5, 0);
        cfg.n_controls = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dataset_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(Task::Calibration, 20, 20, 0.8, 7);
        cfg.lengths = LengthTarget { mean: 200.0, std: 20.0 };
        let (manifest, path) = gen_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 40);
        let csvs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
            .count();
        assert_eq!(csvs, 40);
        let (loaded, _) = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded, manifest);

        let again = tempfile::tempdir().unwrap();
        gen_dataset(&cfg, again.path()).unwrap();
        for e in &manifest.entries {
            assert_eq!(
                fs::read(dir.path().join(&e.path)).unwrap(),
                fs::read(again.path().join(&e.path)).unwrap()
            );
        }
        assert_eq!(fs::read(&path).unwrap(), fs::read(again.path().join("manifest.json")).unwrap());
    }
}
