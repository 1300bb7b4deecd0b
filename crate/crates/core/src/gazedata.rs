//! Raw eye-tracking recordings: the canonical CSV format, the dataset
//! manifest, length-outlier filtering and summary statistics.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header line of the canonical recording CSV.
pub const CSV_HEADER: &str = "t_ms,gx,gy,hd_l_mm,hd_r_mm,p_l_mm,p_r_mm";

/// Number of per-sample channels fed to the model.
pub const CHANNELS: usize = 6;

/// Names of the six channels, in the order used by every matrix in the crate.
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["gx", "gy", "hd_l", "hd_r", "p_l", "p_r"];

/// Nominal sampling rate of the tracker.
pub const SAMPLE_RATE_HZ: f64 = 120.0;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Calibration,
    #[serde(rename = "picture")]
    PictureDescription,
    Reading,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Calibration, Task::PictureDescription, Task::Reading];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Calibration => "calibration",
            Task::PictureDescription => "picture",
            Task::Reading => "reading",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibration" => Ok(Task::Calibration),
            "picture" => Ok(Task::PictureDescription),
            "reading" => Ok(Task::Reading),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Diagnostic class. `Patient` is the positive class for every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Patient,
    Control,
}

impl Label {
    /// Index of this class in the model's two-way output (patient first).
    pub fn class_index(self) -> usize {
        match self {
            Label::Patient => 0,
            Label::Control => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Self {
        if index == 0 {
            Label::Patient
        } else {
            Label::Control
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Patient
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Patient => "patient",
            Label::Control => "control",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patient" => Ok(Label::Patient),
            "control" => Ok(Label::Control),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// One gaze sample. Gaze is normalized to the display, distances and
/// pupil diameters are in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub t: f64,
    pub gx: f64,
    pub gy: f64,
    pub hd_l: f64,
    pub hd_r: f64,
    pub p_l: f64,
    pub p_r: f64,
}

impl RawSample {
    pub fn channels(&self) -> [f64; CHANNELS] {
        [self.gx, self.gy, self.hd_l, self.hd_r, self.p_l, self.p_r]
    }

    /// All channels finite, distances and pupils strictly positive.
    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && self.channels().iter().all(|v| v.is_finite())
            && self.hd_l > 0.0
            && self.hd_r > 0.0
            && self.p_l > 0.0
            && self.p_r > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub user_id: String,
    pub task: Task,
    pub label: Label,
    samples: Vec<RawSample>,
}

impl Recording {
    /// Validates the recording invariants: at least one sample, every
    /// sample valid and timestamps strictly increasing.
    pub fn new(
        user_id: impl Into<String>,
        task: Task,
        label: Label,
        samples: Vec<RawSample>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyRecording);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_valid()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not valid")));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(Error::NonMonotonicTimestamps {
                    line: i + 2,
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        Ok(Recording {
            user_id: user_id.into(),
            task,
            label,
            samples,
        })
    }

    pub fn samples(&self) -> &[RawSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Result of parsing one CSV stream.
#[derive(Debug, Clone)]
pub struct ParsedRecording {
    pub recording: Recording,
    /// Rows discarded for a missing, non-finite or non-positive channel.
    pub dropped: usize,
}

fn parse_field(field: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(Error::Parse {
            line,
            message: format!("non-numeric value `{field}` in column {column}"),
        }),
    }
}

/// Parses a canonical recording CSV.
///
/// Rows with an empty or non-finite field, or a non-positive distance or
/// pupil value, are dropped and counted. A field that is present but not a
/// number is an error.
pub fn parse_recording<R: BufRead>(
    reader: R,
    user_id: &str,
    task: Task,
    label: Label,
) -> Result<ParsedRecording> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => String::new(),
    };
    let header = header.trim_end_matches('\r');
    if header != CSV_HEADER {
        return Err(Error::MalformedHeader {
            expected: CSV_HEADER.to_string(),
            found: header.to_string(),
        });
    }
    let columns: Vec<&str> = CSV_HEADER.split(',').collect();

    let mut samples: Vec<RawSample> = Vec::new();
    let mut dropped = 0usize;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let mut values = [0.0f64; 7];
        let mut complete = true;
        for (slot, (field, column)) in values.iter_mut().zip(fields.iter().zip(&columns)) {
            match parse_field(field, line_no, column)? {
                Some(v) => *slot = v,
                None => complete = false,
            }
        }
        let sample = RawSample {
            t: values[0],
            gx: values[1],
            gy: values[2],
            hd_l: values[3],
            hd_r: values[4],
            p_l: values[5],
            p_r: values[6],
        };
        if !complete || !sample.is_valid() {
            dropped += 1;
            continue;
        }
        if let Some(prev) = samples.last() {
            if sample.t <= prev.t {
                return Err(Error::NonMonotonicTimestamps {
                    line: line_no,
                    prev: prev.t,
                    next: sample.t,
                });
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyRecording);
    }
    Ok(ParsedRecording {
        recording: Recording {
            user_id: user_id.to_string(),
            task,
            label,
            samples,
        },
        dropped,
    })
}

/// Writes a recording in the canonical CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_recording<W: Write>(recording: &Recording, mut out: W) -> Result<()> {
    let mut buf = String::with_capacity(64 * (recording.len() + 1));
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for s in recording.samples() {
        use std::fmt::Write as _;
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            s.t, s.gx, s.gy, s.hd_l, s.hd_r, s.p_l, s.p_r
        );
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub label: Label,
    pub task: Task,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub provenance: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(provenance: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            provenance: provenance.into(),
            entries,
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.user_id.as_str(), e.task)) {
                return Err(Error::Manifest(format!(
                    "duplicate entry for user `{}` task {}",
                    e.user_id, e.task
                )));
            }
        }
        Ok(())
    }

    /// Loads a manifest and checks that entries are unique and every
    /// referenced file exists.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported version {} (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        manifest.check_unique()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for e in &manifest.entries {
            let p = base.join(&e.path);
            if !p.is_file() {
                return Err(Error::Manifest(format!("missing file {}", p.display())));
            }
        }
        Ok((manifest, base))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_unique()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// Loads every recording of `task` listed in the manifest at `path`, in
/// manifest order, together with the per-file dropped-row counts.
pub fn load_recordings(path: &Path, task: Task) -> Result<Vec<ParsedRecording>> {
    let (manifest, base) = DatasetManifest::load(path)?;
    manifest
        .entries
        .par_iter()
        .filter(|e| e.task == task)
        .map(|e| {
            let file_path = base.join(&e.path);
            let file = fs::File::open(&file_path).map_err(|err| Error::file(&file_path, err))?;
            parse_recording(BufReader::new(file), &e.user_id, e.task, e.label)
        })
        .collect()
}

/// Kept and removed recordings after length-outlier filtering.
#[derive(Debug, Clone)]
pub struct OutlierSplit {
    pub kept: Vec<Recording>,
    pub removed: Vec<Recording>,
}

/// Removes recordings whose length is more than three population standard
/// deviations from the mean length. Statistics are computed once over the
/// whole input.
pub fn remove_length_outliers(recordings: Vec<Recording>, task: Task) -> Result<OutlierSplit> {
    if recordings.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "outlier removal needs at least 2 recordings, got {}",
            recordings.len()
        )));
    }
    if let Some(r) = recordings.iter().find(|r| r.task != task) {
        return Err(Error::InvalidArgument(format!(
            "recording of user `{}` is task {}, expected {task}",
            r.user_id, r.task
        )));
    }
    let lengths: Vec<usize> = recordings.iter().map(Recording::len).collect();
    let stats = LengthStats::from_lengths(&lengths)?;
    let bound = 3.0 * stats.std;
    let (kept, removed) = recordings
        .into_iter()
        .partition(|r| (r.len() as f64 - stats.mean).abs() <= bound);
    Ok(OutlierSplit { kept, removed })
}

/// Length statistics with population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

impl LengthStats {
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyInput("length statistics"));
        }
        let n = lengths.len();
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let var = lengths
            .iter()
            .map(|&l| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        Ok(LengthStats {
            n,
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[n - 1],
        })
    }
}

/// Which slice of a task a summary row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryGroup {
    Patient,
    Control,
    Total,
}

impl SummaryGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            SummaryGroup::Patient => "patient",
            SummaryGroup::Control => "control",
            SummaryGroup::Total => "total",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthSummaryRow {
    pub task: Task,
    pub group: SummaryGroup,
    pub stats: LengthStats,
}

pub const SUMMARY_CSV_HEADER: &str = "task,group,n,mean,std,median,min,max";

impl LengthSummaryRow {
    pub fn to_csv_line(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{:.2},{:.2},{},{},{}",
            self.task,
            self.group.as_str(),
            s.n,
            s.mean,
            s.std,
            s.median,
            s.min,
            s.max
        )
    }
}

/// One row per (task, class) present in the input plus a total row per task,
/// tasks in canonical order.
pub fn summarize_lengths(recordings: &[Recording]) -> Result<Vec<LengthSummaryRow>> {
    if recordings.is_empty() {
        return Err(Error::EmptyInput("summarize_lengths"));
    }
    let mut rows = Vec::new();
    for task in Task::ALL {
        let of_task: Vec<&Recording> = recordings.iter().filter(|r| r.task == task).collect();
        if of_task.is_empty() {
            continue;
        }
        for (group, label) in [
            (SummaryGroup::Patient, Label::Patient),
            (SummaryGroup::Control, Label::Control),
        ] {
            let lengths: Vec<usize> = of_task
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.len())
                .collect();
            if !lengths.is_empty() {
                rows.push(LengthSummaryRow {
                    task,
                    group,
                    stats: LengthStats::from_lengths(&lengths)?,
                });
            }
        }
        let lengths: Vec<usize> = of_task.iter().map(|r| r.len()).collect();
        rows.push(LengthSummaryRow {
            task,
            group: SummaryGroup::Total,
            stats: LengthStats::from_lengths(&lengths)?,
        });
    }
    Ok(rows)
}
