//! Turning recordings into model inputs: cyclical splitting, head
//! truncation, per-fold channel normalization and scanpath rasterization.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazedata::{Label, Recording, Task, CHANNELS};

/// Default number of interleaved subsequences per recording.
pub const DEFAULT_SPLITS: usize = 4;

/// Smallest accepted scanpath side.
pub const MIN_SCANPATH_SIDE: usize = 8;

/// Std below which a channel is treated as constant.
const STD_FLOOR: f64 = 1e-8;

/// A `T x 6` matrix of channel values, one row per timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequence {
    rows: Vec<[f64; CHANNELS]>,
}

impl Sequence {
    pub fn new(rows: Vec<[f64; CHANNELS]>) -> Self {
        Sequence { rows }
    }

    pub fn from_recording(recording: &Recording) -> Self {
        Sequence {
            rows: recording.samples().iter().map(|s| s.channels()).collect(),
        }
    }

    pub fn rows(&self) -> &[[f64; CHANNELS]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major view of the matrix.
    pub fn as_flat(&self) -> &[f64] {
        self.rows.as_flattened()
    }

    pub fn into_rows(self) -> Vec<[f64; CHANNELS]> {
        self.rows
    }
}

/// Grayscale image in row-major order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scanpath {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Scanpath {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    fn put_line_pixel(&mut self, col: i64, row: i64) {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return;
        }
        let px = &mut self.pixels[row as usize * self.width + col as usize];
        if *px < 1.0 {
            *px = 0.5;
        }
    }

    /// Binary PGM (P5), one byte per pixel, `round(value * 255)`.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

/// The model's unit of input: one split, possibly truncated, sequence with
/// the scanpath rendered from its raw gaze coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Datapoint {
    pub user_id: String,
    pub label: Label,
    pub task: Task,
    pub seq: Sequence,
    pub scanpath: Scanpath,
    pub split_index: usize,
}

/// Subsequence `j` takes rows `j, j+k, j+2k, ...`.
pub fn cyclic_split<T: Clone>(rows: &[T], k: usize) -> Result<Vec<Vec<T>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("split count must be positive".into()));
    }
    if rows.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} rows into {k} subsequences",
            rows.len()
        )));
    }
    let mut out: Vec<Vec<T>> = (0..k)
        .map(|j| Vec::with_capacity((rows.len() - j).div_ceil(k)))
        .collect();
    for (i, row) in rows.iter().enumerate() {
        out[i % k].push(row.clone());
    }
    Ok(out)
}

/// Inverse of [`cyclic_split`]. Subsequences must be non-empty, of
/// non-increasing length, and differ in length by at most one.
pub fn interleave<T: Clone>(subseqs: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(first) = subseqs.first() else {
        return Err(Error::InvalidArgument("no subsequences".into()));
    };
    let longest = first.len();
    let mut prev = longest;
    for (j, s) in subseqs.iter().enumerate() {
        if s.is_empty() || s.len() > prev || longest - s.len() > 1 {
            return Err(Error::InvalidArgument(format!(
                "subsequence {j} has incompatible length {}",
                s.len()
            )));
        }
        prev = s.len();
    }
    let total: usize = subseqs.iter().map(Vec::len).sum();
    let k = subseqs.len();
    Ok((0..total).map(|i| subseqs[i % k][i / k].clone()).collect())
}

/// Keeps the first `min(T, cutoff)` rows.
pub fn truncate_head(seq: &Sequence, cutoff: usize) -> Sequence {
    Sequence {
        rows: seq.rows[..seq.len().min(cutoff)].to_vec(),
    }
}

fn to_pixel(v: f64, extent: usize) -> i64 {
    (v.clamp(0.0, 1.0) * (extent - 1) as f64).round() as i64
}

/// Rasterizes the gaze trace of `seq`: every sample is a 3x3 block of 1.0,
/// consecutive samples are joined by 0.5 integer lines that never overwrite
/// a sample block. Row 0 is the top of the display.
pub fn render_scanpath(seq: &Sequence, width: usize, height: usize) -> Result<Scanpath> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("render_scanpath"));
    }
    if width < MIN_SCANPATH_SIDE || height < MIN_SCANPATH_SIDE {
        return Err(Error::InvalidArgument(format!(
            "scanpath must be at least {MIN_SCANPATH_SIDE}x{MIN_SCANPATH_SIDE}, got {width}x{height}"
        )));
    }
    let mut img = Scanpath {
        width,
        height,
        pixels: vec![0.0; width * height],
    };
    let points: Vec<(i64, i64)> = seq
        .rows()
        .iter()
        .map(|r| (to_pixel(r[0], width), to_pixel(r[1], height)))
        .collect();

    for w in points.windows(2) {
        let (mut x0, mut y0) = w[0];
        let (x1, y1) = w[1];
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            img.put_line_pixel(x0, y0);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    for &(cx, cy) in &points {
        for row in (cy - 1).max(0)..=(cy + 1).min(height as i64 - 1) {
            for col in (cx - 1).max(0)..=(cx + 1).min(width as i64 - 1) {
                img.pixels[row as usize * width + col as usize] = 1.0;
            }
        }
    }
    Ok(img)
}

/// Pooled per-channel mean and standard deviation, tagged with the users
/// they were fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
    pub tag: String,
    pub fitted_on: BTreeSet<String>,
}

impl ChannelStats {
    pub fn identity() -> Self {
        ChannelStats {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
            tag: "identity".into(),
            fitted_on: BTreeSet::new(),
        }
    }
}

pub fn fit_channel_stats(train: &[Datapoint], tag: impl Into<String>) -> Result<ChannelStats> {
    let rows = train.iter().map(|d| d.seq.len()).sum::<usize>();
    if rows == 0 {
        return Err(Error::EmptyInput("fit_channel_stats"));
    }
    let mut mean = [0.0; CHANNELS];
    for d in train {
        for r in d.seq.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = [0.0; CHANNELS];
    for d in train {
        for r in d.seq.rows() {
            for c in 0..CHANNELS {
                var[c] += (r[c] - mean[c]).powi(2);
            }
        }
    }
    let std = var.map(|v| (v / rows as f64).sqrt());
    Ok(ChannelStats {
        mean,
        std,
        tag: tag.into(),
        fitted_on: train.iter().map(|d| d.user_id.clone()).collect(),
    })
}

/// Z-scores every channel; near-constant channels map to zero.
pub fn apply_normalization(seq: &Sequence, stats: &ChannelStats) -> Sequence {
    let rows = seq
        .rows()
        .iter()
        .map(|r| {
            let mut out = [0.0; CHANNELS];
            for c in 0..CHANNELS {
                out[c] = if stats.std[c] < STD_FLOOR {
                    0.0
                } else {
                    (r[c] - stats.mean[c]) / stats.std[c]
                };
            }
            out
        })
        .collect();
    Sequence { rows }
}

/// Normalizes the sequence of a datapoint, keeping its scanpath.
pub fn normalize_datapoint(dp: &Datapoint, stats: &ChannelStats) -> Datapoint {
    Datapoint {
        seq: apply_normalization(&dp.seq, stats),
        ..dp.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapointOptions {
    pub splits: usize,
    pub cutoff: Option<usize>,
    pub scanpath_width: usize,
    pub scanpath_height: usize,
}

impl Default for DatapointOptions {
    fn default() -> Self {
        DatapointOptions {
            splits: DEFAULT_SPLITS,
            cutoff: None,
            scanpath_width: 64,
            scanpath_height: 64,
        }
    }
}

/// Splits, truncates and renders every recording. Produces `splits`
/// datapoints per recording; normalization is left to the caller.
pub fn build_datapoints(recordings: &[Recording], opts: &DatapointOptions) -> Result<Vec<Datapoint>> {
    if let Some(0) = opts.cutoff {
        return Err(Error::InvalidArgument("cutoff must be positive".into()));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(recordings.len() * opts.splits);
    for rec in recordings {
        if !seen.insert((rec.user_id.as_str(), rec.task)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate recording for user `{}` task {}",
                rec.user_id, rec.task
            )));
        }
        let rows: Vec<[f64; CHANNELS]> = rec.samples().iter().map(|s| s.channels()).collect();
        for (split_index, part) in cyclic_split(&rows, opts.splits)?.into_iter().enumerate() {
            let mut seq = Sequence::new(part);
            if let Some(cutoff) = opts.cutoff {
                seq = truncate_head(&seq, cutoff);
            }
            let scanpath = render_scanpath(&seq, opts.scanpath_width, opts.scanpath_height)?;
            out.push(Datapoint {
                user_id: rec.user_id.clone(),
                label: rec.label,
                task: rec.task,
                seq,
                scanpath,
                split_index,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gazedata::RawSample;
    use proptest::prelude::*;

    fn seq_xy(points: &[(f64, f64)]) -> Sequence {
        Sequence::new(
            points
                .iter()
                .map(|&(x, y)| [x, y, 600.0, 600.0, 3.0, 3.0])
                .collect(),
        )
    }

    fn recording(n: usize) -> Recording {
        let samples = (0..n)
            .map(|i| RawSample {
                t: i as f64 * 8.0,
                gx: (i % 10) as f64 / 10.0,
                gy: 0.5,
                hd_l: 600.0,
                hd_r: 601.0,
                p_l: 3.0 + i as f64 * 1e-3,
                p_r: 3.0,
            })
            .collect();
        Recording::new(format!("u{n}"), Task::Reading, Label::Patient, samples).unwrap()
    }

    #[test]
    fn split_eight_rows_four_ways() {
        let rows: Vec<u32> = (0..8).collect();
        let parts = cyclic_split(&rows, 4).unwrap();
        assert_eq!(parts, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
        assert_eq!(interleave(&parts).unwrap(), rows);
    }

    #[test]
    fn split_uneven_rows() {
        let rows: Vec<u32> = (0..6).collect();
        let parts = cyclic_split(&rows, 4).unwrap();
        assert_eq!(parts, vec![vec![0, 4], vec![1, 5], vec![2], vec![3]]);
        assert_eq!(cyclic_split(&rows, 1).unwrap(), vec![rows.clone()]);
        assert!(cyclic_split(&rows[..3], 4).is_err());
    }

    #[test]
    fn interleave_rejects_bad_lengths() {
        assert!(interleave(&[vec![0], vec![], vec![], vec![]]).is_err());
        assert!(interleave(&[vec![0], vec![1, 2]]).is_err());
        assert!(interleave(&[vec![0, 1, 2], vec![3]]).is_err());
        assert!(interleave::<u8>(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn split_then_interleave_is_identity(
            rows in prop::collection::vec(any::<i64>(), 4..100),
            k in 1usize..5,
        ) {
            let parts = cyclic_split(&rows, k).unwrap();
            prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), rows.len());
            for (j, p) in parts.iter().enumerate() {
                prop_assert_eq!(p.len(), (rows.len() - j).div_ceil(k));
            }
            prop_assert_eq!(interleave(&parts).unwrap(), rows);
        }

        #[test]
        fn truncation_is_an_idempotent_prefix(n in 0usize..60, cutoff in 1usize..80) {
            let s = seq_xy(&(0..n).map(|i| (i as f64 / 60.0, 0.5)).collect::<Vec<_>>());
            let t = truncate_head(&s, cutoff);
            prop_assert_eq!(t.len(), n.min(cutoff));
            prop_assert_eq!(t.rows(), &s.rows()[..t.len()]);
            prop_assert_eq!(truncate_head(&t, cutoff), t);
        }

        #[test]
        fn scanpath_pixels_take_three_values(
            pts in prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), 1..40),
        ) {
            let img = render_scanpath(&seq_xy(&pts), 16, 12).unwrap();
            prop_assert!(img.pixels().iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        }
    }

    #[test]
    fn truncate_examples() {
        let long = seq_xy(&vec![(0.1, 0.1); 1500]);
        assert_eq!(truncate_head(&long, 1000).len(), 1000);
        let short = seq_xy(&vec![(0.1, 0.1); 500]);
        assert_eq!(truncate_head(&short, 1000), short);
        let max_cal = seq_xy(&vec![(0.1, 0.1); 2317]);
        assert_eq!(truncate_head(&max_cal, 2000).len(), 2000);
    }

    #[test]
    fn single_sample_stamp() {
        let img = render_scanpath(&seq_xy(&[(0.5, 0.5)]), 64, 64).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let inside = (31..=33).contains(&row) && (31..=33).contains(&col);
                assert_eq!(img.get(col, row), if inside { 1.0 } else { 0.0 }, "({col},{row})");
            }
        }
    }

    #[test]
    fn horizontal_segment_along_top_row() {
        let img = render_scanpath(&seq_xy(&[(0.0, 0.0), (1.0, 0.0)]), 64, 64).unwrap();
        // Stamps cover cols 0..=1 and 62..=63 of rows 0..=1; the line fills
        // the remaining cells of row 0 and nothing else.
        for col in 0..64 {
            let expected = if col <= 1 || col >= 62 { 1.0 } else { 0.5 };
            assert_eq!(img.get(col, 0), expected, "col {col}");
            let below = if col <= 1 || col >= 62 { 1.0 } else { 0.0 };
            assert_eq!(img.get(col, 1), below, "col {col}");
        }
        let lit = img.pixels().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(lit, 64 + 4);
        assert!((2..64).all(|row| (0..64).all(|col| img.get(col, row) == 0.0)));
    }

    #[test]
    fn off_screen_gaze_is_clamped_and_rendering_is_deterministic() {
        let s = seq_xy(&[(-0.5, 1.7), (0.3, 0.2), (0.9, 0.8)]);
        let a = render_scanpath(&s, 32, 32).unwrap();
        let b = render_scanpath(&s, 32, 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(0, 31), 1.0);
        assert!(render_scanpath(&Sequence::default(), 32, 32).is_err());
        assert!(render_scanpath(&s, 4, 32).is_err());
    }

    #[test]
    fn pgm_export() {
        let img = render_scanpath(&seq_xy(&[(0.0, 0.0), (1.0, 0.0)]), 8, 8).unwrap();
        let mut out = Vec::new();
        img.write_pgm(&mut out).unwrap();
        let header = b"P5\n8 8\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(out.len(), header.len() + 64);
        assert_eq!(out[header.len() + 3], 128);
        assert_eq!(out[header.len()], 255);
    }

    fn dp(user: &str, rows: Vec<[f64; CHANNELS]>) -> Datapoint {
        let seq = Sequence::new(rows);
        Datapoint {
            user_id: user.into(),
            label: Label::Control,
            task: Task::Reading,
            scanpath: render_scanpath(&seq, 8, 8).unwrap(),
            seq,
            split_index: 0,
        }
    }

    #[test]
    fn normalization_examples() {
        let d = dp("a", vec![[1.0, 5.0, 0.0, 0.0, 0.0, 0.0], [3.0, 5.0, 0.0, 0.0, 0.0, 0.0]]);
        let stats = fit_channel_stats(std::slice::from_ref(&d), "fold0").unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        let n = apply_normalization(&d.seq, &stats);
        assert_eq!(n.rows()[0][0], -1.0);
        assert_eq!(n.rows()[1][0], 1.0);
        // constant channel
        assert_eq!(n.rows()[0][1], 0.0);
        assert!(stats.fitted_on.contains("a"));
        assert!(fit_channel_stats(&[], "x").is_err());
    }

    #[test]
    fn normalized_training_data_is_standard() {
        let a = dp("a", (0..13).map(|i| [i as f64, (i * i) as f64, 1.0, 2.0, 3.0, 4.0]).collect());
        let b = dp("b", (0..7).map(|i| [-(i as f64), 0.3 * i as f64, 1.5, 2.0, 3.0, 4.0]).collect());
        let stats = fit_channel_stats(&[a.clone(), b.clone()], "f").unwrap();
        let rows: Vec<[f64; CHANNELS]> = [a, b]
            .iter()
            .flat_map(|d| apply_normalization(&d.seq, &stats).into_rows())
            .collect();
        for c in [0usize, 1, 2] {
            let m = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
            let v = rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / rows.len() as f64;
            assert!(m.abs() < 1e-9, "channel {c} mean {m}");
            assert!((v.sqrt() - 1.0).abs() < 1e-9, "channel {c} std {}", v.sqrt());
        }
    }

    #[test]
    fn datapoints_per_recording() {
        let recs: Vec<Recording> = (0..10).map(|i| recording(40 + i)).collect();
        let dps = build_datapoints(&recs, &DatapointOptions::default()).unwrap();
        assert_eq!(dps.len(), 40);
        for rec in &recs {
            let total: usize = dps
                .iter()
                .filter(|d| d.user_id == rec.user_id)
                .map(|d| d.seq.len())
                .sum();
            assert_eq!(total, rec.len());
        }

        let long = [recording(4000)];
        let opts = DatapointOptions {
            cutoff: Some(1000),
            scanpath_width: 16,
            scanpath_height: 16,
            ..Default::default()
        };
        let cut = build_datapoints(&long, &opts).unwrap();
        assert!(cut.iter().all(|d| d.seq.len() == 1000));
        let opts = DatapointOptions { cutoff: None, ..opts };
        let full = build_datapoints(&long, &opts).unwrap();
        assert!(full.iter().all(|d| d.seq.len() == 1000));
        assert_eq!(full.iter().map(|d| d.split_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        let dup = [recording(40), recording(40)];
        assert!(build_datapoints(&dup, &DatapointOptions::default()).is_err());
    }
}
