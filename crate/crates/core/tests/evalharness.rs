use std::collections::BTreeSet;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vtnet_core::evalharness::{
    emit_report, load_report, render_svg, run_cv, summary_csv, AucMode, ConstantModel, CvOptions, FoldInput,
    FoldModel, GnbModel, OracleModel, PER_RUN_HEADER, SUMMARY_HEADER,
};
use vtnet_core::preprocess::build_datapoints;
use vtnet_core::{Datapoint, DatapointOptions, Error, Label, RawSample, Recording, Task};

fn recording(user: &str, label: Label, len: usize, shift: f64, rng: &mut ChaCha8Rng) -> Recording {
    let samples = (0..len)
        .map(|i| RawSample {
            t: i as f64 * 8.0,
            gx: (rng.random_range(0.0..1.0) + shift).min(1.0),
            gy: rng.random_range(0.0..1.0),
            hd_l: 650.0 + rng.random_range(-5.0..5.0),
            hd_r: 650.0 + rng.random_range(-5.0..5.0),
            p_l: 3.5 + shift + rng.random_range(-0.2..0.2),
            p_r: 3.5 + shift + rng.random_range(-0.2..0.2),
        })
        .collect();
    Recording::new(user, Task::Reading, label, samples).unwrap()
}

/// `patients + controls` users with four datapoints each. Patients carry a
/// pupil offset of `shift`.
fn cohort(patients: usize, controls: usize, shift: f64, seed: u64) -> Vec<Datapoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::new();
    for i in 0..patients {
        recs.push(recording(&format!("P{i:02}"), Label::Patient, 40, shift, &mut rng));
    }
    for i in 0..controls {
        recs.push(recording(&format!("C{i:02}"), Label::Control, 40, 0.0, &mut rng));
    }
    let opts = DatapointOptions {
        scanpath_width: 8,
        scanpath_height: 8,
        ..DatapointOptions::default()
    };
    build_datapoints(&recs, &opts).unwrap()
}

fn opts(runs: usize, folds: usize) -> CvOptions {
    CvOptions {
        runs,
        folds,
        master_seed: 3,
        ..CvOptions::default()
    }
}

#[test]
fn constant_scores_give_chance_auc() {
    let data = cohort(6, 6, 0.0, 1);
    let report = run_cv(&data, &ConstantModel(0.5), &opts(2, 3)).unwrap();
    for run in &report.runs {
        assert_eq!(run.datapoint.auc, 0.5);
        // A tie at 0.5 predicts control.
        assert_eq!(run.datapoint.sensitivity, 0.0);
        assert_eq!(run.datapoint.specificity, 1.0);
    }
    assert_eq!(report.datapoint_summary.auc.std, 0.0);
}

#[test]
fn oracle_scores_are_perfect() {
    let data = cohort(5, 7, 0.0, 2);
    let report = run_cv(&data, &OracleModel, &opts(3, 4)).unwrap();
    assert_eq!(report.datapoint_summary.auc.mean, 1.0);
    assert_eq!(report.datapoint_summary.sensitivity.mean, 1.0);
    assert_eq!(report.datapoint_summary.specificity.mean, 1.0);
    assert_eq!(report.run_count, 3);
    assert_eq!((report.users, report.datapoints), (12, 48));
}

#[test]
fn every_datapoint_scored_once_per_run() {
    let data = cohort(5, 5, 0.0, 3);
    let report = run_cv(&data, &ConstantModel(0.3), &opts(2, 5)).unwrap();
    for run in &report.runs {
        assert_eq!(run.scores.len(), data.len());
        let keys: BTreeSet<(&str, usize)> = run.scores.iter().map(|s| (s.user_id.as_str(), s.split_index)).collect();
        assert_eq!(keys.len(), data.len());
        let mut fold_of = std::collections::BTreeMap::new();
        for s in &run.scores {
            assert_eq!(*fold_of.entry(s.user_id.as_str()).or_insert(s.fold), s.fold);
        }
    }
}

/// Checks group integrity and fold-local statistics from inside a fold.
struct Auditor;

impl FoldModel for Auditor {
    fn name(&self) -> String {
        "Auditor".into()
    }

    fn config_json(&self) -> String {
        "{}".into()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> vtnet_core::Result<Vec<f64>> {
        let train: BTreeSet<&str> = fold.train.iter().map(|d| d.user_id.as_str()).collect();
        let test: BTreeSet<&str> = fold.test.iter().map(|d| d.user_id.as_str()).collect();
        assert!(train.is_disjoint(&test));
        let fitted: BTreeSet<&str> = fold.stats.fitted_on.iter().map(String::as_str).collect();
        assert_eq!(fitted, train);
        assert!(fold.stats.tag.starts_with("run"));
        // Channel means come from training rows only.
        let n: usize = fold.train.iter().map(|d| d.seq.len()).sum();
        let mean_p: f64 = fold.train.iter().flat_map(|d| d.seq.rows()).map(|r| r[4]).sum::<f64>() / n as f64;
        assert!((fold.stats.mean[4] - mean_p).abs() < 1e-9);
        Ok(vec![0.5; fold.test.len()])
    }
}

#[test]
fn folds_are_group_disjoint_with_fold_local_statistics() {
    let data = cohort(7, 8, 0.5, 4);
    run_cv(&data, &Auditor, &opts(3, 5)).unwrap();
}

#[test]
fn too_many_folds_is_an_error() {
    let data = cohort(3, 3, 0.0, 5);
    assert!(matches!(
        run_cv(&data, &ConstantModel(0.5), &opts(1, 7)),
        Err(Error::TooManyFolds { k: 7, users: 6 })
    ));
}

#[test]
fn parallel_and_serial_reports_match() {
    let data = cohort(6, 6, 0.8, 6);
    let serial = run_cv(&data, &GnbModel, &opts(3, 4)).unwrap();
    let parallel = run_cv(&data, &GnbModel, &CvOptions { jobs: 3, ..opts(3, 4) }).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    emit_report(&serial, dir_a.path()).unwrap();
    emit_report(&parallel, dir_b.path()).unwrap();
    for name in ["report.json", "summary.csv", "per_run.csv"] {
        assert_eq!(
            fs::read(dir_a.path().join(name)).unwrap(),
            fs::read(dir_b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn separable_cohort_is_learned_by_gnb() {
    let data = cohort(8, 8, 1.0, 7);
    let report = run_cv(&data, &GnbModel, &opts(2, 4)).unwrap();
    assert!(report.datapoint_summary.auc.mean > 0.9, "{}", report.datapoint_summary.auc.mean);
}

#[test]
fn per_fold_mode_averages_fold_aucs() {
    let data = cohort(6, 6, 0.0, 8);
    let pooled = run_cv(&data, &OracleModel, &opts(1, 3)).unwrap();
    let per_fold = run_cv(
        &data,
        &OracleModel,
        &CvOptions {
            auc_mode: AucMode::PerFoldMean,
            ..opts(1, 3)
        },
    )
    .unwrap();
    assert_eq!(pooled.runs[0].datapoint.auc, 1.0);
    assert_eq!(per_fold.runs[0].datapoint.auc, 1.0);
    assert_ne!(pooled.config_fingerprint, per_fold.config_fingerprint);
}

#[test]
fn user_level_uses_mean_user_score() {
    let data = cohort(4, 4, 0.0, 9);
    let report = run_cv(
        &data,
        &OracleModel,
        &CvOptions {
            user_level: true,
            ..opts(2, 4)
        },
    )
    .unwrap();
    let user = report.user_summary.expect("user summary");
    assert_eq!(user.auc.mean, 1.0);
    assert!(report.runs.iter().all(|r| r.user.is_some()));
}

#[test]
fn emitted_files_are_byte_stable_and_parse_back() {
    let data = cohort(4, 4, 0.5, 10);
    let report = run_cv(
        &data,
        &GnbModel,
        &CvOptions {
            user_level: true,
            ..opts(2, 4)
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = emit_report(&report, dir.path()).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    emit_report(&report, dir.path()).unwrap();
    for (p, b) in first.iter().zip(&bytes) {
        assert_eq!(&fs::read(p).unwrap(), b);
    }
    let names: Vec<String> = first
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["report.json", "summary.csv", "per_run.csv", "user_summary.csv"]);

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("GNB,reading,auc,"));
    assert!(!summary.contains('\r'));
    assert_eq!(summary, summary_csv(&report));

    let per_run = fs::read_to_string(dir.path().join("per_run.csv")).unwrap();
    assert_eq!(per_run.lines().next().unwrap(), PER_RUN_HEADER);
    assert_eq!(per_run.lines().count(), 1 + 2 * 2);

    let loaded = load_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(summary_csv(&loaded), summary);
    assert!(render_svg(&[loaded]).unwrap().starts_with("<svg"));
}

#[test]
fn empty_report_is_rejected() {
    let data = cohort(3, 3, 0.0, 11);
    let mut report = run_cv(&data, &ConstantModel(0.5), &opts(1, 3)).unwrap();
    report.runs.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&report, dir.path()).is_err());
    assert!(render_svg(&[]).is_err());
}

/// Scores outside [0, 1] or of the wrong length stop the harness.
struct Broken(usize);

impl FoldModel for Broken {
    fn name(&self) -> String {
        "Broken".into()
    }

    fn config_json(&self) -> String {
        "{}".into()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> vtnet_core::Result<Vec<f64>> {
        Ok(match self.0 {
            0 => vec![0.5; fold.test.len() + 1],
            _ => vec![1.5; fold.test.len()],
        })
    }
}

#[test]
fn malformed_scores_are_errors() {
    let data = cohort(3, 3, 0.0, 12);
    assert!(run_cv(&data, &Broken(0), &opts(1, 3)).is_err());
    assert!(run_cv(&data, &Broken(1), &opts(1, 3)).is_err());
}
