use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{stratified_group_kfold, FoldPlan};
use super::metrics::{decide, roc_auc, Metric, Metrics};
use crate::error::{Error, Result};
use crate::gazedata::{Label, Task};
use crate::preprocess::{fit_channel_stats, ChannelStats, Datapoint};
use crate::seed::derive_seed;

/// Training and test data of one fold. Sequences are raw; `stats` were
/// fitted on the training users only.
#[derive(Debug, Clone, Copy)]
pub struct FoldInput<'a> {
    pub train: &'a [Datapoint],
    pub test: &'a [Datapoint],
    pub stats: &'a ChannelStats,
    pub seed: u64,
}

/// Anything the harness can cross-validate.
pub trait FoldModel: Sync {
    /// Classifier name used in reports.
    fn name(&self) -> String;

    /// Canonical description of the model configuration.
    fn config_json(&self) -> String;

    /// Fits on `fold.train` and returns `p_patient` for each test datapoint,
    /// in order.
    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// One AUC over all test predictions of a run.
    #[default]
    Pooled,
    /// Mean of per-fold AUCs.
    PerFoldMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    pub runs: usize,
    pub folds: usize,
    pub master_seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
    pub user_level: bool,
    pub auc_mode: AucMode,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            runs: 10,
            folds: 10,
            master_seed: 0,
            jobs: 1,
            user_level: false,
            auc_mode: AucMode::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDatapoint {
    pub user_id: String,
    pub split_index: usize,
    pub label: Label,
    pub fold: usize,
    pub score: f64,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub datapoint: Metrics,
    pub user: Option<Metrics>,
    pub scores: Vec<ScoredDatapoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
}

impl MetricSummary {
    pub fn of(metrics: &[Metrics]) -> Self {
        let col = |m: Metric| MeanStd::of(&metrics.iter().map(|x| x.get(m)).collect::<Vec<_>>());
        MetricSummary {
            auc: col(Metric::Auc),
            sensitivity: col(Metric::Sensitivity),
            specificity: col(Metric::Specificity),
        }
    }

    pub fn get(&self, metric: Metric) -> MeanStd {
        match metric {
            Metric::Auc => self.auc,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub classifier: String,
    pub task: Task,
    pub options: CvOptions,
    pub model_config: String,
    pub config_fingerprint: String,
    pub users: usize,
    pub datapoints: usize,
    pub run_count: usize,
    pub datapoint_summary: MetricSummary,
    pub user_summary: Option<MetricSummary>,
    pub runs: Vec<RunResult>,
}

fn fingerprint(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Seed of run `r` under `master`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

fn user_list(datapoints: &[Datapoint]) -> Result<Vec<(String, Label)>> {
    let mut users: BTreeMap<&str, Label> = BTreeMap::new();
    for d in datapoints {
        if let Some(prev) = users.insert(&d.user_id, d.label) {
            if prev != d.label {
                return Err(Error::InvalidArgument(format!("user `{}` has mixed labels", d.user_id)));
            }
        }
    }
    Ok(users.into_iter().map(|(u, l)| (u.to_string(), l)).collect())
}

fn user_metrics(scores: &[ScoredDatapoint]) -> Result<Metrics> {
    let mut per_user: BTreeMap<&str, (Label, f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = per_user.entry(&s.user_id).or_insert((s.label, 0.0, 0));
        e.1 += s.score;
        e.2 += 1;
    }
    let (labels, means): (Vec<Label>, Vec<f64>) = per_user
        .values()
        .map(|(l, sum, n)| (*l, sum / *n as f64))
        .unzip();
    Metrics::compute(&means, &labels)
}

struct FoldJob {
    run: usize,
    fold: usize,
    seed: u64,
}

fn run_fold(
    datapoints: &[Datapoint],
    plan: &FoldPlan,
    job: &FoldJob,
    model: &dyn FoldModel,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let test_users = plan.test_users(job.fold);
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..datapoints.len()).partition(|&i| test_users.contains(datapoints[i].user_id.as_str()));
    let train: Vec<Datapoint> = train_idx.iter().map(|&i| datapoints[i].clone()).collect();
    let test: Vec<Datapoint> = test_idx.iter().map(|&i| datapoints[i].clone()).collect();
    let stats = fit_channel_stats(&train, format!("run{}/fold{}", job.run, job.fold))?;
    if stats.fitted_on.iter().any(|u| test_users.contains(u.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "normalization stats `{}` include test users",
            stats.tag
        )));
    }
    let scores = model.fit_predict(&FoldInput {
        train: &train,
        test: &test,
        stats: &stats,
        seed: job.seed,
    })?;
    if scores.len() != test.len() {
        return Err(Error::shape("fit_predict", "one score per test datapoint"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
    }
    Ok((test_idx, scores))
}

/// Repeated user-grouped, class-stratified cross-validation of `model`.
pub fn run_cv(datapoints: &[Datapoint], model: &dyn FoldModel, opts: &CvOptions) -> Result<ExperimentReport> {
    if datapoints.is_empty() {
        return Err(Error::EmptyInput("run_cv datapoints"));
    }
    if opts.runs == 0 {
        return Err(Error::InvalidArgument("runs must be positive".into()));
    }
    let task = datapoints[0].task;
    if datapoints.iter().any(|d| d.task != task) {
        return Err(Error::InvalidArgument("datapoints mix tasks".into()));
    }
    let users = user_list(datapoints)?;
    let plans: Vec<FoldPlan> = (0..opts.runs)
        .map(|r| stratified_group_kfold(&users, opts.folds, run_seed(opts.master_seed, r)))
        .collect::<Result<_>>()?;
    let jobs: Vec<FoldJob> = plans
        .iter()
        .enumerate()
        .flat_map(|(run, plan)| {
            (0..plan.k).map(move |fold| FoldJob {
                run,
                fold,
                seed: derive_seed(plan.seed, 1 + fold as u64),
            })
        })
        .collect();

    let exec = |job: &FoldJob| run_fold(datapoints, &plans[job.run], job, model);
    let outcomes: Vec<Result<(Vec<usize>, Vec<f64>)>> = if opts.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(exec).collect())
    } else {
        jobs.iter().map(exec).collect()
    };

    let mut runs = Vec::with_capacity(opts.runs);
    let mut outcomes = outcomes.into_iter();
    for (run, plan) in plans.iter().enumerate() {
        let mut scores: Vec<Option<ScoredDatapoint>> = vec![None; datapoints.len()];
        let mut fold_aucs = Vec::with_capacity(plan.k);
        for fold in 0..plan.k {
            let (idx, fold_scores) = outcomes.next().expect("one outcome per job")?;
            if opts.auc_mode == AucMode::PerFoldMean {
                let pos: Vec<bool> = idx.iter().map(|&i| datapoints[i].label.is_positive()).collect();
                fold_aucs.push(roc_auc(&fold_scores, &pos)?);
            }
            for (i, s) in idx.into_iter().zip(fold_scores) {
                let d = &datapoints[i];
                if scores[i].is_some() {
                    return Err(Error::InvalidArgument("datapoint scored twice".into()));
                }
                scores[i] = Some(ScoredDatapoint {
                    user_id: d.user_id.clone(),
                    split_index: d.split_index,
                    label: d.label,
                    fold,
                    score: s,
                    predicted: decide(s),
                });
            }
        }
        let scores: Vec<ScoredDatapoint> = scores
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidArgument("datapoint left unscored".into()))?;
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let labels: Vec<Label> = scores.iter().map(|s| s.label).collect();
        let mut datapoint = Metrics::compute(&values, &labels)?;
        if opts.auc_mode == AucMode::PerFoldMean {
            datapoint.auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
        }
        let user = opts.user_level.then(|| user_metrics(&scores)).transpose()?;
        runs.push(RunResult {
            run,
            seed: plan.seed,
            datapoint,
            user,
            scores,
        });
    }

    let datapoint_summary = MetricSummary::of(&runs.iter().map(|r| r.datapoint).collect::<Vec<_>>());
    let user_summary = opts
        .user_level
        .then(|| MetricSummary::of(&runs.iter().filter_map(|r| r.user).collect::<Vec<_>>()));
    let model_config = model.config_json();
    let n_users = users.iter().map(|(u, _)| u).collect::<BTreeSet<_>>().len();
    Ok(ExperimentReport {
        classifier: model.name(),
        task,
        options: *opts,
        config_fingerprint: fingerprint(&format!("{}|{}", model_config, serde_json::to_string(opts)?)),
        model_config,
        users: n_users,
        datapoints: datapoints.len(),
        run_count: runs.len(),
        datapoint_summary,
        user_summary,
        runs,
    })
}
