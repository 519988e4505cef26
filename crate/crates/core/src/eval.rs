//! Metrics, episode-grouped cross-validation and per-scenario evaluation.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::degrade::{degraded, DegradationSpec};
use crate::error::{Error, Result};
use crate::grid_sim::{ChannelLayout, CLASS_COUNT};
use crate::model::{predict, train, History, Predictions, SampleSet, Task, TrainConfig};
use crate::preprocess::{compute_channel_stats, Window};
use crate::seed;

pub const DEFAULT_FOLDS: usize = 5;

const STREAM_FOLDS: u64 = 0xF01D;
const STREAM_VALIDATION: u64 = 0x7A11;
const STREAM_TRAIN: u64 = 0x7EA1;

/// Episode id to fold index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: BTreeMap<u64, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, episode_id: u64) -> Option<usize> {
        self.folds.get(&episode_id).copied()
    }

    pub fn episodes(&self) -> impl Iterator<Item = u64> + '_ {
        self.folds.keys().copied()
    }

    pub fn test_episodes(&self, fold: usize) -> BTreeSet<u64> {
        self.folds
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn train_episodes(&self, fold: usize) -> BTreeSet<u64> {
        self.folds
            .iter()
            .filter(|&(_, &f)| f != fold)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled, balanced partition of the distinct episode ids into `k` folds.
pub fn kfold_split(episode_ids: &[u64], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::param("cross-validation needs at least 2 folds"));
    }
    let mut ids: Vec<u64> = episode_ids
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < k {
        return Err(Error::param(format!(
            "{} episodes cannot fill {k} folds",
            ids.len()
        )));
    }
    ids.shuffle(&mut seed::rng(seed, &[STREAM_FOLDS]));
    let folds = ids.iter().enumerate().map(|(i, &id)| (id, i % k)).collect();
    Ok(FoldAssignment { k, folds })
}

/// Split training episodes into (retained, validation). At least one episode
/// lands on each side.
pub fn validation_split(
    train_episodes: &BTreeSet<u64>,
    fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<u64>, BTreeSet<u64>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("validation fraction must lie in (0, 1)"));
    }
    let n = train_episodes.len();
    if n < 2 {
        return Err(Error::param("need at least 2 training episodes to hold out validation"));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<u64> = train_episodes.iter().copied().collect();
    ids.shuffle(&mut seed::rng(seed, &[STREAM_VALIDATION]));
    let val = ids[..n_val].iter().copied().collect();
    let retained = ids[n_val..].iter().copied().collect();
    Ok((retained, val))
}

/// `m[[i, j]]` counts samples with label `i` predicted as `j`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Array2<u64>> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = Array2::<u64>::zeros((n_classes, n_classes));
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::contract(format!(
                "class index out of range (label {l}, prediction {p}, {n_classes} classes)"
            )));
        }
        m[[l, p]] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
    Weighted,
}

impl std::str::FromStr for F1Average {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(F1Average::Macro),
            "micro" => Ok(F1Average::Micro),
            "weighted" => Ok(F1Average::Weighted),
            other => Err(Error::param(format!("unknown F1 averaging {other:?}"))),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1_from(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn f1_per_class(m: &Array2<u64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n)
        .map(|c| {
            let tp = m[[c, c]] as f64;
            let predicted = m.column(c).sum() as f64;
            let actual = m.row(c).sum() as f64;
            f1_from(ratio(tp, predicted), ratio(tp, actual))
        })
        .collect()
}

/// Unweighted mean of the per-class F1 over every row of the matrix.
pub fn f1_macro(m: &Array2<u64>) -> f64 {
    let per = f1_per_class(m);
    per.iter().sum::<f64>() / per.len() as f64
}

pub fn f1_score(m: &Array2<u64>, average: F1Average) -> f64 {
    match average {
        F1Average::Macro => f1_macro(m),
        F1Average::Micro => {
            let tp: u64 = (0..m.nrows()).map(|c| m[[c, c]]).sum();
            ratio(tp as f64, m.sum() as f64)
        }
        F1Average::Weighted => {
            let per = f1_per_class(m);
            let support: Vec<f64> = m.rows().into_iter().map(|r| r.sum() as f64).collect();
            let total: f64 = support.iter().sum();
            ratio(per.iter().zip(&support).map(|(f, s)| f * s).sum(), total)
        }
    }
}

/// Mean absolute error in percent of line length.
pub fn mae_percent(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::contract("MAE of an empty set"));
    }
    if predicted.len() != target.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    if let Some(v) = predicted.iter().chain(target).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("location fraction {v} outside [0, 1]")));
    }
    let sum: f64 = predicted.iter().zip(target).map(|(p, y)| (p - y).abs()).sum();
    Ok(sum / predicted.len() as f64 * 100.0)
}

/// Signed percent change of `metric` relative to `baseline`.
pub fn relative_change(metric: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::contract("relative change against a zero baseline"));
    }
    Ok((metric - baseline) / baseline * 100.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub spec: DegradationSpec,
    pub task: Task,
    pub fold_values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Percent change of `mean` against the baseline mean, once known.
    pub delta_pct: Option<f64>,
}

impl ScenarioResult {
    pub fn from_folds(spec: DegradationSpec, task: Task, fold_values: Vec<f64>) -> Result<Self> {
        if fold_values.is_empty() {
            return Err(Error::contract("scenario result without fold values"));
        }
        Ok(ScenarioResult {
            spec,
            task,
            mean: mean(&fold_values),
            std: std_dev(&fold_values),
            fold_values,
            delta_pct: None,
        })
    }

    pub fn with_baseline(mut self, baseline_mean: f64) -> Result<Self> {
        self.delta_pct = Some(relative_change(self.mean, baseline_mean)?);
        Ok(self)
    }
}

/// Where a degradation scenario is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegradeMode {
    /// Retrain on degraded data and test on degraded data.
    #[default]
    TrainAndTest,
    /// Train on clean data, test on degraded data.
    TestOnly,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub folds: usize,
    pub seed: u64,
    pub mode: DegradeMode,
    pub f1_average: F1Average,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train: TrainConfig::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            mode: DegradeMode::TrainAndTest,
            f1_average: F1Average::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub value: f64,
    /// Seed of the fold's training run.
    pub seed: u64,
    pub history: History,
    pub train_episodes: BTreeSet<u64>,
    pub validation_episodes: BTreeSet<u64>,
    pub test_episodes: BTreeSet<u64>,
}

/// Windows of a dataset plus the fold partition shared by every scenario.
pub struct Experiment<'a> {
    windows: &'a [Window],
    layout: ChannelLayout,
    folds: FoldAssignment,
    cfg: EvalConfig,
}

fn annotate(spec: &DegradationSpec, fold: usize, err: Error) -> Error {
    let context = format!("scenario {spec}, fold {fold}");
    match err {
        Error::Training(m) => Error::Training(format!("{context}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{context}: {m}")),
        Error::Parameter(m) => Error::Parameter(format!("{context}: {m}")),
        other => other,
    }
}

fn task_windows<'w>(
    windows: &'w [Window],
    episodes: &BTreeSet<u64>,
    task: Task,
) -> Vec<&'w Window> {
    windows
        .iter()
        .filter(|w| episodes.contains(&w.episode_id))
        .filter(|w| task == Task::Classification || w.fl_target.is_some())
        .collect()
}

impl<'a> Experiment<'a> {
    pub fn new(windows: &'a [Window], layout: ChannelLayout, cfg: EvalConfig) -> Result<Self> {
        cfg.train.validate()?;
        let ids: Vec<u64> = windows.iter().map(|w| w.episode_id).collect();
        let folds = kfold_split(&ids, cfg.folds, seed::derive(cfg.seed, &[STREAM_FOLDS]))?;
        Ok(Experiment {
            windows,
            layout,
            folds,
            cfg,
        })
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn config(&self) -> &EvalConfig {
        &self.cfg
    }

    /// Seed of the degradation randomness of one scenario.
    pub fn scenario_seed(&self, spec: &DegradationSpec) -> u64 {
        seed::derive(self.cfg.seed, &[spec.stream_id()])
    }

    /// Training seed of one fold. Shared by all scenarios so that scenario
    /// comparisons see the same initialization and batch order.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        seed::derive(self.cfg.seed, &[STREAM_TRAIN, fold as u64])
    }

    /// The dataset's windows with `spec` applied.
    pub fn degrade(&self, spec: &DegradationSpec) -> Result<Cow<'a, [Window]>> {
        if *spec == DegradationSpec::None {
            return Ok(Cow::Borrowed(self.windows));
        }
        degraded(self.windows, spec, &self.layout, self.scenario_seed(spec)).map(Cow::Owned)
    }

    /// Train and score one fold. `degraded` must come from [`Experiment::degrade`].
    pub fn run_fold(
        &self,
        spec: &DegradationSpec,
        degraded: &[Window],
        task: Task,
        fold: usize,
    ) -> Result<FoldOutcome> {
        self.fold_inner(spec, degraded, task, fold)
            .map_err(|e| annotate(spec, fold, e))
    }

    fn fold_inner(
        &self,
        spec: &DegradationSpec,
        degraded: &[Window],
        task: Task,
        fold: usize,
    ) -> Result<FoldOutcome> {
        if fold >= self.folds.k() {
            return Err(Error::param(format!("fold {fold} out of range")));
        }
        if degraded.len() != self.windows.len() {
            return Err(Error::contract("degraded window set does not match the dataset"));
        }
        let test_eps = self.folds.test_episodes(fold);
        let (retained, val_eps) = validation_split(
            &self.folds.train_episodes(fold),
            self.cfg.train.validation_fraction,
            seed::derive(self.cfg.seed, &[STREAM_VALIDATION, fold as u64]),
        )?;
        if !retained.is_disjoint(&test_eps) || !val_eps.is_disjoint(&test_eps) || !val_eps.is_disjoint(&retained) {
            return Err(Error::contract("train, validation and test episodes overlap"));
        }

        let train_source = match self.cfg.mode {
            DegradeMode::TrainAndTest => degraded,
            DegradeMode::TestOnly => self.windows,
        };
        let train_windows = task_windows(train_source, &retained, task);
        let val_windows = task_windows(train_source, &val_eps, task);
        let test_windows = task_windows(degraded, &test_eps, task);
        if test_windows.is_empty() {
            return Err(Error::contract("fold has no test windows for this task"));
        }
        let stats = compute_channel_stats(train_windows.iter().copied())?;
        stats.assert_disjoint_from(val_eps.iter().chain(&test_eps).copied())?;

        let mut train_cfg = self.cfg.train.clone();
        train_cfg.seed = self.fold_seed(fold);
        let train_set = SampleSet::from_windows(train_windows, &stats);
        let val_set = SampleSet::from_windows(val_windows, &stats);
        let (params, history) = train(&train_set, &val_set, &train_cfg, task)?;

        let test_set = SampleSet::from_windows(test_windows, &stats);
        let value = match predict(&params, &test_set)? {
            Predictions::Classes(pred) => {
                let m = confusion_matrix(&pred, test_set.classes(), CLASS_COUNT)?;
                f1_score(&m, self.cfg.f1_average)
            }
            Predictions::Locations(pred) => {
                let target: Vec<f64> = test_set.targets().iter().map(|t| t.unwrap_or(f64::NAN)).collect();
                mae_percent(&pred, &target)?
            }
        };
        log::info!(
            "{spec} {} fold {fold}: {} = {value:.4} (best epoch {})",
            task.code(),
            task.metric_name(),
            history.best_epoch
        );
        Ok(FoldOutcome {
            fold,
            value,
            seed: train_cfg.seed,
            history,
            train_episodes: retained,
            validation_episodes: val_eps,
            test_episodes: test_eps,
        })
    }

    /// All folds of one scenario, folds evaluated in parallel.
    pub fn run_scenario(&self, spec: &DegradationSpec, task: Task) -> Result<ScenarioResult> {
        let data = self.degrade(spec)?;
        let outcomes = (0..self.folds.k())
            .into_par_iter()
            .map(|f| self.run_fold(spec, &data, task, f))
            .collect::<Result<Vec<_>>>()?;
        ScenarioResult::from_folds(*spec, task, outcomes.iter().map(|o| o.value).collect())
    }
}

impl fmt::Display for ScenarioResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} = {:.4} ± {:.4}",
            self.spec,
            self.task.code(),
            self.task.metric_name(),
            self.mean,
            self.std
        )?;
        if let Some(d) = self.delta_pct {
            write!(f, " ({d:+.1} %)")?;
        }
        Ok(())
    }
}
