use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::mlp::{argmax, batch_loss, clamp_location, forward, init_mlp, loss_and_grad, ModelParams, Targets, Task};
use crate::error::{Error, Result};
use crate::preprocess::{normalize_into, ChannelStats, Window};
use crate::seed;

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Episode-level fraction of the training folds held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![256, 128],
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 200,
            patience: 20,
            validation_fraction: 0.10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::param("hidden layer widths must be positive"));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0) {
            return Err(Error::param("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.beta1 == 0.0 || a.beta2 == 0.0 {
            return Err(Error::param("Adam betas must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::param("batch size, max epochs and patience must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Canonical text form, hashed into checkpoints.
    pub fn canonical(&self) -> String {
        format!(
            "hidden={:?};lr={:e};b1={};b2={};eps={:e};batch={};max_epochs={};patience={};val={};seed={}",
            self.hidden,
            self.adam.learning_rate,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.validation_fraction,
            self.seed
        )
    }
}

enum Inputs<'a> {
    Dense(ArrayView2<'a, f64>),
    Windows {
        windows: Vec<&'a Window>,
        stats: &'a ChannelStats,
    },
}

/// Rows of model input together with their supervision.
///
/// Window-backed sets standardize rows lazily while batches are assembled,
/// so a dataset is never duplicated in 64-bit form.
pub struct SampleSet<'a> {
    inputs: Inputs<'a>,
    classes: Vec<usize>,
    targets: Vec<Option<f64>>,
    episodes: Vec<u64>,
}

impl<'a> SampleSet<'a> {
    pub fn from_windows(windows: Vec<&'a Window>, stats: &'a ChannelStats) -> Self {
        let classes = windows.iter().map(|w| w.fc_label.index()).collect();
        let targets = windows.iter().map(|w| w.fl_target).collect();
        let episodes = windows.iter().map(|w| w.episode_id).collect();
        SampleSet {
            inputs: Inputs::Windows { windows, stats },
            classes,
            targets,
            episodes,
        }
    }

    pub fn dense(
        x: ArrayView2<'a, f64>,
        classes: Vec<usize>,
        targets: Vec<Option<f64>>,
        episodes: Vec<u64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if classes.len() != n || targets.len() != n || episodes.len() != n {
            return Err(Error::contract("dense sample set: label lengths differ from rows"));
        }
        Ok(SampleSet {
            inputs: Inputs::Dense(x),
            classes,
            targets,
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        match &self.inputs {
            Inputs::Dense(x) => x.ncols(),
            Inputs::Windows { windows, .. } => windows.first().map_or(0, |w| w.tensor.len()),
        }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn targets(&self) -> &[Option<f64>] {
        &self.targets
    }

    pub fn episode_set(&self) -> BTreeSet<u64> {
        self.episodes.iter().copied().collect()
    }

    /// Copy the rows `idx` into the first `idx.len()` rows of `out`.
    pub fn fill_batch(&self, idx: &[usize], out: &mut Array2<f64>) {
        for (r, &i) in idx.iter().enumerate() {
            let mut row = out.row_mut(r);
            match &self.inputs {
                Inputs::Dense(x) => row.assign(&x.row(i)),
                Inputs::Windows { windows, stats } => normalize_into(
                    windows[i].tensor.view(),
                    stats,
                    row.as_slice_mut().expect("batch rows are contiguous"),
                ),
            }
        }
    }

    fn batch_targets(&self, task: Task, idx: &[usize]) -> Result<BatchTargets> {
        match task {
            Task::Classification => Ok(BatchTargets::Classes(
                idx.iter().map(|&i| self.classes[i]).collect(),
            )),
            Task::Localization => idx
                .iter()
                .map(|&i| {
                    self.targets[i].ok_or_else(|| {
                        Error::contract("localization sample without a location target")
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(BatchTargets::Values),
        }
    }
}

enum BatchTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl BatchTargets {
    fn as_targets(&self) -> Targets<'_> {
        match self {
            BatchTargets::Classes(c) => Targets::Classes(c),
            BatchTargets::Values(v) => Targets::Values(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience-based early stopping on a validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Record the validation loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// One training run as seen by the epoch driver.
pub trait EpochRunner {
    /// Train one epoch (1-based) and return `(train_loss, val_loss)`.
    fn run_epoch(&mut self, epoch: usize) -> Result<(f64, f64)>;
    /// Called after an epoch that set a new best validation loss.
    fn snapshot(&mut self, epoch: usize);
}

/// Run epochs until `max_epochs` or until `patience` epochs pass without a
/// new best validation loss.
pub fn run_epochs<R: EpochRunner>(
    max_epochs: usize,
    patience: usize,
    runner: &mut R,
) -> Result<History> {
    let mut stopper = EarlyStopping::new(patience);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=max_epochs {
        let (train_loss, val_loss) = runner.run_epoch(epoch)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => runner.snapshot(epoch),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(History {
        epochs,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    })
}

/// Mean loss over a whole sample set.
pub fn evaluate_loss(params: &ModelParams, set: &SampleSet) -> Result<f64> {
    let n = set.len();
    if n == 0 {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut buf = Array2::<f64>::zeros((EVAL_CHUNK.min(n), set.features()));
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let rows = chunk.len();
        set.fill_batch(chunk, &mut buf);
        let x = buf.slice(ndarray::s![..rows, ..]);
        let out = forward(params, x)?.output;
        let targets = set.batch_targets(params.task, chunk)?;
        total += batch_loss(params.task, &out, targets.as_targets())? * rows as f64;
    }
    Ok(total / n as f64)
}

struct Trainer<'s, 'a> {
    train_set: &'s SampleSet<'a>,
    val_set: &'s SampleSet<'a>,
    cfg: &'s TrainConfig,
    task: Task,
    params: ModelParams,
    best: ModelParams,
    state: AdamState,
    order: Vec<usize>,
    buf: Array2<f64>,
}

impl EpochRunner for Trainer<'_, '_> {
    fn run_epoch(&mut self, epoch: usize) -> Result<(f64, f64)> {
        let mut rng = seed::rng(self.cfg.seed, &[0xE90C, epoch as u64]);
        self.order.shuffle(&mut rng);
        let bs = self.buf.nrows();
        let mut total = 0.0;
        for chunk in self.order.chunks(bs) {
            let rows = chunk.len();
            self.train_set.fill_batch(chunk, &mut self.buf);
            let x = self.buf.slice(ndarray::s![..rows, ..]);
            let targets = self.train_set.batch_targets(self.task, chunk)?;
            let (loss, grads) = loss_and_grad(&self.params, x, targets.as_targets())
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            adam_step(&mut self.params, &grads, &mut self.state, &self.cfg.adam)?;
            total += loss * rows as f64;
        }
        let train_loss = total / self.order.len() as f64;
        let val_loss = evaluate_loss(&self.params, self.val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "epoch {epoch}: non-finite validation loss"
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        Ok((train_loss, val_loss))
    }

    fn snapshot(&mut self, _epoch: usize) {
        self.best.clone_from(&self.params);
    }
}

/// Mini-batch Adam training with early stopping on the validation loss.
///
/// Returns the parameters of the best validation epoch.
pub fn train<'a>(
    train_set: &SampleSet<'a>,
    val_set: &SampleSet<'a>,
    cfg: &TrainConfig,
    task: Task,
) -> Result<(ModelParams, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training and validation sets must be nonempty"));
    }
    let train_eps = train_set.episode_set();
    if let Some(id) = val_set.episodes.iter().find(|id| train_eps.contains(id)) {
        return Err(Error::contract(format!(
            "episode {id} appears in both training and validation data"
        )));
    }
    if train_set.features() != val_set.features() {
        return Err(Error::contract("training and validation feature widths differ"));
    }

    let mut sizes = vec![train_set.features()];
    sizes.extend(&cfg.hidden);
    sizes.push(task.outputs());
    let params = init_mlp(&sizes, task, cfg.seed)?;
    let n = train_set.len();
    let mut trainer = Trainer {
        train_set,
        val_set,
        cfg,
        task,
        best: params.clone(),
        state: AdamState::new(&params),
        params,
        order: (0..n).collect(),
        buf: Array2::zeros((cfg.batch_size.min(n), train_set.features())),
    };
    let history = run_epochs(cfg.max_epochs, cfg.patience, &mut trainer)?;
    Ok((trainer.best, history))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Locations(Vec<f64>),
}

/// FC: argmax class (lowest index on ties). FL: output clamped to [0.01, 0.99].
pub fn predict(params: &ModelParams, set: &SampleSet) -> Result<Predictions> {
    let n = set.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut buf = Array2::<f64>::zeros((EVAL_CHUNK.min(n.max(1)), set.features().max(1)));
    let mut classes = Vec::with_capacity(n);
    let mut locs = Vec::with_capacity(n);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let rows = chunk.len();
        set.fill_batch(chunk, &mut buf);
        let out = forward(params, buf.slice(ndarray::s![..rows, ..]))?.output;
        match params.task {
            Task::Classification => {
                classes.extend(out.rows().into_iter().map(|r| argmax(r.iter().copied())))
            }
            Task::Localization => locs.extend(out.column(0).iter().map(|&v| clamp_location(v))),
        }
    }
    Ok(match params.task {
        Task::Classification => Predictions::Classes(classes),
        Task::Localization => Predictions::Locations(locs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Replays a fixed validation-loss sequence; params are the epoch number.
    struct Stub {
        losses: Vec<f64>,
        current: usize,
        saved: usize,
    }

    impl EpochRunner for Stub {
        fn run_epoch(&mut self, epoch: usize) -> Result<(f64, f64)> {
            self.current = epoch;
            Ok((0.0, self.losses[epoch - 1]))
        }

        fn snapshot(&mut self, epoch: usize) {
            self.saved = epoch;
        }
    }

    #[test]
    fn plateau_after_epoch_three_stops_at_twenty_three() {
        let mut losses = vec![3.0, 2.0, 1.0];
        losses.extend(std::iter::repeat(1.0).take(97));
        let mut stub = Stub { losses, current: 0, saved: 0 };
        let h = run_epochs(100, 20, &mut stub).unwrap();
        assert_eq!(h.epochs.len(), 23);
        assert_eq!(h.best_epoch, 3);
        assert_eq!(stub.saved, 3);
        assert!(h.stopped_early);
    }

    #[test]
    fn strictly_decreasing_runs_every_epoch() {
        let losses: Vec<f64> = (0..30).map(|i| 10.0 - i as f64 * 0.1).collect();
        let mut stub = Stub { losses, current: 0, saved: 0 };
        let h = run_epochs(30, 20, &mut stub).unwrap();
        assert_eq!(h.epochs.len(), 30);
        assert_eq!((h.best_epoch, stub.saved), (30, 30));
        assert!(!h.stopped_early);
    }

    fn toy(n: usize, offset: u64) -> (Array2<f64>, Vec<usize>, Vec<Option<f64>>, Vec<u64>) {
        let x = Array2::from_shape_fn((n, 4), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 7.0 - 0.5);
        let classes = (0..n).map(|i| usize::from(x[[i, 0]] > 0.0)).collect();
        let targets = (0..n).map(|i| Some(0.5 + 0.4 * x[[i, 1]])).collect();
        let eps = (0..n as u64).map(|i| i + offset).collect();
        (x, classes, targets, eps)
    }

    #[test]
    fn training_is_deterministic_and_rejects_overlap() {
        let (xt, ct, tt, et) = toy(40, 0);
        let (xv, cv, tv, ev) = toy(10, 100);
        let tr = SampleSet::dense(xt.view(), ct, tt, et).unwrap();
        let va = SampleSet::dense(xv.view(), cv, tv, ev).unwrap();
        let cfg = TrainConfig { hidden: vec![5], batch_size: 8, max_epochs: 5, ..TrainConfig::default() };
        for task in [Task::Classification, Task::Localization] {
            let a = train(&tr, &va, &cfg, task).unwrap();
            let b = train(&tr, &va, &cfg, task).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.1.epochs.len(), 5);
        }

        let (xo, co, to, _) = toy(10, 0);
        let overlap = SampleSet::dense(xo.view(), co, to, vec![3; 10]).unwrap();
        assert!(matches!(train(&tr, &overlap, &cfg, Task::Classification), Err(Error::Contract(_))));
    }
}
