//! Experiment orchestration: config files, dataset generation, the scenario
//! matrix run with resumable CSV output, and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::eval::{DegradeMode, EvalConfig, Experiment, F1Average, ScenarioResult, DEFAULT_FOLDS};
use crate::grid_sim::container::{sidecar_path, DatasetReader, DatasetWriter, SidecarWriter};
use crate::grid_sim::{build_channel_layout, generate_range, Bounds, GridConfig, CHANNEL_COUNT};
use crate::model::{Task, TrainConfig};
use crate::preprocess::{episode_windows, Window};

pub const SEED_ENV: &str = "GRIDPROBE_SEED";
pub const MIN_EPISODES: usize = 25;
pub const FOLDS_FILE: &str = "folds.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FINGERPRINT_FILE: &str = "run_config.txt";

pub const FOLD_HEADER: [&str; 7] = ["scenario", "param", "task", "fold", "metric_name", "value", "seed"];
pub const AGGREGATE_HEADER: [&str; 6] = ["scenario", "param", "task", "mean", "std", "delta_vs_baseline_pct"];

const GENERATE_CHUNK: u64 = 32;

/// Training profile used by the runner unless a config overrides it.
/// Much smaller than the model-level defaults.
pub fn desk_train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        hidden: vec![64, 32],
        batch_size: 32,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    cfg.adam.learning_rate = 1e-3;
    cfg
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub episodes: usize,
    pub seed: u64,
    pub grid: GridConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub tasks: Vec<Task>,
    /// Baseline first, then each scenario once.
    pub scenarios: Vec<DegradationSpec>,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub degrade_test_only: bool,
    pub f1_average: F1Average,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            episodes: 300,
            seed: 1,
            grid: GridConfig::default(),
            train: desk_train_config(),
            folds: DEFAULT_FOLDS,
            tasks: vec![Task::Classification, Task::Localization],
            scenarios: DegradationSpec::default_matrix(),
            jobs: 0,
            degrade_test_only: false,
            f1_average: F1Average::Macro,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |message: String| Error::Config { line: 0, message };
        if self.folds < 2 {
            return Err(cfg_err("folds must be at least 2".into()));
        }
        if self.episodes < MIN_EPISODES.max(5 * self.folds) {
            return Err(cfg_err(format!(
                "episodes = {} is too small: need at least {} (5 per fold)",
                self.episodes,
                MIN_EPISODES.max(5 * self.folds)
            )));
        }
        if self.tasks.is_empty() {
            return Err(cfg_err("at least one task is required".into()));
        }
        self.grid.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.train.validate().map_err(|e| cfg_err(e.to_string()))?;
        for s in &self.scenarios {
            s.validate().map_err(|e| cfg_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            train: self.train.clone(),
            folds: self.folds,
            seed: self.seed,
            mode: if self.degrade_test_only {
                DegradeMode::TestOnly
            } else {
                DegradeMode::TrainAndTest
            },
            f1_average: self.f1_average,
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "dataset",
        &[
            "episodes",
            "seed",
            "nominal_voltage_kv",
            "frequency_hz",
            "base_mva",
            "line_length_km",
            "line_impedance_ohm_per_km",
            "line_angle_deg",
            "source_impedance_pu",
            "source_angle_deg",
            "k0",
            "load_level",
            "load_angle_deg",
            "bus_voltage_pu",
            "bus_angle_deg",
            "fault_duration_s",
            "fault_resistance_pu",
            "dc_time_constant_s",
            "attenuation",
            "clearing_time_constant_s",
            "snr_db",
        ],
    ),
    (
        "train",
        &[
            "hidden",
            "learning_rate",
            "beta1",
            "beta2",
            "epsilon",
            "batch_size",
            "max_epochs",
            "patience",
            "validation_fraction",
        ],
    ),
    ("eval", &["folds", "tasks", "f1_average", "degrade_test_only"]),
    ("scenarios", &["scenario"]),
    ("run", &["jobs", "output"]),
];

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as a number"))
}

fn parse_bounds(value: &str) -> std::result::Result<Bounds, String> {
    let parts: Vec<&str> = list(value).collect();
    let (lo, hi) = match parts.as_slice() {
        [v] => (parse_num(v)?, parse_num(v)?),
        [a, b] => (parse_num(a)?, parse_num(b)?),
        _ => return Err(format!("expected `lo, hi`, got {value:?}")),
    };
    if !(f64::is_finite(lo) && f64::is_finite(hi) && lo <= hi) {
        return Err(format!("empty range [{lo}, {hi}]"));
    }
    Ok(Bounds::new(lo, hi))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(v: T) -> std::result::Result<T, String> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(format!("value must be positive, got {v}"))
    }
}

fn apply_key(
    cfg: &mut ExperimentConfig,
    scenarios: &mut Vec<DegradationSpec>,
    key: &str,
    value: &str,
) -> std::result::Result<(), String> {
    let g = &mut cfg.grid;
    let t = &mut cfg.train;
    match key {
        "episodes" => cfg.episodes = parse_num(value)?,
        "seed" => cfg.seed = parse_num(value)?,
        "nominal_voltage_kv" => g.nominal_voltage_kv = positive(parse_num(value)?)?,
        "frequency_hz" => g.frequency_hz = positive(parse_num(value)?)?,
        "base_mva" => g.base_mva = positive(parse_num(value)?)?,
        "line_length_km" => g.line_length_km = parse_bounds(value)?,
        "line_impedance_ohm_per_km" => g.line_impedance_ohm_per_km = positive(parse_num(value)?)?,
        "line_angle_deg" => g.line_angle_deg = parse_bounds(value)?,
        "source_impedance_pu" => g.source_impedance_pu = parse_bounds(value)?,
        "source_angle_deg" => g.source_angle_deg = parse_bounds(value)?,
        "k0" => g.k0 = parse_bounds(value)?,
        "load_level" => g.load_level = parse_bounds(value)?,
        "load_angle_deg" => g.load_angle_deg = parse_bounds(value)?,
        "bus_voltage_pu" => g.bus_voltage_pu = parse_bounds(value)?,
        "bus_angle_deg" => g.bus_angle_deg = parse_bounds(value)?,
        "fault_duration_s" => g.fault_duration_s = parse_bounds(value)?,
        "fault_resistance_pu" => g.fault_resistance_pu = parse_bounds(value)?,
        "dc_time_constant_s" => g.dc_time_constant_s = parse_bounds(value)?,
        "attenuation" => g.attenuation = parse_bounds(value)?,
        "clearing_time_constant_s" => g.clearing_time_constant_s = positive(parse_num(value)?)?,
        "snr_db" => g.snr_db = positive(parse_num(value)?)?,
        "hidden" => {
            let h = list(value)
                .map(|v| parse_num::<usize>(v).and_then(positive))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if h.is_empty() {
                return Err("hidden needs at least one width".into());
            }
            t.hidden = h;
        }
        "learning_rate" => t.adam.learning_rate = positive(parse_num(value)?)?,
        "beta1" => t.adam.beta1 = parse_num(value)?,
        "beta2" => t.adam.beta2 = parse_num(value)?,
        "epsilon" => t.adam.epsilon = positive(parse_num(value)?)?,
        "batch_size" => t.batch_size = positive(parse_num(value)?)?,
        "max_epochs" => t.max_epochs = positive(parse_num(value)?)?,
        "patience" => t.patience = positive(parse_num(value)?)?,
        "validation_fraction" => {
            let v: f64 = parse_num(value)?;
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("validation_fraction must lie in (0, 1), got {v}"));
            }
            t.validation_fraction = v;
        }
        "folds" => cfg.folds = parse_num(value)?,
        "tasks" => {
            let tasks = list(value)
                .map(|v| Task::from_code(v).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if tasks.is_empty() {
                return Err("tasks needs FC and/or FL".into());
            }
            cfg.tasks = tasks;
        }
        "f1_average" => cfg.f1_average = value.parse().map_err(|e: Error| e.to_string())?,
        "degrade_test_only" => cfg.degrade_test_only = parse_bool(value)?,
        "scenario" => {
            for s in list(value) {
                let spec = DegradationSpec::parse(s).map_err(|e| match e {
                    Error::Parameter(m) => m,
                    other => other.to_string(),
                })?;
                scenarios.push(spec);
            }
        }
        "jobs" => cfg.jobs = parse_num(value)?,
        "output" => cfg.output = Some(PathBuf::from(value)),
        _ => unreachable!("key table and handler disagree on {key}"),
    }
    Ok(())
}

/// Baseline first, then the remaining scenarios in order, without repeats.
fn normalize_scenarios(specs: &[DegradationSpec]) -> Vec<DegradationSpec> {
    let mut out = vec![DegradationSpec::None];
    for s in specs {
        if !out.contains(s) {
            out.push(*s);
        }
    }
    out
}

/// Parse the line-oriented `key = value` format with optional `[section]`
/// headers and `#` comments. Keys before any header may come from any section.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut scenarios = Vec::new();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Config {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header {line:?}")))?
                .trim();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| err(format!("unknown section [{name}]")))?,
            );
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let known = SECTIONS
            .iter()
            .filter(|(s, _)| section.is_none_or(|cur| cur == *s))
            .any(|(_, keys)| keys.contains(&key));
        if !known {
            return Err(err(match section {
                Some(s) => format!("unknown key {key:?} in [{s}]"),
                None => format!("unknown key {key:?}"),
            }));
        }
        apply_key(&mut cfg, &mut scenarios, key, value).map_err(err)?;
    }
    if !scenarios.is_empty() {
        cfg.scenarios = normalize_scenarios(&scenarios);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a config file; `GRIDPROBE_SEED` overrides the seed.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut cfg = parse_config(&fs::read_to_string(path)?)?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| Error::Config {
            line: 0,
            message: format!("{SEED_ENV}={v:?} is not an unsigned integer"),
        })?;
    }
    Ok(cfg)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub episodes: usize,
    pub dataset: PathBuf,
    pub sidecar: PathBuf,
}

/// Generate the configured dataset into a container plus CSV sidecar.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let layout = build_channel_layout();
    let sidecar = sidecar_path(out);
    let mut writer = DatasetWriter::create(
        out,
        cfg.grid.sample_rate_hz as u32,
        CHANNEL_COUNT as u32,
        cfg.episodes as u32,
    )?;
    let mut meta = SidecarWriter::create(&sidecar)?;
    let pool = thread_pool(cfg.jobs)?;
    let n = cfg.episodes as u64;
    let mut start = 0;
    while start < n {
        let end = (start + GENERATE_CHUNK).min(n);
        let chunk = pool.install(|| generate_range(&cfg.grid, &layout, start..end, cfg.seed))?;
        for ep in &chunk {
            writer.write_episode(ep)?;
            meta.write_episode(ep)?;
        }
        log::info!("generated episodes {start}..{end} of {n}");
        start = end;
    }
    writer.finish()?;
    meta.finish()?;
    Ok(GenerateSummary {
        episodes: cfg.episodes,
        dataset: out.to_path_buf(),
        sidecar,
    })
}

/// Window every episode of a dataset container.
pub fn load_windows(dataset: &Path) -> Result<Vec<Window>> {
    let reader = DatasetReader::open(dataset)?;
    let mut windows = Vec::new();
    for ep in reader {
        windows.extend(episode_windows(&ep?));
    }
    Ok(windows)
}

/// One per-fold result row.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    pub spec: DegradationSpec,
    pub task: Task,
    pub fold: usize,
    pub value: f64,
    pub seed: u64,
}

type FoldKey = (DegradationSpec, Task, usize);

fn spec_from_columns(kind: &str, param: &str) -> Result<DegradationSpec> {
    if param.is_empty() {
        DegradationSpec::parse(kind)
    } else {
        DegradationSpec::parse(&format!("{kind}:{param}"))
    }
}

fn fold_record(row: &FoldRow) -> [String; 7] {
    [
        row.spec.kind().to_string(),
        row.spec.param(),
        row.task.code().to_string(),
        row.fold.to_string(),
        row.task.metric_name().to_string(),
        format!("{}", row.value),
        row.seed.to_string(),
    ]
}

/// Per-fold rows of a results directory; missing file means no rows.
pub fn read_fold_rows(dir: &Path) -> Result<Vec<FoldRow>> {
    let path = dir.join(FOLDS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        // a torn final line from an interrupted run is dropped
        if rec.len() != FOLD_HEADER.len() {
            continue;
        }
        let parsed = (|| -> Result<FoldRow> {
            let task = Task::from_code(&rec[2])?;
            let bad = |what: &str| Error::Format(format!("{}: bad {what} {:?}", path.display(), rec));
            Ok(FoldRow {
                spec: spec_from_columns(&rec[0], &rec[1])?,
                task,
                fold: rec[3].parse().map_err(|_| bad("fold"))?,
                value: rec[5].parse().map_err(|_| bad("value"))?,
                seed: rec[6].parse().map_err(|_| bad("seed"))?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(e) => log::warn!("skipping unreadable result row: {e}"),
        }
    }
    Ok(rows)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<I, R>(header: &[&str], records: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Aggregate the completed (scenario, task) pairs, in config order.
pub fn aggregate(
    rows: &BTreeMap<FoldKey, FoldRow>,
    scenarios: &[DegradationSpec],
    tasks: &[Task],
    folds: usize,
) -> Result<Vec<ScenarioResult>> {
    let mut out = Vec::new();
    for &task in tasks {
        let collect = |spec: DegradationSpec| -> Option<Vec<f64>> {
            (0..folds)
                .map(|f| rows.get(&(spec, task, f)).map(|r| r.value))
                .collect()
        };
        let baseline = collect(DegradationSpec::None)
            .map(|v| ScenarioResult::from_folds(DegradationSpec::None, task, v))
            .transpose()?;
        for &spec in scenarios {
            let Some(values) = collect(spec) else { continue };
            let mut r = ScenarioResult::from_folds(spec, task, values)?;
            if let Some(b) = &baseline {
                if b.mean != 0.0 {
                    r = r.with_baseline(b.mean)?;
                }
            }
            out.push(r);
        }
    }
    let order = |r: &ScenarioResult| {
        (
            scenarios.iter().position(|s| *s == r.spec).unwrap_or(usize::MAX),
            tasks.iter().position(|t| *t == r.task).unwrap_or(usize::MAX),
        )
    };
    out.sort_by_key(order);
    Ok(out)
}

fn aggregate_record(r: &ScenarioResult) -> [String; 6] {
    [
        r.spec.kind().to_string(),
        r.spec.param(),
        r.task.code().to_string(),
        format!("{}", r.mean),
        format!("{}", r.std),
        r.delta_pct.map(|d| format!("{d}")).unwrap_or_default(),
    ]
}

fn fingerprint(cfg: &ExperimentConfig, dataset: &Path) -> Result<String> {
    let bytes = fs::read(dataset)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::new();
    for b in &digest[..16] {
        write!(hex, "{b:02x}").expect("writing to a String");
    }
    Ok(format!(
        "dataset_sha256={hex}\nseed={}\nfolds={}\nmode={:?}\nf1_average={:?}\ntrain={}\n",
        cfg.seed,
        cfg.folds,
        cfg.eval_config().mode,
        cfg.f1_average,
        cfg.train.canonical()
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub computed: usize,
    pub reused: usize,
    pub results: Vec<ScenarioResult>,
}

struct Appender {
    file: fs::File,
}

impl Appender {
    fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            file.write_all(&csv_bytes(&FOLD_HEADER, std::iter::empty::<[&str; 0]>())?)?;
        }
        Ok(Appender { file })
    }

    fn append(&mut self, row: &FoldRow) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(fold_record(row))?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        self.file.write_all(&bytes)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Run the scenario matrix on a dataset, resuming from any rows already in
/// `out_dir`. Baseline runs first; aggregates are rewritten after every
/// scenario and the per-fold file is rewritten in canonical order at the end.
pub fn cmd_run(cfg: &ExperimentConfig, dataset: &Path, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    if !dataset.exists() {
        return Err(Error::MissingInput(dataset.to_path_buf()));
    }
    fs::create_dir_all(out_dir)?;
    let fp = fingerprint(cfg, dataset)?;
    let fp_path = out_dir.join(FINGERPRINT_FILE);
    if fp_path.exists() {
        if fs::read_to_string(&fp_path)? != fp {
            return Err(Error::Config {
                line: 0,
                message: format!(
                    "{} holds results of a different configuration or dataset",
                    out_dir.display()
                ),
            });
        }
    } else {
        fs::write(&fp_path, &fp)?;
    }

    let windows = load_windows(dataset)?;
    let n_episodes = windows
        .iter()
        .map(|w| w.episode_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if n_episodes < MIN_EPISODES.max(5 * cfg.folds) {
        return Err(Error::param(format!(
            "dataset has {n_episodes} usable episodes; need at least {}",
            MIN_EPISODES.max(5 * cfg.folds)
        )));
    }
    let experiment = Experiment::new(&windows, build_channel_layout(), cfg.eval_config())?;
    let scenarios = normalize_scenarios(&cfg.scenarios);

    let mut done: BTreeMap<FoldKey, FoldRow> = BTreeMap::new();
    for r in read_fold_rows(out_dir)? {
        if r.fold < cfg.folds {
            done.insert((r.spec, r.task, r.fold), r);
        }
    }
    let reused = scenarios
        .iter()
        .flat_map(|&s| cfg.tasks.iter().flat_map(move |&t| (0..cfg.folds).map(move |f| (s, t, f))))
        .filter(|k| done.contains_key(k))
        .count();

    let pool = thread_pool(cfg.jobs)?;
    let appender = Mutex::new(Appender::open(&out_dir.join(FOLDS_FILE))?);
    let mut computed = 0;
    for &spec in &scenarios {
        let pending: Vec<(Task, usize)> = cfg
            .tasks
            .iter()
            .flat_map(|&t| (0..cfg.folds).map(move |f| (t, f)))
            .filter(|&(t, f)| !done.contains_key(&(spec, t, f)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        log::info!("scenario {spec}: {} fold jobs", pending.len());
        let data = experiment.degrade(&spec)?;
        let rows = pool.install(|| {
            pending
                .par_iter()
                .map(|&(task, fold)| {
                    let o = experiment.run_fold(&spec, &data, task, fold)?;
                    let row = FoldRow {
                        spec,
                        task,
                        fold,
                        value: o.value,
                        seed: o.seed,
                    };
                    appender
                        .lock()
                        .expect("appender lock poisoned")
                        .append(&row)?;
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        computed += rows.len();
        for r in rows {
            done.insert((r.spec, r.task, r.fold), r);
        }
        let results = aggregate(&done, &scenarios, &cfg.tasks, cfg.folds)?;
        write_atomic(
            &out_dir.join(AGGREGATE_FILE),
            &csv_bytes(&AGGREGATE_HEADER, results.iter().map(aggregate_record))?,
        )?;
    }
    drop(appender);

    let results = aggregate(&done, &scenarios, &cfg.tasks, cfg.folds)?;
    write_atomic(
        &out_dir.join(AGGREGATE_FILE),
        &csv_bytes(&AGGREGATE_HEADER, results.iter().map(aggregate_record))?,
    )?;
    let done = &done;
    let ordered: Vec<&FoldRow> = scenarios
        .iter()
        .flat_map(|&s| cfg.tasks.iter().map(move |&t| (s, t)))
        .flat_map(|(s, t)| (0..cfg.folds).filter_map(move |f| done.get(&(s, t, f))))
        .collect();
    write_atomic(
        &out_dir.join(FOLDS_FILE),
        &csv_bytes(&FOLD_HEADER, ordered.into_iter().map(fold_record))?,
    )?;
    Ok(RunSummary {
        computed,
        reused,
        results,
    })
}

/// One row of an aggregate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub spec: DegradationSpec,
    pub task: Task,
    pub mean: f64,
    pub std: f64,
    pub delta_pct: Option<f64>,
}

pub fn read_aggregate(dir: &Path) -> Result<Vec<AggregateRow>> {
    let path = dir.join(AGGREGATE_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("{}: malformed row {:?}", path.display(), rec));
        if rec.len() != AGGREGATE_HEADER.len() {
            return Err(bad());
        }
        out.push(AggregateRow {
            spec: spec_from_columns(&rec[0], &rec[1])?,
            task: Task::from_code(&rec[2])?,
            mean: rec[3].parse().map_err(|_| bad())?,
            std: rec[4].parse().map_err(|_| bad())?,
            delta_pct: if rec[5].is_empty() {
                None
            } else {
                Some(rec[5].parse().map_err(|_| bad())?)
            },
        });
    }
    Ok(out)
}

fn find(rows: &[AggregateRow], spec: DegradationSpec, task: Task) -> Option<&AggregateRow> {
    rows.iter().find(|r| r.spec == spec && r.task == task)
}

/// Markdown table: factor, resulting frequency, F1 and MAE with std.
pub fn downsampling_table(rows: &[AggregateRow]) -> String {
    let mut specs = vec![(DegradationSpec::None, 1u32)];
    let mut factors: Vec<u32> = rows
        .iter()
        .filter_map(|r| match r.spec {
            DegradationSpec::ReducedRate(k) => Some(k),
            _ => None,
        })
        .collect();
    factors.sort_unstable();
    factors.dedup();
    specs.extend(factors.into_iter().map(|k| (DegradationSpec::ReducedRate(k), k)));

    let cell = |spec, task, digits: usize| match find(rows, spec, task) {
        Some(r) => format!("{:.*} ± {:.*}", digits, r.mean, digits, r.std),
        None => "–".to_string(),
    };
    let mut s = String::from("| Factor | Frequency | F1-score | MAE (% of line) |\n|---|---|---|---|\n");
    for (spec, k) in specs {
        if find(rows, spec, Task::Classification).is_none() && find(rows, spec, Task::Localization).is_none() {
            continue;
        }
        let label = if k == 1 { "×1 (baseline)".to_string() } else { format!("×{k}") };
        let freq = 6400.0 / k as f64;
        writeln!(
            s,
            "| {label} | {freq} Hz | {} | {} |",
            cell(spec, Task::Classification, 3),
            cell(spec, Task::Localization, 2)
        )
        .expect("writing to a String");
    }
    s
}

fn summary_table(rows: &[AggregateRow]) -> String {
    let mut s = String::from("| Scenario | Task | Mean | Std | Δ vs baseline |\n|---|---|---|---|---|\n");
    for r in rows {
        let delta = r.delta_pct.map(|d| format!("{d:+.1} %")).unwrap_or_else(|| "–".into());
        writeln!(
            s,
            "| {} | {} {} | {:.4} | {:.4} | {delta} |",
            r.spec,
            r.task.code(),
            r.task.metric_name(),
            r.mean,
            r.std
        )
        .expect("writing to a String");
    }
    s
}

/// Plot-ready CSV files, one per scenario family.
pub const PLOT_FILES: [(&str, &[&str]); 6] = [
    ("plot_channel_loss.csv", &["missing_voltage", "missing_current"]),
    ("plot_downsampling.csv", &["rate"]),
    ("plot_relay_failure.csv", &["relay"]),
    ("plot_substation_failure.csv", &["substation"]),
    ("plot_phase_failure.csv", &["phase"]),
    ("plot_temporal_loss.csv", &["temporal"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub downsampling_rows: usize,
}

/// Render tables and plot CSVs from a results directory.
pub fn cmd_report(results_dir: &Path, out_dir: &Path) -> Result<ReportSummary> {
    let rows = read_aggregate(results_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let table = downsampling_table(&rows);
    let downsampling_rows = table.lines().count().saturating_sub(2);
    let path = out_dir.join("downsampling.md");
    fs::write(&path, format!("# Impact of downsampling on FC and FL\n\n{table}"))?;
    files.push(path);

    let path = out_dir.join("summary.md");
    fs::write(&path, format!("# Scenario results\n\n{}", summary_table(&rows)))?;
    files.push(path);

    for (name, kinds) in PLOT_FILES {
        let recs = rows.iter().filter(|r| kinds.contains(&r.spec.kind())).map(|r| {
            [
                r.spec.kind().to_string(),
                r.spec.param(),
                r.task.code().to_string(),
                format!("{}", r.mean),
                format!("{}", r.std),
                r.delta_pct.map(|d| format!("{d}")).unwrap_or_default(),
            ]
        });
        let path = out_dir.join(name);
        fs::write(&path, csv_bytes(&["scenario", "param", "task", "mean", "std", "delta_pct"], recs)?)?;
        files.push(path);
    }
    Ok(ReportSummary {
        files,
        downsampling_rows,
    })
}
