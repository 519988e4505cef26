//! End-to-end acceptance suite: six exact property checks and six trend
//! checks on the default 300-episode dataset. Prints one line per criterion.
//!
//! Set `GRIDPROBE_ACCEPTANCE_DIR` to keep the trend-suite dataset and results
//! between invocations; interrupted runs then resume.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridprobe_core::degrade::*;
use gridprobe_core::eval::*;
use gridprobe_core::grid_sim::*;
use gridprobe_core::model::*;
use gridprobe_core::preprocess::*;
use gridprobe_core::runner::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUDGET_CPU_MIN: f64 = 30.0;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, result: Result<String, String>) -> Outcome {
    let (pass, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let line = format!(
        "criterion {id:>2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    Outcome { id, name, pass, detail }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn windowing() -> Result<String, String> {
    for len in WINDOW_LEN..=1024 {
        let mut brute = 0;
        let mut s = 0;
        while s + WINDOW_LEN <= len {
            brute += 1;
            s += WINDOW_STRIDE;
        }
        ensure(window_count(len) == brute, || format!("length {len}: {} vs {brute}", window_count(len)))?;
    }
    let layout = build_channel_layout();
    let eps = generate_dataset(&GridConfig::default(), &layout, 3, 77).map_err(|e| e.to_string())?;
    for ep in &eps {
        let crop = crop_episode(ep);
        let ws = segment_windows(&crop, ep);
        ensure(crop.len() == 1024 && ws.len() == 23, || format!("crop {} gave {} windows", crop.len(), ws.len()))?;
        ensure(ws.iter().all(|w| w.tensor.dim() == (320, 48)), || "window shape".into())?;
    }
    Ok("1024-sample crop -> 23 windows of 320x48; counts match enumeration for 320..1024".into())
}

fn oracle_mask(spec: &DegradationSpec) -> BTreeSet<usize> {
    let relays_at = |s: usize| match s {
        1 => 1..=2,
        2 => 3..=6,
        _ => 7..=8,
    };
    let mut set = BTreeSet::new();
    for relay in 1..=8usize {
        for (q, voltage) in [(0, false), (3, true)] {
            for phase in 0..3 {
                let hit = match *spec {
                    DegradationSpec::MissingVoltage => voltage,
                    DegradationSpec::MissingCurrent => !voltage,
                    DegradationSpec::RelayFailure(r) => r == relay,
                    DegradationSpec::SubstationFailure(s) => relays_at(s).contains(&relay),
                    DegradationSpec::PhaseFailure(p) => p.index() == phase,
                    _ => false,
                };
                if hit {
                    set.insert((relay - 1) * 6 + q + phase);
                }
            }
        }
    }
    set
}

fn degradation() -> Result<String, String> {
    let layout = build_channel_layout();
    let ones = Window {
        episode_id: 1,
        start_sample: 64,
        tensor: Array2::from_elem((320, 48), 1.0),
        fc_label: FaultType::AB,
        fl_target: Some(0.5),
    };
    for spec in DegradationSpec::default_matrix() {
        let out = degraded(std::slice::from_ref(&ones), &spec, &layout, 5).map_err(|e| e.to_string())?;
        let cols: BTreeSet<usize> = (0..48).filter(|&c| out[0].tensor.column(c).iter().all(|&v| v == 0.0)).collect();
        let rows = (0..320).filter(|&t| out[0].tensor.row(t).iter().all(|&v| v == 0.0)).count();
        match spec {
            DegradationSpec::TemporalLoss(ms) => {
                ensure(rows == block_samples(ms) && cols.is_empty(), || format!("{spec}: {rows} zero columns"))?
            }
            _ => ensure(cols == oracle_mask(&spec), || format!("{spec}: zeroed {cols:?}"))?,
        }
    }
    let counts = [
        (DegradationSpec::MissingVoltage, 24),
        (DegradationSpec::PhaseFailure(Phase::B), 16),
        (DegradationSpec::RelayFailure(4), 6),
    ];
    for (spec, n) in counts {
        ensure(oracle_mask(&spec).len() == n, || format!("{spec} expected {n}"))?;
    }
    ensure(block_samples(40) == 256, || "40 ms block".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let matrix = DegradationSpec::default_matrix();
    for _ in 0..1000 {
        let spec = matrix[rng.random_range(0..matrix.len())];
        let w = Window {
            episode_id: rng.random_range(0..300),
            start_sample: 32 * rng.random_range(0..23),
            tensor: Array2::from_shape_simple_fn((320, 48), || rng.random_range(-20.0f32..20.0)),
            fc_label: FaultType::ABG,
            fl_target: Some(0.3),
        };
        let seed = rng.random();
        let once = degraded(std::slice::from_ref(&w), &spec, &layout, seed).map_err(|e| e.to_string())?;
        let twice = degraded(&once, &spec, &layout, seed).map_err(|e| e.to_string())?;
        ensure(once[0].tensor.dim() == (320, 48), || format!("{spec}: shape changed"))?;
        ensure(once == twice, || format!("{spec}: not idempotent"))?;
    }
    Ok("zeroed sets match the layout oracle for all 27 variants; idempotent and shape-preserving on 1000 inputs".into())
}

fn gradients() -> Result<String, String> {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-1.5..1.5));
        for task in [Task::Classification, Task::Localization] {
            let mut p = init_mlp(&[6, 5, 4, task.outputs()], task, seed).map_err(|e| e.to_string())?;
            for l in &mut p.layers {
                l.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
            }
            let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..11)).collect();
            let out = forward(&p, x.view()).map_err(|e| e.to_string())?.output;
            let ys: Vec<f64> = out.column(0).iter().map(|&o| o + if rng.random_bool(0.5) { 0.5 } else { -0.5 }).collect();
            let targets = match task {
                Task::Classification => Targets::Classes(&labels),
                Task::Localization => Targets::Values(&ys),
            };
            let loss = |q: &ModelParams| loss_and_grad(q, x.view(), targets).unwrap().0;
            let (_, g) = loss_and_grad(&p, x.view(), targets).map_err(|e| e.to_string())?;
            for l in 0..p.layers.len() {
                let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
                for idx in 0..p.layers[l].weights.len() + p.layers[l].bias.len() {
                    let nw = p.layers[l].weights.len();
                    let cols = p.layers[l].weights.ncols();
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    let analytic = if idx < nw {
                        plus.layers[l].weights[[idx / cols, idx % cols]] += step;
                        minus.layers[l].weights[[idx / cols, idx % cols]] -= step;
                        g[l].weights[[idx / cols, idx % cols]]
                    } else {
                        plus.layers[l].bias[idx - nw] += step;
                        minus.layers[l].bias[idx - nw] -= step;
                        g[l].bias[idx - nw]
                    };
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                    d2 += (analytic - numeric).powi(2);
                    a2 += analytic * analytic;
                    n2 += numeric * numeric;
                }
                let rel: f64 = d2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:.2e}"))?;
    Ok(format!("worst relative error {worst:.2e} over 20 toy networks, both heads"))
}

fn metrics() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..400);
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..11)).collect();
        let pred: Vec<usize> = labels.iter().map(|&l| if rng.random_bool(0.7) { l } else { rng.random_range(0..11) }).collect();
        let mut brute = 0.0;
        for c in 0..11 {
            let tp = (0..len).filter(|&i| pred[i] == c && labels[i] == c).count() as f64;
            let fp = (0..len).filter(|&i| pred[i] == c && labels[i] != c).count() as f64;
            let fn_ = (0..len).filter(|&i| pred[i] != c && labels[i] == c).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            brute += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        brute /= 11.0;
        let m = confusion_matrix(&pred, &labels, 11).map_err(|e| e.to_string())?;
        worst = worst.max((f1_macro(&m) - brute).abs());

        let yp: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let yt: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..=0.99)).collect();
        let brute_mae = 100.0 * (0..len).map(|i| (yp[i] - yt[i]).abs()).sum::<f64>() / len as f64;
        worst = worst.max((mae_percent(&yp, &yt).map_err(|e| e.to_string())? - brute_mae).abs());
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e} over 1000 instances each"))
}

fn cv_hygiene(windows: &[Window], cfg: &ExperimentConfig) -> Result<String, String> {
    let mut eval = cfg.eval_config();
    eval.train = TrainConfig { hidden: vec![2], batch_size: 512, max_epochs: 1, ..eval.train };
    let exp = Experiment::new(windows, build_channel_layout(), eval).map_err(|e| e.to_string())?;
    let all: BTreeSet<u64> = windows.iter().map(|w| w.episode_id).collect();
    let mut tested = BTreeSet::new();
    let mut checked = 0;
    for task in [Task::Classification, Task::Localization] {
        for fold in 0..cfg.folds {
            let o = exp.run_fold(&DegradationSpec::None, windows, task, fold).map_err(|e| e.to_string())?;
            let (tr, va, te) = (&o.train_episodes, &o.validation_episodes, &o.test_episodes);
            for a in tr {
                ensure(!va.contains(a) && !te.contains(a), || format!("episode {a} leaks from training"))?;
            }
            for a in va {
                ensure(!te.contains(a), || format!("episode {a} in validation and test"))?;
            }
            ensure(&(&(tr | va) | te) == &all, || format!("fold {fold} does not cover every episode"))?;
            if task == Task::Classification {
                ensure(tested.is_disjoint(te), || format!("fold {fold} reuses test episodes"))?;
                tested.extend(te.iter().copied());
            }
            checked += 1;
        }
    }
    ensure(tested == all, || "test folds do not cover the dataset".into())?;
    Ok(format!("{checked} fold splits on {} episodes, zero overlap", all.len()))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = "episodes = 25\nseed = 11\nhidden = 8\nbatch_size = 64\nmax_epochs = 2\nscenario = missing_voltage, rate:8, temporal:20\n";
    let cfg = parse_config(text).map_err(|e| e.to_string())?;
    let mut aggregates = Vec::new();
    for run in ["a", "b"] {
        let data = dir.path().join(format!("{run}.gpb"));
        cmd_generate(&cfg, &data).map_err(|e| e.to_string())?;
        let out = dir.path().join(run);
        cmd_run(&cfg, &data, &out).map_err(|e| e.to_string())?;
        aggregates.push(fs::read(out.join(AGGREGATE_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(aggregates[0] == aggregates[1], || "aggregate CSVs differ".into())?;
    Ok(format!("two end-to-end runs, identical {}-byte aggregate CSVs", aggregates[0].len()))
}

struct Trend {
    rows: Vec<AggregateRow>,
}

impl Trend {
    fn mean(&self, spec: DegradationSpec, task: Task) -> Result<f64, String> {
        self.rows
            .iter()
            .find(|r| r.spec == spec && r.task == task)
            .map(|r| r.mean)
            .ok_or_else(|| format!("no result for {spec} {}", task.code()))
    }

    fn delta(&self, spec: DegradationSpec, task: Task) -> Result<f64, String> {
        self.rows
            .iter()
            .find(|r| r.spec == spec && r.task == task)
            .and_then(|r| r.delta_pct)
            .ok_or_else(|| format!("no delta for {spec} {}", task.code()))
    }

    /// Baseline F1 minus scenario F1, in points.
    fn f1_drop(&self, spec: DegradationSpec) -> Result<f64, String> {
        Ok(100.0 * (self.mean(DegradationSpec::None, Task::Classification)? - self.mean(spec, Task::Classification)?))
    }
}

fn fc_scenarios() -> Vec<DegradationSpec> {
    let mut v = vec![DegradationSpec::None, DegradationSpec::MissingVoltage, DegradationSpec::MissingCurrent];
    v.extend([2, 4, 8, 16, 64].map(DegradationSpec::ReducedRate));
    v.extend(Phase::ALL.map(DegradationSpec::PhaseFailure));
    v.extend((1..=RELAY_COUNT).map(DegradationSpec::RelayFailure));
    v.extend([5, 10, 20].map(DegradationSpec::TemporalLoss));
    v
}

fn fl_scenarios() -> Vec<DegradationSpec> {
    let mut v = vec![DegradationSpec::None, DegradationSpec::MissingVoltage, DegradationSpec::MissingCurrent];
    v.extend([16, 32, 64].map(DegradationSpec::ReducedRate));
    v.extend((1..=SUBSTATION_COUNT).map(DegradationSpec::SubstationFailure));
    v
}

fn work_dir() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("GRIDPROBE_ACCEPTANCE_DIR") {
        Some(d) => {
            let p = PathBuf::from(d);
            fs::create_dir_all(&p).unwrap();
            (p, None)
        }
        None => {
            let t = tempfile::tempdir().unwrap();
            (t.path().to_path_buf(), Some(t))
        }
    }
}

/// Wall-clock seconds spent computing in `dir`, summed over invocations.
fn add_elapsed(dir: &Path, secs: f64) -> f64 {
    let path = dir.join("elapsed_s.txt");
    let before: f64 = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0.0);
    fs::write(&path, format!("{}", before + secs)).unwrap();
    before + secs
}

fn run_trend_suite(cfg: &ExperimentConfig, dir: &Path, data: &Path) -> Trend {
    let mut rows = Vec::new();
    for (task, scenarios, sub) in [
        (Task::Classification, fc_scenarios(), "fc"),
        (Task::Localization, fl_scenarios(), "fl"),
    ] {
        let mut c = cfg.clone();
        c.tasks = vec![task];
        c.scenarios = scenarios;
        let summary = cmd_run(&c, data, &dir.join(sub)).expect("trend-suite run");
        rows.extend(read_aggregate(&dir.join(sub)).expect("aggregate").into_iter());
        println!(
            "trend suite {}: {} fold trainings computed, {} reused",
            task.code(),
            summary.computed,
            summary.reused
        );
    }
    Trend { rows }
}

fn baseline_quality(t: &Trend) -> Result<String, String> {
    let f1 = t.mean(DegradationSpec::None, Task::Classification)?;
    let mae = t.mean(DegradationSpec::None, Task::Localization)?;
    let msg = format!("FC macro F1 {f1:.4} (>= 0.90), FL MAE {mae:.2} % (<= 15 %)");
    ensure(f1 >= 0.90 && mae <= 15.0, || msg.clone())?;
    Ok(msg)
}

fn voltage_vs_current(t: &Trend) -> Result<String, String> {
    let dv = t.delta(DegradationSpec::MissingVoltage, Task::Localization)?;
    let dc = t.delta(DegradationSpec::MissingCurrent, Task::Localization)?;
    let fv = t.f1_drop(DegradationSpec::MissingVoltage)?;
    let fc = t.f1_drop(DegradationSpec::MissingCurrent)?;
    let msg = format!(
        "FL MAE change: missing voltage {dv:+.1} %, missing current {dc:+.1} %; FC F1 drop {fv:.2} / {fc:.2} points"
    );
    ensure(dv > dc && dc > 20.0 && dv > 20.0 && fv < 5.0 && fc < 5.0, || msg.clone())?;
    Ok(msg)
}

fn downsampling(t: &Trend) -> Result<String, String> {
    let mut drops = Vec::new();
    for k in [2, 4, 8, 16] {
        drops.push(t.f1_drop(DegradationSpec::ReducedRate(k))?);
    }
    let d64 = t.f1_drop(DegradationSpec::ReducedRate(64))?;
    let maes: Vec<f64> = [16, 32, 64]
        .into_iter()
        .map(|k| t.mean(DegradationSpec::ReducedRate(k), Task::Localization))
        .collect::<Result<_, _>>()?;
    let msg = format!(
        "FC drop x2..x16 {:?} points, x64 {d64:.2} points; FL MAE x16/x32/x64 {:.2}/{:.2}/{:.2}",
        drops.iter().map(|d| (d * 100.0).round() / 100.0).collect::<Vec<_>>(),
        maes[0],
        maes[1],
        maes[2]
    );
    let small = drops.iter().all(|d| d.abs() <= 3.0);
    let monotone = maes.windows(2).all(|w| w[1] >= w[0] * (1.0 - 0.005));
    ensure(small && d64 >= 5.0 && monotone, || msg.clone())?;
    Ok(msg)
}

fn phase_loss(t: &Trend) -> Result<String, String> {
    let phase: Vec<f64> = Phase::ALL
        .into_iter()
        .map(|p| t.f1_drop(DegradationSpec::PhaseFailure(p)))
        .collect::<Result<_, _>>()?;
    let relay_max = (1..=RELAY_COUNT)
        .map(|r| t.f1_drop(DegradationSpec::RelayFailure(r)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let msg = format!(
        "FC drop phase A/B/C {:.2}/{:.2}/{:.2} points; largest relay-failure drop {relay_max:.2}",
        phase[0], phase[1], phase[2]
    );
    ensure(phase.iter().all(|&d| d >= 5.0 && d > relay_max), || msg.clone())?;
    Ok(msg)
}

fn temporal_loss(t: &Trend) -> Result<String, String> {
    let changes: Vec<f64> = [5, 10, 20]
        .into_iter()
        .map(|ms| t.f1_drop(DegradationSpec::TemporalLoss(ms)).map(|d| -d))
        .collect::<Result<_, _>>()?;
    let msg = format!(
        "FC F1 change 5/10/20 ms {:+.2}/{:+.2}/{:+.2} points",
        changes[0], changes[1], changes[2]
    );
    ensure(changes.iter().all(|c| c.abs() <= 2.0), || msg.clone())?;
    Ok(msg)
}

fn substation_centrality(t: &Trend) -> Result<String, String> {
    let d: Vec<f64> = (1..=SUBSTATION_COUNT)
        .map(|s| t.delta(DegradationSpec::SubstationFailure(s), Task::Localization))
        .collect::<Result<_, _>>()?;
    let msg = format!("FL MAE change S1/S2/S3 {:+.1}/{:+.1}/{:+.1} %", d[0], d[1], d[2]);
    ensure(d[1] > d[0] && d[1] > d[2], || msg.clone())?;
    Ok(msg)
}

#[test]
fn acceptance_criteria() {
    let cfg = ExperimentConfig::default();
    let mut results = vec![
        outcome(1, "windowing arithmetic", windowing()),
        outcome(2, "degradation exactness", degradation()),
        outcome(3, "gradient check", gradients()),
        outcome(4, "metric oracles", metrics()),
    ];

    let (dir, _guard) = work_dir();
    let data = dir.join("default.gpb");
    let start = Instant::now();
    if !data.exists() {
        cmd_generate(&cfg, &data).expect("dataset generation");
    }
    let windows = load_windows(&data).expect("windows");
    results.push(outcome(5, "CV hygiene", cv_hygiene(&windows, &cfg)));
    drop(windows);
    results.push(outcome(6, "determinism", determinism()));

    let trend = run_trend_suite(&cfg, &dir, &data);
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let elapsed = add_elapsed(&dir, start.elapsed().as_secs_f64());
    let cpu_min = elapsed * threads as f64 / 60.0;

    results.push(outcome(7, "baseline quality", baseline_quality(&trend)));
    results.push(outcome(8, "voltage vs current loss", voltage_vs_current(&trend)));
    results.push(outcome(9, "downsampling", downsampling(&trend)));
    results.push(outcome(10, "phase loss", phase_loss(&trend)));
    results.push(outcome(11, "temporal loss", temporal_loss(&trend)));
    results.push(outcome(12, "substation centrality", substation_centrality(&trend)));
    let budget = cpu_min <= BUDGET_CPU_MIN;
    println!(
        "trend suite runtime [{}]: {cpu_min:.1} CPU-minutes ({:.1} min wall on {threads} thread(s), budget {BUDGET_CPU_MIN})",
        if budget { "PASS" } else { "FAIL" },
        elapsed / 60.0
    );

    let failed: Vec<String> = results
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{} {} ({})", o.id, o.name, o.detail))
        .collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
    assert!(budget, "trend suite took {cpu_min:.1} CPU-minutes");
}
