use gridprobe_core::model::*;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

/// Nonzero biases keep pre-activations off the ReLU kink at exactly zero.
fn jitter_biases(p: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for layer in &mut p.layers {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    }
}

fn loss_at(p: &ModelParams, x: ArrayView2<f64>, t: Targets) -> f64 {
    loss_and_grad(p, x, t).unwrap().0
}

/// Analytic gradients against central differences over every parameter.
fn check_gradients(p: &ModelParams, x: ArrayView2<f64>, t: Targets) -> f64 {
    let (_, grads) = loss_and_grad(p, x, t).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..p.layers.len() {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for idx in 0..p.layers[l].weights.len() {
            let (i, j) = (idx / p.layers[l].weights.ncols(), idx % p.layers[l].weights.ncols());
            let mut plus = p.clone();
            plus.layers[l].weights[[i, j]] += STEP;
            let mut minus = p.clone();
            minus.layers[l].weights[[i, j]] -= STEP;
            numeric.push((loss_at(&plus, x, t) - loss_at(&minus, x, t)) / (2.0 * STEP));
            analytic.push(grads[l].weights[[i, j]]);
        }
        for j in 0..p.layers[l].bias.len() {
            let mut plus = p.clone();
            plus.layers[l].bias[j] += STEP;
            let mut minus = p.clone();
            minus.layers[l].bias[j] -= STEP;
            numeric.push((loss_at(&plus, x, t) - loss_at(&minus, x, t)) / (2.0 * STEP));
            analytic.push(grads[l].bias[j]);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / (norm_a + norm_n).max(1e-12));
    }
    worst
}

#[test]
fn gradients_match_finite_differences_for_both_heads() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_batch(&mut rng, 8, 6);

        let mut fc = init_mlp(&[6, 5, 4, 11], Task::Classification, seed).unwrap();
        jitter_biases(&mut fc, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..11)).collect();
        let err = check_gradients(&fc, x.view(), Targets::Classes(&labels));
        assert!(err < 1e-4, "FC seed {seed}: relative error {err}");

        let mut fl = init_mlp(&[6, 5, 4, 1], Task::Localization, seed).unwrap();
        jitter_biases(&mut fl, &mut rng);
        let out = forward(&fl, x.view()).unwrap().output;
        // keep every residual well away from the kink of the absolute value
        let ys: Vec<f64> = out
            .column(0)
            .iter()
            .map(|&o| if rng.random_bool(0.5) { o + rng.random_range(0.2..1.0) } else { o - rng.random_range(0.2..1.0) })
            .collect();
        let err = check_gradients(&fl, x.view(), Targets::Values(&ys));
        assert!(err < 1e-4, "FL seed {seed}: relative error {err}");
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = init_mlp(&[20, 16, 8, 11], Task::Classification, 5).unwrap();
    let x = random_batch(&mut rng, 64, 20) * 30.0;
    let out = forward(&p, x.view()).unwrap().output;
    for row in out.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn first_adam_step_moves_each_coordinate_by_the_learning_rate() {
    let mut p = init_mlp(&[4, 3, 11], Task::Classification, 1).unwrap();
    let before = p.clone();
    let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
    let (_, g) = loss_and_grad(&p, x.view(), Targets::Classes(&[0, 1, 7, 0, 10])).unwrap();
    let cfg = AdamConfig::default();
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &g, &mut st, &cfg).unwrap();
    for ((a, b), gl) in p.layers.iter().zip(&before.layers).zip(&g) {
        for ((&new, &old), &gv) in a.weights.iter().zip(&b.weights).zip(&gl.weights) {
            if gv.abs() > 1e-6 {
                let step = old - new;
                assert!((step - cfg.learning_rate * gv.signum()).abs() < 1e-3 * cfg.learning_rate);
            }
        }
    }
}

fn separable(n: usize, offset: u64) -> (Array2<f64>, Vec<usize>, Vec<Option<f64>>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(offset);
    let classes: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((n, 10), |(i, j)| {
        let centre = if j == classes[i] * 3 { 2.0 } else { 0.0 };
        centre + rng.random_range(-0.3..0.3)
    });
    let targets = classes.iter().map(|&c| Some(0.2 + 0.3 * c as f64)).collect();
    let eps = (0..n as u64).map(|i| offset + i).collect();
    (x, classes, targets, eps)
}

#[test]
fn separable_toy_is_learned_within_fifty_epochs() {
    let (xt, ct, tt, et) = separable(90, 0);
    let (xv, cv, tv, ev) = separable(30, 1000);
    let train_set = SampleSet::dense(xt.view(), ct.clone(), tt, et).unwrap();
    let val_set = SampleSet::dense(xv.view(), cv, tv, ev).unwrap();
    let mut cfg = TrainConfig { hidden: vec![8, 8], batch_size: 16, max_epochs: 50, seed: 2, ..TrainConfig::default() };
    cfg.adam.learning_rate = 1e-2;
    let (p, h) = train(&train_set, &val_set, &cfg, Task::Classification).unwrap();
    assert!(h.epochs.len() <= 50);
    let Predictions::Classes(pred) = predict(&p, &train_set).unwrap() else { panic!("FC head") };
    assert_eq!(pred, ct);

    let again = train(&train_set, &val_set, &cfg, Task::Classification).unwrap();
    assert_eq!(again.0, p);
}

struct Replay {
    losses: Vec<f64>,
    saved: usize,
}

impl EpochRunner for Replay {
    fn run_epoch(&mut self, epoch: usize) -> gridprobe_core::Result<(f64, f64)> {
        Ok((0.0, self.losses[epoch - 1]))
    }

    fn snapshot(&mut self, epoch: usize) {
        self.saved = epoch;
    }
}

proptest! {
    #[test]
    fn early_stopping_matches_reference(
        losses in prop::collection::vec(0.0f64..10.0, 1..120),
        patience in 1usize..30,
    ) {
        let max_epochs = losses.len();
        // reference: walk the sequence by hand
        let (mut best, mut best_epoch, mut ran, mut stopped) = (f64::INFINITY, 0, 0, false);
        for (i, &l) in losses.iter().enumerate() {
            let epoch = i + 1;
            ran = epoch;
            if l < best {
                best = l;
                best_epoch = epoch;
            } else if epoch - best_epoch >= patience {
                stopped = true;
                break;
            }
        }
        let mut r = Replay { losses: losses.clone(), saved: 0 };
        let h = run_epochs(max_epochs, patience, &mut r).unwrap();
        prop_assert_eq!(h.epochs.len(), ran);
        prop_assert_eq!(h.best_epoch, best_epoch);
        prop_assert_eq!(r.saved, best_epoch);
        prop_assert_eq!(h.stopped_early, stopped);
    }
}
