use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid_sim::{CLASS_COUNT, LOC_MAX, LOC_MIN};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// 11-way softmax over fault types.
    Classification,
    /// Single linear output: fault location fraction.
    Localization,
}

impl Task {
    pub fn outputs(self) -> usize {
        match self {
            Task::Classification => CLASS_COUNT,
            Task::Localization => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Task::Classification => "FC",
            Task::Localization => "FL",
        }
    }

    pub fn from_code(s: &str) -> Result<Task> {
        match s {
            "FC" | "fc" => Ok(Task::Classification),
            "FL" | "fl" => Ok(Task::Localization),
            other => Err(Error::param(format!("unknown task {other:?}"))),
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Classification => "f1_macro",
            Task::Localization => "mae_percent",
        }
    }
}

/// One fully connected layer; `weights` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(other: &Layer) -> Self {
        Layer::zeros(other.weights.nrows(), other.weights.ncols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub task: Task,
    /// Layer widths including input and output, e.g. `[15360, 256, 128, 11]`.
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<Layer>;

impl ModelParams {
    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.sizes.len() != self.layers.len() + 1 {
            return Err(Error::contract("layer count does not match sizes"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.dim() != (self.sizes[i], self.sizes[i + 1])
                || l.bias.len() != self.sizes[i + 1]
            {
                return Err(Error::contract(format!("layer {i} has inconsistent shape")));
            }
        }
        if *self.sizes.last().unwrap() != self.task.outputs() {
            return Err(Error::contract("output width does not match task"));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
///
/// The production network is `[15360, h1, h2, out]`; smaller widths are
/// accepted so the same code can be checked on toy networks.
pub fn init_mlp(sizes: &[usize], task: Task, seed: u64) -> Result<ModelParams> {
    if sizes.len() < 2 {
        return Err(Error::param("an MLP needs at least input and output widths"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::param(format!("zero-width layer in {sizes:?}")));
    }
    if *sizes.last().unwrap() != task.outputs() {
        return Err(Error::param(format!(
            "{} head needs {} outputs, sizes end in {}",
            task.code(),
            task.outputs(),
            sizes.last().unwrap()
        )));
    }
    let mut rng = seed::rng(seed, &[0x1417]);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
            Layer {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(ModelParams {
        task,
        sizes: sizes.to_vec(),
        layers,
        seed,
    })
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-activation output of each hidden layer.
    pub hidden: Vec<Array2<f64>>,
    /// Final output: probabilities (FC) or raw scalars (FL).
    pub output: Array2<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn affine(x: &ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.weights);
    z += &layer.bias;
    z
}

pub fn forward(params: &ModelParams, x: ArrayView2<f64>) -> Result<ForwardCache> {
    if x.ncols() != params.input_width() {
        return Err(Error::contract(format!(
            "input width {} does not match model input {}",
            x.ncols(),
            params.input_width()
        )));
    }
    let n_layers = params.layers.len();
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(n_layers - 1);
    for layer in &params.layers[..n_layers - 1] {
        let mut z = match hidden.last() {
            Some(a) => affine(&a.view(), layer),
            None => affine(&x, layer),
        };
        relu_inplace(&mut z);
        hidden.push(z);
    }
    let last = &params.layers[n_layers - 1];
    let mut output = match hidden.last() {
        Some(a) => affine(&a.view(), last),
        None => affine(&x, last),
    };
    if params.task == Task::Classification {
        softmax_rows(&mut output);
    }
    Ok(ForwardCache { hidden, output })
}

/// Supervision for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }
}

/// Mean loss of a forward output against targets.
pub fn batch_loss(task: Task, output: &Array2<f64>, targets: Targets) -> Result<f64> {
    let n = output.nrows();
    if n == 0 || targets.len() != n {
        return Err(Error::contract(format!(
            "batch of {n} rows with {} targets",
            targets.len()
        )));
    }
    let total = match (task, targets) {
        (Task::Classification, Targets::Classes(labels)) => {
            let mut s = 0.0;
            for (row, &y) in output.rows().into_iter().zip(labels) {
                if y >= row.len() {
                    return Err(Error::contract(format!("class {y} out of range")));
                }
                s -= row[y].max(f64::MIN_POSITIVE).ln();
            }
            s
        }
        (Task::Localization, Targets::Values(ys)) => output
            .column(0)
            .iter()
            .zip(ys)
            .map(|(p, y)| (p - y).abs())
            .sum(),
        _ => return Err(Error::contract("targets do not match task")),
    };
    Ok(total / n as f64)
}

/// Mean cross-entropy (FC) or mean absolute error (FL) and its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    x: ArrayView2<f64>,
    targets: Targets,
) -> Result<(f64, Gradients)> {
    let cache = forward(params, x.view())?;
    let loss = batch_loss(params.task, &cache.output, targets)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {loss} on a batch of {} rows ({} head)",
            x.nrows(),
            params.task.code()
        )));
    }
    let n = x.nrows() as f64;

    // dL/dz at the output layer
    let mut delta = match targets {
        Targets::Classes(labels) => {
            let mut d = cache.output.clone();
            for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
                row[y] -= 1.0;
            }
            d / n
        }
        Targets::Values(ys) => {
            let mut d = Array2::zeros(cache.output.raw_dim());
            for ((dst, p), y) in d.column_mut(0).iter_mut().zip(cache.output.column(0)).zip(ys) {
                let diff: f64 = p - y;
                *dst = if diff > 0.0 {
                    1.0 / n
                } else if diff < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            d
        }
    };

    let n_layers = params.layers.len();
    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for i in (0..n_layers).rev() {
        let input = if i == 0 { x.view() } else { cache.hidden[i - 1].view() };
        let gw = input.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut back = delta.dot(&params.layers[i].weights.t());
            Zip::from(&mut back)
                .and(&cache.hidden[i - 1])
                .for_each(|b, &a| {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                });
            delta = back;
        }
        grads.push(Layer {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    Ok((loss, grads))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn clamp_location(raw: f64) -> f64 {
    raw.clamp(LOC_MIN, LOC_MAX)
}
