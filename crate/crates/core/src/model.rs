//! Dense classifiers: multinomial logistic regression and fully connected
//! networks, with softmax cross-entropy and hand-written backpropagation.
//!
//! Layer `l` holds a weight matrix of shape `(widths[l], widths[l + 1])` and a
//! `1 x widths[l + 1]` bias row, so logits are `x · W + b` for row-major
//! batches. Parameters are stored in the order `w0, b0, w1, b1, ...`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Feature dimension first, class count last.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn logistic_regression(features: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            widths: vec![features, classes],
            activation: Activation::Relu,
        }
    }

    pub fn mlp(widths: &[usize]) -> Self {
        Self {
            kind: ModelKind::Mlp,
            widths: widths.to_vec(),
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(
                "model.widths needs at least an input and an output width".into(),
            ));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("model.widths[{i}] is zero")));
        }
        if self.kind == ModelKind::LogisticRegression && self.widths.len() != 2 {
            return Err(Error::Config(
                "logistic regression takes exactly [features, classes] widths".into(),
            ));
        }
        if self.classes() < 2 {
            return Err(Error::Config(
                "a classifier needs at least 2 classes".into(),
            ));
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_parameters(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Model parameters in stable `w0, b0, w1, b1, ...` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    params: Vec<Param>,
}

impl ParameterSet {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.params[i].value
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        self.get(2 * layer)
    }

    pub fn bias(&self, layer: usize) -> &Matrix {
        self.get(2 * layer + 1)
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Checks that the set has the shapes `spec` declares.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.params.len() != 2 * spec.n_layers() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors for a {}-layer model",
                self.params.len(),
                spec.n_layers()
            )));
        }
        for (l, w) in spec.widths.windows(2).enumerate() {
            if self.weight(l).shape() != (w[0], w[1]) || self.bias(l).shape() != (1, w[1]) {
                return Err(Error::Dimension(format!(
                    "layer {l} shape differs from spec"
                )));
            }
        }
        Ok(())
    }
}

/// One gradient matrix per parameter, same order and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<Matrix>,
}

impl GradientSet {
    pub fn new(grads: Vec<Matrix>) -> Self {
        Self { grads }
    }

    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            grads: params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.grads[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.grads[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.grads.iter_mut()
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .map(Matrix::frobenius_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_inplace(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_inplace(s);
        }
    }

    pub fn is_congruent(&self, params: &ParameterSet) -> bool {
        self.grads.len() == params.len()
            && self
                .grads
                .iter()
                .zip(params.iter())
                .all(|(g, p)| g.same_shape(&p.value))
    }
}

/// Uniform Glorot initialization, zero biases.
pub fn model_init(spec: &ModelSpec, rng: &mut Rng) -> Result<ParameterSet> {
    spec.validate()?;
    let mut params = Vec::with_capacity(2 * spec.n_layers());
    for (l, w) in spec.widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
        params.push(Param {
            name: format!("w{l}"),
            value: Matrix::from_vec(fan_in, fan_out, data)?,
        });
        params.push(Param {
            name: format!("b{l}"),
            value: Matrix::zeros(1, fan_out),
        });
    }
    Ok(ParameterSet::new(params))
}

struct Trace {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
    logits: Matrix,
}

fn run_forward(params: &ParameterSet, spec: &ModelSpec, x: &Matrix) -> Result<Trace> {
    params.check_against(spec)?;
    if x.cols() != spec.features() {
        return Err(Error::Dimension(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            spec.features()
        )));
    }
    let n_layers = spec.n_layers();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut a = x.clone();
    for l in 0..n_layers {
        let mut z = a.matmul(params.weight(l))?;
        z.add_row_broadcast(params.bias(l))?;
        inputs.push(a);
        if l + 1 == n_layers {
            return Ok(Trace {
                inputs,
                pre,
                logits: z,
            });
        }
        let mut act = z.clone();
        act.map_inplace(|v| spec.activation.apply(v));
        pre.push(z);
        a = act;
    }
    unreachable!("validated models have at least one layer")
}

pub fn forward(params: &ParameterSet, spec: &ModelSpec, x: &Matrix) -> Result<Matrix> {
    let logits = run_forward(params, spec, x)?.logits;
    if !logits.is_finite() {
        return Err(Error::NonFinite("forward pass logits".into()));
    }
    Ok(logits)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Row-wise softmax (max-subtracted) and per-row cross-entropy.
fn softmax_xent(logits: &Matrix, labels: &[usize]) -> (Matrix, Vec<f64>) {
    let mut probs = logits.clone();
    let mut losses = Vec::with_capacity(labels.len());
    for (r, &y) in labels.iter().enumerate() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = max - row[y];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        losses.push(gap + sum.ln());
    }
    (probs, losses)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Loss, gradients and number of correct argmax predictions for one batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: GradientSet,
    pub correct: usize,
}

pub fn loss_grad(
    params: &ParameterSet,
    spec: &ModelSpec,
    x: &Matrix,
    labels: &[usize],
) -> Result<StepOutput> {
    check_labels(labels, x.rows(), spec.classes())?;
    let trace = run_forward(params, spec, x)?;
    let (probs, losses) = softmax_xent(&trace.logits, labels);
    let n = labels.len() as f64;
    let loss = losses.iter().sum::<f64>() / n;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(trace.logits.row(r)) == y)
        .count();

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = probs;
    for (r, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }

    let n_layers = spec.n_layers();
    let mut grads = vec![Matrix::zeros(0, 0); 2 * n_layers];
    for l in (0..n_layers).rev() {
        grads[2 * l] = trace.inputs[l].t_matmul(&delta)?;
        grads[2 * l + 1] = delta.sum_rows();
        if l > 0 {
            let mut back = delta.matmul_t(params.weight(l))?;
            let z = &trace.pre[l - 1];
            for (b, &zv) in back.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *b *= spec.activation.derivative(zv);
            }
            delta = back;
        }
    }
    let grads = GradientSet::new(grads);
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok(StepOutput {
        loss,
        grads,
        correct,
    })
}

/// Mean cross-entropy of the batch and its gradients.
pub fn loss_and_backward(
    params: &ParameterSet,
    spec: &ModelSpec,
    batch: &crate::batch::Batch,
) -> Result<(f64, GradientSet)> {
    let out = loss_grad(params, spec, &batch.x, &batch.labels)?;
    Ok((out.loss, out.grads))
}

/// Mean loss only, no gradients.
pub fn loss(params: &ParameterSet, spec: &ModelSpec, x: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, x.rows(), spec.classes())?;
    let logits = run_forward(params, spec, x)?.logits;
    let (_, losses) = softmax_xent(&logits, labels);
    Ok(losses.iter().sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acc={:.4} loss={:.4}", self.accuracy, self.mean_loss)
    }
}

pub fn evaluate(
    params: &ParameterSet,
    spec: &ModelSpec,
    x: &Matrix,
    labels: &[usize],
) -> Result<Evaluation> {
    check_labels(labels, x.rows(), spec.classes())?;
    let logits = run_forward(params, spec, x)?.logits;
    let (_, losses) = softmax_xent(&logits, labels);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    let n = labels.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: losses.iter().sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn init_logistic_shapes_and_zero_bias() {
        let spec = ModelSpec::logistic_regression(2, 3);
        let p = model_init(&spec, &mut Rng::new(0)).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.get(0).shape(), (2, 3));
        assert_eq!(p.get(1).shape(), (1, 3));
        assert!(p.get(1).as_slice().iter().all(|&b| b == 0.0));
        let a = (6.0f64 / 5.0).sqrt();
        assert!(p.get(0).as_slice().iter().all(|w| w.abs() <= a));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(&[5, 4, 3]);
        let a = model_init(&spec, &mut Rng::new(11)).unwrap();
        let b = model_init(&spec, &mut Rng::new(11)).unwrap();
        for i in 0..a.len() {
            let bits_a: Vec<u64> = a.get(i).as_slice().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.get(i).as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn init_mlp_shapes() {
        let spec = ModelSpec::mlp(&[784, 100, 100, 10]);
        let p = model_init(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(p.len(), 6);
        let shapes: Vec<_> = p.iter().map(|q| q.value.shape()).collect();
        assert_eq!(
            shapes,
            vec![
                (784, 100),
                (1, 100),
                (100, 100),
                (1, 100),
                (100, 10),
                (1, 10)
            ]
        );
        assert_eq!(p.n_scalars(), spec.n_parameters());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = Rng::new(0);
        for spec in [
            ModelSpec::mlp(&[4, 0, 2]),
            ModelSpec::mlp(&[4]),
            ModelSpec {
                kind: ModelKind::LogisticRegression,
                widths: vec![2, 3, 3],
                activation: Activation::Relu,
            },
        ] {
            assert!(matches!(model_init(&spec, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = ModelSpec::mlp(&[3, 4, 2]);
        let mut p = model_init(&spec, &mut Rng::new(0)).unwrap();
        for i in 0..p.len() {
            p.get_mut(i).map_inplace(|_| 0.0);
        }
        let x = mat(2, 3, &[1., -2., 3., 0.5, 0.25, -7.]);
        let out = forward(&p, &spec, &x).unwrap();
        assert_eq!(out.shape(), (2, 2));
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_identity_passes_nonnegative_input() {
        let spec = ModelSpec::mlp(&[2, 2, 2]);
        let p = ParameterSet::new(vec![
            Param {
                name: "w0".into(),
                value: Matrix::identity(2),
            },
            Param {
                name: "b0".into(),
                value: Matrix::zeros(1, 2),
            },
            Param {
                name: "w1".into(),
                value: Matrix::identity(2),
            },
            Param {
                name: "b1".into(),
                value: Matrix::zeros(1, 2),
            },
        ]);
        let x = mat(2, 2, &[0.0, 3.5, 1.25, 0.5]);
        assert_eq!(forward(&p, &spec, &x).unwrap(), x);
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        let spec = ModelSpec::mlp(&[2, 2, 2]);
        let w0 = [0.5, -1.0, 2.0, 0.25];
        let b0 = [0.1, -0.2];
        let w1 = [1.5, -0.5, -2.0, 3.0];
        let b1 = [0.05, 0.3];
        let p = ParameterSet::new(vec![
            Param {
                name: "w0".into(),
                value: mat(2, 2, &w0),
            },
            Param {
                name: "b0".into(),
                value: mat(1, 2, &b0),
            },
            Param {
                name: "w1".into(),
                value: mat(2, 2, &w1),
            },
            Param {
                name: "b1".into(),
                value: mat(1, 2, &b1),
            },
        ]);
        let x = [[1.0, 2.0], [-3.0, 0.5]];
        let out = forward(&p, &spec, &mat(2, 2, &[1.0, 2.0, -3.0, 0.5])).unwrap();
        for (r, xr) in x.iter().enumerate() {
            let h0 = (xr[0] * w0[0] + xr[1] * w0[2] + b0[0]).max(0.0);
            let h1 = (xr[0] * w0[1] + xr[1] * w0[3] + b0[1]).max(0.0);
            let o0 = h0 * w1[0] + h1 * w1[2] + b1[0];
            let o1 = h0 * w1[1] + h1 * w1[3] + b1[1];
            assert!((out.get(r, 0) - o0).abs() < 1e-15);
            assert!((out.get(r, 1) - o1).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = ModelSpec::logistic_regression(3, 2);
        let p = model_init(&spec, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            forward(&p, &spec, &Matrix::zeros(1, 4)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        for classes in [2usize, 3, 10] {
            let spec = ModelSpec::logistic_regression(4, classes);
            let mut p = model_init(&spec, &mut Rng::new(0)).unwrap();
            p.get_mut(0).map_inplace(|_| 0.0);
            let x = mat(3, 4, &[1., 2., 3., 4., -1., 0., 5., 2., 0.3, 0.3, 0.3, 0.3]);
            let l = loss(&p, &spec, &x, &[0, 1, classes - 1]).unwrap();
            assert!((l - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let spec = ModelSpec::logistic_regression(1, 3);
        let p = ParameterSet::new(vec![
            Param {
                name: "w0".into(),
                value: mat(1, 3, &[0.0, 1e300, 0.0]),
            },
            Param {
                name: "b0".into(),
                value: Matrix::zeros(1, 3),
            },
        ]);
        let l = loss(&p, &spec, &mat(1, 1, &[1.0]), &[1]).unwrap();
        assert!((0.0..1e-12).contains(&l));
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let spec = ModelSpec::logistic_regression(2, 3);
        let p = model_init(&spec, &mut Rng::new(0)).unwrap();
        let r = loss_grad(&p, &spec, &Matrix::zeros(1, 2), &[3]);
        assert!(matches!(r, Err(Error::Data(_))));
    }
}
