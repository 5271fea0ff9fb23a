//! SGD and Adam, plain and with per-source gradient depression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{DistrustUpdate, SourceId, SourceRegistry};
use crate::matrix::Matrix;
use crate::model::{GradientSet, ParameterSet};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd {
                momentum,
                weight_decay,
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config(format!(
                        "optimizer.momentum must lie in [0, 1), got {momentum}"
                    )));
                }
                if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
                    return Err(Error::Config("optimizer.weight_decay must be >= 0".into()));
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(Error::Config(format!(
                            "optimizer.{name} must lie in [0, 1), got {b}"
                        )));
                    }
                }
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::Config("optimizer.eps must be > 0".into()));
                }
                if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
                    return Err(Error::Config("optimizer.weight_decay must be >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer state: rule, learning rate, step count and moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    /// Velocity for SGD with momentum, first moment for Adam.
    first: Vec<Matrix>,
    /// Second moment (Adam only).
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParameterSet) -> Result<Self> {
        kind.validate()?;
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate must be > 0, got {learning_rate}"
            )));
        }
        let zeros = || -> Vec<Matrix> {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        let (first, second) = match kind {
            OptimizerKind::Sgd { momentum, .. } if momentum > 0.0 => (zeros(), Vec::new()),
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (zeros(), zeros()),
        };
        Ok(Self {
            kind,
            learning_rate,
            steps: 0,
            first,
            second,
        })
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with the unmodified rule.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet) -> Result<()> {
        if !grads.is_congruent(params) {
            return Err(Error::Dimension(
                "gradients are not shape-congruent with parameters".into(),
            ));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd {
                momentum,
                weight_decay,
            } => {
                for i in 0..params.len() {
                    let p = params.get_mut(i).as_mut_slice();
                    let g = grads.get(i).as_slice();
                    if momentum > 0.0 {
                        let v = self.first[i].as_mut_slice();
                        for j in 0..p.len() {
                            let gj = if weight_decay > 0.0 {
                                g[j] + weight_decay * p[j]
                            } else {
                                g[j]
                            };
                            v[j] = momentum * v[j] + gj;
                            p[j] -= lr * v[j];
                        }
                    } else {
                        for j in 0..p.len() {
                            let gj = if weight_decay > 0.0 {
                                g[j] + weight_decay * p[j]
                            } else {
                                g[j]
                            };
                            p[j] -= lr * gj;
                        }
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let p = params.get_mut(i).as_mut_slice();
                    let g = grads.get(i).as_slice();
                    let m = self.first[i].as_mut_slice();
                    let v = self.second[i].as_mut_slice();
                    for j in 0..p.len() {
                        let gj = if weight_decay > 0.0 {
                            g[j] + weight_decay * p[j]
                        } else {
                            g[j]
                        };
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Registry consulted by a LAP-wrapped optimizer.
#[derive(Debug, Clone)]
pub struct LapBinding {
    pub registry: SourceRegistry,
    pub enabled: bool,
}

/// Outcome of one LAP step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapStep {
    /// Multiplier applied to the gradients (1 when nothing was depressed).
    pub gradient_scale: f64,
    pub update: Option<DistrustUpdate>,
}

/// An optimizer whose gradients are depressed per source before the
/// underlying rule runs.
#[derive(Debug, Clone)]
pub struct LapOptimizer {
    inner: Optimizer,
    binding: LapBinding,
}

impl LapOptimizer {
    pub fn new(inner: Optimizer, binding: LapBinding) -> Self {
        Self { inner, binding }
    }

    pub fn inner(&self) -> &Optimizer {
        &self.inner
    }

    pub fn registry(&self) -> &SourceRegistry {
        &self.binding.registry
    }

    pub fn enabled(&self) -> bool {
        self.binding.enabled
    }

    pub fn into_parts(self) -> (Optimizer, LapBinding) {
        (self.inner, self.binding)
    }

    /// Records `loss` for `source`, scales `grads` by the source's current
    /// `1 - d`, then applies the plain rule. With LAP disabled this is
    /// exactly [`Optimizer::step`].
    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        mut grads: GradientSet,
        loss: f64,
        source: SourceId,
    ) -> Result<LapStep> {
        if !self.binding.registry.contains(source) {
            return Err(Error::UnknownSource(source));
        }
        if !self.binding.enabled {
            self.inner.step(params, &grads)?;
            return Ok(LapStep {
                gradient_scale: 1.0,
                update: None,
            });
        }
        let update = self.binding.registry.record_loss(source, loss)?;
        let scale = self.binding.registry.gradient_scale(source)?;
        if scale != 1.0 {
            grads.scale_inplace(scale);
        }
        self.inner.step(params, &grads)?;
        Ok(LapStep {
            gradient_scale: scale,
            update,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lap::{scale_gradients, LapParams};
    use crate::model::Param;

    fn scalar_params(v: f64) -> ParameterSet {
        ParameterSet::new(vec![Param {
            name: "w0".into(),
            value: Matrix::from_vec(1, 1, vec![v]).unwrap(),
        }])
    }

    fn scalar_grads(v: f64) -> GradientSet {
        GradientSet::new(vec![Matrix::from_vec(1, 1, vec![v]).unwrap()])
    }

    fn vec_params(v: &[f64]) -> ParameterSet {
        ParameterSet::new(vec![Param {
            name: "w0".into(),
            value: Matrix::from_vec(1, v.len(), v.to_vec()).unwrap(),
        }])
    }

    fn vec_grads(v: &[f64]) -> GradientSet {
        GradientSet::new(vec![Matrix::from_vec(1, v.len(), v.to_vec()).unwrap()])
    }

    #[test]
    fn sgd_one_step() {
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptimizerKind::sgd(), 0.1, &p).unwrap();
        opt.step(&mut p, &scalar_grads(1.0)).unwrap();
        assert_eq!(p.get(0).as_slice(), &[0.9]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        for kind in [OptimizerKind::sgd(), OptimizerKind::adam()] {
            let mut p = vec_params(&[0.5, -2.0, 3.0]);
            let before = p.clone();
            let mut opt = Optimizer::new(kind, 0.01, &p).unwrap();
            for _ in 0..3 {
                opt.step(&mut p, &vec_grads(&[0.0, 0.0, 0.0])).unwrap();
            }
            assert_eq!(p, before);
        }
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // t = 1: m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
        let g = 0.37;
        let lr = 0.001;
        let mut p = scalar_params(0.0);
        let mut opt = Optimizer::new(OptimizerKind::adam(), lr, &p).unwrap();
        opt.step(&mut p, &scalar_grads(g)).unwrap();
        let expected = -lr * g / (g + 1e-8);
        assert!((p.get(0).get(0, 0) - expected).abs() < 1e-15);
        assert!((p.get(0).get(0, 0).abs() - lr).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec_params(&[1.0, 2.0]);
        let mut opt = Optimizer::new(OptimizerKind::sgd(), 0.1, &p).unwrap();
        assert!(matches!(
            opt.step(&mut p, &scalar_grads(1.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let p = scalar_params(0.0);
        assert!(Optimizer::new(OptimizerKind::sgd(), 0.0, &p).is_err());
        let kind = OptimizerKind::Adam {
            beta1: 1.0,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        assert!(Optimizer::new(kind, 0.1, &p).is_err());
    }

    fn lap(kind: OptimizerKind, p: &ParameterSet, h: usize, enabled: bool) -> LapOptimizer {
        let params = LapParams {
            history_length: h,
            ..LapParams::default()
        };
        LapOptimizer::new(
            Optimizer::new(kind, 0.1, p).unwrap(),
            LapBinding {
                registry: SourceRegistry::with_sources(params, 2).unwrap(),
                enabled,
            },
        )
    }

    #[test]
    fn warm_up_matches_plain() {
        let mut p_lap = vec_params(&[1.0, 2.0]);
        let mut p_plain = p_lap.clone();
        let mut l = lap(OptimizerKind::adam(), &p_lap, 5, true);
        let mut plain = Optimizer::new(OptimizerKind::adam(), 0.1, &p_plain).unwrap();
        for step in 0..4 {
            let g = vec_grads(&[0.3 * step as f64, -0.7]);
            let out = l.step(&mut p_lap, g.clone(), 10.0, SourceId(1)).unwrap();
            assert_eq!(out.gradient_scale, 1.0);
            plain.step(&mut p_plain, &g).unwrap();
        }
        assert_eq!(p_lap, p_plain);
    }

    #[test]
    fn half_depression_halves_sgd_delta() {
        let g = vec_grads(&[0.8, -1.6]);
        let mut a = vec_params(&[1.0, 1.0]);
        let mut b = a.clone();
        let mut opt_a = Optimizer::new(OptimizerKind::sgd(), 0.1, &a).unwrap();
        let mut opt_b = opt_a.clone();
        opt_a.step(&mut a, &g).unwrap();
        opt_b
            .step(&mut b, &scale_gradients(&g, 0.5).unwrap())
            .unwrap();
        for j in 0..2 {
            let full = a.get(0).as_slice()[j] - 1.0;
            let half = b.get(0).as_slice()[j] - 1.0;
            assert_eq!(half, full / 2.0);
        }
    }

    #[test]
    fn distrusted_source_barely_moves_sgd() {
        let start = vec_params(&[1.0, -1.0]);
        let g = vec_grads(&[0.5, 0.25]);

        let mut p_lap = start.clone();
        let mut l = lap(OptimizerKind::sgd(), &start, 2, true);
        // fill both histories with source 1 far above source 0
        for _ in 0..2 {
            l.step(&mut p_lap.clone(), g.clone(), 0.1, SourceId(0))
                .unwrap();
            l.step(&mut p_lap.clone(), g.clone(), 9.0, SourceId(1))
                .unwrap();
        }
        let (inner, mut binding) = l.into_parts();
        binding.registry.set_distrust(SourceId(1), 2000).unwrap();
        let mut l = LapOptimizer::new(inner, binding);

        let mut p_plain = start.clone();
        let mut plain = Optimizer::new(OptimizerKind::sgd(), 0.1, &start).unwrap();
        plain.step(&mut p_plain, &g).unwrap();
        let out = l.step(&mut p_lap, g.clone(), 9.0, SourceId(1)).unwrap();
        assert!(out.gradient_scale < 1e-4);

        let delta = |p: &ParameterSet| -> f64 {
            p.get(0)
                .as_slice()
                .iter()
                .zip(start.get(0).as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!(delta(&p_lap) < 1e-4 * delta(&p_plain));
    }

    #[test]
    fn sgd_lap_equals_plain_on_scaled_grads() {
        let start = vec_params(&[0.2, 0.4]);
        let mut l = lap(OptimizerKind::sgd(), &start, 2, true);
        let mut scratch = start.clone();
        for _ in 0..2 {
            l.step(&mut scratch, vec_grads(&[0.0, 0.0]), 0.1, SourceId(0))
                .unwrap();
            l.step(&mut scratch, vec_grads(&[0.0, 0.0]), 3.0, SourceId(1))
                .unwrap();
        }
        let (inner, mut binding) = l.into_parts();
        binding.registry.set_distrust(SourceId(1), 150).unwrap();
        let mut l = LapOptimizer::new(inner.clone(), binding);

        let g = vec_grads(&[1.5, -0.3]);
        let mut p_lap = start.clone();
        let out = l.step(&mut p_lap, g.clone(), 3.0, SourceId(1)).unwrap();

        let mut scaled = g.clone();
        scaled.scale_inplace(out.gradient_scale);
        let mut p_plain = start.clone();
        let mut plain = inner;
        plain.step(&mut p_plain, &scaled).unwrap();
        assert_eq!(p_lap, p_plain);
        assert!(out.gradient_scale < 1.0);
    }

    #[test]
    fn disabled_binding_is_plain() {
        let mut p_lap = vec_params(&[1.0, 2.0]);
        let mut p_plain = p_lap.clone();
        let mut l = lap(OptimizerKind::adam(), &p_lap, 2, false);
        let mut plain = Optimizer::new(OptimizerKind::adam(), 0.1, &p_plain).unwrap();
        for step in 0..10 {
            let g = vec_grads(&[(step as f64).sin(), 0.1]);
            let src = SourceId((step % 2) as u32);
            l.step(&mut p_lap, g.clone(), 100.0 * step as f64, src)
                .unwrap();
            plain.step(&mut p_plain, &g).unwrap();
        }
        assert_eq!(p_lap, p_plain);
        assert!(!l.registry().histories_full());
    }

    #[test]
    fn unknown_source_rejected() {
        let mut p = vec_params(&[1.0]);
        let mut l = lap(OptimizerKind::sgd(), &p, 2, true);
        assert_eq!(
            l.step(&mut p, vec_grads(&[1.0]), 1.0, SourceId(7)),
            Err(Error::UnknownSource(SourceId(7)))
        );
    }
}
