use std::collections::BTreeMap;

use super::{ParameterSet, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    MomentumSgd,
    Adam,
}

/// Per-parameter moment buffers. `second` is empty for momentum SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBuffer {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub buffers: BTreeMap<String, MomentBuffer>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn momentum_sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::MomentumSgd,
            learning_rate,
            momentum,
            betas: (0.9, 0.999),
            eps: 1e-8,
            buffers: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn adam(learning_rate: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            betas,
            eps,
            buffers: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidArgument(format!(
                "invalid optimizer hyperparameters: lr {}, momentum {}, betas {:?}, eps {}",
                self.learning_rate, self.momentum, self.betas, self.eps
            )))
        }
    }

    /// Applies one update to every non-frozen parameter and clears all gradients.
    ///
    /// Frozen parameters are never written and get no moment buffers. Adam bias
    /// correction counts steps per parameter, so layers unfrozen mid-run start
    /// from a fresh correction.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<(), TensorError> {
        self.validate()?;
        for (path, t) in params.iter() {
            if !params.is_frozen(path) && t.grad().is_none() {
                return Err(TensorError::MissingGradient(path.clone()));
            }
        }
        let frozen = params.frozen_paths().clone();
        for (path, t) in params.iter_mut() {
            if frozen.contains(path) {
                t.zero_grad();
                continue;
            }
            let grad = t.grad().expect("checked above").to_vec();
            let n = grad.len();
            let adam = self.kind == OptimizerKind::Adam;
            let buf = self.buffers.entry(path.clone()).or_insert_with(|| MomentBuffer {
                first: vec![0.0; n],
                second: if adam { vec![0.0; n] } else { Vec::new() },
                steps: 0,
            });
            buf.steps += 1;
            let values = t.values_mut();
            match self.kind {
                OptimizerKind::MomentumSgd => {
                    for ((p, v), g) in values.iter_mut().zip(buf.first.iter_mut()).zip(&grad) {
                        *v = self.momentum * *v - self.learning_rate * g;
                        *p += *v;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = self.betas;
                    let c1 = 1.0 - b1.powi(buf.steps as i32);
                    let c2 = 1.0 - b2.powi(buf.steps as i32);
                    for (((p, m), s), g) in values
                        .iter_mut()
                        .zip(buf.first.iter_mut())
                        .zip(buf.second.iter_mut())
                        .zip(&grad)
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *s = b2 * *s + (1.0 - b2) * g * g;
                        let m_hat = *m / c1;
                        let s_hat = *s / c2;
                        *p -= self.learning_rate * m_hat / (s_hat.sqrt() + self.eps);
                    }
                }
            }
            t.zero_grad();
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Rescales the gradients of all non-frozen parameters so their joint L2 norm
/// is at most `max_norm`. Returns the norm before rescaling.
pub fn clip_grad_norm(params: &mut ParameterSet, max_norm: f64) -> Result<f64, TensorError> {
    if !(max_norm > 0.0) {
        return Err(TensorError::InvalidArgument(format!("clip norm must be positive, got {max_norm}")));
    }
    let frozen = params.frozen_paths().clone();
    let mut sq = 0.0;
    for (path, t) in params.iter() {
        if let (false, Some(g)) = (frozen.contains(path), t.grad()) {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for (path, t) in params.iter_mut() {
            if let (false, Some(g)) = (frozen.contains(path), t.grad()) {
                let scaled: Vec<f64> = g.iter().map(|v| v * k).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled)?;
            }
        }
    }
    Ok(norm)
}
