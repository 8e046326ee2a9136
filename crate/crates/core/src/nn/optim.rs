use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{check_congruent, Dense, MlpGradients, MlpParams, MlpSpec};

/// Plain gradient step `p <- p - lr * g`. Rejects non-finite gradients so a
/// diverging run fails loudly instead of poisoning the parameters.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpGradients, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidSpec(format!("learning rate must be > 0, got {lr}")));
    }
    check_congruent(params, grads)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients (sgd step rejected)".into()));
    }
    for (p, g) in params.layers_mut().iter_mut().zip(grads.layers_internal()) {
        for (pw, gw) in p.w.iter_mut().zip(&g.w) {
            *pw -= lr * gw;
        }
        for (pb, gb) in p.b.iter_mut().zip(&g.b) {
            *pb -= lr * gb;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment estimates plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: u64,
}

impl AdamState {
    pub fn new(spec: &MlpSpec) -> Self {
        let zeros: Vec<Dense> = MlpGradients::zeros(spec).layers_internal().to_vec();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update. Moments are stored per parameter tensor; bias correction
/// uses this state's own step counter, so modules stepped at different rates
/// each keep a consistent schedule.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::InvalidSpec(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    check_congruent(params, grads)?;
    if state.m.len() != params.layers().len() {
        return Err(Error::ShapeMismatch("adam state does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients (adam step rejected)".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers_internal())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.w.len() {
            m.w[i] = cfg.beta1 * m.w[i] + (1.0 - cfg.beta1) * g.w[i];
            v.w[i] = cfg.beta2 * v.w[i] + (1.0 - cfg.beta2) * g.w[i] * g.w[i];
            let mhat = m.w[i] / bc1;
            let vhat = v.w[i] / bc2;
            p.w[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        for i in 0..p.b.len() {
            m.b[i] = cfg.beta1 * m.b[i] + (1.0 - cfg.beta1) * g.b[i];
            v.b[i] = cfg.beta2 * v.b[i] + (1.0 - cfg.beta2) * g.b[i] * g.b[i];
            let mhat = m.b[i] / bc1;
            let vhat = v.b[i] / bc2;
            p.b[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Optimizer choice, serializable so checkpoints can resume the exact update
/// rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(AdamConfig::with_lr(lr))
    }

    pub fn init_state(&self, spec: &MlpSpec) -> ModuleOptState {
        match self {
            Optimizer::Sgd { .. } => ModuleOptState::Sgd,
            Optimizer::Adam(_) => ModuleOptState::Adam(AdamState::new(spec)),
        }
    }

    pub fn step(
        &self,
        params: &mut MlpParams,
        grads: &MlpGradients,
        state: &mut ModuleOptState,
    ) -> Result<()> {
        match (self, state) {
            (Optimizer::Sgd { lr }, ModuleOptState::Sgd) => sgd_step(params, grads, *lr),
            (Optimizer::Adam(cfg), ModuleOptState::Adam(st)) => adam_step(params, grads, st, cfg),
            _ => Err(Error::ShapeMismatch(
                "optimizer state kind does not match optimizer".into(),
            )),
        }
    }
}

/// Per-module optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModuleOptState {
    Sgd,
    Adam(AdamState),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};

    fn small() -> (MlpParams, MlpSpec) {
        let spec = MlpSpec::new(2, vec![3], 2, Activation::Tanh).unwrap();
        (MlpParams::init(&spec, 5).unwrap(), spec)
    }

    fn grads_of_ones(spec: &MlpSpec) -> MlpGradients {
        let mut g = MlpGradients::zeros(spec);
        for layer in g.layers_mut() {
            layer.w.iter_mut().for_each(|v| *v = 1.0);
            layer.b.iter_mut().for_each(|v| *v = 1.0);
        }
        g
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let (mut p, spec) = small();
        let before = p.clone();
        sgd_step(&mut p, &MlpGradients::zeros(&spec), 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let spec = MlpSpec::new(1, vec![], 1, Activation::Tanh).unwrap();
        let mut p = MlpParams::from_layers(
            spec.clone(),
            vec![Dense {
                in_dim: 1,
                out_dim: 1,
                w: vec![1.0],
                b: vec![0.0],
            }],
        )
        .unwrap();
        let mut g = MlpGradients::zeros(&spec);
        g.layers_mut()[0].w[0] = 2.0;
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.layers()[0].w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_equal_one_summed_step() {
        let (mut a, spec) = small();
        let mut b = a.clone();
        let g = grads_of_ones(&spec);
        sgd_step(&mut a, &g, 0.05).unwrap();
        sgd_step(&mut a, &g, 0.05).unwrap();
        let mut g2 = MlpGradients::zeros(&spec);
        g2.add_assign(&g).unwrap();
        g2.add_assign(&g).unwrap();
        sgd_step(&mut b, &g2, 0.05).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.w.iter().zip(&lb.w) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let (mut p, spec) = small();
        let before = p.clone();
        let mut g = MlpGradients::zeros(&spec);
        g.layers_mut()[0].w[0] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut p, &g, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p, before, "rejected step must leave parameters untouched");
    }

    #[test]
    fn adam_zero_gradient_fresh_state_is_identity() {
        let (mut p, spec) = small();
        let before = p.clone();
        let mut st = AdamState::new(&spec);
        adam_step(&mut p, &MlpGradients::zeros(&spec), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // With g = 1 everywhere and fresh state, mhat/sqrt(vhat) = 1, so the
        // update is lr/(1 + eps) for every parameter.
        let (mut p, spec) = small();
        let before = p.clone();
        let g = grads_of_ones(&spec);
        let mut st = AdamState::new(&spec);
        let cfg = AdamConfig::with_lr(1e-3);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        for (la, lb) in p.layers().iter().zip(before.layers()) {
            for (x, y) in la.w.iter().zip(&lb.w) {
                let delta = (x - y).abs();
                assert!((delta - cfg.lr).abs() < 1e-9, "delta {delta}");
            }
        }
    }

    #[test]
    fn adam_state_roundtrips_bit_exact() {
        let (mut p, spec) = small();
        let g = grads_of_ones(&spec);
        let mut st = AdamState::new(&spec);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        let json = serde_json::to_string(&st).unwrap();
        let back: AdamState = serde_json::from_str(&json).unwrap();
        assert_eq!(st, back);
    }
}
