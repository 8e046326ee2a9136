//! The pooled no-adaptation baseline: one MLP trained on the union of every
//! meta-train sample, evaluated per meta-test task as-is. Meta-learning has
//! to beat this to justify itself.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpGradients, MlpParams, MlpSpec, Optimizer};
use crate::taskbench::TaskDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledBaselineConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PooledBaselineConfig {
    fn default() -> Self {
        PooledBaselineConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            optimizer: Optimizer::adam(1e-3),
            steps: 20_000,
            batch: 32,
            seed: 0,
        }
    }
}

/// Train one regressor on all samples (both splits) of the given tasks.
pub fn train_pooled_baseline(
    tasks: &[TaskDataset],
    cfg: &PooledBaselineConfig,
) -> Result<MlpParams> {
    let mut xs: Vec<[f64; 3]> = Vec::new();
    let mut ys: Vec<[f64; 3]> = Vec::new();
    for task in tasks {
        xs.extend_from_slice(&task.xs);
        ys.extend_from_slice(&task.ys);
    }
    if xs.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidSpec("pooled baseline batch must be >= 1".into()));
    }
    let spec = MlpSpec::new(3, cfg.hidden.clone(), 3, cfg.activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init_with_rng(&spec, &mut rng)?;
    let mut state = cfg.optimizer.init_state(&spec);
    let scale = 2.0 / (cfg.batch as f64 * 3.0);
    for _ in 0..cfg.steps {
        let mut grads = MlpGradients::zeros(&spec);
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..xs.len());
            let (p, tape) = params.forward(&xs[i])?;
            let dy: Vec<f64> = p.iter().zip(&ys[i]).map(|(p, y)| scale * (p - y)).collect();
            let (_, g) = params.backward(&tape, &dy)?;
            grads.add_assign(&g)?;
        }
        cfg.optimizer.step(&mut params, &grads, &mut state)?;
    }
    Ok(params)
}

/// Predict a single input with a trained baseline.
pub fn pooled_predict(params: &MlpParams, x: &[f64; 3]) -> Result<[f64; 3]> {
    let (y, _) = params.forward(x)?;
    Ok([y[0], y[1], y[2]])
}
