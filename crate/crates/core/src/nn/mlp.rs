use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative evaluated at the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a dense network: `input_dim -> hidden.. -> output_dim`,
/// hidden layers activated, output linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "mlp dims must be >= 1, got {} -> {}",
                self.input_dim, self.output_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` per layer, in forward order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }
}

/// One dense layer's worth of values: a row-major `out_dim x in_dim` matrix
/// plus a bias vector. Used for parameters, gradients, and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major: `w[o * in_dim + i]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }

    fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite()) && self.b.iter().all(|v| v.is_finite())
    }
}

/// Trained (or training) parameters for an [`MlpSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Accumulated partial derivatives of a scalar loss, shape-congruent with the
/// `MlpParams` they were computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGradients {
    layers: Vec<Dense>,
}

/// Forward record: per-layer inputs and pre-activations, enough for an exact
/// backward pass against the same parameters.
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), zero biases,
    /// fully determined by `seed`.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(spec, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        Self::init_scaled(spec, rng, 1.0)
    }

    /// Glorot init with the uniform limit multiplied by `gain`. Used by task
    /// generators that need stronger-than-default signal.
    pub fn init_scaled<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R, gain: f64) -> Result<Self> {
        spec.validate()?;
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidSpec(format!("init gain must be > 0, got {gain}")));
        }
        let mut layers = Vec::new();
        for (in_dim, out_dim) in spec.layer_dims() {
            let limit = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
            let dist = Uniform::new(-limit, limit);
            let mut layer = Dense::zeros(in_dim, out_dim);
            for w in layer.w.iter_mut() {
                *w = dist.sample(rng);
            }
            layers.push(layer);
        }
        Ok(MlpParams {
            spec: spec.clone(),
            layers,
        })
    }

    /// All-zero parameters. Handy in tests: a zero network maps everything to 0.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        Ok(MlpParams {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (layer, (i, o)) in layers.iter().zip(&dims) {
            if layer.in_dim != *i || layer.out_dim != *o || layer.w.len() != i * o || layer.b.len() != *o {
                return Err(Error::ShapeMismatch(format!(
                    "layer shape {}x{} does not match spec {}x{}",
                    layer.out_dim, layer.in_dim, o, i
                )));
            }
        }
        Ok(MlpParams { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Read one parameter by flat index (layer order, weights row-major, then
    /// biases). Used by finite-difference checks and checkpoint tooling.
    pub fn get_flat(&self, idx: usize) -> Option<f64> {
        let mut i = idx;
        for layer in &self.layers {
            if i < layer.w.len() {
                return Some(layer.w[i]);
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return Some(layer.b[i]);
            }
            i -= layer.b.len();
        }
        None
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) -> bool {
        let mut i = idx;
        for layer in &mut self.layers {
            if i < layer.w.len() {
                layer.w[i] = value;
                return true;
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                layer.b[i] = value;
                return true;
            }
            i -= layer.b.len();
        }
        false
    }

    /// Forward pass. Returns the output and a tape sufficient for an exact
    /// backward pass. Pure: same input, same output.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "mlp forward input",
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut preacts = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.b.clone();
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                z[o] += dot(row, &a);
            }
            let post = if li + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut a, post));
            preacts.push(z);
        }
        Ok((a, MlpTape { inputs, preacts }))
    }

    /// Reverse-mode pass for the scalar `y . dy`: returns the gradient with
    /// respect to the input and the accumulated parameter gradients.
    pub fn backward(&self, tape: &MlpTape, dy: &[f64]) -> Result<(Vec<f64>, MlpGradients)> {
        let mut grads = MlpGradients::zeros(&self.spec);
        let dx = self.backward_acc(tape, dy, &mut grads)?;
        Ok((dx, grads))
    }

    /// Like [`backward`](Self::backward), but accumulates the parameter
    /// gradients into an existing buffer. The hot path for networks whose
    /// modules occupy many slots: per-slot contributions land directly on the
    /// shared gradient without an intermediate allocation.
    pub fn backward_acc(
        &self,
        tape: &MlpTape,
        dy: &[f64],
        grads: &mut MlpGradients,
    ) -> Result<Vec<f64>> {
        if dy.len() != self.spec.output_dim {
            return Err(Error::DimensionMismatch {
                context: "mlp backward dy",
                expected: self.spec.output_dim,
                got: dy.len(),
            });
        }
        let n_layers = self.layers.len();
        if tape.inputs.len() != n_layers || tape.preacts.len() != n_layers {
            return Err(Error::ShapeMismatch(
                "tape does not match network depth (stale tape?)".into(),
            ));
        }
        for (layer, input) in self.layers.iter().zip(&tape.inputs) {
            if input.len() != layer.in_dim {
                return Err(Error::ShapeMismatch(
                    "tape layer input does not match parameters (stale tape?)".into(),
                ));
            }
        }
        if grads.layers.len() != n_layers
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, p)| !g.same_shape(p))
        {
            return Err(Error::ShapeMismatch(
                "gradient buffer does not match parameter shapes".into(),
            ));
        }

        // Gradient w.r.t. the current layer's pre-activation; the output layer
        // is linear so it starts as dy itself.
        let mut delta = dy.to_vec();
        let mut dx = Vec::new();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let input = &tape.inputs[li];
            let glayer = &mut grads.layers[li];
            let mut dinput = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                glayer.b[o] += d;
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut glayer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * input[i];
                    dinput[i] += row[i] * d;
                }
            }
            if li > 0 {
                let zprev = &tape.preacts[li - 1];
                delta = dinput
                    .iter()
                    .zip(zprev.iter())
                    .map(|(&g, &z)| g * self.spec.activation.derivative(z))
                    .collect();
            } else {
                dx = dinput;
            }
        }
        Ok(dx)
    }
}

/// Dot product with four independent accumulators so the reduction can keep
/// multiple multiply-adds in flight.
#[inline]
fn dot(w: &[f64], a: &[f64]) -> f64 {
    let n = w.len().min(a.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let k = c * 4;
        s0 += w[k] * a[k];
        s1 += w[k + 1] * a[k + 1];
        s2 += w[k + 2] * a[k + 2];
        s3 += w[k + 3] * a[k + 3];
    }
    let mut rest = 0.0;
    for k in chunks * 4..n {
        rest += w[k] * a[k];
    }
    (s0 + s1) + (s2 + s3) + rest
}

impl MlpGradients {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpGradients {
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn get_flat(&self, idx: usize) -> Option<f64> {
        let mut i = idx;
        for layer in &self.layers {
            if i < layer.w.len() {
                return Some(layer.w[i]);
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return Some(layer.b[i]);
            }
            i -= layer.b.len();
        }
        None
    }

    /// Elementwise accumulate. Shapes must match.
    pub fn add_assign(&mut self, other: &MlpGradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if !a.same_shape(b) {
                return Err(Error::ShapeMismatch("gradient layer shapes differ".into()));
            }
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub(crate) fn layers_internal(&self) -> &[Dense] {
        &self.layers
    }
}

pub(crate) fn check_congruent(params: &MlpParams, grads: &MlpGradients) -> Result<()> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::ShapeMismatch(
            "gradients do not match parameter layer count".into(),
        ));
    }
    for (p, g) in params.layers.iter().zip(&grads.layers) {
        if !p.same_shape(g) {
            return Err(Error::ShapeMismatch(
                "gradients do not match parameter shapes".into(),
            ));
        }
    }
    Ok(())
}

/// Versioned on-disk form of a single network: spec, flat row-major parameter
/// arrays per layer, and the seed it was initialized from (when known).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: MlpParams,
    pub seed: Option<u64>,
}

pub const MLP_CHECKPOINT_FORMAT: &str = "agnet-mlp";

impl MlpCheckpoint {
    pub fn new(params: MlpParams, seed: Option<u64>) -> Self {
        MlpCheckpoint {
            format: MLP_CHECKPOINT_FORMAT.into(),
            version: 1,
            params,
            seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: MlpCheckpoint = crate::checkpoint::read_json(path)?;
        if ck.format != MLP_CHECKPOINT_FORMAT {
            return Err(Error::Data {
                path: path.to_path_buf(),
                msg: format!("unexpected checkpoint format {:?}", ck.format),
            });
        }
        ck.params.spec.validate()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(input: usize, hidden: Vec<usize>, output: usize) -> MlpSpec {
        MlpSpec::new(input, hidden, output, Activation::Tanh).unwrap()
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let s = spec(4, vec![8, 8], 3);
        let a = MlpParams::init(&s, 42).unwrap();
        let b = MlpParams::init(&s, 42).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(&s, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_single_linear_layer() {
        let s = spec(2, vec![], 1);
        let p = MlpParams::init(&s, 0).unwrap();
        assert_eq!(p.layers().len(), 1);
        assert_eq!(p.layers()[0].w.len(), 2);
        assert_eq!(p.layers()[0].b.len(), 1);
        assert!(p.layers()[0].b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn glorot_variance_matches_formula() {
        // One 100x100 layer = 1e4 samples; Var[U(-L, L)] = L^2/3 = 2/(fan_in+fan_out).
        let s = spec(100, vec![], 100);
        let p = MlpParams::init(&s, 7).unwrap();
        let w = &p.layers()[0].w;
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 200.0;
        assert!(
            (var - expected).abs() < 0.1 * expected,
            "empirical variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn forward_zero_params_outputs_zero() {
        let s = spec(3, vec![5], 2);
        let p = MlpParams::zeros(&s).unwrap();
        let (y, _) = p.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_hand_checked_linear_layer() {
        // W = [[1, 2]], b = [3], x = (1, 1) => y = 6.
        let s = spec(2, vec![], 1);
        let layers = vec![Dense {
            in_dim: 2,
            out_dim: 1,
            w: vec![1.0, 2.0],
            b: vec![3.0],
        }];
        let p = MlpParams::from_layers(s, layers).unwrap();
        let (y, _) = p.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![6.0]);
    }

    #[test]
    fn forward_tanh_net_zero_input_zero_bias() {
        let s = spec(3, vec![4, 4], 2);
        let p = MlpParams::init(&s, 1).unwrap();
        let (y, _) = p.forward(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let s = spec(3, vec![], 1);
        let p = MlpParams::init(&s, 0).unwrap();
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_is_pure() {
        let s = spec(5, vec![7], 3);
        let p = MlpParams::init(&s, 9).unwrap();
        let x = [0.1, -0.4, 2.0, 0.0, 1.0];
        let (y1, _) = p.forward(&x).unwrap();
        let (y2, _) = p.forward(&x).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn backward_zero_dy_gives_zero() {
        let s = spec(3, vec![4], 2);
        let p = MlpParams::init(&s, 3).unwrap();
        let (_, tape) = p.forward(&[0.3, -0.2, 0.9]).unwrap();
        let (dx, g) = p.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        for layer in g.layers() {
            assert!(layer.w.iter().all(|&v| v == 0.0));
            assert!(layer.b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_hand_checked_linear_layer() {
        // dy = (1) through W = [[1, 2]] gives dx = W^T dy = (1, 2).
        let s = spec(2, vec![], 1);
        let layers = vec![Dense {
            in_dim: 2,
            out_dim: 1,
            w: vec![1.0, 2.0],
            b: vec![3.0],
        }];
        let p = MlpParams::from_layers(s, layers).unwrap();
        let (_, tape) = p.forward(&[5.0, -1.0]).unwrap();
        let (dx, g) = p.backward(&tape, &[1.0]).unwrap();
        assert_eq!(dx, vec![1.0, 2.0]);
        assert_eq!(g.layers()[0].w, vec![5.0, -1.0]); // dy * x^T
        assert_eq!(g.layers()[0].b, vec![1.0]);
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let s = spec(2, vec![3], 1);
        let p = MlpParams::init(&s, 0).unwrap();
        let other = MlpParams::init(&spec(4, vec![3], 1), 0).unwrap();
        let (_, tape) = other.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(p.backward(&tape, &[1.0]).is_err());
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // Independent oracle: perturb every parameter by +-h and compare the
        // analytic gradient of y . dy against the numeric quotient.
        let s = spec(4, vec![6, 5], 3);
        let mut p = MlpParams::init(&s, 11).unwrap();
        let x = [0.25, -0.5, 0.75, 1.5];
        let dy = [0.7, -1.3, 0.4];
        let (_, tape) = p.forward(&x).unwrap();
        let (_, analytic) = p.backward(&tape, &dy).unwrap();
        let h = 1e-6;
        let n = p.param_count();
        let mut max_rel = 0.0_f64;
        for idx in 0..n {
            let orig = p.get_flat(idx).unwrap();
            p.set_flat(idx, orig + h);
            let (yp, _) = p.forward(&x).unwrap();
            p.set_flat(idx, orig - h);
            let (ym, _) = p.forward(&x).unwrap();
            p.set_flat(idx, orig);
            let fp: f64 = yp.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let fm: f64 = ym.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get_flat(idx).unwrap();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        let s = spec(3, vec![9], 2);
        let p = MlpParams::init(&s, 123).unwrap();
        MlpCheckpoint::new(p.clone(), Some(123)).save(&path).unwrap();
        let loaded = MlpCheckpoint::load(&path).unwrap();
        assert_eq!(loaded.params, p);
        assert_eq!(loaded.seed, Some(123));
    }
}
