//! Dense feed-forward networks with manual backpropagation and an Adam optimizer.
//!
//! Hidden layers use ReLU. The output head is either linear (Q-values, state
//! values) or `tanh` (bounded actor mean). Everything is `f64`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Tanh,
}

/// One affine layer; `weights` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    head: Head,
}

/// Activations kept from a forward pass for use in [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!("invalid layer dims {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with `n` inputs is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn zeros(dims: &[usize], head: Head) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != l.bias.len() {
                return Err(Error::Shape {
                    context: "layer bias",
                    expected: l.weights.ncols(),
                    actual: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(Error::Shape {
                    context: "layer chaining",
                    expected: layers[i - 1].weights.ncols(),
                    actual: l.weights.nrows(),
                });
            }
        }
        Ok(Self { layers, head })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Overwrites all parameters from a flat vector in [`Mlp::flatten`] order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                context: "flat parameters",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    fn apply_head(&self, mut z: Array2<f64>) -> Array2<f64> {
        if self.head == Head::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    /// Evaluates a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        Ok(self.forward_batch(&x)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates a batch, one example per row.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(self.apply_head(a))
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardPass> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = a.dot(&l.weights) + &l.bias;
            inputs.push(a);
            a = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        let output = self.apply_head(a);
        Ok(ForwardPass { inputs, pre, output })
    }

    /// Backpropagates `grad_output` (d loss / d output, same shape as the output)
    /// through the cached pass.
    pub fn backward(&self, pass: &ForwardPass, grad_output: &Array2<f64>) -> Result<Gradients> {
        Ok(self.backward_with_input(pass, grad_output)?.0)
    }

    /// Like [`Mlp::backward`], also returning d loss / d input.
    pub fn backward_with_input(
        &self,
        pass: &ForwardPass,
        grad_output: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if grad_output.dim() != pass.output.dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: pass.output.len(),
                actual: grad_output.len(),
            });
        }
        let mut delta = match self.head {
            Head::Linear => grad_output.clone(),
            Head::Tanh => grad_output * &pass.output.mapv(|y| 1.0 - y * y),
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = pass.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                upstream.zip_mut_with(&pass.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `self <- tau * source + (1 - tau) * self`, element-wise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if self.layer_dims() != source.layer_dims() {
            return Err(Error::Shape {
                context: "soft update",
                expected: self.param_count(),
                actual: source.param_count(),
            });
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weights.zip_mut_with(&s.weights, |t, &s| *t = tau * s + (1.0 - tau) * *t);
            t.bias.zip_mut_with(&s.bias, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Non-finite gradients abort without touching `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::Shape {
                context: "optimizer gradients",
                expected: net.layers.len(),
                actual: grads.layers.len(),
            });
        }
        for (g, l) in grads.layers.iter().zip(&net.layers) {
            if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
                return Err(Error::Shape {
                    context: "optimizer gradients",
                    expected: l.weights.len() + l.bias.len(),
                    actual: g.weights.len() + g.bias.len(),
                });
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        AdamSnapshot {
            config: self.config.clone(),
            step: self.step,
            m: flatten_layers(&self.m),
            v: flatten_layers(&self.v),
        }
    }

    pub fn restore(snapshot: &AdamSnapshot, net: &Mlp) -> Result<Self> {
        let mut adam = Adam::new(snapshot.config.clone(), net);
        let mut tmp = net.clone();
        tmp.load_flat(&snapshot.m)?;
        adam.m = tmp.layers.clone();
        tmp.load_flat(&snapshot.v)?;
        adam.v = tmp.layers;
        adam.step = snapshot.step;
        Ok(adam)
    }
}

/// Serializable optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Structured-text form of a network, optionally with optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub hidden_activation: String,
    pub head: Head,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamSnapshot>,
}

impl NetworkCheckpoint {
    pub fn capture(net: &Mlp, optimizer: Option<&Adam>) -> Self {
        Self {
            version: NETWORK_FORMAT_VERSION,
            layer_dims: net.layer_dims(),
            hidden_activation: "relu".into(),
            head: net.head,
            params: net.flatten(),
            optimizer: optimizer.map(Adam::snapshot),
        }
    }

    pub fn network(&self) -> Result<Mlp> {
        if self.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported network format version {}",
                self.version
            )));
        }
        if self.hidden_activation != "relu" {
            return Err(Error::Checkpoint(format!(
                "unsupported activation '{}'",
                self.hidden_activation
            )));
        }
        let mut net = Mlp::zeros(&self.layer_dims, self.head)?;
        net.load_flat(&self.params)?;
        if !net.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(net)
    }

    pub fn optimizer_for(&self, net: &Mlp) -> Result<Option<Adam>> {
        self.optimizer
            .as_ref()
            .map(|s| Adam::restore(s, net))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward loop-based forward pass used as an oracle.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = net.layers().len() - 1;
        for (i, l) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; l.weights.ncols()];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = l.bias[j];
                for (k, ak) in a.iter().enumerate() {
                    *zj += ak * l.weights[[k, j]];
                }
                if i < last {
                    *zj = zj.max(0.0);
                }
            }
            a = z;
        }
        if net.head() == Head::Tanh {
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 3], Head::Linear).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let net = Mlp::from_layers(vec![layer], Head::Linear).unwrap();
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn seeded_forward_matches_golden_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Mlp::new(&[4, 6, 5, 2], Head::Linear, &mut rng).unwrap();
        let x = [0.1, -0.4, 0.7, 0.25];
        let out = net.forward(&x).unwrap();
        let oracle = naive_forward(&net, &x);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        let golden = [0.011847346237810572, 0.07559494171178];
        for (a, b) in out.iter().zip(golden) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
    }

    /// Central finite differences of `loss = sum(coeff * output)` against the
    /// analytic gradient.
    fn gradient_check(head: Head, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[5, 7, 6, 3], head, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let coeff = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.91).cos());
        let loss = |n: &Mlp| (n.forward_batch(&x).unwrap() * &coeff).sum();
        let pass = net.forward_cached(&x).unwrap();
        let analytic = net.backward(&pass, &coeff).unwrap().flatten();
        let params = net.flatten();
        let h = 1e-6;
        for (i, g) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            let mut p = params.clone();
            p[i] += h;
            plus.load_flat(&p).unwrap();
            let mut minus = net.clone();
            p[i] -= 2.0 * h;
            minus.load_flat(&p).unwrap();
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (numeric - g).abs() <= 1e-5 * (1.0 + g.abs()),
                "param {i}: numeric {numeric} analytic {g}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_linear_head() {
        gradient_check(Head::Linear, 11);
    }

    #[test]
    fn gradients_match_finite_differences_tanh_head() {
        gradient_check(Head::Tanh, 12);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        // A bias-only network is a free parameter vector b; loss = |b - c|^2.
        let target = array![1.5, -2.0, 0.25];
        let mut net = Mlp::from_layers(
            vec![Dense {
                weights: Array2::zeros((1, 3)),
                bias: Array1::zeros(3),
            }],
            Head::Linear,
        )
        .unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &net);
        for _ in 0..2000 {
            let b = net.layers()[0].bias.clone();
            let g = Gradients {
                layers: vec![Dense {
                    weights: Array2::zeros((1, 3)),
                    bias: 2.0 * (&b - &target),
                }],
            };
            opt.step(&mut net, &g).unwrap();
        }
        let b = &net.layers()[0].bias;
        assert!((b - &target).iter().all(|d| d.abs() < 1e-3), "{b}");
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = Mlp::zeros(&[4, 3], Head::Linear).unwrap();
        assert!(matches!(net.forward(&[1.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 2], Head::Linear, &mut rng).unwrap();
        let x = array![[0.2, 0.3, -0.1]];
        let pass = net.forward_cached(&x).unwrap();
        let g = net.backward(&pass, &Array2::zeros((1, 2))).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_weight_regression_gradient() {
        // loss = (w x - y)^2  =>  dL/dw = 2 (w x - y) x
        let (w, x, y) = (0.7, 1.5, 2.0);
        let net = Mlp::from_layers(
            vec![Dense {
                weights: array![[w]],
                bias: array![0.0],
            }],
            Head::Linear,
        )
        .unwrap();
        let pass = net.forward_cached(&array![[x]]).unwrap();
        let residual = pass.output[[0, 0]] - y;
        let g = net.backward(&pass, &array![[2.0 * residual]]).unwrap();
        assert!((g.layers[0].weights[[0, 0]] - 2.0 * (w * x - y) * x).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 4, 2], Head::Tanh, &mut rng).unwrap();
        let x = array![[0.2, 0.3, -0.1], [0.0, 1.0, 0.5]];
        let pass = net.forward_cached(&x).unwrap();
        let (_, gx) = net.backward_with_input(&pass, &Array2::ones((2, 2))).unwrap();
        assert_eq!(gx.dim(), (2, 3));
    }

    #[test]
    fn soft_update_blends_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = Mlp::new(&[3, 4, 2], Head::Linear, &mut rng).unwrap();
        let orig = Mlp::new(&[3, 4, 2], Head::Linear, &mut rng).unwrap();
        for tau in [0.0, 0.005, 1.0] {
            let mut tgt = orig.clone();
            tgt.soft_update_from(&src, tau).unwrap();
            for ((t, s), o) in tgt.flatten().iter().zip(src.flatten()).zip(orig.flatten()) {
                assert_eq!(*t, tau * s + (1.0 - tau) * o);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 3, 1], Head::Linear, &mut rng).unwrap();
        let before = net.flatten();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3), &net);
        let zero = Gradients {
            layers: Mlp::zeros(&[2, 3, 1], Head::Linear).unwrap().layers,
        };
        opt.step(&mut net, &zero).unwrap();
        assert_eq!(net.flatten(), before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_descends_on_constant_gradient() {
        let mut net = Mlp::from_layers(
            vec![Dense {
                weights: array![[1.0]],
                bias: array![0.0],
            }],
            Head::Linear,
        )
        .unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &net);
        let g = Gradients {
            layers: vec![Dense {
                weights: array![[1.0]],
                bias: array![0.0],
            }],
        };
        let mut last = net.layers()[0].weights[[0, 0]];
        for _ in 0..20 {
            opt.step(&mut net, &g).unwrap();
            let w = net.layers()[0].weights[[0, 0]];
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = Mlp::zeros(&[1, 1], Head::Linear).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &net);
        let g = Gradients {
            layers: vec![Dense {
                weights: array![[f64::NAN]],
                bias: array![0.0],
            }],
        };
        assert!(matches!(opt.step(&mut net, &g), Err(Error::NonFinite(_))));
        assert_eq!(opt.steps(), 0);
        assert_eq!(net.flatten(), vec![0.0, 0.0]);
    }

    #[test]
    fn checkpoint_restores_network_and_optimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[3, 4, 2], Head::Tanh, &mut rng).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3), &net);
        let x = array![[0.1, 0.2, 0.3]];
        let pass = net.forward_cached(&x).unwrap();
        let g = net.backward(&pass, &Array2::ones((1, 2))).unwrap();
        opt.step(&mut net, &g).unwrap();

        let ckpt = NetworkCheckpoint::capture(&net, Some(&opt));
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&text).unwrap();
        let net2 = back.network().unwrap();
        assert_eq!(net2, net);
        assert_eq!(back.optimizer_for(&net2).unwrap().unwrap(), opt);
    }
}
