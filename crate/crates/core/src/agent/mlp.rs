//! Dense networks with explicit forward and backward passes.
//!
//! Small enough that hand-written backprop beats pulling in an autodiff
//! stack, and it keeps gradients directly checkable against finite
//! differences. Samples are processed one at a time; batching is a loop
//! with gradient accumulation.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Row-major `out x in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// A multi-layer perceptron: tanh hidden layers and a configurable
/// output activation (tanh for bounded actions, identity for values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: Activation,
}

/// Per-layer activation record from a cached forward pass.
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradient accumulator shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn scale(&mut self, factor: f64) {
        for layer in self.w.iter_mut().chain(self.b.iter_mut()) {
            for g in layer {
                *g *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .all(|layer| layer.iter().all(|g| g.is_finite()))
    }

    /// Flat view in parameter order (layer by layer, weights then bias).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Xavier-uniform initialization over `sizes` layer widths.
    pub fn new(sizes: &[usize], output: Activation, rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let scale = (6.0 / (in_dim + out_dim) as f64).sqrt();
                Dense {
                    w: (0..in_dim * out_dim)
                        .map(|_| rng.gen_range(-scale..scale))
                        .collect(),
                    b: vec![0.0; out_dim],
                    in_dim,
                    out_dim,
                }
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.in_dim(), "input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.out_dim);
            layer.forward(&cur, &mut pre);
            inputs.push(std::mem::take(&mut cur));
            let act = if i == last { self.output } else { Activation::Tanh };
            cur = match act {
                Activation::Tanh => pre.iter().map(|v| v.tanh()).collect(),
                Activation::Identity => pre.clone(),
            };
            pres.push(pre);
        }
        ForwardCache {
            inputs,
            pre: pres,
            output: cur,
        }
    }

    /// Accumulate parameter gradients for one sample given the loss
    /// gradient w.r.t. the network output; returns the loss gradient
    /// w.r.t. the network input.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut dy = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = if i == last { self.output } else { Activation::Tanh };
            let dpre: Vec<f64> = match act {
                Activation::Tanh => dy
                    .iter()
                    .zip(&cache.pre[i])
                    .map(|(g, p)| {
                        let t = p.tanh();
                        g * (1.0 - t * t)
                    })
                    .collect(),
                Activation::Identity => dy.clone(),
            };
            let input = &cache.inputs[i];
            for o in 0..layer.out_dim {
                let wrow = &mut grads.w[i][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, xi) in wrow.iter_mut().zip(input) {
                    *gi += dpre[o] * xi;
                }
                grads.b[i][o] += dpre[o];
            }
            let mut dx = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += dpre[o] * wi;
                }
            }
            dy = dx;
        }
        dy
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access in the same order as [`MlpGrads::flat`].
    pub fn get_param(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            if index < layer.w.len() {
                return layer.w[index];
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                return layer.b[index];
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for layer in &mut self.layers {
            if index < layer.w.len() {
                layer.w[index] = value;
                return;
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                layer.b[index] = value;
                return;
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Polyak averaging toward `source`: `p <- tau * source + (1 - tau) * p`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&source.layers) {
            for (p, q) in mine.w.iter_mut().zip(&theirs.w) {
                *p = tau * q + (1.0 - tau) * *p;
            }
            for (p, q) in mine.b.iter_mut().zip(&theirs.b) {
                *p = tau * q + (1.0 - tau) * *p;
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }
}

/// Adam over a whole network, state flattened in parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let flat = grads.flat();
        debug_assert_eq!(flat.len(), self.m.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in flat.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let p = net.get_param(i) - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            net.set_param(i, p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tanh_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 16, 2], Activation::Tanh, &mut rng);
        for trial in 0..50 {
            let x: Vec<f64> = (0..5).map(|i| ((trial * 5 + i) as f64).sin() * 3.0).collect();
            let y = net.forward(&x);
            assert!(y.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zeroed_final_layer_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 8, 2], Activation::Tanh, &mut rng);
        let final_layer = net.layers.last_mut().unwrap();
        for v in final_layer.w.iter_mut().chain(final_layer.b.iter_mut()) {
            *v = 0.0;
        }
        assert_eq!(net.forward(&[0.3, -0.7, 1.5]), vec![0.0, 0.0]);
    }

    /// Scalar-loss gradient check: L = sum(y), both parameter and input
    /// gradients against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for output in [Activation::Tanh, Activation::Identity] {
            let mut net = Mlp::new(&[4, 6, 3], output, &mut rng);
            let x: Vec<f64> = vec![0.4, -1.2, 0.9, 0.1];
            let cache = net.forward_cached(&x);
            let mut grads = net.zero_grads();
            let dx = net.backward(&cache, &vec![1.0; 3], &mut grads);
            let flat = grads.flat();

            let eps = 1e-6;
            for i in 0..net.param_count() {
                let orig = net.get_param(i);
                net.set_param(i, orig + eps);
                let up: f64 = net.forward(&x).iter().sum();
                net.set_param(i, orig - eps);
                let down: f64 = net.forward(&x).iter().sum();
                net.set_param(i, orig);
                let fd = (up - down) / (2.0 * eps);
                assert!(
                    (fd - flat[i]).abs() <= 1e-6 * fd.abs().max(flat[i].abs()).max(1.0),
                    "param {i}: fd {fd} vs analytic {}",
                    flat[i]
                );
            }
            for (i, &dxi) in dx.iter().enumerate() {
                let mut xp = x.clone();
                xp[i] += eps;
                let up: f64 = net.forward(&xp).iter().sum();
                xp[i] -= 2.0 * eps;
                let down: f64 = net.forward(&xp).iter().sum();
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - dxi).abs() <= 1e-6 * fd.abs().max(dxi.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn soft_update_is_exact_polyak() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let source = Mlp::new(&[2, 3, 1], Activation::Identity, &mut rng);
        let mut target = Mlp::new(&[2, 3, 1], Activation::Identity, &mut rng);
        let before = target.params_flat();
        target.soft_update_from(&source, 0.005);
        for (i, (b, s)) in before.iter().zip(source.params_flat()).enumerate() {
            let expect = 0.005 * s + 0.995 * b;
            assert_eq!(target.get_param(i), expect);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Fit y = 0 from a fixed input: loss (y)^2 on a linear net.
        let mut net = Mlp::new(&[1, 1], Activation::Identity, &mut rng);
        let mut adam = Adam::new(0.05, net.param_count());
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let cache = net.forward_cached(&[1.0]);
            let y = cache.output()[0];
            let mut grads = net.zero_grads();
            net.backward(&cache, &[2.0 * y], &mut grads);
            adam.step(&mut net, &grads);
            last = y * y;
        }
        assert!(last < 1e-4, "loss {last}");
    }
}
