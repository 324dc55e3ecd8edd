//! Minimal dense network with tanh hidden layers, manual backprop and an
//! Adam optimizer. Everything is f64 and single-threaded, so training is
//! bit-reproducible given the seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Feed-forward network: tanh after every layer except the last, plus an
/// optional linear bypass from input to output. The bypass keeps the
/// response linear outside the training hull, where saturated tanh units
/// would otherwise flatten it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub skip: Option<Dense>,
}

pub struct ForwardCache {
    /// Post-activation values per layer, including the input at index 0.
    activations: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub skip: Option<Dense>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`, weights ~ N(0, 1/fan_in).
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let scale = (1.0 / fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    normal_sample(rng) * scale
                });
                let b = DVector::zeros(fan_out);
                Dense { w, b }
            })
            .collect();
        Self { layers, skip: None }
    }

    /// Same network with a zero-initialized linear bypass.
    pub fn with_skip(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::new(dims, rng);
        net.skip = Some(Dense {
            w: DMatrix::zeros(*dims.last().unwrap(), dims[0]),
            b: DVector::zeros(*dims.last().unwrap()),
        });
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = &layer.w * a + &layer.b;
            if i != last {
                a.apply(|v| *v = v.tanh());
            }
        }
        if let Some(skip) = &self.skip {
            a += &skip.w * x + &skip.b;
        }
        a
    }

    pub fn forward_cached(&self, x: &DVector<f64>) -> (DVector<f64>, ForwardCache) {
        let mut activations = vec![x.clone()];
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            a = &layer.w * a + &layer.b;
            if i != last {
                a.apply(|v| *v = v.tanh());
            }
            activations.push(a.clone());
        }
        let mut out = a;
        if let Some(skip) = &self.skip {
            out += &skip.w * x + &skip.b;
        }
        (out, ForwardCache { activations })
    }

    /// Accumulates parameter gradients for one sample into `grads`, given
    /// dL/d(output).
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DVector<f64>, grads: &mut Gradients) {
        if let (Some(_), Some(gskip)) = (&self.skip, &mut grads.skip) {
            let x = &cache.activations[0];
            gskip.w += grad_out * x.transpose();
            gskip.b += grad_out;
        }
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let a_prev = &cache.activations[i];
            grads.layers[i].w += &g * a_prev.transpose();
            grads.layers[i].b += &g;
            if i > 0 {
                let mut upstream = self.layers[i].w.transpose() * g;
                // Through the tanh of the previous layer.
                let a = &cache.activations[i];
                for (u, av) in upstream.iter_mut().zip(a.iter()) {
                    *u *= 1.0 - av * av;
                }
                g = upstream;
            }
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        let zero = |l: &Dense| Dense {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.nrows()),
        };
        Gradients {
            layers: self.layers.iter().map(zero).collect(),
            skip: self.skip.as_ref().map(zero),
        }
    }

    pub fn param_count(&self) -> usize {
        let base: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        base + self.skip.as_ref().map_or(0, |s| s.w.len() + s.b.len())
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in self.layers.iter().chain(self.skip.as_ref()) {
            if idx < l.w.len() {
                return l.w.as_slice()[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b.as_slice()[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in self.layers.iter_mut().chain(self.skip.as_mut()) {
            if idx < l.w.len() {
                l.w.as_mut_slice()[idx] = value;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b.as_mut_slice()[idx] = value;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter vector, used by persistence.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers.iter().chain(self.skip.as_ref()) {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for l in self.layers.iter_mut().chain(self.skip.as_mut()) {
            let wn = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&flat[pos..pos + wn]);
            pos += wn;
            let bn = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&flat[pos..pos + bn]);
            pos += bn;
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }
}

impl Gradients {
    pub fn get(&self, mut idx: usize) -> f64 {
        for l in self.layers.iter().chain(self.skip.as_ref()) {
            if idx < l.w.len() {
                return l.w.as_slice()[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b.as_slice()[idx];
            }
            idx -= l.b.len();
        }
        panic!("gradient index out of range");
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut().chain(self.skip.as_mut()) {
            l.w *= s;
            l.b *= s;
        }
    }
}

/// Box-Muller standard normal draw; two uniforms per sample keeps the
/// stream layout independent of rejection behavior.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
    m_skip: Option<Dense>,
    v_skip: Option<Dense>,
}

impl Adam {
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn new(model: &Mlp, lr: f64) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Dense {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.nrows()),
                })
                .collect::<Vec<_>>()
        };
        let zero_skip = || {
            model.skip.as_ref().map(|sk| Dense {
                w: DMatrix::zeros(sk.w.nrows(), sk.w.ncols()),
                b: DVector::zeros(sk.b.nrows()),
            })
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
            m_skip: zero_skip(),
            v_skip: zero_skip(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let layer_params = model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        let skip_params = model
            .skip
            .iter_mut()
            .zip(&grads.skip)
            .zip(self.m_skip.iter_mut().zip(self.v_skip.iter_mut()));
        for ((layer, g), (m, v)) in layer_params.chain(skip_params) {
            for (((p, gw), mw), vw) in layer
                .w
                .iter_mut()
                .zip(g.w.iter())
                .zip(m.w.iter_mut())
                .zip(v.w.iter_mut())
            {
                *mw = self.beta1 * *mw + (1.0 - self.beta1) * gw;
                *vw = self.beta2 * *vw + (1.0 - self.beta2) * gw * gw;
                *p -= self.lr * (*mw / bc1) / ((*vw / bc2).sqrt() + self.eps);
            }
            for (((p, gb), mb), vb) in layer
                .b
                .iter_mut()
                .zip(g.b.iter())
                .zip(m.b.iter_mut())
                .zip(v.b.iter_mut())
            {
                *mb = self.beta1 * *mb + (1.0 - self.beta1) * gb;
                *vb = self.beta2 * *vb + (1.0 - self.beta2) * gb * gb;
                *p -= self.lr * (*mb / bc1) / ((*vb / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_manual_two_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[2, 3, 1], &mut rng);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let h = (&net.layers[0].w * &x + &net.layers[0].b).map(|v| v.tanh());
        let y = &net.layers[1].w * h + &net.layers[1].b;
        assert_eq!(net.forward(&x), y);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Mlp::with_skip(&[3, 5, 4, 2], &mut rng);
        // Random skip weights so the bypass path is exercised.
        if let Some(sk) = &mut net.skip {
            *sk = Dense {
                w: DMatrix::from_fn(2, 3, |_, _| normal_sample(&mut rng) * 0.3),
                b: DVector::zeros(2),
            };
        }
        let x = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let target = DVector::from_vec(vec![0.1, -0.3]);

        // L = ||f(x) - target||^2
        let loss = |net: &Mlp| {
            let out = net.forward(&x);
            (out - &target).norm_squared()
        };
        let (out, cache) = net.forward_cached(&x);
        let mut grads = net.zero_gradients();
        net.backward(&cache, &((out - &target) * 2.0), &mut grads);

        let h = 1e-6;
        for idx in (0..net.param_count()).step_by(3) {
            let orig = net.get_param(idx);
            net.set_param(idx, orig + h);
            let lp = loss(&net);
            net.set_param(idx, orig - h);
            let lm = loss(&net);
            net.set_param(idx, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(idx);
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                "param {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn flat_param_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 6, 2], &mut rng);
        let flat = net.flat_params();
        let mut other = Mlp::new(&[4, 6, 2], &mut rng);
        other.set_flat_params(&flat);
        assert_eq!(other, net);
    }

    #[test]
    fn adam_reduces_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[2, 8, 1], &mut rng);
        let mut adam = Adam::new(&net, 5e-3);
        let xs = [
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let ys = [0.0, 1.0, 1.0, 0.0];
        let loss_of = |net: &Mlp| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (net.forward(x)[0] - y).powi(2))
                .sum::<f64>()
        };
        let before = loss_of(&net);
        for _ in 0..800 {
            let mut grads = net.zero_gradients();
            for (x, y) in xs.iter().zip(&ys) {
                let (out, cache) = net.forward_cached(x);
                let g = DVector::from_vec(vec![2.0 * (out[0] - y)]);
                net.backward(&cache, &g, &mut grads);
            }
            adam.step(&mut net, &grads);
        }
        let after = loss_of(&net);
        assert!(after < before * 0.05, "xor fit failed: {before} -> {after}");
    }
}
