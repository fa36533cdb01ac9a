//! Small dense networks and their training machinery: ReLU MLPs with
//! hand-rolled reverse-mode gradients, Adam, and global-norm gradient
//! clipping. Everything is f32 and deterministic given the RNG.
//!
//! Shapes follow the batch convention: activations are (batch, features),
//! a layer's weight is (out, in), and `forward` computes x·Wᵀ + b.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("need at least an input and output width, got {0} dims")]
    TooFewDims(usize),
    #[error("parameter buffer holds {got} values, network needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

/// Multilayer perceptron: ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Per-layer (dW, db) pairs, in layer order.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f32>, Array1<f32>)>,
}

/// Layer inputs saved by [`Mlp::forward_cached`]; inputs[l] feeds layer l,
/// and for l > 0 doubles as the ReLU mask (post-activation > 0 iff
/// pre-activation > 0).
#[derive(Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f32>>,
}

impl Mlp {
    /// Uniform init in ±1/√fan_in for weights and biases. Sampling order
    /// (per layer: weights row-major, then biases) is part of the
    /// determinism contract.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Mlp, NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims(dims.len()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let k = 1.0 / (fan_in as f32).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-k..k));
            let b = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-k..k));
            layers.push(Linear { w, b });
        }
        Ok(Mlp { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w.t()) + &layer.b;
            if l != last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f32>) -> (Array2<f32>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            h = h.dot(&layer.w.t()) + &layer.b;
            if l != last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        (h, MlpCache { inputs })
    }

    /// Reverse pass for d(loss)/d(output) = `grad_out` (already scaled
    /// however the loss demands; gradients are summed over the batch).
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f32>) -> (MlpGrads, Array2<f32>) {
        let mut g = grad_out.clone();
        let mut per_layer = vec![None; self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let dw = g.t().dot(x);
            let db = g.sum_axis(Axis(0));
            let mut gx = g.dot(&layer.w);
            if l > 0 {
                // x is post-ReLU: zero entries had non-positive preacts
                gx.zip_mut_with(x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
            per_layer[l] = Some((dw, db));
            g = gx;
        }
        let layers = per_layer.into_iter().map(Option::unwrap).collect();
        (MlpGrads { layers }, g)
    }

    /// Gradient w.r.t. the input only, skipping the parameter-gradient
    /// GEMMs. Used where a network is differentiated through but not
    /// updated (the actor's path through the critics).
    pub fn backward_input(&self, cache: &MlpCache, grad_out: &Array2<f32>) -> Array2<f32> {
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut gx = g.dot(&layer.w);
            if l > 0 {
                gx.zip_mut_with(&cache.inputs[l], |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
            g = gx;
        }
        g
    }

    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn from_flat(dims: &[usize], data: &[f32]) -> Result<Mlp, NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims(dims.len()));
        }
        let expected: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        if data.len() != expected {
            return Err(NnError::ParamCount {
                expected,
                got: data.len(),
            });
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = Array2::from_shape_vec(
                (fan_out, fan_in),
                data[off..off + fan_in * fan_out].to_vec(),
            )
            .expect("length checked");
            off += fan_in * fan_out;
            let b = Array1::from_vec(data[off..off + fan_out].to_vec());
            off += fan_out;
            layers.push(Linear { w, b });
        }
        Ok(Mlp { layers })
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> MlpGrads {
        MlpGrads {
            layers: net
                .layers()
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f32) {
        for (dw, db) in &mut self.layers {
            dw.mapv_inplace(|v| v * s);
            db.mapv_inplace(|v| v * s);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for ((dw, db), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *dw += ow;
            *db += ob;
        }
    }
}

/// Polyak averaging: target ← τ·online + (1−τ)·target. τ = 1 copies the
/// online network exactly.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f32) {
    let keep = 1.0 - tau;
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        t.w.zip_mut_with(&o.w, |ti, &oi| *ti = keep * *ti + tau * oi);
        t.b.zip_mut_with(&o.b, |ti, &oi| *ti = keep * *ti + tau * oi);
    }
}

/// ℓ2 norm over every gradient entry, accumulated in f64.
pub fn global_grad_norm(grads: &MlpGrads) -> f32 {
    let mut s = 0.0f64;
    for (dw, db) in &grads.layers {
        s += dw.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        s += db.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
    }
    s.sqrt() as f32
}

/// Rescales so the global norm is at most `max_norm`; returns the pre-clip
/// norm for monitoring.
pub fn clip_global_norm(grads: &mut MlpGrads, max_norm: f32) -> f32 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with the usual (0.9, 0.999, 1e-8) defaults and bias correction,
/// state shaped like the network it optimizes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<(Array2<f32>, Array1<f32>)>,
    v: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f32) -> Adam {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.w.raw_dim()),
                        Array1::zeros(l.b.raw_dim()),
                    )
                })
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            Self::update(
                layer.w.as_slice_mut().unwrap(),
                gw.as_slice().unwrap(),
                self.m[l].0.as_slice_mut().unwrap(),
                self.v[l].0.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            Self::update(
                layer.b.as_slice_mut().unwrap(),
                gb.as_slice().unwrap(),
                self.m[l].1.as_slice_mut().unwrap(),
                self.v[l].1.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        p: &mut [f32],
        g: &[f32],
        m: &mut [f32],
        v: &mut [f32],
        lr: f32,
        b1: f32,
        b2: f32,
        eps: f32,
        bc1: f32,
        bc2: f32,
    ) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Adam for a single scalar (the entropy temperature's log).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> ScalarAdam {
        ScalarAdam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) {
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let mhat = self.m / (1.0 - self.beta1.powi(self.t));
        let vhat = self.v / (1.0 - self.beta2.powi(self.t));
        *param -= self.lr * mhat / (vhat.sqrt() + self.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_bounds_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[4, 16, 2], &mut rng).unwrap();
        assert_eq!(net.dims(), vec![4, 16, 2]);
        assert_eq!(net.n_params(), 4 * 16 + 16 + 16 * 2 + 2);
        let k0 = 1.0 / 2.0; // fan_in 4
        for v in net.layers()[0].w.iter().chain(net.layers()[0].b.iter()) {
            assert!(v.abs() <= k0);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let net2 = Mlp::init(&[4, 16, 2], &mut rng2).unwrap();
        assert_eq!(net, net2);
        let mut rng3 = ChaCha8Rng::seed_from_u64(2);
        assert_ne!(net, Mlp::init(&[4, 16, 2], &mut rng3).unwrap());
        assert_eq!(Mlp::init(&[4], &mut rng), Err(NnError::TooFewDims(1)));
    }

    #[test]
    fn single_layer_matches_hand_matmul() {
        let mut net = Mlp::init(&[2, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.layers_mut()[0].w = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        net.layers_mut()[0].b = ndarray::arr1(&[0.5, -0.5]);
        let x = ndarray::arr2(&[[1.0f32, 1.0], [2.0, 0.0]]);
        let y = net.forward(&x);
        assert_eq!(y, ndarray::arr2(&[[3.5, 6.5], [2.5, 5.5]]));
    }

    #[test]
    fn relu_hidden_layer_by_hand() {
        let mut net = Mlp::init(&[1, 2, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.layers_mut()[0].w = ndarray::arr2(&[[1.0], [-1.0]]);
        net.layers_mut()[0].b = ndarray::arr1(&[0.0, 0.0]);
        net.layers_mut()[1].w = ndarray::arr2(&[[1.0, 1.0]]);
        net.layers_mut()[1].b = ndarray::arr1(&[0.25]);
        // f(x) = relu(x) + relu(−x) + 0.25 = |x| + 0.25
        let x = ndarray::arr2(&[[2.0f32], [-3.0]]);
        let y = net.forward(&x);
        assert_eq!(y, ndarray::arr2(&[[2.25], [3.25]]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let net = Mlp::init(&[3, 8, 5, 2], &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0f32..1.0));
        let c = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0f32..1.0));
        let loss = |n: &Mlp| -> f64 {
            n.forward(&x)
                .iter()
                .zip(c.iter())
                .map(|(&y, &ci)| y as f64 * ci as f64)
                .sum()
        };
        let (_, cache) = net.forward_cached(&x);
        let (grads, gx) = net.backward(&cache, &c);

        let flat = net.to_flat();
        let an_flat: Vec<f32> = {
            let mut v = Vec::new();
            for (dw, db) in &grads.layers {
                v.extend(dw.iter());
                v.extend(db.iter());
            }
            v
        };
        let dims = net.dims();
        let h = 1e-2f32;
        let mut errs: Vec<f64> = Vec::new();
        // every 7th parameter keeps the test fast but covers all layers
        for idx in (0..flat.len()).step_by(7) {
            let mut up = flat.clone();
            up[idx] += h;
            let mut dn = flat.clone();
            dn[idx] -= h;
            let fd = (loss(&Mlp::from_flat(&dims, &up).unwrap())
                - loss(&Mlp::from_flat(&dims, &dn).unwrap()))
                / (2.0 * h as f64);
            let an = an_flat[idx] as f64;
            errs.push((fd - an).abs() / (fd.abs() + an.abs()).max(1e-3));
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[errs.len() / 2];
        let outliers = errs.iter().filter(|&&e| e > 0.05).count();
        // ReLU kinks make a handful of finite differences unreliable
        assert!(median < 0.01, "median rel err {median}");
        assert!(outliers <= errs.len() / 10, "{outliers} outliers of {}", errs.len());

        // input gradients through the same machinery
        let mut errs = Vec::new();
        for r in 0..4 {
            for cix in 0..3 {
                let mut xp = x.clone();
                xp[[r, cix]] += h;
                let mut xm = x.clone();
                xm[[r, cix]] -= h;
                let fd = (net.forward(&xp).iter().zip(c.iter()).map(|(&y, &ci)| y as f64 * ci as f64).sum::<f64>()
                    - net.forward(&xm).iter().zip(c.iter()).map(|(&y, &ci)| y as f64 * ci as f64).sum::<f64>())
                    / (2.0 * h as f64);
                let an = gx[[r, cix]] as f64;
                errs.push((fd - an).abs() / (fd.abs() + an.abs()).max(1e-3));
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(errs[errs.len() / 2] < 0.01);
        assert!(errs.iter().filter(|&&e| e > 0.05).count() <= 1);
    }

    #[test]
    fn backward_input_matches_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let net = Mlp::init(&[4, 6, 3], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0f32..1.0));
        let g = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0f32..1.0));
        let (_, cache) = net.forward_cached(&x);
        let (_, gx_full) = net.backward(&cache, &g);
        let gx_only = net.backward_input(&cache, &g);
        assert_eq!(gx_full, gx_only);
    }

    #[test]
    fn soft_update_blends_and_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let online = Mlp::init(&[2, 3], &mut rng).unwrap();
        let mut target = Mlp::init(&[2, 3], &mut rng).unwrap();
        let before = target.clone();
        soft_update(&mut target, &online, 0.25);
        for l in 0..1 {
            for (t, (&b, &o)) in target.layers()[l]
                .w
                .iter()
                .zip(before.layers()[l].w.iter().zip(online.layers()[l].w.iter()))
            {
                assert!((t - (0.25 * o + 0.75 * b)).abs() < 1e-6);
            }
        }
        soft_update(&mut target, &online, 1.0);
        assert_eq!(target, online);
    }

    #[test]
    fn adam_takes_lr_sized_first_steps_under_constant_gradient() {
        let mut net = Mlp::from_flat(&[1, 1], &[0.0, 0.0]).unwrap();
        let mut opt = Adam::new(&net, 0.1);
        let ones = MlpGrads {
            layers: vec![(ndarray::arr2(&[[1.0]]), ndarray::arr1(&[1.0]))],
        };
        opt.step(&mut net, &ones);
        assert!((net.layers()[0].w[[0, 0]] + 0.1).abs() < 1e-6);
        opt.step(&mut net, &ones);
        assert!((net.layers()[0].w[[0, 0]] + 0.2).abs() < 1e-5);
        assert!((net.layers()[0].b[0] + 0.2).abs() < 1e-5);
    }

    #[test]
    fn global_norm_clip() {
        let mut g = MlpGrads {
            layers: vec![(ndarray::arr2(&[[1.2]]), ndarray::arr1(&[1.6]))],
        };
        let pre = clip_global_norm(&mut g, 1.0);
        assert!((pre - 2.0).abs() < 1e-6);
        assert!((g.layers[0].0[[0, 0]] - 0.6).abs() < 1e-6);
        assert!((g.layers[0].1[0] - 0.8).abs() < 1e-6);
        let mut small = MlpGrads {
            layers: vec![(ndarray::arr2(&[[0.3]]), ndarray::arr1(&[0.4]))],
        };
        assert!((clip_global_norm(&mut small, 1.0) - 0.5).abs() < 1e-6);
        assert_eq!(small.layers[0].0[[0, 0]], 0.3);
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::init(&[5, 7, 3], &mut rng).unwrap();
        let flat = net.to_flat();
        let back = Mlp::from_flat(&[5, 7, 3], &flat).unwrap();
        assert_eq!(net, back);
        assert_eq!(
            Mlp::from_flat(&[5, 7, 3], &flat[1..]),
            Err(NnError::ParamCount {
                expected: flat.len(),
                got: flat.len() - 1
            })
        );
    }

    #[test]
    fn scalar_adam_descends() {
        let mut p = 1.0f64;
        let mut opt = ScalarAdam::new(0.05);
        for _ in 0..400 {
            let g = 2.0 * p; // d/dp of p²
            opt.step(&mut p, g);
        }
        assert!(p.abs() < 0.05, "p = {p}");
    }
}
