//! Minimal reverse-mode neural blocks on f64: a flat parameter arena,
//! linear layers with orthogonal init, ELU multilayer perceptrons, a gated
//! recurrent cell and Adam. Gradients are hand-derived per block and checked
//! against finite differences in the tests.

pub mod gru;
pub mod policy;

use crate::math;
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

pub type Span = Range<usize>;

/// One named parameter tensor inside the arena.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub span: Span,
}

/// Flat parameter store: values in `w`, gradients in `g`, one entry in
/// `tensors` per allocation. Keeping everything contiguous makes the
/// optimizer, serialization and finite-difference probing trivial.
#[derive(Debug, Clone, Default)]
pub struct Arena {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub tensors: Vec<TensorInfo>,
}

impl Arena {
    pub fn new() -> Arena {
        Arena::default()
    }

    /// Reserve a zero-initialized tensor. Names must be unique because they
    /// key the checkpoint format.
    pub fn alloc(&mut self, name: &str, dims: &[usize]) -> Span {
        assert!(
            self.tensors.iter().all(|t| t.name != name),
            "duplicate tensor name {name}"
        );
        let n: usize = dims.iter().product();
        let start = self.w.len();
        self.w.resize(start + n, 0.0);
        self.g.resize(start + n, 0.0);
        let span = start..start + n;
        self.tensors.push(TensorInfo { name: name.to_string(), dims: dims.to_vec(), span: span.clone() });
        span
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn find(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Hash of the tensor names and shapes, independent of values. Two
    /// arenas with the same hash accept each other's checkpoints.
    pub fn layout_hash(&self) -> u64 {
        let mut s = String::new();
        for t in &self.tensors {
            s.push_str(&t.name);
            for d in &t.dims {
                s.push(':');
                s.push_str(&d.to_string());
            }
            s.push(';');
        }
        math::fnv1a(s.as_bytes())
    }
}

/// Exponential linear unit.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Derivative of `elu` expressed through the activation value.
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Fill a rows-by-cols matrix with a gain-scaled orthogonal set: orthonormal
/// rows when the matrix is wide, orthonormal columns when it is tall.
/// Modified Gram-Schmidt on Gaussian draws, re-run twice for stability.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (n, d, transpose) = if rows <= cols { (rows, cols, false) } else { (cols, rows, true) };
    let mut q: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for k in 0..n {
        for _ in 0..2 {
            for j in 0..k {
                let dot: f64 = (0..d).map(|i| q[k][i] * q[j][i]).sum();
                for i in 0..d {
                    q[k][i] -= dot * q[j][i];
                }
            }
        }
        let norm = q[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate Gram-Schmidt draw");
        q[k].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if transpose { q[c][r] } else { q[r][c] };
        }
    }
    out
}

/// Dense layer y = W x + b with W stored row-major (out rows, in cols).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Span,
    pub b: Span,
    pub nin: usize,
    pub nout: usize,
}

impl Linear {
    pub fn new(a: &mut Arena, name: &str, nin: usize, nout: usize, gain: f64, rng: &mut Rng) -> Linear {
        let w = a.alloc(&format!("{name}.w"), &[nout, nin]);
        let b = a.alloc(&format!("{name}.b"), &[nout]);
        a.w[w.clone()].copy_from_slice(&orthogonal(nout, nin, gain, rng));
        Linear { w, b, nin, nout }
    }

    pub fn forward(&self, a: &Arena, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nin);
        debug_assert_eq!(y.len(), self.nout);
        let w = &a.w[self.w.clone()];
        let b = &a.w[self.b.clone()];
        for o in 0..self.nout {
            let row = &w[o * self.nin..(o + 1) * self.nin];
            let mut acc = b[o];
            for i in 0..self.nin {
                acc += row[i] * x[i];
            }
            y[o] = acc;
        }
    }

    /// Accumulate parameter gradients and, when `dx` is given, add the
    /// input gradient into it. Callers zero `dx` before the first consumer.
    pub fn backward(&self, a: &mut Arena, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let w = &a.w[self.w.clone()];
        if let Some(dx) = dx {
            for o in 0..self.nout {
                let row = &w[o * self.nin..(o + 1) * self.nin];
                for i in 0..self.nin {
                    dx[i] += row[i] * dy[o];
                }
            }
        }
        let (ws, bs) = (self.w.start, self.b.start);
        for o in 0..self.nout {
            a.g[bs + o] += dy[o];
            let grow = &mut a.g[ws + o * self.nin..ws + (o + 1) * self.nin];
            for i in 0..self.nin {
                grow[i] += dy[o] * x[i];
            }
        }
    }
}

/// Stack of linear layers with ELU after each one; the last activation is
/// optional so the same type serves encoders and raw heads.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act_last: bool,
}

/// Reusable forward buffers: per layer the input seen and the pre-activation.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    xs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Mlp {
    pub fn new(
        a: &mut Arena,
        name: &str,
        dims: &[usize],
        act_last: bool,
        gain: f64,
        rng: &mut Rng,
    ) -> Mlp {
        assert!(dims.len() >= 2, "an mlp needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|l| Linear::new(a, &format!("{name}.{l}"), dims[l], dims[l + 1], gain, rng))
            .collect();
        Mlp { layers, act_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].nin
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().nout
    }

    pub fn forward<'c>(&self, a: &Arena, x: &[f64], c: &'c mut MlpCache) -> &'c [f64] {
        c.xs.resize(self.layers.len(), Vec::new());
        c.pre.resize(self.layers.len(), Vec::new());
        let mut cur = x.to_vec();
        for (l, lin) in self.layers.iter().enumerate() {
            c.xs[l].clear();
            c.xs[l].extend_from_slice(&cur);
            c.pre[l].resize(lin.nout, 0.0);
            lin.forward(a, &cur, &mut c.pre[l]);
            let activated = l + 1 < self.layers.len() || self.act_last;
            cur.resize(lin.nout, 0.0);
            for i in 0..lin.nout {
                cur[i] = if activated { elu(c.pre[l][i]) } else { c.pre[l][i] };
            }
        }
        c.out = cur;
        &c.out
    }

    pub fn backward(&self, a: &mut Arena, c: &MlpCache, dy: &[f64], dx: Option<&mut [f64]>) {
        let mut grad = dy.to_vec();
        let mut scratch = Vec::new();
        for (l, lin) in self.layers.iter().enumerate().rev() {
            let activated = l + 1 < self.layers.len() || self.act_last;
            if activated {
                for i in 0..lin.nout {
                    grad[i] *= elu_grad(c.pre[l][i]);
                }
            }
            if l == 0 {
                lin.backward(a, &c.xs[l], &grad, dx);
                return;
            }
            scratch.clear();
            scratch.resize(lin.nin, 0.0);
            lin.backward(a, &c.xs[l], &grad, Some(&mut scratch));
            std::mem::swap(&mut grad, &mut scratch);
        }
    }
}

/// Adam with bias correction; moments live here so checkpoints can carry
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        assert_eq!(w.len(), self.m.len());
        assert_eq!(w.len(), g.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..w.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Relative-error comparison used by the gradient tests: the analytic value
/// must match the numeric one to `rel` with an absolute floor for values
/// near zero.
#[cfg(test)]
pub(crate) fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= abs + rel * scale
}

/// Central finite difference of `f` with respect to arena weight `i`.
#[cfg(test)]
pub(crate) fn fd_weight(a: &mut Arena, i: usize, eps: f64, mut f: impl FnMut(&Arena) -> f64) -> f64 {
    let keep = a.w[i];
    a.w[i] = keep + eps;
    let hi = f(a);
    a.w[i] = keep - eps;
    let lo = f(a);
    a.w[i] = keep;
    (hi - lo) / (2.0 * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn orthogonal_rows_have_the_requested_gain() {
        let mut rng = rng::root(3);
        let gain = std::f64::consts::SQRT_2;
        let w = orthogonal(4, 16, gain, &mut rng);
        for r in 0..4 {
            for s in 0..4 {
                let dot: f64 = (0..16).map(|i| w[r * 16 + i] * w[s * 16 + i]).sum();
                let want = if r == s { gain * gain } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "rows {r},{s}: {dot}");
            }
        }
        // Tall case: columns orthonormal instead.
        let w = orthogonal(16, 3, 1.0, &mut rng);
        for c in 0..3 {
            let dot: f64 = (0..16).map(|i| w[i * 3 + c] * w[i * 3 + c]).sum();
            assert!((dot - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    #[should_panic(expected = "duplicate tensor name")]
    fn arena_rejects_duplicate_names() {
        let mut a = Arena::new();
        a.alloc("x", &[2]);
        a.alloc("x", &[3]);
    }

    #[test]
    fn layout_hash_tracks_shapes_not_values() {
        let build = |dims: &[usize]| {
            let mut a = Arena::new();
            a.alloc("w", dims);
            a
        };
        let mut a = build(&[2, 3]);
        let b = build(&[2, 3]);
        let c = build(&[3, 2]);
        assert_eq!(a.layout_hash(), b.layout_hash());
        assert_ne!(a.layout_hash(), c.layout_hash());
        a.w[0] = 5.0;
        assert_eq!(a.layout_hash(), b.layout_hash());
    }

    #[test]
    fn linear_forward_matches_hand_loops() {
        let mut a = Arena::new();
        let mut rng = rng::root(4);
        let lin = Linear::new(&mut a, "l", 3, 2, 1.0, &mut rng);
        a.w[lin.w.clone()].copy_from_slice(&[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        a.w[lin.b.clone()].copy_from_slice(&[0.25, -0.75]);
        let x = [2.0, 1.0, -4.0];
        let mut y = [0.0; 2];
        lin.forward(&a, &x, &mut y);
        assert_eq!(y[0], 1.0 * 2.0 - 2.0 * 1.0 + 0.5 * (-4.0) + 0.25);
        assert_eq!(y[1], 3.0 * 1.0 - 1.0 * (-4.0) - 0.75);
    }

    #[test]
    fn zeroed_mlp_maps_anything_to_zero() {
        let mut a = Arena::new();
        let mut rng = rng::root(5);
        let mlp = Mlp::new(&mut a, "m", &[4, 8, 3], false, 1.0, &mut rng);
        a.w.iter_mut().for_each(|w| *w = 0.0);
        let mut c = MlpCache::default();
        let y = mlp.forward(&a, &[1.0, -2.0, 3.0, 4.0], &mut c);
        assert_eq!(y, &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = rng::root(6);
        for trial in 0..3 {
            let mut a = Arena::new();
            let mut net_rng = rng::root(100 + trial);
            let mlp = Mlp::new(&mut a, "m", &[5, 7, 3], trial == 1, 1.3, &mut net_rng);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let coef: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |a: &Arena| {
                let mut c = MlpCache::default();
                let y = mlp.forward(a, &x, &mut c);
                y.iter().zip(&coef).map(|(y, c)| y * c).sum::<f64>()
            };

            let mut c = MlpCache::default();
            mlp.forward(&a, &x, &mut c);
            a.zero_grad();
            let mut dx = vec![0.0; 5];
            mlp.backward(&mut a, &c, &coef, Some(&mut dx));

            for i in 0..a.len() {
                let num = fd_weight(&mut a, i, 1e-5, loss);
                assert!(
                    grad_close(a.g[i], num, 1e-3, 1e-9),
                    "trial {trial} param {i}: analytic {} numeric {num}",
                    a.g[i]
                );
            }
            // Input gradient via finite differences on x.
            for i in 0..5 {
                let mut xp = x.clone();
                let eps = 1e-5;
                xp[i] = x[i] + eps;
                let mut cache = MlpCache::default();
                let hi: f64 = mlp.forward(&a, &xp, &mut cache).iter().zip(&coef).map(|(y, c)| y * c).sum();
                xp[i] = x[i] - eps;
                let lo: f64 = mlp.forward(&a, &xp, &mut cache).iter().zip(&coef).map(|(y, c)| y * c).sum();
                let num = (hi - lo) / (2.0 * eps);
                assert!(grad_close(dx[i], num, 1e-3, 1e-9), "input {i}");
            }
        }
    }

    #[test]
    fn zero_output_gradient_leaves_all_parameter_gradients_zero() {
        let mut a = Arena::new();
        let mut rng = rng::root(7);
        let mlp = Mlp::new(&mut a, "m", &[3, 4, 2], true, 1.0, &mut rng);
        let mut c = MlpCache::default();
        mlp.forward(&a, &[0.3, -0.2, 0.9], &mut c);
        a.zero_grad();
        mlp.backward(&mut a, &c, &[0.0, 0.0], None);
        assert!(a.g.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn adam_first_step_matches_the_closed_form() {
        let mut opt = Adam::new(1);
        let mut w = [1.0];
        let g = [0.1];
        opt.step(&mut w, &g, 1e-3);
        // First step: mhat = g, vhat = g^2, so the update is lr*g/(|g|+eps).
        let want = 1.0 - 1e-3 * 0.1 / (0.1 + 1e-8);
        assert!((w[0] - want).abs() < 1e-15);
        assert_eq!(opt.t, 1);
    }
}
