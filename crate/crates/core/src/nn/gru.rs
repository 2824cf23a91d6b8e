//! Gated recurrent cell with hand-derived backward-through-time.
//!
//! Convention: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
//! n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h.

use super::{orthogonal, Arena, Span};
use crate::rng::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct Gru {
    wz: Span,
    uz: Span,
    bz: Span,
    wr: Span,
    ur: Span,
    br: Span,
    wn: Span,
    un: Span,
    bn: Span,
    pub nin: usize,
    pub nh: usize,
}

/// Everything the backward step needs from one forward step.
#[derive(Debug, Clone, Default)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// Un h, pre gating by r.
    m: Vec<f64>,
}

impl Gru {
    /// Input matrices take the caller's gain; recurrent matrices stay at
    /// gain 1 so repeated application preserves state norms.
    pub fn new(a: &mut Arena, name: &str, nin: usize, nh: usize, gain: f64, rng: &mut Rng) -> Gru {
        let mat = |a: &mut Arena, suffix: &str, rows: usize, cols: usize, g: f64, rng: &mut Rng| {
            let span = a.alloc(&format!("{name}.{suffix}"), &[rows, cols]);
            a.w[span.clone()].copy_from_slice(&orthogonal(rows, cols, g, rng));
            span
        };
        let wz = mat(a, "wz", nh, nin, gain, rng);
        let uz = mat(a, "uz", nh, nh, 1.0, rng);
        let bz = a.alloc(&format!("{name}.bz"), &[nh]);
        let wr = mat(a, "wr", nh, nin, gain, rng);
        let ur = mat(a, "ur", nh, nh, 1.0, rng);
        let br = a.alloc(&format!("{name}.br"), &[nh]);
        let wn = mat(a, "wn", nh, nin, gain, rng);
        let un = mat(a, "un", nh, nh, 1.0, rng);
        let bn = a.alloc(&format!("{name}.bn"), &[nh]);
        Gru { wz, uz, bz, wr, ur, br, wn, un, bn, nin, nh }
    }

    fn gate(a: &Arena, w: &Span, u: &Span, b: &Span, nin: usize, nh: usize, x: &[f64], h: &[f64], out: &mut [f64]) {
        let (w, u, b) = (&a.w[w.clone()], &a.w[u.clone()], &a.w[b.clone()]);
        for i in 0..nh {
            let mut acc = b[i];
            let wr = &w[i * nin..(i + 1) * nin];
            for j in 0..nin {
                acc += wr[j] * x[j];
            }
            let ur = &u[i * nh..(i + 1) * nh];
            for j in 0..nh {
                acc += ur[j] * h[j];
            }
            out[i] = acc;
        }
    }

    pub fn step(&self, a: &Arena, x: &[f64], h_prev: &[f64], h_next: &mut [f64], c: &mut GruStepCache) {
        debug_assert_eq!(x.len(), self.nin);
        debug_assert_eq!(h_prev.len(), self.nh);
        let nh = self.nh;
        c.x.clear();
        c.x.extend_from_slice(x);
        c.h_prev.clear();
        c.h_prev.extend_from_slice(h_prev);
        c.z.resize(nh, 0.0);
        c.r.resize(nh, 0.0);
        c.n.resize(nh, 0.0);
        c.m.resize(nh, 0.0);

        Self::gate(a, &self.wz, &self.uz, &self.bz, self.nin, nh, x, h_prev, &mut c.z);
        Self::gate(a, &self.wr, &self.ur, &self.br, self.nin, nh, x, h_prev, &mut c.r);
        c.z.iter_mut().for_each(|v| *v = sigmoid(*v));
        c.r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let un = &a.w[self.un.clone()];
        for i in 0..nh {
            let row = &un[i * nh..(i + 1) * nh];
            c.m[i] = row.iter().zip(h_prev).map(|(u, h)| u * h).sum();
        }
        let wn = &a.w[self.wn.clone()];
        let bn = &a.w[self.bn.clone()];
        for i in 0..nh {
            let row = &wn[i * self.nin..(i + 1) * self.nin];
            let pre: f64 = bn[i]
                + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
                + c.r[i] * c.m[i];
            c.n[i] = pre.tanh();
            h_next[i] = (1.0 - c.z[i]) * c.n[i] + c.z[i] * h_prev[i];
        }
    }

    /// Accumulate gradients for one step. `dh_next` is the loss gradient at
    /// the step's output; `dx` and `dh_prev` are accumulated into.
    pub fn backward_step(
        &self,
        a: &mut Arena,
        c: &GruStepCache,
        dh_next: &[f64],
        mut dx: Option<&mut [f64]>,
        dh_prev: &mut [f64],
    ) {
        let (nin, nh) = (self.nin, self.nh);
        let mut dzp = vec![0.0; nh];
        let mut drp = vec![0.0; nh];
        let mut dnp = vec![0.0; nh];
        let mut dm = vec![0.0; nh];
        for i in 0..nh {
            let dh = dh_next[i];
            let dn = dh * (1.0 - c.z[i]);
            let dz = dh * (c.h_prev[i] - c.n[i]);
            dh_prev[i] += dh * c.z[i];
            dnp[i] = dn * (1.0 - c.n[i] * c.n[i]);
            let dr = dnp[i] * c.m[i];
            dm[i] = dnp[i] * c.r[i];
            dzp[i] = dz * c.z[i] * (1.0 - c.z[i]);
            drp[i] = dr * c.r[i] * (1.0 - c.r[i]);
        }

        let spread = |a: &mut Arena, w: &Span, u: Option<(&Span, &[f64])>, b: &Span, d: &[f64], dx: Option<&mut [f64]>, dh_prev: Option<&mut [f64]>| {
            // Parameter gradients.
            let (ws, bs) = (w.start, b.start);
            for i in 0..nh {
                a.g[bs + i] += d[i];
                let grow = &mut a.g[ws + i * nin..ws + (i + 1) * nin];
                for j in 0..nin {
                    grow[j] += d[i] * c.x[j];
                }
            }
            if let Some((u, dvec)) = u {
                let us = u.start;
                for i in 0..nh {
                    let grow = &mut a.g[us + i * nh..us + (i + 1) * nh];
                    for j in 0..nh {
                        grow[j] += dvec[i] * c.h_prev[j];
                    }
                }
                if let Some(dh_prev) = dh_prev {
                    let uw = &a.w[u.clone()];
                    for i in 0..nh {
                        let row = &uw[i * nh..(i + 1) * nh];
                        for j in 0..nh {
                            dh_prev[j] += row[j] * dvec[i];
                        }
                    }
                }
            }
            if let Some(dx) = dx {
                let ww = &a.w[w.clone()];
                for i in 0..nh {
                    let row = &ww[i * nin..(i + 1) * nin];
                    for j in 0..nin {
                        dx[j] += row[j] * d[i];
                    }
                }
            }
        };

        spread(a, &self.wz, Some((&self.uz, &dzp)), &self.bz, &dzp, dx.as_deref_mut(), Some(&mut *dh_prev));
        spread(a, &self.wr, Some((&self.ur, &drp)), &self.br, &drp, dx.as_deref_mut(), Some(&mut *dh_prev));
        // The candidate path: Un h enters through the reset gate.
        spread(a, &self.wn, Some((&self.un, &dm)), &self.bn, &dnp, dx, Some(dh_prev));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fd_weight, grad_close};
    use crate::rng;
    use rand::Rng as _;

    fn run_sequence(a: &Arena, gru: &Gru, xs: &[Vec<f64>], coef: &[Vec<f64>]) -> f64 {
        let mut h = vec![0.0; gru.nh];
        let mut h2 = vec![0.0; gru.nh];
        let mut c = GruStepCache::default();
        let mut loss = 0.0;
        for (x, w) in xs.iter().zip(coef) {
            gru.step(a, x, &h, &mut h2, &mut c);
            std::mem::swap(&mut h, &mut h2);
            loss += h.iter().zip(w).map(|(h, w)| h * w).sum::<f64>();
        }
        loss
    }

    #[test]
    fn gradients_match_finite_differences_through_a_five_step_sequence() {
        let mut rng = rng::root(11);
        let mut a = Arena::new();
        let gru = Gru::new(&mut a, "g", 3, 4, 1.2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let coef: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        // Forward with caches kept per step, then reverse pass.
        let mut h = vec![0.0; 4];
        let mut caches = Vec::new();
        let mut hs = Vec::new();
        for x in &xs {
            let mut c = GruStepCache::default();
            let mut h2 = vec![0.0; 4];
            gru.step(&a, x, &h, &mut h2, &mut c);
            caches.push(c);
            h = h2;
            hs.push(h.clone());
        }
        a.zero_grad();
        let mut dh = vec![0.0; 4];
        let mut dxs = vec![vec![0.0; 3]; 5];
        for t in (0..5).rev() {
            for i in 0..4 {
                dh[i] += coef[t][i];
            }
            let mut dh_prev = vec![0.0; 4];
            gru.backward_step(&mut a, &caches[t], &dh, Some(&mut dxs[t]), &mut dh_prev);
            dh = dh_prev;
        }

        for i in 0..a.len() {
            let num = fd_weight(&mut a, i, 1e-5, |a| run_sequence(a, &gru, &xs, &coef));
            assert!(
                grad_close(a.g[i], num, 1e-3, 1e-9),
                "param {i}: analytic {} numeric {num}",
                a.g[i]
            );
        }

        // Input gradients, step 2 as a spot check.
        for j in 0..3 {
            let eps = 1e-5;
            let bump = |delta: f64| {
                let mut xs2 = xs.clone();
                xs2[2][j] += delta;
                run_sequence(&a, &gru, &xs2, &coef)
            };
            let num = (bump(eps) - bump(-eps)) / (2.0 * eps);
            assert!(grad_close(dxs[2][j], num, 1e-3, 1e-9), "input 2/{j}");
        }
    }

    #[test]
    fn zero_parameters_halve_the_state_each_step() {
        let mut rng = rng::root(12);
        let mut a = Arena::new();
        let gru = Gru::new(&mut a, "g", 2, 3, 1.0, &mut rng);
        a.w.iter_mut().for_each(|w| *w = 0.0);
        // With all weights zero: z = 1/2, n = 0, so h' = h/2 regardless of x.
        let mut h = vec![1.0, -2.0, 0.5];
        let mut h2 = vec![0.0; 3];
        let mut c = GruStepCache::default();
        for k in 1..=4 {
            gru.step(&a, &[3.0, -1.0], &h, &mut h2, &mut c);
            std::mem::swap(&mut h, &mut h2);
            let scale = 0.5f64.powi(k);
            assert!((h[0] - scale).abs() < 1e-15);
            assert!((h[1] + 2.0 * scale).abs() < 1e-15);
        }
    }
}
