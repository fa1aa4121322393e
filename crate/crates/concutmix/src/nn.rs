//! Dense and convolutional primitives with hand-written exact backprop, plus SGD
//! with momentum. Everything is `f64` and scalar loops: models here are desk-scale
//! and the tests check analytic gradients against central finite differences, so
//! exactness beats throughput.
//!
//! Batch activations are planar: `[(sample * C + c) * H + y] * W + x` for feature
//! maps, `sample * dim + d` for vectors.

use rand::Rng;
use rand_distr::{Distribution, Normal};

// ── Linear ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn seeded<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = he_normal(in_dim, in_dim * out_dim, rng);
        Self { in_dim, out_dim, w, b: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.in_dim);
        let mut y = vec![0.0; n * self.out_dim];
        for i in 0..n {
            let xi = &x[i * self.in_dim..(i + 1) * self.in_dim];
            let yi = &mut y[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, out) in yi.iter_mut().enumerate() {
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (xv, wv) in xi.iter().zip(row) {
                    acc += xv * wv;
                }
                *out = acc;
            }
        }
        y
    }

    /// Returns `(grad_x, grad_w, grad_b)`.
    pub fn backward(&self, x: &[f64], grad_y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        debug_assert_eq!(grad_y.len(), n * self.out_dim);
        let mut gx = vec![0.0; n * self.in_dim];
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.out_dim];
        for i in 0..n {
            let xi = &x[i * self.in_dim..(i + 1) * self.in_dim];
            let gyi = &grad_y[i * self.out_dim..(i + 1) * self.out_dim];
            let gxi = &mut gx[i * self.in_dim..(i + 1) * self.in_dim];
            for (o, &g) in gyi.iter().enumerate() {
                gb[o] += g;
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for j in 0..self.in_dim {
                    gxi[j] += g * row[j];
                    grow[j] += g * xi[j];
                }
            }
        }
        (gx, gw, gb)
    }
}

// ── 3x3 convolution, stride 1, zero padding 1 ─────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv3x3 {
    pub fn seeded<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * 9;
        let w = he_normal(fan_in, out_ch * fan_in, rng);
        Self { in_ch, out_ch, w, b: vec![0.0; out_ch] }
    }

    pub fn forward(&self, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.in_ch * h * w);
        let mut y = vec![0.0; n * self.out_ch * h * w];
        for i in 0..n {
            for oc in 0..self.out_ch {
                let y_base = ((i * self.out_ch) + oc) * h * w;
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = self.b[oc];
                        for ic in 0..self.in_ch {
                            let x_base = ((i * self.in_ch) + ic) * h * w;
                            let w_base = ((oc * self.in_ch) + ic) * 9;
                            for ky in 0..3usize {
                                let iy = yy as i64 + ky as i64 - 1;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let ix = xx as i64 + kx as i64 - 1;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    acc += x[x_base + iy as usize * w + ix as usize]
                                        * self.w[w_base + ky * 3 + kx];
                                }
                            }
                        }
                        y[y_base + yy * w + xx] = acc;
                    }
                }
            }
        }
        y
    }

    /// Returns `(grad_x, grad_w, grad_b)`.
    pub fn backward(
        &self,
        x: &[f64],
        grad_y: &[f64],
        n: usize,
        h: usize,
        w: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.out_ch];
        for i in 0..n {
            for (oc, gb_oc) in gb.iter_mut().enumerate() {
                let y_base = ((i * self.out_ch) + oc) * h * w;
                for yy in 0..h {
                    for xx in 0..w {
                        let g = grad_y[y_base + yy * w + xx];
                        if g == 0.0 {
                            continue;
                        }
                        *gb_oc += g;
                        for ic in 0..self.in_ch {
                            let x_base = ((i * self.in_ch) + ic) * h * w;
                            let w_base = ((oc * self.in_ch) + ic) * 9;
                            for ky in 0..3usize {
                                let iy = yy as i64 + ky as i64 - 1;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let ix = xx as i64 + kx as i64 - 1;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    let xi = x_base + iy as usize * w + ix as usize;
                                    gx[xi] += g * self.w[w_base + ky * 3 + kx];
                                    gw[w_base + ky * 3 + kx] += g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

// ── Pooling ───────────────────────────────────────────────────────────────

/// 2x2 average pooling with stride 2; odd trailing rows/columns form smaller
/// windows averaged over their actual size. Output is `ceil(h/2) x ceil(w/2)`.
pub fn avg_pool2_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut y = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let x_base = plane * h * w;
        let y_base = plane * oh * ow;
        for oy in 0..oh {
            let y_lo = oy * 2;
            let y_hi = (y_lo + 2).min(h);
            for ox in 0..ow {
                let x_lo = ox * 2;
                let x_hi = (x_lo + 2).min(w);
                let mut acc = 0.0;
                for yy in y_lo..y_hi {
                    for xx in x_lo..x_hi {
                        acc += x[x_base + yy * w + xx];
                    }
                }
                y[y_base + oy * ow + ox] = acc / ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
            }
        }
    }
    (y, oh, ow)
}

pub fn avg_pool2_backward(grad_y: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut gx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let x_base = plane * h * w;
        let y_base = plane * oh * ow;
        for oy in 0..oh {
            let y_lo = oy * 2;
            let y_hi = (y_lo + 2).min(h);
            for ox in 0..ow {
                let x_lo = ox * 2;
                let x_hi = (x_lo + 2).min(w);
                let g = grad_y[y_base + oy * ow + ox] / ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
                for yy in y_lo..y_hi {
                    for xx in x_lo..x_hi {
                        gx[x_base + yy * w + xx] += g;
                    }
                }
            }
        }
    }
    gx
}

/// Mean over the spatial plane per channel: `n x c x h x w -> n x c`.
pub fn global_avg_pool_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut y = vec![0.0; n * c];
    for (i, out) in y.iter_mut().enumerate() {
        let base = i * plane;
        let mut acc = 0.0;
        for p in 0..plane {
            acc += x[base + p];
        }
        *out = acc / plane as f64;
    }
    y
}

pub fn global_avg_pool_backward(grad_y: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut gx = vec![0.0; n * c * plane];
    for i in 0..n * c {
        let g = grad_y[i] / plane as f64;
        for p in 0..plane {
            gx[i * plane + p] = g;
        }
    }
    gx
}

// ── ReLU ──────────────────────────────────────────────────────────────────

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// `pre` is the pre-activation input saved from the forward pass.
pub fn relu_backward(pre: &[f64], grad_y: &[f64]) -> Vec<f64> {
    pre.iter().zip(grad_y).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

// ── Row-wise L2 normalization ─────────────────────────────────────────────

pub const NORM_EPS: f64 = 1e-12;

/// `y = x / (||x|| + 1e-12)` per row. The epsilon keeps zero rows finite.
pub fn normalize_rows(x: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        let xi = &x[r * dim..(r + 1) * dim];
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = norm + NORM_EPS;
        for d in 0..dim {
            y[r * dim + d] = xi[d] / s;
        }
    }
    y
}

pub fn normalize_rows_backward(x: &[f64], grad_y: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    for r in 0..rows {
        let xi = &x[r * dim..(r + 1) * dim];
        let gyi = &grad_y[r * dim..(r + 1) * dim];
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = norm + NORM_EPS;
        let dot: f64 = gyi.iter().zip(xi).map(|(g, v)| g * v).sum();
        for d in 0..dim {
            let mut g = gyi[d] / s;
            if norm > 0.0 {
                g -= xi[d] * dot / (s * s * norm);
            }
            gx[r * dim + d] = g;
        }
    }
    gx
}

// ── SGD with momentum ─────────────────────────────────────────────────────

/// Classic momentum: `v <- momentum * v + g; p <- p - lr * v`. One velocity
/// buffer per parameter tensor, paired by position.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, tensor_sizes: &[usize]) -> Self {
        Self { momentum, velocity: tensor_sizes.iter().map(|&s| vec![0.0; s]).collect() }
    }

    pub fn num_tensors(&self) -> usize {
        self.velocity.len()
    }

    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>], lr: f64) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grads.len(), self.velocity.len());
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            assert_eq!(param.len(), vel.len());
            for ((p, &g), v) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

fn he_normal<R: Rng>(fan_in: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("He std is finite and positive");
    (0..len).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FD_EPS: f64 = 1e-5;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-12);
        diff / scale
    }

    /// Central finite differences of `f` with respect to `x`.
    fn fd_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + FD_EPS;
            let hi = f(x);
            x[i] = orig - FD_EPS;
            let lo = f(x);
            x[i] = orig;
            g[i] = (hi - lo) / (2.0 * FD_EPS);
        }
        g
    }

    fn randn(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dist = Normal::new(0.0, 1.0).unwrap();
        (0..len).map(|_| dist.sample(rng)).collect()
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Linear::seeded(5, 3, &mut rng);
        let n = 4;
        let mut x = randn(n * 5, &mut rng);
        let probe = randn(n * 3, &mut rng);
        // Scalar objective: <probe, forward(x)>.
        let loss = |layer: &Linear, x: &[f64]| -> f64 {
            layer.forward(x, n).iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let (gx, gw, gb) = layer.backward(&x, &probe, n);

        let fd_x = fd_grad(&mut x, |x| loss(&layer, x));
        assert!(rel_err(&gx, &fd_x) < 1e-7);

        let mut pert = layer.clone();
        let mut w = pert.w.clone();
        let fd_w = fd_grad(&mut w, |w| {
            pert.w.copy_from_slice(w);
            loss(&pert, &x)
        });
        assert!(rel_err(&gw, &fd_w) < 1e-7);

        let mut pert = layer.clone();
        let mut b = pert.b.clone();
        let fd_b = fd_grad(&mut b, |b| {
            pert.b.copy_from_slice(b);
            loss(&pert, &x)
        });
        assert!(rel_err(&gb, &fd_b) < 1e-7);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Conv3x3::seeded(2, 3, &mut rng);
        let (n, h, w) = (2, 4, 5);
        let mut x = randn(n * 2 * h * w, &mut rng);
        let probe = randn(n * 3 * h * w, &mut rng);
        let loss = |layer: &Conv3x3, x: &[f64]| -> f64 {
            layer.forward(x, n, h, w).iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let (gx, gw, gb) = layer.backward(&x, &probe, n, h, w);

        let fd_x = fd_grad(&mut x, |x| loss(&layer, x));
        assert!(rel_err(&gx, &fd_x) < 1e-7);

        let mut pert = layer.clone();
        let mut wts = pert.w.clone();
        let fd_w = fd_grad(&mut wts, |wts| {
            pert.w.copy_from_slice(wts);
            loss(&pert, &x)
        });
        assert!(rel_err(&gw, &fd_w) < 1e-7);

        let mut pert = layer.clone();
        let mut b = pert.b.clone();
        let fd_b = fd_grad(&mut b, |b| {
            pert.b.copy_from_slice(b);
            loss(&pert, &x)
        });
        assert!(rel_err(&gb, &fd_b) < 1e-7);
    }

    #[test]
    fn pooling_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Odd spatial size exercises the clipped windows.
        let (n, c, h, w) = (2, 3, 5, 3);
        let mut x = randn(n * c * h * w, &mut rng);
        let (_, oh, ow) = avg_pool2_forward(&x, n, c, h, w);
        let probe = randn(n * c * oh * ow, &mut rng);
        let loss = |x: &[f64]| -> f64 {
            avg_pool2_forward(x, n, c, h, w).0.iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let mut gy = vec![0.0; n * c * oh * ow];
        gy.copy_from_slice(&probe);
        let gx = avg_pool2_backward(&gy, n, c, h, w);
        let fd = fd_grad(&mut x, loss);
        assert!(rel_err(&gx, &fd) < 1e-7);

        let probe_g = randn(n * c, &mut rng);
        let loss_g = |x: &[f64]| -> f64 {
            global_avg_pool_forward(x, n, c, h, w).iter().zip(&probe_g).map(|(y, p)| y * p).sum()
        };
        let gx_g = global_avg_pool_backward(&probe_g, n, c, h, w);
        let fd_g = fd_grad(&mut x, loss_g);
        assert!(rel_err(&gx_g, &fd_g) < 1e-7);
    }

    #[test]
    fn normalize_rows_contract_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (rows, dim) = (4, 6);
        let mut x = randn(rows * dim, &mut rng);
        let y = normalize_rows(&x, rows, dim);
        for r in 0..rows {
            let norm: f64 = y[r * dim..(r + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        let probe = randn(rows * dim, &mut rng);
        let loss = |x: &[f64]| -> f64 {
            normalize_rows(x, rows, dim).iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let gx = normalize_rows_backward(&x, &probe, rows, dim);
        let fd = fd_grad(&mut x, loss);
        assert!(rel_err(&gx, &fd) < 1e-6);
    }

    #[test]
    fn normalize_zero_row_stays_finite() {
        let x = vec![0.0; 3];
        let y = normalize_rows(&x, 1, 3);
        assert!(y.iter().all(|v| v.is_finite()));
        let gx = normalize_rows_backward(&x, &[1.0, 2.0, 3.0], 1, 3);
        assert!(gx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn relu_masks_by_preactivation_sign() {
        let pre = vec![-1.0, 0.0, 2.0];
        assert_eq!(relu_forward(&pre), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&pre, &[5.0, 5.0, 5.0]), vec![0.0, 0.0, 5.0]);
    }

    #[test]
    fn sgd_momentum_hand_example() {
        let mut opt = SgdMomentum::new(0.9, &[2]);
        let mut p = vec![1.0, -1.0];
        let g = vec![0.5, 0.25];
        opt.step(&mut [&mut p], &[&g], 0.1);
        // v = g, p -= lr*v
        assert_eq!(p, vec![1.0 - 0.05, -1.0 - 0.025]);
        opt.step(&mut [&mut p], &[&g], 0.1);
        // v = 0.9*g + g = 1.9g
        assert!((p[0] - (0.95 - 0.1 * 0.95)).abs() < 1e-15);
        assert!((p[1] - (-1.025 - 0.1 * 0.475)).abs() < 1e-15);
    }
}
