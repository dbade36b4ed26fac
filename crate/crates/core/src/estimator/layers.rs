//! Dense building blocks with hand-written backward passes.
//!
//! Convolutions lower to a single GEMM through an im2col buffer. Parameters
//! live in one flat `f64` slice addressed by offsets so that the optimiser,
//! the checkpoint format and the finite-difference checks all see a plain
//! vector.

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

/// One `C×H×W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel concatenation `[self; other]`.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Inverse of [`Tensor::concat`].
    pub fn split(self, first: usize) -> (Tensor, Tensor) {
        let n = first * self.plane_len();
        let (h, w) = (self.h, self.w);
        let mut a = self.data;
        let b = a.split_off(n);
        let rest = self.c - first;
        (Tensor::from_vec(first, h, w, a), Tensor::from_vec(rest, h, w, b))
    }
}

/// `C = A·B + beta·C` for row-major operands, with optional transposition of `A` or `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square same-padded convolution with stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, input: &Tensor) -> Vec<f64> {
        let (h, w, k) = (input.h, input.w, self.k);
        let hw = h * w;
        let pad = (k / 2) as isize;
        let mut cols = vec![0.0; self.fan_in() * hw];
        for ci in 0..self.cin {
            let src = input.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let s_row = sy as usize * w;
                        let d = &mut dst[y * w + x_lo..y * w + x_hi];
                        let s0 = (s_row as isize + x_lo as isize + dx) as usize;
                        d.copy_from_slice(&src[s0..s0 + d.len()]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Tensor {
        let k = self.k;
        let hw = h * w;
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let d0 = (sy as isize * w as isize + x_lo as isize + dx) as usize;
                        let s = &src[y * w + x_lo..y * w + x_hi];
                        for (d, v) in dst[d0..d0 + s.len()].iter_mut().zip(s) {
                            *d += v;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        debug_assert_eq!(input.c, self.cin);
        let hw = input.plane_len();
        let mut out = Tensor::zeros(self.cout, input.h, input.w);
        for (co, plane) in out.data.chunks_exact_mut(hw).enumerate() {
            plane.fill(params[self.b_off + co]);
        }
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        if self.k == 1 {
            gemm(self.cout, self.cin, hw, weights, false, &input.data, false, 1.0, &mut out.data);
        } else {
            let cols = self.im2col(input);
            gemm(self.cout, self.fan_in(), hw, weights, false, &cols, false, 1.0, &mut out.data);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, params: &[f64], input: &Tensor, d_out: &Tensor, grad: &mut [f64], need_input: bool) -> Option<Tensor> {
        let hw = input.plane_len();
        for (co, plane) in d_out.data.chunks_exact(hw).enumerate() {
            grad[self.b_off + co] += plane.iter().sum::<f64>();
        }
        let fan = self.fan_in();
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let gw = &mut grad[self.w_off..self.w_off + self.weight_len()];
        if self.k == 1 {
            gemm(self.cout, hw, fan, &d_out.data, false, &input.data, true, 1.0, gw);
            if !need_input {
                return None;
            }
            let mut d_in = Tensor::zeros(self.cin, input.h, input.w);
            gemm(fan, self.cout, hw, weights, true, &d_out.data, false, 0.0, &mut d_in.data);
            return Some(d_in);
        }
        let cols = self.im2col(input);
        gemm(self.cout, hw, fan, &d_out.data, false, &cols, true, 1.0, gw);
        if !need_input {
            return None;
        }
        let mut d_cols = vec![0.0; fan * hw];
        gemm(fan, self.cout, hw, weights, true, &d_out.data, false, 0.0, &mut d_cols);
        Some(self.col2im(&d_cols, input.h, input.w))
    }
}

/// Fully connected layer `y = W·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.w_off..self.w_off + self.inputs * self.outputs];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                params[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_in = self.inputs;
        let mut dx = vec![0.0; n_in];
        for (o, &g) in dy.iter().enumerate() {
            grad[self.b_off + o] += g;
            let row = self.w_off + o * n_in;
            for i in 0..n_in {
                grad[row + i] += g * x[i];
                dx[i] += g * params[row + i];
            }
        }
        dx
    }
}

pub(crate) fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

pub(crate) fn leaky_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        *v = leaky(*v);
    }
}

/// Backward through leaky ReLU given its output (the sign is preserved).
pub(crate) fn leaky_backward(out: &[f64], d: &mut [f64]) {
    for (g, &y) in d.iter_mut().zip(out) {
        if y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// 2×2 mean pooling.
pub(crate) fn avg_pool2(input: &Tensor) -> Tensor {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let src = input.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let r0 = &src[2 * y * input.w..(2 * y + 1) * input.w];
            let r1 = &src[(2 * y + 1) * input.w..(2 * y + 2) * input.w];
            for x in 0..w {
                dst[y * w + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(d_out: &Tensor) -> Tensor {
    let (h, w) = (d_out.h * 2, d_out.w * 2);
    let mut d_in = Tensor::zeros(d_out.c, h, w);
    for c in 0..d_out.c {
        let src = d_out.plane(c);
        let dst = &mut d_in.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * d_out.w + x / 2];
            }
        }
    }
    d_in
}

/// Nearest-neighbour 2× upsampling.
pub(crate) fn upsample2(input: &Tensor) -> Tensor {
    let (h, w) = (input.h * 2, input.w * 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let src = input.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(d_out: &Tensor) -> Tensor {
    let (h, w) = (d_out.h / 2, d_out.w / 2);
    let mut d_in = Tensor::zeros(d_out.c, h, w);
    for c in 0..d_out.c {
        let src = d_out.plane(c);
        let dst = &mut d_in.data[c * h * w..(c + 1) * h * w];
        for y in 0..d_out.h {
            for x in 0..d_out.w {
                dst[(y / 2) * w + x / 2] += src[y * d_out.w + x];
            }
        }
    }
    d_in
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the reference.
    fn naive_conv(conv: &Conv, params: &[f64], input: &Tensor) -> Tensor {
        let (h, w, k) = (input.h as isize, input.w as isize, conv.k as isize);
        let pad = k / 2;
        let mut out = Tensor::zeros(conv.cout, input.h, input.w);
        for co in 0..conv.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = params[conv.b_off + co];
                    for ci in 0..conv.cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                let wi = conv.w_off + ((co * conv.cin + ci) * conv.k + ky as usize) * conv.k + kx as usize;
                                acc += params[wi] * input.data[(ci * input.h + sy as usize) * input.w + sx as usize];
                            }
                        }
                    }
                    out.data[(co * input.h + y as usize) * input.w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for k in [1, 3] {
            let conv = Conv {
                cin: 3,
                cout: 4,
                k,
                w_off: 2,
                b_off: 2 + 4 * 3 * k * k,
            };
            let params = pseudo(conv.b_off + 4, 1);
            let input = Tensor::from_vec(3, 5, 7, pseudo(3 * 35, 2));
            let fast = conv.forward(&params, &input);
            let slow = naive_conv(&conv, &params, &input);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let conv = Conv {
            cin: 2,
            cout: 3,
            k: 3,
            w_off: 0,
            b_off: 54,
        };
        let params = pseudo(57, 3);
        let input = Tensor::from_vec(2, 4, 5, pseudo(40, 4));
        let weights = Tensor::from_vec(3, 4, 5, pseudo(60, 5));
        // loss = <weights, conv(input)>
        let loss = |p: &[f64], x: &Tensor| -> f64 {
            conv.forward(p, x).data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; 57];
        let d_in = conv.backward(&params, &input, &weights, &mut grad, true).unwrap();
        let h = 1e-6;
        for i in 0..57 {
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p, &input);
            p[i] -= 2.0 * h;
            let down = loss(&p, &input);
            assert!(((up - down) / (2.0 * h) - grad[i]).abs() < 1e-8);
        }
        for i in 0..40 {
            let mut x = input.clone();
            x.data[i] += h;
            let up = loss(&params, &x);
            x.data[i] -= 2.0 * h;
            let down = loss(&params, &x);
            assert!(((up - down) / (2.0 * h) - d_in.data[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let x = Tensor::from_vec(2, 4, 6, pseudo(48, 7));
        let y = Tensor::from_vec(2, 2, 3, pseudo(12, 8));
        let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>();
        // <pool(x), y> == <x, pool^T(y)>
        assert!((dot(&avg_pool2(&x), &y) - dot(&x, &avg_pool2_backward(&y))).abs() < 1e-12);
        assert!((dot(&upsample2(&y), &x) - dot(&y, &upsample2_backward(&x))).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec(2, 2, 2, pseudo(8, 9));
        let b = Tensor::from_vec(1, 2, 2, pseudo(4, 10));
        let (a2, b2) = a.concat(&b).split(2);
        assert_eq!((a2, b2), (a, b));
    }
}
