//! Slice-level kernels shared by the forward and backward passes.
//!
//! Every kernel computes each output row from its own input row with a
//! fixed loop order, so a row's result never depends on which other rows
//! are present in the batch.

use alloc::vec;
use alloc::vec::Vec;

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Geometry of a 2-D convolution over `[batch, height, width, channels]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn positions(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }

    /// Visits every `(column index, source index)` pair of the im2col matrix
    /// whose source pixel lies inside the image.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize)) {
        let patch = self.patch_len();
        for b in 0..self.batch {
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    let row = (b * self.out_height + oy) * self.out_width + ox;
                    for ky in 0..self.kernel {
                        let y = (oy * self.stride + ky) as isize - self.padding as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let x = (ox * self.stride + kx) as isize - self.padding as isize;
                            if x < 0 || x >= self.width as isize {
                                continue;
                            }
                            let src = ((b * self.height + y as usize) * self.width + x as usize)
                                * self.channels;
                            let col = row * patch + (ky * self.kernel + kx) * self.channels;
                            for c in 0..self.channels {
                                visit(col + c, src + c);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.positions() * self.patch_len()];
        self.for_each_tap(|col, src| cols[col] = input[src]);
        cols
    }

    pub fn col2im_acc(&self, cols: &[f64], out: &mut [f64]) {
        self.for_each_tap(|col, src| out[src] += cols[col]);
    }
}

pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = libm::exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| libm::exp(x - max)).sum();
    let log_z = max + libm::log(sum);
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - log_z;
    }
}

pub fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums `src` (length a multiple of `period`) into a `period`-long buffer.
pub fn fold_into(dst: &mut [f64], src: &[f64]) {
    let period = dst.len();
    for chunk in src.chunks_exact(period) {
        add_into(dst, chunk);
    }
}
