//! Forward and backward kernels on raw NHWC buffers.
//!
//! Every reduction runs in a fixed order so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape m×k and
/// `op(b)` of shape k×n, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices have exactly the lengths implied by (m, k, n) and
    // the strides address only elements inside them.
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Upper bound on the im2col buffer, in elements. Convolutions run over
/// groups of whole images so the buffer stays in this budget.
const COL_BUDGET: usize = 1 << 20;

impl ConvGeom {
    fn image_in(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn image_rows(&self) -> usize {
        self.oh * self.ow
    }

    fn images_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.image_rows() * self.patch()).max(1)).clamp(1, self.n.max(1))
    }

    /// `(first image, geometry)` for each group of images.
    fn chunks(&self) -> impl Iterator<Item = (usize, ConvGeom)> + '_ {
        let step = self.images_per_chunk();
        (0..self.n).step_by(step).map(move |b0| {
            (
                b0,
                ConvGeom {
                    n: step.min(self.n - b0),
                    ..*self
                },
            )
        })
    }
}

pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.patch()];
    im2col_into(x, g, &mut cols);
    cols
}

fn im2col_into(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let patch = g.patch();
    let row_span = g.kw * g.cin;
    cols.fill(0.0);
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let r = (b * g.oh + oy) * g.ow + ox;
                let dst = &mut cols[r * patch..(r + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let x0 = ox as isize - g.pad_left as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = ((g.w as isize - x0).min(g.kw as isize)).max(0) as usize;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let src =
                        ((b * g.h + iy as usize) * g.w + (x0 + kx_lo as isize) as usize) * g.cin;
                    let len = (kx_hi - kx_lo) * g.cin;
                    let off = ky * row_span + kx_lo * g.cin;
                    dst[off..off + len].copy_from_slice(&x[src..src + len]);
                }
            }
        }
    }
}

pub fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.n * g.image_in()];
    col2im_add(cols, g, &mut dx);
    dx
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let patch = g.patch();
    let row_span = g.kw * g.cin;
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let r = (b * g.oh + oy) * g.ow + ox;
                let src = &cols[r * patch..(r + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let x0 = ox as isize - g.pad_left as isize;
                    let kx_lo = (-x0).max(0) as usize;
                    let kx_hi = ((g.w as isize - x0).min(g.kw as isize)).max(0) as usize;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let dst =
                        ((b * g.h + iy as usize) * g.w + (x0 + kx_lo as isize) as usize) * g.cin;
                    let len = (kx_hi - kx_lo) * g.cin;
                    let off = ky * row_span + kx_lo * g.cin;
                    for (d, s) in dx[dst..dst + len].iter_mut().zip(&src[off..off + len]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Convolution output `[rows, cout]` including bias.
pub fn conv_forward(x: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, co) = (g.patch(), g.cout);
    let mut out = vec![0.0; g.rows() * co];
    let mut cols = Vec::new();
    for (b0, cg) in g.chunks() {
        cols.resize(cg.rows() * p, 0.0);
        im2col_into(
            &x[b0 * g.image_in()..(b0 + cg.n) * g.image_in()],
            &cg,
            &mut cols,
        );
        let r0 = b0 * g.image_rows();
        gemm(
            cg.rows(),
            p,
            co,
            &cols,
            false,
            kernel,
            false,
            0.0,
            &mut out[r0 * co..(r0 + cg.rows()) * co],
        );
    }
    add_row_bias(&mut out, bias);
    out
}

/// Kernel gradient `[patch, cout]` from the layer input and output gradient.
pub fn conv_backward_kernel(x: &[f64], dy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, co) = (g.patch(), g.cout);
    let mut dk = vec![0.0; p * co];
    let mut cols = Vec::new();
    for (b0, cg) in g.chunks() {
        cols.resize(cg.rows() * p, 0.0);
        im2col_into(
            &x[b0 * g.image_in()..(b0 + cg.n) * g.image_in()],
            &cg,
            &mut cols,
        );
        let r0 = b0 * g.image_rows();
        gemm(
            p,
            cg.rows(),
            co,
            &cols,
            true,
            &dy[r0 * co..(r0 + cg.rows()) * co],
            false,
            1.0,
            &mut dk,
        );
    }
    dk
}

/// Input gradient `[n, h, w, cin]` from the output gradient and kernel.
pub fn conv_backward_input(dy: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, co) = (g.patch(), g.cout);
    let mut dx = vec![0.0; g.n * g.image_in()];
    let mut dcols = Vec::new();
    for (b0, cg) in g.chunks() {
        dcols.resize(cg.rows() * p, 0.0);
        let r0 = b0 * g.image_rows();
        gemm(
            cg.rows(),
            co,
            p,
            &dy[r0 * co..(r0 + cg.rows()) * co],
            false,
            kernel,
            true,
            0.0,
            &mut dcols,
        );
        col2im_add(
            &dcols,
            &cg,
            &mut dx[b0 * g.image_in()..(b0 + cg.n) * g.image_in()],
        );
    }
    dx
}

/// Adds `bias` to every row of a row-major `[rows, bias.len()]` buffer.
pub fn add_row_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Column sums of a row-major `[rows, cols]` buffer.
pub fn column_sums(x: &[f64], cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for row in x.chunks_exact(cols) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

/// 2×2 stride-2 max pooling (floor). Returns the output and, for every
/// output element, the flat input index it was taken from. Ties go to
/// the first element in row-major window order.
pub fn maxpool2(x: &[f64], n: usize, h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if x[i] > best || (dy == 0 && dx == 0) {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg)
}

pub struct BnBatch {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Vec<f64>,
}

/// Per-channel batch statistics over a `[rows, c]` view (population variance).
pub fn bn_train_forward(x: &[f64], c: usize, eps: f64) -> BnBatch {
    let rows = x.len() / c;
    let mut mean = column_sums(x, c);
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((v, xv), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = xv - m;
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
    let mut xhat = x.to_vec();
    for row in xhat.chunks_exact_mut(c) {
        for ((xv, m), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
            *xv = (*xv - m) * s;
        }
    }
    BnBatch {
        mean,
        var,
        inv_std,
        xhat,
    }
}

/// Input gradient of train-mode batch norm given `dxhat = dy * gamma`.
pub fn bn_train_backward(dxhat: &[f64], xhat: &[f64], inv_std: &[f64]) -> Vec<f64> {
    let c = inv_std.len();
    let rows = (xhat.len() / c) as f64;
    let sum_d = column_sums(dxhat, c);
    let mut sum_dx = vec![0.0; c];
    for (dr, xr) in dxhat.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ((s, d), xv) in sum_dx.iter_mut().zip(dr).zip(xr) {
            *s += d * xv;
        }
    }
    let mut dx = vec![0.0; dxhat.len()];
    for ((o, dr), xr) in dx
        .chunks_exact_mut(c)
        .zip(dxhat.chunks_exact(c))
        .zip(xhat.chunks_exact(c))
    {
        for ch in 0..c {
            o[ch] = inv_std[ch] / rows * (rows * dr[ch] - sum_d[ch] - xr[ch] * sum_dx[ch]);
        }
    }
    dx
}

/// Corner-aligned normalized coordinate of index `i` out of `size`.
#[inline]
pub fn norm_coord(i: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    }
}

/// Maps a normalized coordinate to continuous pixel space.
#[inline]
pub fn to_pixel(v: f64, size: usize) -> f64 {
    (v + 1.0) * (size.saturating_sub(1)) as f64 * 0.5
}

pub fn affine_grid(theta: &[f64], n: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut grid = Vec::with_capacity(n * oh * ow * 2);
    for b in 0..n {
        let t = &theta[b * 6..b * 6 + 6];
        for i in 0..oh {
            let yt = norm_coord(i, oh);
            for j in 0..ow {
                let xt = norm_coord(j, ow);
                grid.push(t[0] * xt + t[1] * yt + t[2]);
                grid.push(t[3] * xt + t[4] * yt + t[5]);
            }
        }
    }
    grid
}

pub fn affine_grid_backward(dgrid: &[f64], n: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dtheta = vec![0.0; n * 6];
    for b in 0..n {
        let d = &mut dtheta[b * 6..b * 6 + 6];
        for i in 0..oh {
            let yt = norm_coord(i, oh);
            for j in 0..ow {
                let xt = norm_coord(j, ow);
                let k = ((b * oh + i) * ow + j) * 2;
                let (gx, gy) = (dgrid[k], dgrid[k + 1]);
                d[0] += gx * xt;
                d[1] += gx * yt;
                d[2] += gx;
                d[3] += gy * xt;
                d[4] += gy * yt;
                d[5] += gy;
            }
        }
    }
    dtheta
}

#[derive(Clone, Copy, Debug)]
pub struct SampleGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
}

/// The four bilinear taps around a grid point: integer corner and weights.
#[inline]
fn taps(gx: f64, gy: f64, h: usize, w: usize) -> (isize, isize, f64, f64) {
    let px = to_pixel(gx, w);
    let py = to_pixel(gy, h);
    let x0 = math::floor(px);
    let y0 = math::floor(py);
    (x0 as isize, y0 as isize, px - x0, py - y0)
}

#[inline]
fn pixel(b: usize, y: isize, x: isize, g: &SampleGeom) -> Option<usize> {
    (y >= 0 && x >= 0 && (y as usize) < g.h && (x as usize) < g.w)
        .then(|| ((b * g.h + y as usize) * g.w + x as usize) * g.c)
}

pub fn bilinear_sample(x: &[f64], grid: &[f64], g: &SampleGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.oh * g.ow * g.c];
    for b in 0..g.n {
        for p in 0..g.oh * g.ow {
            let k = (b * g.oh * g.ow + p) * 2;
            if !(grid[k].is_finite() && grid[k + 1].is_finite()) {
                continue;
            }
            let (x0, y0, wx, wy) = taps(grid[k], grid[k + 1], g.h, g.w);
            let o = (b * g.oh * g.ow + p) * g.c;
            let corners = [
                (y0, x0, (1.0 - wy) * (1.0 - wx)),
                (y0, x0 + 1, (1.0 - wy) * wx),
                (y0 + 1, x0, wy * (1.0 - wx)),
                (y0 + 1, x0 + 1, wy * wx),
            ];
            for (yy, xx, wt) in corners {
                if let Some(src) = pixel(b, yy, xx, g) {
                    for ch in 0..g.c {
                        out[o + ch] += wt * x[src + ch];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the bilinear sampler w.r.t. the input (when `want_input`)
/// and the grid (when `want_grid`).
pub fn bilinear_sample_backward(
    x: &[f64],
    grid: &[f64],
    dout: &[f64],
    g: &SampleGeom,
    want_input: bool,
    want_grid: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = want_input.then(|| vec![0.0; x.len()]);
    let mut dgrid = want_grid.then(|| vec![0.0; grid.len()]);
    let sx = g.w.saturating_sub(1) as f64 * 0.5;
    let sy = g.h.saturating_sub(1) as f64 * 0.5;
    for b in 0..g.n {
        for p in 0..g.oh * g.ow {
            let k = (b * g.oh * g.ow + p) * 2;
            if !(grid[k].is_finite() && grid[k + 1].is_finite()) {
                continue;
            }
            let (x0, y0, wx, wy) = taps(grid[k], grid[k + 1], g.h, g.w);
            let o = (b * g.oh * g.ow + p) * g.c;
            let i00 = pixel(b, y0, x0, g);
            let i01 = pixel(b, y0, x0 + 1, g);
            let i10 = pixel(b, y0 + 1, x0, g);
            let i11 = pixel(b, y0 + 1, x0 + 1, g);
            if let Some(dx) = dx.as_mut() {
                let corners = [
                    (i00, (1.0 - wy) * (1.0 - wx)),
                    (i01, (1.0 - wy) * wx),
                    (i10, wy * (1.0 - wx)),
                    (i11, wy * wx),
                ];
                for (idx, wt) in corners {
                    if let Some(src) = idx {
                        for ch in 0..g.c {
                            dx[src + ch] += wt * dout[o + ch];
                        }
                    }
                }
            }
            if let Some(dgrid) = dgrid.as_mut() {
                let at = |idx: Option<usize>, ch: usize| idx.map_or(0.0, |i| x[i + ch]);
                let (mut gx, mut gy) = (0.0, 0.0);
                for ch in 0..g.c {
                    let (v00, v01, v10, v11) = (at(i00, ch), at(i01, ch), at(i10, ch), at(i11, ch));
                    let d = dout[o + ch];
                    gx += d * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                    gy += d * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                }
                dgrid[k] += gx * sx;
                dgrid[k + 1] += gy * sy;
            }
        }
    }
    (dx, dgrid)
}
