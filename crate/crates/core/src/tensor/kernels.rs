//! Slice-level numeric kernels. Shapes are validated by the callers in
//! `ops`; everything here assumes consistent sizes.

use crate::par;
use crate::tensor::storage::Float;

/// Broadcast result shape of two operand shapes (numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid over the broadcast `out` shape; broadcast axes get 0.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 && out[i + offset] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every flat output index with the matching flat operand indices.
pub fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut o = 0;
    while o < n {
        let (mut a, mut b) = (ia, ib);
        for _ in 0..inner {
            f(o, a, b);
            a += ia_step;
            b += ib_step;
            o += 1;
        }
        // carry into the outer axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            idx[axis] += 1;
            ia += sa[axis];
            ib += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            ia -= sa[axis] * out[axis];
            ib -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

/// Elementwise binary op with broadcasting.
pub fn broadcast_binary<T: Float>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let n: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); n];
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| out[o] = f(a[ia], b[ib]));
    out
}

/// Sums a tensor of `from` shape down to the (broadcast-compatible) `to` shape.
pub fn sum_to<T: Float>(x: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return x.to_vec();
    }
    let n: usize = to.iter().product();
    let mut out = vec![T::zero(); n];
    let st = broadcast_strides(to, from);
    let sx = broadcast_strides(from, from);
    for_each_broadcast(from, &sx, &st, |_, ix, it| out[it] += x[ix]);
    out
}

/// `row += Σ_p arow[p] · b[p, :]` for row-major `b` with rows of `row.len()`.
fn axpy_rows<T: Float>(arow: &[T], b: &[T], row: &mut [T]) {
    let n = row.len();
    for (p, &ap) in arow.iter().enumerate() {
        if ap == T::zero() {
            continue;
        }
        for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
            *cv += ap * bv;
        }
    }
}

/// `row += Σ_p a[p, i] · b[p, :]` for `a: k×m`.
fn axpy_cols<T: Float>(a: &[T], m: usize, i: usize, b: &[T], row: &mut [T]) {
    let n = row.len();
    for (p, brow) in b.chunks_exact(n).enumerate() {
        let ap = a[p * m + i];
        if ap == T::zero() {
            continue;
        }
        for (cv, &bv) in row.iter_mut().zip(brow) {
            *cv += ap * bv;
        }
    }
}

/// Row-parallel `c = a · b` for row-major `a: m×k`, `b: k×n`.
pub fn gemm_nn<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    par::for_each_chunk(c, n, |i, row| {
        row.fill(T::zero());
        axpy_rows(&a[i * k..(i + 1) * k], b, row);
    });
}

/// `c = a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn gemm_nt<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(c.len(), m * n);
    par::for_each_chunk(c, n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *cv = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    });
}

/// `c = aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn gemm_tn<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    par::for_each_chunk(c, n, |i, row| {
        row.fill(T::zero());
        axpy_cols(a, m, i, b, row);
    });
}

/// Geometry of a 2-D convolution over `B×C×H×W` with `O×C×KH×KW` weights.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output positions `o` in `0..out_len` whose input coordinate
/// `o*stride + k - pad` falls inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad  and  o*stride + k - pad < in_len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let limit = in_len + pad; // o*stride + k < limit
    let hi = if limit > k { ((limit - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }
}

/// Visits every in-bounds `(output position, input position)` pair of kernel
/// tap `(ki, kj)`.
fn for_each_tap(g: &ConvGeom, ki: usize, kj: usize, mut f: impl FnMut(usize, usize)) {
    let (y0, y1) = valid_range(g.oh, g.h, ki, g.stride, g.padding);
    let (x0, x1) = valid_range(g.ow, g.w, kj, g.stride, g.padding);
    for oy in y0..y1 {
        let iy = oy * g.stride + ki - g.padding;
        for ox in x0..x1 {
            f(oy * g.ow + ox, iy * g.w + ox * g.stride + kj - g.padding);
        }
    }
}

/// Patch matrices `[B][C·KH·KW][OH·OW]` (or the per-sample transpose).
fn im2col<T: Float>(g: &ConvGeom, x: &[T], transposed: bool) -> Vec<T> {
    let (patch, plane, hw) = (g.patch_len(), g.out_plane(), g.in_plane());
    let mut col = vec![T::zero(); g.batch * patch * plane];
    par::for_each_chunk(&mut col, patch * plane, |b, dst| {
        let src = &x[b * g.in_ch * hw..][..g.in_ch * hw];
        for c in 0..g.in_ch {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let r = (c * g.kh + ki) * g.kw + kj;
                    let chan = &src[c * hw..][..hw];
                    if transposed {
                        for_each_tap(g, ki, kj, |o, i| dst[o * patch + r] = chan[i]);
                    } else {
                        let row = &mut dst[r * plane..][..plane];
                        for_each_tap(g, ki, kj, |o, i| row[o] = chan[i]);
                    }
                }
            }
        }
    });
    col
}

pub fn conv2d_forward<T: Float>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let col = im2col(g, x, false);
    let mut out = vec![T::zero(); g.batch * g.out_ch * plane];
    par::for_each_chunk(&mut out, plane, |bo, row| {
        let (b, o) = (bo / g.out_ch, bo % g.out_ch);
        row.fill(bias.map_or(T::zero(), |bv| bv[o]));
        axpy_rows(&w[o * patch..][..patch], &col[b * patch * plane..][..patch * plane], row);
    });
    out
}

/// Input gradient of [`conv2d_forward`].
pub fn conv2d_backward_input<T: Float>(g: &ConvGeom, gy: &[T], w: &[T]) -> Vec<T> {
    let (patch, plane, hw) = (g.patch_len(), g.out_plane(), g.in_plane());
    let mut gcol = vec![T::zero(); g.batch * patch * plane];
    par::for_each_chunk(&mut gcol, plane, |br, row| {
        let (b, r) = (br / patch, br % patch);
        axpy_cols(w, patch, r, &gy[b * g.out_ch * plane..][..g.out_ch * plane], row);
    });
    let mut gx = vec![T::zero(); g.batch * g.in_ch * hw];
    par::for_each_chunk(&mut gx, hw, |bc, dst| {
        let (b, c) = (bc / g.in_ch, bc % g.in_ch);
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let src = &gcol[(b * patch + r) * plane..][..plane];
                for_each_tap(g, ki, kj, |o, i| dst[i] += src[o]);
            }
        }
    });
    gx
}

/// Weight gradient of [`conv2d_forward`].
pub fn conv2d_backward_weight<T: Float>(g: &ConvGeom, gy: &[T], x: &[T]) -> Vec<T> {
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let col_t = im2col(g, x, true);
    let mut gw = vec![T::zero(); g.out_ch * patch];
    par::for_each_chunk(&mut gw, patch, |o, row| {
        for b in 0..g.batch {
            let gyp = &gy[(b * g.out_ch + o) * plane..][..plane];
            axpy_rows(gyp, &col_t[b * plane * patch..][..plane * patch], row);
        }
    });
    gw
}

/// Per-channel sum over batch and space, the bias gradient of both convolutions.
pub fn channel_sums<T: Float>(gy: &[T], batch: usize, ch: usize, plane: usize) -> Vec<T> {
    (0..ch)
        .map(|o| {
            (0..batch)
                .map(|b| gy[(b * ch + o) * plane..][..plane].iter().copied().sum::<T>())
                .sum()
        })
        .collect()
}

/// Geometry of a transposed convolution: input `B×C×H×W`, weights
/// `C×O×KH×KW`, output `B×O×((H−1)s+KH)×((W−1)s+KW)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvTGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvTGeom {
    fn patch_len(&self) -> usize {
        self.out_ch * self.kh * self.kw
    }

    /// Calls `f(r, input position, output position)` for every tap of
    /// output channel `o`, with `r` the weight column index.
    fn for_each_tap(&self, o: usize, mut f: impl FnMut(usize, usize, usize)) {
        for ki in 0..self.kh {
            for kj in 0..self.kw {
                let r = (o * self.kh + ki) * self.kw + kj;
                for iy in 0..self.h {
                    let oy = iy * self.stride + ki;
                    for ix in 0..self.w {
                        f(r, iy * self.w + ix, oy * self.ow + ix * self.stride + kj);
                    }
                }
            }
        }
    }
}

/// Gathers `gy` into `[B][O·KH·KW][H·W]` (or the per-sample transpose).
fn gather_taps<T: Float>(g: &ConvTGeom, gy: &[T], transposed: bool) -> Vec<T> {
    let (patch, hw, plane) = (g.patch_len(), g.h * g.w, g.oh * g.ow);
    let mut col = vec![T::zero(); g.batch * patch * hw];
    par::for_each_chunk(&mut col, patch * hw, |b, dst| {
        for o in 0..g.out_ch {
            let src = &gy[(b * g.out_ch + o) * plane..][..plane];
            g.for_each_tap(o, |r, i, out| {
                let at = if transposed { i * patch + r } else { r * hw + i };
                dst[at] = src[out];
            });
        }
    });
    col
}

pub fn conv_transpose2d_forward<T: Float>(
    g: &ConvTGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (patch, hw, plane) = (g.patch_len(), g.h * g.w, g.oh * g.ow);
    let mut col = vec![T::zero(); g.batch * patch * hw];
    par::for_each_chunk(&mut col, hw, |br, row| {
        let (b, r) = (br / patch, br % patch);
        axpy_cols(w, patch, r, &x[b * g.in_ch * hw..][..g.in_ch * hw], row);
    });
    let mut out = vec![T::zero(); g.batch * g.out_ch * plane];
    par::for_each_chunk(&mut out, plane, |bo, dst| {
        let (b, o) = (bo / g.out_ch, bo % g.out_ch);
        dst.fill(bias.map_or(T::zero(), |bv| bv[o]));
        let src = &col[b * patch * hw..][..patch * hw];
        g.for_each_tap(o, |r, i, out| dst[out] += src[r * hw + i]);
    });
    out
}

pub fn conv_transpose2d_backward_input<T: Float>(g: &ConvTGeom, gy: &[T], w: &[T]) -> Vec<T> {
    let (patch, hw) = (g.patch_len(), g.h * g.w);
    let gcol = gather_taps(g, gy, false);
    let mut gx = vec![T::zero(); g.batch * g.in_ch * hw];
    par::for_each_chunk(&mut gx, hw, |bc, row| {
        let (b, c) = (bc / g.in_ch, bc % g.in_ch);
        axpy_rows(&w[c * patch..][..patch], &gcol[b * patch * hw..][..patch * hw], row);
    });
    gx
}

pub fn conv_transpose2d_backward_weight<T: Float>(g: &ConvTGeom, gy: &[T], x: &[T]) -> Vec<T> {
    let (patch, hw) = (g.patch_len(), g.h * g.w);
    let gcol_t = gather_taps(g, gy, true);
    let mut gw = vec![T::zero(); g.in_ch * patch];
    par::for_each_chunk(&mut gw, patch, |c, row| {
        for b in 0..g.batch {
            let xp = &x[(b * g.in_ch + c) * hw..][..hw];
            axpy_rows(xp, &gcol_t[b * hw * patch..][..hw * patch], row);
        }
    });
    gw
}

/// Non-overlapping `k×k` average pooling over `planes` maps of `h×w`.
pub fn avg_pool<T: Float>(x: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let scale = T::one() / T::lit((k * k) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    par::for_each_chunk(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        acc += src[(oy * k + i) * w + ox * k + j];
                    }
                }
                dst[oy * ow + ox] = acc * scale;
            }
        }
    });
    out
}

pub fn avg_pool_backward<T: Float>(gy: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let scale = T::one() / T::lit((k * k) as f64);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                gx[p * h * w + y * w + x] = gy[p * oh * ow + (y / k) * ow + x / k] * scale;
            }
        }
    }
    gx
}

/// Non-overlapping `k×k` max pooling; returns values and flat argmax indices
/// (first maximum wins).
pub fn max_pool<T: Float>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = p * h * w + oy * k * w + ox * k;
                for i in 0..k {
                    for j in 0..k {
                        let idx = p * h * w + (oy * k + i) * w + ox * k + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-subtracted softmax along one axis.
pub fn softmax<T: Float>(x: &[T], outer: usize, len: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = T::neg_infinity();
            for a in 0..len {
                m = m.max(x[base + a * inner]);
            }
            let mut z = T::zero();
            for a in 0..len {
                z += (x[base + a * inner] - m).exp();
            }
            let logz = z.ln();
            for a in 0..len {
                let shifted = x[base + a * inner] - m;
                out[base + a * inner] = if log { shifted - logz } else { shifted.exp() / z };
            }
        }
    }
    out
}

/// Zero-mean unit-variance normalization of consecutive groups of `group`
/// values. Returns the normalized values and the per-group `1/σ`.
pub fn standardize<T: Float>(x: &[T], group: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::lit(group as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / group);
    for (src, dst) in x.chunks(group).zip(out.chunks_mut(group)) {
        let mean = src.iter().copied().sum::<T>() / n;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        rstd.push(r);
    }
    (out, rstd)
}

pub fn standardize_backward<T: Float>(gy: &[T], y: &[T], rstd: &[T], group: usize) -> Vec<T> {
    let n = T::lit(group as f64);
    let mut gx = vec![T::zero(); gy.len()];
    for (gi, ((g, yv), dst)) in gy
        .chunks(group)
        .zip(y.chunks(group))
        .zip(gx.chunks_mut(group))
        .enumerate()
    {
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gy = g.iter().zip(yv).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((d, &gv), &yy) in dst.iter_mut().zip(g).zip(yv) {
            *d = rstd[gi] * (gv - mean_g - yy * mean_gy);
        }
    }
    gx
}

/// Reorders axes: `out[i_perm] = x[i]` with `out.shape[k] = shape[perm[k]]`.
pub fn permute<T: Float>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let unit = vec![0usize; rank];
    let mut out = vec![T::zero(); x.len()];
    for_each_broadcast(&out_shape, &strides, &unit, |o, ix, _| out[o] = x[ix]);
    out
}
