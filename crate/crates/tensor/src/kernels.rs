//! Slice-level forward and backward kernels used by the graph ops.
//!
//! Layouts are row-major: images are NCHW, kernels are OIKK (out, in, kh, kw).

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Spatial padding mode for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding so that output extent is `ceil(in / stride)`.
    /// Odd totals put the extra row/column at the bottom/right.
    Same,
    /// No padding; the kernel must fit inside the input.
    Valid,
}

/// Resolved shapes and offsets of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_extent(size: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(size);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return dim_err(format!(
                "conv2d wants NCHW input and OIKK kernel, got {input:?} and {kernel:?}"
            ));
        }
        if stride == 0 {
            return dim_err("conv2d stride must be positive");
        }
        let (batch, in_channels, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (out_channels, kin, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kin != in_channels {
            return dim_err(format!(
                "conv2d input has {in_channels} channels, kernel expects {kin}"
            ));
        }
        if kh != kw {
            return dim_err(format!("conv2d kernel must be square, got {kh}x{kw}"));
        }
        let k = kh;
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_extent(in_h, k, stride);
                let (ow, pl) = same_extent(in_w, k, stride);
                (oh, ow, pt, pl)
            }
            Padding::Valid => {
                if in_h < k || in_w < k {
                    return dim_err(format!(
                        "VALID conv: {k}x{k} kernel larger than {in_h}x{in_w} input"
                    ));
                }
                ((in_h - k) / stride + 1, (in_w - k) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel: k,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_pixels(&self) -> usize {
        self.in_h * self.in_w
    }

    /// Input coordinate hit by output coordinate `o` and kernel offset `kk`.
    #[inline]
    fn source(&self, o: usize, kk: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Output columns `[lo, hi)` whose input column for offset `kw` is in bounds,
    /// and the input column of `lo`.
    #[inline]
    fn valid_cols(&self, kw: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let pl = self.pad_left;
        let lo = if kw >= pl { 0 } else { (pl - kw).div_ceil(s) };
        // largest ow with ow*s + kw - pl <= in_w - 1
        let hi = if self.in_w + pl > kw {
            ((self.in_w - 1 + pl - kw) / s + 1).min(self.out_w)
        } else {
            0
        };
        let hi = hi.max(lo);
        (lo, hi, (lo * s + kw).saturating_sub(pl))
    }
}

/// Unfold one image (`C×H×W`) into a `(C·K·K) × (Ho·Wo)` patch matrix.
fn im2col<S: Scalar>(g: &ConvGeometry, image: &[S], cols: &mut [S]) {
    let k = g.kernel;
    let s = g.stride;
    let opix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &image[c * g.in_pixels()..(c + 1) * g.in_pixels()];
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let dst = &mut cols[row * opix..(row + 1) * opix];
                let (lo, hi, iw0) = g.valid_cols(kw);
                for oh in 0..g.out_h {
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    match g.source(oh, kh, g.pad_top, g.in_h) {
                        None => line.fill(S::zero()),
                        Some(ih) => {
                            let src = &plane[ih * g.in_w..(ih + 1) * g.in_w];
                            line[..lo].fill(S::zero());
                            line[hi..].fill(S::zero());
                            if s == 1 {
                                line[lo..hi].copy_from_slice(&src[iw0..iw0 + (hi - lo)]);
                            } else {
                                for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = src[iw0 + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into an image.
fn col2im<S: Scalar>(g: &ConvGeometry, cols: &[S], image: &mut [S]) {
    let k = g.kernel;
    let s = g.stride;
    let opix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.in_pixels()..(c + 1) * g.in_pixels()];
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let src = &cols[row * opix..(row + 1) * opix];
                let (lo, hi, iw0) = g.valid_cols(kw);
                for oh in 0..g.out_h {
                    let Some(ih) = g.source(oh, kh, g.pad_top, g.in_h) else {
                        continue;
                    };
                    let line = &src[oh * g.out_w + lo..oh * g.out_w + hi];
                    let dst = &mut plane[ih * g.in_w..(ih + 1) * g.in_w];
                    if s == 1 {
                        for (d, &v) in dst[iw0..iw0 + line.len()].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (j, &v) in line.iter().enumerate() {
                            let d = &mut dst[iw0 + j * s];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    g: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    bias: Option<&[S]>,
) -> Vec<S> {
    let opix = g.out_pixels();
    let plen = g.patch_len();
    let per_in = g.in_channels * g.in_pixels();
    let per_out = g.out_channels * opix;
    let mut out = vec![S::zero(); g.batch * per_out];
    let mut cols = vec![S::zero(); plen * opix];
    for n in 0..g.batch {
        im2col(g, &input[n * per_in..(n + 1) * per_in], &mut cols);
        let dst = &mut out[n * per_out..(n + 1) * per_out];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(opix).enumerate() {
                chunk.fill(b[o]);
            }
        }
        S::gemm(
            g.out_channels,
            plen,
            opix,
            kernel,
            plen,
            1,
            &cols,
            opix,
            1,
            S::one(),
            dst,
            opix,
            1,
        );
    }
    out
}

/// Gradients of a convolution; `None` entries were not requested.
pub struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub kernel: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub fn conv2d_backward<S: Scalar>(
    g: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    grad_out: &[S],
    want: (bool, bool, bool),
) -> ConvGrads<S> {
    let (want_input, want_kernel, want_bias) = want;
    let opix = g.out_pixels();
    let plen = g.patch_len();
    let per_in = g.in_channels * g.in_pixels();
    let per_out = g.out_channels * opix;
    let mut d_input = want_input.then(|| vec![S::zero(); input.len()]);
    let mut d_kernel = want_kernel.then(|| vec![S::zero(); kernel.len()]);
    let mut d_bias = want_bias.then(|| vec![S::zero(); g.out_channels]);
    let mut cols = vec![S::zero(); plen * opix];
    for n in 0..g.batch {
        let dy = &grad_out[n * per_out..(n + 1) * per_out];
        if let Some(db) = d_bias.as_mut() {
            for (o, chunk) in dy.chunks(opix).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<S>();
            }
        }
        if let Some(dw) = d_kernel.as_mut() {
            im2col(g, &input[n * per_in..(n + 1) * per_in], &mut cols);
            // dW[o, p] += dY[o, :] · cols[p, :]ᵀ
            S::gemm(
                g.out_channels,
                opix,
                plen,
                dy,
                opix,
                1,
                &cols,
                1,
                opix,
                S::one(),
                dw,
                plen,
                1,
            );
        }
        if let Some(dx) = d_input.as_mut() {
            // dcols = Wᵀ · dY
            S::gemm(
                plen,
                g.out_channels,
                opix,
                kernel,
                1,
                plen,
                dy,
                opix,
                1,
                S::zero(),
                &mut cols,
                opix,
                1,
            );
            col2im(g, &cols, &mut dx[n * per_in..(n + 1) * per_in]);
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}

/// `out[n, m] = Σ_d x[n, d]·w[d, m] + b[m]`.
pub fn dense_forward<S: Scalar>(
    rows: usize,
    inner: usize,
    cols: usize,
    x: &[S],
    w: &[S],
    b: &[S],
) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    S::gemm(
        rows,
        inner,
        cols,
        x,
        inner,
        1,
        w,
        cols,
        1,
        S::one(),
        &mut out,
        cols,
        1,
    );
    out
}

/// Batched `a·bᵀ` with `a: B×M×K`, `b: B×N×K`.
pub fn matmul_nt<S: Scalar>(
    batch: usize,
    m: usize,
    n: usize,
    k: usize,
    a: &[S],
    b: &[S],
) -> Vec<S> {
    let mut out = vec![S::zero(); batch * m * n];
    for i in 0..batch {
        S::gemm(
            m,
            k,
            n,
            &a[i * m * k..(i + 1) * m * k],
            k,
            1,
            &b[i * n * k..(i + 1) * n * k],
            1,
            k,
            S::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            n,
            1,
        );
    }
    out
}

pub fn upsample_nearest_forward<S: Scalar>(shape: &[usize], x: &[S], factor: usize) -> Vec<S> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / factor) * w..(y / factor + 1) * w];
            for (xo, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xo / factor];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<S: Scalar>(
    shape: &[usize],
    grad_out: &[S],
    factor: usize,
) -> Vec<S> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = (y / factor) * w + xo / factor;
                dst[i] = dst[i] + src[y * ow + xo];
            }
        }
    }
    dx
}

/// Non-overlapping 2×2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2_forward<S: Scalar>(shape: &[usize], x: &[S]) -> Vec<S> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(shape: &[usize], grad_out: &[S]) -> Vec<S> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut dx = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let g = grad_out[(p * oh + y) * ow + xo] * quarter;
                let i = 2 * y * w + 2 * xo;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    dx
}

/// Saved state of an instance normalization forward pass.
pub struct InstanceNormCache<S> {
    pub normalized: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Per-(n, c) spatial normalization followed by a per-(n, c) affine map.
///
/// `gamma`/`beta` are `N×C`. Returns the output and the cache for backward.
pub fn instance_norm_forward<S: Scalar>(
    shape: &[usize],
    x: &[S],
    gamma: &[S],
    beta: &[S],
    eps: S,
) -> (Vec<S>, InstanceNormCache<S>) {
    let planes = shape[0] * shape[1];
    let hw = shape[2] * shape[3];
    let count = S::from_usize(hw).expect("plane size fits the scalar type");
    let mut out = vec![S::zero(); x.len()];
    let mut normalized = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); planes];
    for p in 0..planes {
        let src = &x[p * hw..(p + 1) * hw];
        let mean = src.iter().copied().sum::<S>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / count;
        let inv = S::one() / (var + eps).sqrt();
        inv_std[p] = inv;
        let (gm, bt) = (gamma[p], beta[p]);
        for i in 0..hw {
            let xh = (src[i] - mean) * inv;
            normalized[p * hw + i] = xh;
            out[p * hw + i] = gm * xh + bt;
        }
    }
    (
        out,
        InstanceNormCache {
            normalized,
            inv_std,
        },
    )
}

pub struct InstanceNormGrads<S> {
    pub input: Vec<S>,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

pub fn instance_norm_backward<S: Scalar>(
    shape: &[usize],
    cache: &InstanceNormCache<S>,
    gamma: &[S],
    grad_out: &[S],
) -> InstanceNormGrads<S> {
    let planes = shape[0] * shape[1];
    let hw = shape[2] * shape[3];
    let count = S::from_usize(hw).expect("plane size fits the scalar type");
    let mut d_input = vec![S::zero(); grad_out.len()];
    let mut d_gamma = vec![S::zero(); planes];
    let mut d_beta = vec![S::zero(); planes];
    for p in 0..planes {
        let dz = &grad_out[p * hw..(p + 1) * hw];
        let xh = &cache.normalized[p * hw..(p + 1) * hw];
        let sum_dz: S = dz.iter().copied().sum();
        let sum_dz_xh: S = dz.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        d_beta[p] = sum_dz;
        d_gamma[p] = sum_dz_xh;
        // dx = γ·inv/HW · (HW·dz − Σdz − x̂·Σ(dz·x̂))
        let scale = gamma[p] * cache.inv_std[p] / count;
        for i in 0..hw {
            d_input[p * hw + i] = scale * (count * dz[i] - sum_dz - xh[i] * sum_dz_xh);
        }
    }
    InstanceNormGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    }
}

/// Shape left after removing `axes`, validating the axis list.
pub fn reduced_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            return dim_err(format!("axis {a} out of range for shape {shape:?}"));
        }
        if axes[..i].contains(&a) {
            return dim_err(format!("axis {a} repeated in reduction"));
        }
        if shape[a] == 0 {
            return dim_err(format!(
                "cannot reduce zero-extent axis {a} of shape {shape:?}"
            ));
        }
    }
    Ok(shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect())
}

/// For each input element, the flat index of the output element it reduces into.
fn reduction_targets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    // Stride of each kept axis in the output; zero for reduced axes.
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        if !axes.contains(&ax) {
            out_strides[ax] = acc;
            acc *= shape[ax];
        }
    }
    let numel: usize = shape.iter().product();
    let mut targets = Vec::with_capacity(numel);
    let mut coord = vec![0usize; rank];
    let mut current = 0usize;
    for _ in 0..numel {
        targets.push(current);
        for ax in (0..rank).rev() {
            coord[ax] += 1;
            current += out_strides[ax];
            if coord[ax] < shape[ax] {
                break;
            }
            current -= out_strides[ax] * coord[ax];
            coord[ax] = 0;
        }
    }
    targets
}

/// Sum over `axes`; output shape drops the reduced axes.
pub fn sum_axes<S: Scalar>(
    shape: &[usize],
    x: &[S],
    axes: &[usize],
) -> Result<(Vec<usize>, Vec<S>)> {
    let out_shape = reduced_shape(shape, axes)?;
    let mut out = vec![S::zero(); out_shape.iter().product()];
    for (&t, &v) in reduction_targets(shape, axes).iter().zip(x) {
        out[t] = out[t] + v;
    }
    Ok((out_shape, out))
}

/// Copy a reduced tensor back over the removed `axes` of `full_shape`.
pub fn broadcast_axes<S: Scalar>(full_shape: &[usize], axes: &[usize], reduced: &[S]) -> Vec<S> {
    reduction_targets(full_shape, axes)
        .iter()
        .map(|&t| reduced[t])
        .collect()
}
