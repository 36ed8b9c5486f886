#![allow(dead_code)]

use arst_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn randn<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        S::from_f64_lossy(v)
    })
    .unwrap()
}

/// Direct sliding-window convolution with its own padding arithmetic.
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    same: bool,
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride);
        let ow = wd.div_ceil(stride);
        let th = ((oh - 1) * stride + k).saturating_sub(h);
        let tw = ((ow - 1) * stride + k).saturating_sub(wd);
        (oh, ow, th / 2, tw / 2)
    } else {
        ((h - k) / stride + 1, (wd - k) / stride + 1, 0, 0)
    };
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pt as isize;
                                let ix = (xo * stride + kx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = wdat[((oc * c + ic) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}
