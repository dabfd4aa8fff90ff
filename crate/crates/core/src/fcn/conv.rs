//! Float kernels. Every output element is accumulated sequentially in `f64`,
//! so results do not depend on thread count.

use rayon::prelude::*;

use super::FeatureMap;
use crate::error::{bail, Result};

/// Kernel shape `[c_out, c_in, k_h, k_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub c_out: usize,
    pub c_in: usize,
    pub k_h: usize,
    pub k_w: usize,
}

/// 2-D cross-correlation with zero padding and stride 1.
///
/// Output element `(co, y, x)` is `bias[co] + Σ_{ci, ky, kx} w·in`, summed in
/// that index order.
pub fn conv2d(
    input: &FeatureMap,
    kernel: &[f32],
    shape: KernelShape,
    bias: &[f32],
    padding: usize,
) -> Result<FeatureMap> {
    let KernelShape {
        c_out,
        c_in,
        k_h,
        k_w,
    } = shape;
    if input.channels != c_in {
        bail!(Data, "conv input has {} channels, kernel expects {c_in}", input.channels);
    }
    if kernel.len() != c_out * c_in * k_h * k_w || bias.len() != c_out {
        bail!(Data, "kernel or bias length does not match {shape:?}");
    }
    let (h, w) = (input.height, input.width);
    if h + 2 * padding < k_h || w + 2 * padding < k_w || k_h == 0 || k_w == 0 {
        bail!(Data, "kernel {k_h}x{k_w} larger than padded input {h}x{w}");
    }
    let (oh, ow) = (h + 2 * padding - k_h + 1, w + 2 * padding - k_w + 1);
    let src: Vec<f64> = input.data.iter().map(|&v| v as f64).collect();
    let plane_in = h * w;

    let mut out = vec![0f32; c_out * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(co, dst)| {
            let mut acc = vec![bias[co] as f64; oh * ow];
            for ci in 0..c_in {
                let plane = &src[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..k_h {
                    for kx in 0..k_w {
                        let wv = kernel[((co * c_in + ci) * k_h + ky) * k_w + kx] as f64;
                        // output x range whose tap lands inside the input row
                        let x0 = padding.saturating_sub(kx);
                        let x1 = (w + padding).saturating_sub(kx).min(ow);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = y + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let row = &plane[(iy - padding) * w..(iy - padding + 1) * w];
                            let ix0 = x0 + kx - padding;
                            let a = &mut acc[y * ow + x0..y * ow + x1];
                            for (o, &v) in a.iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = a as f32;
            }
        });
    FeatureMap::new(c_out, oh, ow, out)
}

/// Transposed convolution with a 2×2 kernel and stride 2; kernel layout
/// `[c_in, c_out, 2, 2]`.
pub fn up_conv2x2(
    input: &FeatureMap,
    kernel: &[f32],
    c_out: usize,
    bias: &[f32],
) -> Result<FeatureMap> {
    let c_in = input.channels;
    if kernel.len() != c_in * c_out * 4 || bias.len() != c_out {
        bail!(Data, "up-conv kernel or bias length does not match {c_in}->{c_out}");
    }
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (2 * h, 2 * w);
    let src: Vec<f64> = input.data.iter().map(|&v| v as f64).collect();
    let mut out = vec![0f32; c_out * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(co, dst)| {
            let mut acc = vec![bias[co] as f64; oh * ow];
            for ci in 0..c_in {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = kernel[((ci * c_out + co) * 2 + ky) * 2 + kx] as f64;
                        for y in 0..h {
                            let orow = (2 * y + ky) * ow;
                            for x in 0..w {
                                acc[orow + 2 * x + kx] += wv * plane[y * w + x];
                            }
                        }
                    }
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = a as f32;
            }
        });
    FeatureMap::new(c_out, oh, ow, out)
}

/// Inference batch norm, `γ·(x − μ)/√(σ² + ε) + β`.
pub fn batch_norm(
    input: &mut FeatureMap,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) {
    let n = input.plane_len();
    for (ch, plane) in input.data.chunks_exact_mut(n).enumerate() {
        let scale = gamma[ch] as f64 / (var[ch] as f64 + eps as f64).sqrt();
        let (mu, b) = (mean[ch] as f64, beta[ch] as f64);
        for v in plane {
            *v = (scale * (*v as f64 - mu) + b) as f32;
        }
    }
}

pub fn relu(input: &mut FeatureMap) {
    for v in &mut input.data {
        *v = v.max(0.0);
    }
}

/// 2×2 max pooling with stride 2.
pub fn max_pool2x2(input: &FeatureMap) -> Result<FeatureMap> {
    let (h, w) = (input.height, input.width);
    if h % 2 != 0 || w % 2 != 0 {
        bail!(Data, "max pooling needs even dims, got {h}x{w}");
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(input.channels * oh * ow);
    for ch in 0..input.channels {
        let p = input.plane(ch);
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                out.push(p[i].max(p[i + 1]).max(p[i + w]).max(p[i + w + 1]));
            }
        }
    }
    FeatureMap::new(input.channels, oh, ow, out)
}

/// Channel softmax per pixel, returned pixel-interleaved `H×W×C`.
pub fn softmax_hwc(input: &FeatureMap) -> Vec<f32> {
    let (c, n) = (input.channels, input.plane_len());
    let mut out = vec![0f32; n * c];
    let mut buf = vec![0f64; c];
    for px in 0..n {
        let mut max = f64::NEG_INFINITY;
        for (ch, b) in buf.iter_mut().enumerate() {
            *b = input.data[ch * n + px] as f64;
            max = max.max(*b);
        }
        let mut sum = 0.0;
        for b in buf.iter_mut() {
            *b = (*b - max).exp();
            sum += *b;
        }
        for (ch, b) in buf.iter().enumerate() {
            out[px * c + ch] = (b / sum) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = FeatureMap::from_fn(1, 6, 7, |_, r, c| (r * 7 + c) as f32 * 0.1);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let shape = KernelShape {
            c_out: 1,
            c_in: 1,
            k_h: 3,
            k_w: 3,
        };
        let y = conv2d(&x, &k, shape, &[0.0], 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = FeatureMap::from_fn(1, 5, 5, |_, _, _| 1.0);
        let shape = KernelShape {
            c_out: 1,
            c_in: 1,
            k_h: 3,
            k_w: 3,
        };
        let y = conv2d(&x, &[1.0; 9], shape, &[0.0], 1).unwrap();
        assert_eq!(y.get(0, 2, 2), 9.0);
        assert_eq!(y.get(0, 0, 0), 4.0);
        assert_eq!(y.get(0, 0, 2), 6.0);
    }

    #[test]
    fn shape_mismatch() {
        let x = FeatureMap::zeros(2, 4, 4);
        let shape = KernelShape {
            c_out: 1,
            c_in: 3,
            k_h: 3,
            k_w: 3,
        };
        assert!(matches!(
            conv2d(&x, &[0.0; 27], shape, &[0.0], 1),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn up_conv_scatters() {
        let x = FeatureMap::from_fn(1, 2, 2, |_, r, c| (1 + r * 2 + c) as f32);
        let y = up_conv2x2(&x, &[1.0, 2.0, 3.0, 4.0], 1, &[0.5]).unwrap();
        assert_eq!((y.height, y.width), (4, 4));
        // input (1,1) = 4 maps onto output rows 2..4, cols 2..4
        assert_eq!(y.get(0, 2, 2), 4.5);
        assert_eq!(y.get(0, 2, 3), 8.5);
        assert_eq!(y.get(0, 3, 2), 12.5);
        assert_eq!(y.get(0, 3, 3), 16.5);
    }

    #[test]
    fn bn_identity() {
        let eps = 1e-5f32;
        let mut x = FeatureMap::from_fn(2, 3, 3, |ch, r, c| (ch + r * c) as f32 - 1.5);
        let orig = x.clone();
        batch_norm(&mut x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0 - eps; 2], eps);
        for (a, b) in x.data.iter().zip(&orig.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_and_softmax() {
        let x = FeatureMap::from_fn(1, 2, 2, |_, r, c| (r * 2 + c) as f32);
        assert_eq!(max_pool2x2(&x).unwrap().data, vec![3.0]);
        let logits = FeatureMap::new(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p = softmax_hwc(&logits);
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
