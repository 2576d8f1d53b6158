//! Layer primitives and their backward passes.
//!
//! Loops run in a fixed order (batch, output channel, input channel, kernel
//! tap, row, column) so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Gradients of a convolution-like layer.
#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Row/column window for one kernel tap under zero padding: output indices
/// `lo..hi` read input indices `lo + offset..hi + offset`.
#[inline]
fn tap_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

fn check_conv(input: &Tensor4<impl Real>, weight: &Tensor4<impl Real>, bias_len: usize) -> Result<()> {
    let [oc, ic, kh, kw] = weight.shape();
    if ic != input.channels() {
        return Err(Error::shape(format!(
            "conv kernel expects {ic} input channels, input has {}",
            input.channels()
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    if bias_len != oc {
        return Err(Error::shape(format!("conv bias has {bias_len} entries for {oc} outputs")));
    }
    Ok(())
}

/// Same-padded 2D cross-correlation. `weight` is `(out, in, k, k)` with odd `k`.
pub fn conv2d<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    check_conv(input, weight, bias.len())?;
    let [n, ic, h, w] = input.shape();
    let [oc, _, k, _] = weight.shape();
    let pad = (k / 2) as isize;
    let plane = h * w;
    let wdata = weight.data();

    let mut out = Tensor4::zeros([n, oc, h, w]);
    let src = input.data();
    let dst_all = out.data_mut();
    for b in 0..n {
        for o in 0..oc {
            let dst = &mut dst_all[(b * oc + o) * plane..(b * oc + o + 1) * plane];
            dst.fill(bias[o]);
            for i in 0..ic {
                let in_plane = &src[(b * ic + i) * plane..(b * ic + i + 1) * plane];
                let taps = &wdata[(o * ic + i) * k * k..(o * ic + i + 1) * k * k];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = tap_range(w, dx);
                        let wv = taps[ky * k + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let s = &in_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            let d = &mut dst[y * w + x0..y * w + x1];
                            for (d, &s) in d.iter_mut().zip(s) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<LayerGrads<T>> {
    let [n, ic, h, w] = input.shape();
    let [oc, wic, k, _] = weight.shape();
    if wic != ic || grad_out.shape() != [n, oc, h, w] {
        return Err(Error::shape(format!(
            "conv backward: input {:?}, kernel {:?}, upstream {:?}",
            input.shape(),
            weight.shape(),
            grad_out.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let plane = h * w;
    let wdata = weight.data();
    let src = input.data();
    let g = grad_out.data();

    let mut grad_input = Tensor4::zeros([n, ic, h, w]);
    let mut grad_weight = Tensor4::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); oc];
    let gin = grad_input.data_mut();
    let gw = grad_weight.data_mut();

    for b in 0..n {
        for o in 0..oc {
            let g_plane = &g[(b * oc + o) * plane..(b * oc + o + 1) * plane];
            grad_bias[o] += g_plane.iter().copied().sum::<T>();
            for i in 0..ic {
                let in_plane = &src[(b * ic + i) * plane..(b * ic + i + 1) * plane];
                let gin_plane = &mut gin[(b * ic + i) * plane..(b * ic + i + 1) * plane];
                let base = (o * ic + i) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = tap_range(w, dx);
                        let wv = wdata[base + ky * k + kx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let span = sy * w + sx0..sy * w + sx0 + (x1 - x0);
                            let gr = &g_plane[y * w + x0..y * w + x1];
                            for (&gv, &sv) in gr.iter().zip(&in_plane[span.clone()]) {
                                acc += gv * sv;
                            }
                            for (d, &gv) in gin_plane[span].iter_mut().zip(gr) {
                                *d += wv * gv;
                            }
                        }
                        gw[base + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

pub fn relu<T: Real>(t: &Tensor4<T>) -> Tensor4<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Routes `grad` through a ReLU whose output was `activated`.
pub fn relu_backward<T: Real>(activated: &Tensor4<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    if activated.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "relu backward: activation {:?} vs upstream {:?}",
            activated.shape(),
            grad.shape()
        )));
    }
    let data = activated
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(grad.shape(), data)
}

/// 2x2 max pooling, stride 2. The returned map holds, for every output cell,
/// the flat in-plane index of the winning input; ties go to the first
/// element in row-major order.
pub fn maxpool2<T: Real>(t: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = t.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max pooling needs even spatial size, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = t.data();
    let dst = out.data_mut();
    let mut o = 0;
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = (2 * y) * w + 2 * x;
                let mut best = plane[best_idx];
                for idx in [(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1] {
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                dst[o] = best;
                argmax.push(best_idx as u32);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Real>(
    grad_out: &Tensor4<T>,
    argmax: &[u32],
    input_shape: [usize; 4],
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, h / 2, w / 2] || argmax.len() != grad_out.len() {
        return Err(Error::shape(format!(
            "pool backward: upstream {:?} does not match input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let mut grad = Tensor4::zeros(input_shape);
    let per_plane = (h / 2) * (w / 2);
    let dst = grad.data_mut();
    for (o, (&g, &idx)) in grad_out.data().iter().zip(argmax).enumerate() {
        let p = o / per_plane;
        dst[p * h * w + idx as usize] += g;
    }
    Ok(grad)
}

/// Transposed convolution with a 2x2 kernel and stride 2. `weight` is
/// `(in, out, 2, 2)`; each input cell writes one 2x2 output block.
pub fn upconv2<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let [n, ic, h, w] = input.shape();
    let [wic, oc, kh, kw] = weight.shape();
    if wic != ic || kh != 2 || kw != 2 || bias.len() != oc {
        return Err(Error::shape(format!(
            "transposed conv kernel {:?} (bias {}) does not fit input {:?}",
            weight.shape(),
            bias.len(),
            input.shape()
        )));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, oc, oh, ow]);
    let src = input.data();
    let wdata = weight.data();
    let dst_all = out.data_mut();
    for b in 0..n {
        for o in 0..oc {
            let dst = &mut dst_all[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            dst.fill(bias[o]);
            for i in 0..ic {
                let in_plane = &src[(b * ic + i) * h * w..(b * ic + i + 1) * h * w];
                let taps = &wdata[(i * oc + o) * 4..(i * oc + o + 1) * 4];
                for y in 0..h {
                    let row = &in_plane[y * w..(y + 1) * w];
                    for dy in 0..2 {
                        let out_row = &mut dst[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        let (w0, w1) = (taps[dy * 2], taps[dy * 2 + 1]);
                        for (pair, &v) in out_row.chunks_exact_mut(2).zip(row) {
                            pair[0] += w0 * v;
                            pair[1] += w1 * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upconv2_backward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<LayerGrads<T>> {
    let [n, ic, h, w] = input.shape();
    let [wic, oc, _, _] = weight.shape();
    let (oh, ow) = (2 * h, 2 * w);
    if wic != ic || grad_out.shape() != [n, oc, oh, ow] {
        return Err(Error::shape(format!(
            "transposed conv backward: input {:?}, kernel {:?}, upstream {:?}",
            input.shape(),
            weight.shape(),
            grad_out.shape()
        )));
    }
    let src = input.data();
    let wdata = weight.data();
    let g = grad_out.data();
    let mut grad_input = Tensor4::zeros(input.shape());
    let mut grad_weight = Tensor4::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); oc];
    let gin = grad_input.data_mut();
    let gw = grad_weight.data_mut();

    for b in 0..n {
        for o in 0..oc {
            let g_plane = &g[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            grad_bias[o] += g_plane.iter().copied().sum::<T>();
            for i in 0..ic {
                let in_plane = &src[(b * ic + i) * h * w..(b * ic + i + 1) * h * w];
                let gin_plane = &mut gin[(b * ic + i) * h * w..(b * ic + i + 1) * h * w];
                let base = (i * oc + o) * 4;
                let mut acc = [T::zero(); 4];
                for y in 0..h {
                    let in_row = &in_plane[y * w..(y + 1) * w];
                    let gin_row = &mut gin_plane[y * w..(y + 1) * w];
                    for dy in 0..2 {
                        let g_row = &g_plane[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        let (w0, w1) = (wdata[base + dy * 2], wdata[base + dy * 2 + 1]);
                        for ((pair, &v), gi) in g_row.chunks_exact(2).zip(in_row).zip(gin_row.iter_mut()) {
                            acc[dy * 2] += pair[0] * v;
                            acc[dy * 2 + 1] += pair[1] * v;
                            *gi += w0 * pair[0] + w1 * pair[1];
                        }
                    }
                }
                for (t, a) in acc.iter().enumerate() {
                    gw[base + t] += *a;
                }
            }
        }
    }
    Ok(LayerGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_all_ones() {
        let x = t([1, 1, 3, 3], vec![1.0; 9]);
        let k = t([1, 1, 3, 3], vec![1.0; 9]);
        let y = conv2d(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        assert_eq!(y.get(0, 0, 0, 0), 4.0);
        assert_eq!(y.get(0, 0, 2, 2), 4.0);
        assert_eq!(y.get(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_identity_and_bias() {
        let x = t([2, 1, 4, 5], (0..40).map(|v| v as f64 * 0.5 - 3.0).collect());
        let mut id = vec![0.0; 9];
        id[4] = 1.0;
        let y = conv2d(&x, &t([1, 1, 3, 3], id), &[0.0]).unwrap();
        assert_eq!(y, x);

        let y = conv2d(&x, &Tensor4::zeros([3, 1, 3, 3]), &[0.25, -1.0, 2.0]).unwrap();
        assert_eq!(y.shape(), [2, 3, 4, 5]);
        assert!(y.plane(1, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn conv_cross_correlation_orientation() {
        // Kernel tap (0, 1) (above center) reads the pixel above.
        let x = t([1, 1, 3, 3], (1..=9).map(f64::from).collect());
        let mut k = vec![0.0; 9];
        k[1] = 1.0;
        let y = conv2d(&x, &t([1, 1, 3, 3], k), &[0.0]).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 2.0);
        assert_eq!(y.get(0, 0, 0, 1), 0.0);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        let k = Tensor4::<f64>::zeros([1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_examples() {
        let x = t([1, 1, 1, 2], vec![-1.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        let neg = t([1, 1, 2, 2], vec![-1.0, -0.5, -3.0, -1e-9]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = t([1, 1, 2, 2], vec![0.0, 0.5, 3.0, 1e-9]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_examples() {
        let (y, arg) = maxpool2(&t([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let (y, arg) = maxpool2(&Tensor4::<f64>::filled([1, 1, 4, 4], 7.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(arg, vec![0, 2, 8, 10]);

        let (y, _) = maxpool2(&Tensor4::<f32>::zeros([1, 1, 48, 48])).unwrap();
        assert_eq!(y.shape(), [1, 1, 24, 24]);

        assert!(matches!(maxpool2(&Tensor4::<f64>::zeros([1, 1, 3, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 2.0, 1.0]);
        let (_, arg) = maxpool2(&x).unwrap();
        let g = maxpool2_backward(&t([1, 1, 1, 2], vec![10.0, 20.0]), &arg, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 10.0, 20.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upconv_examples() {
        let x = t([1, 1, 1, 1], vec![3.0]);
        let k = t([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = upconv2(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);

        let y = upconv2(&Tensor4::zeros([1, 2, 3, 3]), &Tensor4::filled([2, 2, 2, 2], 1.0), &[0.5, -0.5]).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -0.5));

        let y = upconv2(&Tensor4::<f32>::zeros([1, 4, 12, 12]), &Tensor4::zeros([4, 2, 2, 2]), &[0.0; 2]).unwrap();
        assert_eq!(y.shape(), [1, 2, 24, 24]);

        assert!(upconv2(&Tensor4::<f64>::zeros([1, 3, 2, 2]), &Tensor4::zeros([2, 2, 2, 2]), &[0.0; 2]).is_err());
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Finite-difference check of a layer through the scalar `sum(r * out)`.
    fn check_layer(
        fwd: impl Fn(&Tensor4<f64>, &Tensor4<f64>, &[f64]) -> Tensor4<f64>,
        grads: LayerGrads<f64>,
        x: &Tensor4<f64>,
        k: &Tensor4<f64>,
        b: &[f64],
        r: &[f64],
    ) {
        let loss = |x: &Tensor4<f64>, k: &Tensor4<f64>, b: &[f64]| -> f64 {
            fwd(x, k, b).data().iter().zip(r).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-7 * (1.0 + a.abs().max(n.abs()));
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (loss(&p, k, b) - loss(&m, k, b)) / (2.0 * h);
            assert!(close(grads.input.data()[i], num), "input {i}");
        }
        for i in 0..k.len() {
            let (mut p, mut m) = (k.clone(), k.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (loss(x, &p, b) - loss(x, &m, b)) / (2.0 * h);
            assert!(close(grads.weight.data()[i], num), "weight {i}");
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.to_vec(), b.to_vec());
            p[i] += h;
            m[i] -= h;
            let num = (loss(x, k, &p) - loss(x, k, &m)) / (2.0 * h);
            assert!(close(grads.bias[i], num), "bias {i}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        for ksize in [3, 1] {
            let x = t([2, 3, 5, 4], lcg(120, 1));
            let k = t([2, 3, ksize, ksize], lcg(6 * ksize * ksize, 2));
            let b = lcg(2, 3);
            let r = lcg(2 * 2 * 20, 4);
            let g = conv2d_backward(&x, &k, &t([2, 2, 5, 4], r.clone())).unwrap();
            check_layer(|x, k, b| conv2d(x, k, b).unwrap(), g, &x, &k, &b, &r);
        }
    }

    #[test]
    fn upconv_backward_matches_finite_differences() {
        let x = t([2, 3, 3, 2], lcg(36, 5));
        let k = t([3, 2, 2, 2], lcg(24, 6));
        let b = lcg(2, 7);
        let r = lcg(2 * 2 * 24, 8);
        let g = upconv2_backward(&x, &k, &t([2, 2, 6, 4], r.clone())).unwrap();
        check_layer(|x, k, b| upconv2(x, k, b).unwrap(), g, &x, &k, &b, &r);
    }
}
