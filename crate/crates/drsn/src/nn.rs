//! Standard convolution and activations with backward passes.
//!
//! Convolutions are stride 1 with zero same-padding of `(kh-1)/2, (kw-1)/2`,
//! so spatial dimensions are preserved. The forward pass lowers each sample
//! to a column matrix (`im2col`) and contracts it with the kernel matrix;
//! the backward pass is the exact adjoint of that lowering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::{rf, Real};
use crate::tensor::Tensor4;

/// Convolution weights of shape `(out_c, in_c, kh, kw)`, bias of length
/// `out_c`, and matching gradient accumulators.
#[derive(Clone, Debug)]
pub struct ConvLayer<R: Real = f64> {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<R>,
    pub bias: Vec<R>,
    pub grad_weights: Vec<R>,
    pub grad_bias: Vec<R>,
}

impl<R: Real> ConvLayer<R> {
    fn validated(in_c: usize, out_c: usize, kh: usize, kw: usize) -> Result<()> {
        if in_c == 0 || out_c == 0 || kh == 0 || kw == 0 {
            return Err(Error::Dimension(format!(
                "conv dims must be >= 1, got in_c={in_c} out_c={out_c} kernel={kh}x{kw}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Dimension(format!(
                "kernel dims must be odd for same padding, got {kh}x{kw}"
            )));
        }
        Ok(())
    }

    /// Layer with all weights and biases zero.
    pub fn zeros(in_c: usize, out_c: usize, kh: usize, kw: usize) -> Result<ConvLayer<R>> {
        Self::validated(in_c, out_c, kh, kw)?;
        let wlen = out_c * in_c * kh * kw;
        Ok(ConvLayer {
            in_c,
            out_c,
            kh,
            kw,
            weights: vec![R::zero(); wlen],
            bias: vec![R::zero(); out_c],
            grad_weights: vec![R::zero(); wlen],
            grad_bias: vec![R::zero(); out_c],
        })
    }

    /// Glorot-uniform weights `U(-s, s)` with
    /// `s = sqrt(6 / (in_c*kh*kw + out_c*kh*kw))`; biases zero.
    pub fn glorot(
        in_c: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        rng: &mut SplitMix64,
    ) -> Result<ConvLayer<R>> {
        let mut layer = Self::zeros(in_c, out_c, kh, kw)?;
        let s = (6.0 / ((in_c * kh * kw + out_c * kh * kw) as f64)).sqrt();
        for w in layer.weights.iter_mut() {
            *w = rf::<R>(rng.uniform(-s, s)).snap_f32();
        }
        Ok(layer)
    }

    /// Weight index for `(out_c, in_c, ky, kx)`.
    #[inline]
    pub fn widx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_c + ic) * self.kh + ky) * self.kw + kx
    }

    pub fn zero_grads(&mut self) {
        self.grad_weights.fill(R::zero());
        self.grad_bias.fill(R::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Lowers sample `i` of `x` to columns: row `ic*kh*kw + ky*kw + kx`, column
/// `oy*w + ox` holds `x[i, ic, oy+ky-pad_h, ox+kx-pad_w]`, zero out of bounds.
pub(crate) fn fill_columns_std<R: Real>(
    x: &Tensor4<R>,
    i: usize,
    kh: usize,
    kw: usize,
    cols: &mut [R],
) {
    let (_, in_c, h, w) = x.shape();
    let hw = h * w;
    let (pad_h, pad_w) = ((kh - 1) / 2, (kw - 1) / 2);
    for ic in 0..in_c {
        let plane = x.plane(i, ic);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ic * kh + ky) * kw + kx;
                let out = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..h {
                    let iy = oy + ky;
                    let dst = &mut out[oy * w..(oy + 1) * w];
                    if iy < pad_h || iy >= h + pad_h {
                        dst.fill(R::zero());
                        continue;
                    }
                    let src = &plane[(iy - pad_h) * w..(iy - pad_h + 1) * w];
                    for ox in 0..w {
                        let ix = ox + kx;
                        dst[ox] = if ix < pad_w || ix >= w + pad_w {
                            R::zero()
                        } else {
                            src[ix - pad_w]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`fill_columns_std`]: scatters column gradients back onto the
/// input plane gradients for one sample.
pub(crate) fn scatter_columns_std<R: Real>(
    dcols: &[R],
    dx_sample: &mut [R],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) {
    let hw = h * w;
    let (pad_h, pad_w) = ((kh - 1) / 2, (kw - 1) / 2);
    for ic in 0..in_c {
        let plane = &mut dx_sample[ic * hw..(ic + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ic * kh + ky) * kw + kx;
                let src = &dcols[row * hw..(row + 1) * hw];
                for oy in 0..h {
                    let iy = oy + ky;
                    if iy < pad_h || iy >= h + pad_h {
                        continue;
                    }
                    let dst = &mut plane[(iy - pad_h) * w..(iy - pad_h + 1) * w];
                    for ox in 0..w {
                        let ix = ox + kx;
                        if ix >= pad_w && ix < w + pad_w {
                            dst[ix - pad_w] += src[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_forward_shapes<R: Real>(x: &Tensor4<R>, layer: &ConvLayer<R>) -> Result<()> {
    if x.c() != layer.in_c {
        return Err(Error::Dimension(format!(
            "input has {} channels, layer expects {}",
            x.c(),
            layer.in_c
        )));
    }
    Ok(())
}

/// Same-padded stride-1 convolution:
/// `y[p0] = bias + sum_n w(p_n) * x(p0 + p_n)` with out-of-bounds `x` as zero.
pub fn conv2d_forward<R: Real>(x: &Tensor4<R>, layer: &ConvLayer<R>) -> Result<Tensor4<R>> {
    check_forward_shapes(x, layer)?;
    let (n, _, h, w) = x.shape();
    let hw = h * w;
    let k = layer.in_c * layer.kh * layer.kw;
    let mut y = Tensor4::zeros(n, layer.out_c, h, w)?;
    y.data_mut()
        .par_chunks_mut(layer.out_c * hw)
        .enumerate()
        .for_each(|(i, y_sample)| {
            let mut cols = vec![R::zero(); k * hw];
            fill_columns_std(x, i, layer.kh, layer.kw, &mut cols);
            for oc in 0..layer.out_c {
                y_sample[oc * hw..(oc + 1) * hw].fill(layer.bias[oc]);
            }
            R::gemm(
                layer.out_c,
                k,
                hw,
                &layer.weights,
                (k as isize, 1),
                &cols,
                (hw as isize, 1),
                R::one(),
                y_sample,
            );
        });
    Ok(y)
}

fn check_backward_shapes<R: Real>(
    x: &Tensor4<R>,
    layer: &ConvLayer<R>,
    dy: &Tensor4<R>,
) -> Result<()> {
    check_forward_shapes(x, layer)?;
    let expect = (x.n(), layer.out_c, x.h(), x.w());
    if dy.shape() != expect {
        return Err(Error::Dimension(format!(
            "output gradient shape {:?} does not match forward output {:?}",
            dy.shape(),
            expect
        )));
    }
    Ok(())
}

/// Backward pass of [`conv2d_forward`]. Returns the input gradient and
/// accumulates `grad_weights` / `grad_bias` on `layer` (summed over the
/// batch in sample order).
///
/// `need_dx: false` skips the input-gradient computation (for layers whose
/// input is the network input); the returned tensor is then all zero.
pub fn conv2d_backward_opt<R: Real>(
    x: &Tensor4<R>,
    layer: &mut ConvLayer<R>,
    dy: &Tensor4<R>,
    need_dx: bool,
) -> Result<Tensor4<R>> {
    check_backward_shapes(x, layer, dy)?;
    let (_, in_c, h, w) = x.shape();
    let hw = h * w;
    let k = in_c * layer.kh * layer.kw;
    let (out_c, kh, kw) = (layer.out_c, layer.kh, layer.kw);
    let weights = &layer.weights;

    let mut dx = Tensor4::zeros_like(x);
    let partials: Vec<(Vec<R>, Vec<R>)> = dx
        .data_mut()
        .par_chunks_mut(in_c * hw)
        .enumerate()
        .map(|(i, dx_sample)| {
            let dy_sample = &dy.data()[i * out_c * hw..(i + 1) * out_c * hw];
            let mut cols = vec![R::zero(); k * hw];
            fill_columns_std(x, i, kh, kw, &mut cols);

            // dW_i = dY_i @ cols^T
            let mut dw = vec![R::zero(); out_c * k];
            R::gemm(
                out_c,
                hw,
                k,
                dy_sample,
                (hw as isize, 1),
                &cols,
                (1, hw as isize),
                R::zero(),
                &mut dw,
            );

            let mut db = vec![R::zero(); out_c];
            for oc in 0..out_c {
                db[oc] = dy_sample[oc * hw..(oc + 1) * hw].iter().copied().sum();
            }

            if need_dx {
                // dcols = W^T @ dY_i, then scatter back to the input grid.
                let mut dcols = vec![R::zero(); k * hw];
                R::gemm(
                    k,
                    out_c,
                    hw,
                    weights,
                    (1, k as isize),
                    dy_sample,
                    (hw as isize, 1),
                    R::zero(),
                    &mut dcols,
                );
                scatter_columns_std(&dcols, dx_sample, in_c, h, w, kh, kw);
            }
            (dw, db)
        })
        .collect();

    for (dw, db) in &partials {
        for (g, d) in layer.grad_weights.iter_mut().zip(dw) {
            *g += *d;
        }
        for (g, d) in layer.grad_bias.iter_mut().zip(db) {
            *g += *d;
        }
    }
    Ok(dx)
}

/// Backward pass of [`conv2d_forward`] computing all three gradients.
pub fn conv2d_backward<R: Real>(
    x: &Tensor4<R>,
    layer: &mut ConvLayer<R>,
    dy: &Tensor4<R>,
) -> Result<Tensor4<R>> {
    conv2d_backward_opt(x, layer, dy, true)
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<R: Real>(x: &Tensor4<R>) -> Tensor4<R> {
    x.map_unary(|v| if v > R::zero() { v } else { R::zero() })
}

/// Passes `dy` where the forward input was strictly positive; the
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward<R: Real>(x: &Tensor4<R>, dy: &Tensor4<R>) -> Result<Tensor4<R>> {
    x.zip_with(dy, |xv, dv| if xv > R::zero() { dv } else { R::zero() })
}

fn sigmoid_scalar<R: Real>(x: R) -> R {
    let y = if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    };
    // Keep outputs strictly inside (0, 1) even when exp saturates.
    let lo = R::min_positive_value();
    let hi = R::one() - R::epsilon() / rf::<R>(2.0);
    y.max(lo).min(hi)
}

/// Elementwise logistic function, strictly inside `(0, 1)`.
pub fn sigmoid_forward<R: Real>(x: &Tensor4<R>) -> Tensor4<R> {
    x.map_unary(sigmoid_scalar)
}

/// Backward of the logistic in terms of the forward *output*:
/// `dy * y * (1 - y)`.
pub fn sigmoid_backward<R: Real>(y_out: &Tensor4<R>, dy: &Tensor4<R>) -> Result<Tensor4<R>> {
    y_out.zip_with(dy, |y, d| d * y * (R::one() - y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor4 {
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn layer_shape_validation() {
        assert!(ConvLayer::<f64>::zeros(1, 1, 2, 3).is_err());
        assert!(ConvLayer::<f64>::zeros(1, 1, 3, 4).is_err());
        assert!(ConvLayer::<f64>::zeros(0, 1, 3, 3).is_err());
        let layer = ConvLayer::<f64>::zeros(2, 3, 3, 5).unwrap();
        assert_eq!(layer.weights.len(), 3 * 2 * 3 * 5);
        assert_eq!(layer.grad_weights.len(), layer.weights.len());
        assert_eq!(layer.grad_bias.len(), layer.bias.len());
    }

    #[test]
    fn glorot_within_bound_and_deterministic() {
        let mut rng = SplitMix64::new(5);
        let layer = ConvLayer::<f64>::glorot(2, 4, 3, 3, &mut rng).unwrap();
        let s = (6.0 / ((2 * 9 + 4 * 9) as f64)).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= s));
        assert!(layer.bias.iter().all(|&b| b == 0.0));
        let mut rng2 = SplitMix64::new(5);
        let layer2 = ConvLayer::<f64>::glorot(2, 4, 3, 3, &mut rng2).unwrap();
        assert_eq!(layer.weights, layer2.weights);
    }

    #[test]
    fn pointwise_affine_1x1() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1, 1, 1).unwrap();
        layer.weights[0] = 2.0;
        layer.bias[0] = 1.0;
        let x = tensor(1, 1, 2, 3, vec![0.0, 1.0, -1.0, 2.5, 3.0, -0.5]);
        let y = conv2d_forward(&x, &layer).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert_eq!(*yi, 2.0 * xi + 1.0);
        }
    }

    #[test]
    fn ones_kernel_padding_counts() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1, 3, 3).unwrap();
        layer.weights.fill(1.0);
        let x = tensor(1, 1, 4, 4, vec![1.0; 16]);
        let y = conv2d_forward(&x, &layer).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0); // interior
        assert_eq!(y.at(0, 0, 0, 0), 4.0); // corner
        assert_eq!(y.at(0, 0, 0, 1), 6.0); // edge
    }

    #[test]
    fn forward_channel_mismatch() {
        let layer = ConvLayer::<f64>::zeros(2, 1, 3, 3).unwrap();
        let x = Tensor4::<f64>::zeros(1, 3, 4, 4).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &layer),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_zero_dy_accumulates_nothing() {
        let mut rng = SplitMix64::new(77);
        let mut layer = ConvLayer::<f64>::glorot(2, 3, 3, 3, &mut rng).unwrap();
        let x =
            Tensor4::from_vec(1, 2, 4, 4, (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .unwrap();
        let dy = Tensor4::<f64>::zeros(1, 3, 4, 4).unwrap();
        let dx = conv2d_backward(&x, &mut layer, &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(layer.grad_weights.iter().all(|&v| v == 0.0));
        assert!(layer.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_1x1_scaling_adjoint() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1, 1, 1).unwrap();
        layer.weights[0] = 2.0;
        let x = tensor(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let dy = tensor(1, 1, 2, 2, vec![1.0, -1.0, 0.5, 2.0]);
        let dx = conv2d_backward(&x, &mut layer, &dy).unwrap();
        for (d, g) in dy.data().iter().zip(dx.data()) {
            assert_eq!(*g, 2.0 * d);
        }
        // grad_bias is the plain sum of dy
        assert_eq!(layer.grad_bias[0], 2.5);
    }

    #[test]
    fn backward_shape_mismatch() {
        let mut layer = ConvLayer::<f64>::zeros(1, 2, 3, 3).unwrap();
        let x = Tensor4::<f64>::zeros(1, 1, 4, 4).unwrap();
        let dy = Tensor4::<f64>::zeros(1, 2, 5, 4).unwrap();
        assert!(matches!(
            conv2d_backward(&x, &mut layer, &dy),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn relu_examples() {
        let x = tensor(1, 1, 1, 2, vec![-1.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0]);
        let dy = tensor(1, 1, 1, 2, vec![5.0, 5.0]);
        assert_eq!(relu_backward(&x, &dy).unwrap().data(), &[0.0, 5.0]);
        // subgradient at exactly zero is zero
        let z = tensor(1, 1, 1, 1, vec![0.0]);
        let d = tensor(1, 1, 1, 1, vec![3.0]);
        assert_eq!(relu_backward(&z, &d).unwrap().data(), &[0.0]);
        // idempotence
        let y = relu_forward(&x);
        assert_eq!(relu_forward(&y), y);
    }

    #[test]
    fn sigmoid_range_and_midpoint() {
        let x = tensor(1, 1, 1, 1, vec![0.0]);
        assert_eq!(sigmoid_forward(&x).data(), &[0.5]);
        let extreme = tensor(1, 1, 1, 4, vec![-1e6, -40.0, 40.0, 1e6]);
        for &v in sigmoid_forward(&extreme).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn snap_f32_idempotent() {
        let v = 0.123456789123456789f64.snap_f32();
        assert_eq!(v.snap_f32(), v);
        assert_eq!(0.1f32.snap_f32(), 0.1f32);
    }

    #[test]
    fn f32_conv_matches_f64_closely() {
        let mut rng = SplitMix64::new(99);
        let data: Vec<f64> = (0..2 * 2 * 5 * 5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x64 = Tensor4::from_vec(2, 2, 5, 5, data.clone()).unwrap();
        let x32 =
            Tensor4::from_vec(2, 2, 5, 5, data.iter().map(|&v| v as f32).collect()).unwrap();
        let l64 = ConvLayer::<f64>::glorot(2, 3, 3, 3, &mut SplitMix64::new(4)).unwrap();
        let l32 = ConvLayer::<f32>::glorot(2, 3, 3, 3, &mut SplitMix64::new(4)).unwrap();
        let y64 = conv2d_forward(&x64, &l64).unwrap();
        let y32 = conv2d_forward(&x32, &l32).unwrap();
        for (a, b) in y64.data().iter().zip(y32.data()) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
