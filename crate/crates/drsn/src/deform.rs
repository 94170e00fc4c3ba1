//! Deformable 2D convolution: bilinear sampling at learned fractional
//! offsets, with gradients for input, weights, bias and the offsets
//! themselves.
//!
//! The sampling kernel is separable-triangular: a fractional location `p`
//! reads `sum_q max(0, 1-|q_row-p_row|) * max(0, 1-|q_col-p_col|) * x(q)`
//! over integral grid points `q`, with `x(q) = 0` outside the map. At an
//! integral `p` this collapses to a point mass, so a deformable convolution
//! with all-zero offsets is bit-identical to the standard convolution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{conv2d_forward, ConvLayer};
use crate::scalar::Real;
use crate::tensor::{PlaneView, Tensor4};

/// An arbitrary (possibly fractional) sampling location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FractionalLoc<R: Real = f64> {
    pub row: R,
    pub col: R,
}

impl<R: Real> FractionalLoc<R> {
    pub fn new(row: R, col: R) -> FractionalLoc<R> {
        FractionalLoc { row, col }
    }
}

/// Per-output-location 2D sampling offsets for every kernel position.
///
/// Shape `(n, 2*kh*kw, h, w)`: channel `2k` holds the row offset and
/// channel `2k+1` the column offset for kernel position `k`, kernel
/// positions enumerated row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<R: Real = f64> {
    tensor: Tensor4<R>,
    kh: usize,
    kw: usize,
}

impl<R: Real> OffsetField<R> {
    pub fn new(tensor: Tensor4<R>, kh: usize, kw: usize) -> Result<OffsetField<R>> {
        if tensor.c() != 2 * kh * kw {
            return Err(Error::Dimension(format!(
                "offset field has {} channels, expected 2*{kh}*{kw} = {}",
                tensor.c(),
                2 * kh * kw
            )));
        }
        Ok(OffsetField { tensor, kh, kw })
    }

    pub fn zeros(n: usize, kh: usize, kw: usize, h: usize, w: usize) -> Result<OffsetField<R>> {
        Ok(OffsetField {
            tensor: Tensor4::zeros(n, 2 * kh * kw, h, w)?,
            kh,
            kw,
        })
    }

    pub fn tensor(&self) -> &Tensor4<R> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor4<R> {
        self.tensor
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    /// Row offset for kernel position `k` at output location `(oy, ox)`.
    #[inline]
    pub fn row_offset(&self, i: usize, k: usize, oy: usize, ox: usize) -> R {
        self.tensor.at(i, 2 * k, oy, ox)
    }

    /// Column offset for kernel position `k` at output location `(oy, ox)`.
    #[inline]
    pub fn col_offset(&self, i: usize, k: usize, oy: usize, ox: usize) -> R {
        self.tensor.at(i, 2 * k + 1, oy, ox)
    }
}

#[inline]
fn read_or_zero<R: Real>(plane: &[R], h: isize, w: isize, r: isize, c: isize) -> R {
    if r >= 0 && r < h && c >= 0 && c < w {
        plane[(r * w + c) as usize]
    } else {
        R::zero()
    }
}

/// Samples `plane` at a fractional location under the triangular kernel,
/// returning zero weight for grid points outside the map.
pub fn bilinear_sample<R: Real>(plane: PlaneView<'_, R>, p: FractionalLoc<R>) -> R {
    let (h, w) = (plane.h as isize, plane.w as isize);
    let r0f = p.row.floor();
    let c0f = p.col.floor();
    let fr = p.row - r0f;
    let fc = p.col - c0f;
    let (r0, c0) = (r0f.as_f64() as isize, c0f.as_f64() as isize);
    if fr == R::zero() && fc == R::zero() {
        // Point mass: return the stored value bit-exactly.
        return read_or_zero(plane.data, h, w, r0, c0);
    }
    let v00 = read_or_zero(plane.data, h, w, r0, c0);
    let v01 = read_or_zero(plane.data, h, w, r0, c0 + 1);
    let v10 = read_or_zero(plane.data, h, w, r0 + 1, c0);
    let v11 = read_or_zero(plane.data, h, w, r0 + 1, c0 + 1);
    let one = R::one();
    (one - fr) * ((one - fc) * v00 + fc * v01) + fr * ((one - fc) * v10 + fc * v11)
}

/// Gradients of [`bilinear_sample`] at `p`: the in-map corner weights
/// (`d value / d x(q)`, up to four pairs) and the location gradient
/// (`d value / d p_row`, `d value / d p_col`).
#[allow(clippy::type_complexity)]
pub fn bilinear_sample_grad<R: Real>(
    plane: PlaneView<'_, R>,
    p: FractionalLoc<R>,
) -> (Vec<((usize, usize), R)>, (R, R)) {
    let (h, w) = (plane.h as isize, plane.w as isize);
    let r0f = p.row.floor();
    let c0f = p.col.floor();
    let fr = p.row - r0f;
    let fc = p.col - c0f;
    let (r0, c0) = (r0f.as_f64() as isize, c0f.as_f64() as isize);
    let one = R::one();

    let v00 = read_or_zero(plane.data, h, w, r0, c0);
    let v01 = read_or_zero(plane.data, h, w, r0, c0 + 1);
    let v10 = read_or_zero(plane.data, h, w, r0 + 1, c0);
    let v11 = read_or_zero(plane.data, h, w, r0 + 1, c0 + 1);
    // Row derivative interpolates the row difference along the column axis
    // and vice versa; at lattice points this takes the one-sided value.
    let dloc = (
        (one - fc) * (v10 - v00) + fc * (v11 - v01),
        (one - fr) * (v01 - v00) + fr * (v11 - v10),
    );

    let mut corners = Vec::with_capacity(4);
    if fr == R::zero() && fc == R::zero() {
        if r0 >= 0 && r0 < h && c0 >= 0 && c0 < w {
            corners.push(((r0 as usize, c0 as usize), one));
        }
        return (corners, dloc);
    }
    for (rr, wr) in [(r0, one - fr), (r0 + 1, fr)] {
        if wr == R::zero() || rr < 0 || rr >= h {
            continue;
        }
        for (cc, wc) in [(c0, one - fc), (c0 + 1, fc)] {
            if wc == R::zero() || cc < 0 || cc >= w {
                continue;
            }
            corners.push(((rr as usize, cc as usize), wr * wc));
        }
    }
    (corners, dloc)
}

/// Standard convolution layer that predicts an offset field: `2*kh*kw`
/// output channels, weights and biases all zero so a fresh deformable
/// layer behaves exactly like a plain convolution.
pub fn make_offset_layer<R: Real>(in_c: usize, kh: usize, kw: usize) -> Result<ConvLayer<R>> {
    ConvLayer::zeros(in_c, 2 * kh * kw, kh, kw)
}

/// Runs the offset-prediction convolution and wraps the result.
pub fn predict_offsets<R: Real>(
    x: &Tensor4<R>,
    offset_layer: &ConvLayer<R>,
) -> Result<OffsetField<R>> {
    let kh = offset_layer.kh;
    let kw = offset_layer.kw;
    OffsetField::new(conv2d_forward(x, offset_layer)?, kh, kw)
}

fn check_deform_shapes<R: Real>(
    x: &Tensor4<R>,
    layer: &ConvLayer<R>,
    offsets: &OffsetField<R>,
) -> Result<()> {
    if x.c() != layer.in_c {
        return Err(Error::Dimension(format!(
            "input has {} channels, layer expects {}",
            x.c(),
            layer.in_c
        )));
    }
    if offsets.kh != layer.kh || offsets.kw != layer.kw {
        return Err(Error::Dimension(format!(
            "offset field is for a {}x{} kernel, layer kernel is {}x{}",
            offsets.kh, offsets.kw, layer.kh, layer.kw
        )));
    }
    let t = &offsets.tensor;
    if t.n() != x.n() || t.h() != x.h() || t.w() != x.w() {
        return Err(Error::Dimension(format!(
            "offset field shape {:?} does not match input {:?}",
            t.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// Sampling stencil for one tap: up to four corner indices with weights
/// (out-of-map corners carry weight zero and index 0).
struct Stencil<R: Real> {
    idx: [usize; 4],
    wgt: [R; 4],
    fr: R,
    fc: R,
    oob: [bool; 4],
}

#[inline]
fn stencil_at<R: Real>(h: isize, w: isize, pr: R, pc: R) -> Stencil<R> {
    let r0f = pr.floor();
    let c0f = pc.floor();
    let fr = pr - r0f;
    let fc = pc - c0f;
    let r0 = r0f.as_f64() as isize;
    let c0 = c0f.as_f64() as isize;
    let one = R::one();
    let mut idx = [0usize; 4];
    let mut wgt = [R::zero(); 4];
    let mut oob = [true; 4];
    let corners = [
        (r0, c0, (one - fr) * (one - fc)),
        (r0, c0 + 1, (one - fr) * fc),
        (r0 + 1, c0, fr * (one - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (slot, (rr, cc, wv)) in corners.into_iter().enumerate() {
        if rr >= 0 && rr < h && cc >= 0 && cc < w {
            idx[slot] = (rr * w + cc) as usize;
            wgt[slot] = wv;
            oob[slot] = false;
        }
    }
    Stencil { idx, wgt, fr, fc, oob }
}

/// Lowers sample `i` to columns like `fill_columns_std`, but samples each
/// tap at its offset fractional location. The location work is shared
/// across input channels.
fn fill_columns_deform<R: Real>(
    x: &Tensor4<R>,
    i: usize,
    kh: usize,
    kw: usize,
    offsets: &OffsetField<R>,
    cols: &mut [R],
) {
    let (_, in_c, h, w) = x.shape();
    let hw = h * w;
    let (hh, ww) = (h as isize, w as isize);
    for ky in 0..kh {
        for kx in 0..kw {
            let k = ky * kw + kx;
            let base_r = ky as f64 - ((kh - 1) / 2) as f64;
            let base_c = kx as f64 - ((kw - 1) / 2) as f64;
            let offr = offsets.tensor.plane(i, 2 * k);
            let offc = offsets.tensor.plane(i, 2 * k + 1);
            for oy in 0..h {
                for ox in 0..w {
                    let o = oy * w + ox;
                    let pr = R::from_f64(oy as f64 + base_r) + offr[o];
                    let pc = R::from_f64(ox as f64 + base_c) + offc[o];
                    let st = stencil_at(hh, ww, pr, pc);
                    let point_mass = st.fr == R::zero() && st.fc == R::zero();
                    for ic in 0..in_c {
                        let plane = x.plane(i, ic);
                        let v = if point_mass {
                            if st.oob[0] {
                                R::zero()
                            } else {
                                plane[st.idx[0]]
                            }
                        } else {
                            let mut acc = R::zero();
                            for s in 0..4 {
                                if !st.oob[s] {
                                    acc += st.wgt[s] * plane[st.idx[s]];
                                }
                            }
                            acc
                        };
                        cols[((ic * kh + ky) * kw + kx) * hw + o] = v;
                    }
                }
            }
        }
    }
}

/// Deformable convolution:
/// `y(p0) = bias + sum_n w(p_n) * sample(x, p0 + p_n + offset(p_n, p0))`.
pub fn deform_conv2d_forward<R: Real>(
    x: &Tensor4<R>,
    layer: &ConvLayer<R>,
    offsets: &OffsetField<R>,
) -> Result<Tensor4<R>> {
    Ok(deform_forward_impl(x, layer, offsets, false)?.0)
}

/// Forward pass that also hands back the sampled column matrices
/// (`n * in_c*kh*kw * h*w`), so a caller that runs backward immediately
/// afterwards can skip resampling.
pub(crate) fn deform_forward_cols<R: Real>(
    x: &Tensor4<R>,
    layer: &ConvLayer<R>,
    offsets: &OffsetField<R>,
) -> Result<(Tensor4<R>, Vec<R>)> {
    let (y, cols) = deform_forward_impl(x, layer, offsets, true)?;
    Ok((y, cols.unwrap()))
}

fn deform_forward_impl<R: Real>(
    x: &Tensor4<R>,
    layer: &ConvLayer<R>,
    offsets: &OffsetField<R>,
    keep_cols: bool,
) -> Result<(Tensor4<R>, Option<Vec<R>>)> {
    check_deform_shapes(x, layer, offsets)?;
    let (n, _, h, w) = x.shape();
    let hw = h * w;
    let k = layer.in_c * layer.kh * layer.kw;
    let mut y = Tensor4::zeros(n, layer.out_c, h, w)?;
    let mut kept = if keep_cols {
        vec![R::zero(); n * k * hw]
    } else {
        Vec::new()
    };
    let run = |i: usize, y_sample: &mut [R], cols: &mut [R]| {
        fill_columns_deform(x, i, layer.kh, layer.kw, offsets, cols);
        for oc in 0..layer.out_c {
            y_sample[oc * hw..(oc + 1) * hw].fill(layer.bias[oc]);
        }
        R::gemm(
            layer.out_c,
            k,
            hw,
            &layer.weights,
            (k as isize, 1),
            cols,
            (hw as isize, 1),
            R::one(),
            y_sample,
        );
    };
    if keep_cols {
        y.data_mut()
            .par_chunks_mut(layer.out_c * hw)
            .zip(kept.par_chunks_mut(k * hw))
            .enumerate()
            .for_each(|(i, (y_sample, cols))| run(i, y_sample, cols));
    } else {
        y.data_mut()
            .par_chunks_mut(layer.out_c * hw)
            .enumerate()
            .for_each(|(i, y_sample)| {
                let mut cols = vec![R::zero(); k * hw];
                run(i, y_sample, &mut cols);
            });
    }
    Ok((y, keep_cols.then_some(kept)))
}

/// Backward pass of [`deform_conv2d_forward`]. Returns the input gradient
/// and the offset-field gradient, and accumulates `grad_weights` /
/// `grad_bias` on `layer` in batch order.
pub fn deform_conv2d_backward<R: Real>(
    x: &Tensor4<R>,
    layer: &mut ConvLayer<R>,
    offsets: &OffsetField<R>,
    dy: &Tensor4<R>,
) -> Result<(Tensor4<R>, OffsetField<R>)> {
    deform_backward_impl(x, layer, offsets, dy, None, true)
}

/// Backward pass reusing the forward's column matrices.
/// `need_dx: false` skips the input-gradient scatter (offset gradients are
/// still produced); the returned `dx` is then all zero.
pub(crate) fn deform_backward_cols<R: Real>(
    x: &Tensor4<R>,
    layer: &mut ConvLayer<R>,
    offsets: &OffsetField<R>,
    dy: &Tensor4<R>,
    cols: &[R],
    need_dx: bool,
) -> Result<(Tensor4<R>, OffsetField<R>)> {
    deform_backward_impl(x, layer, offsets, dy, Some(cols), need_dx)
}

fn deform_backward_impl<R: Real>(
    x: &Tensor4<R>,
    layer: &mut ConvLayer<R>,
    offsets: &OffsetField<R>,
    dy: &Tensor4<R>,
    cached_cols: Option<&[R]>,
    need_dx: bool,
) -> Result<(Tensor4<R>, OffsetField<R>)> {
    check_deform_shapes(x, layer, offsets)?;
    let (n, in_c, h, w) = x.shape();
    let expect = (n, layer.out_c, h, w);
    if dy.shape() != expect {
        return Err(Error::Dimension(format!(
            "output gradient shape {:?} does not match forward output {:?}",
            dy.shape(),
            expect
        )));
    }
    let hw = h * w;
    let k = in_c * layer.kh * layer.kw;
    let (out_c, kh, kw) = (layer.out_c, layer.kh, layer.kw);
    let weights = &layer.weights;
    if let Some(cols) = cached_cols {
        debug_assert_eq!(cols.len(), n * k * hw);
    }

    let mut dx = Tensor4::zeros_like(x);
    let mut doff = Tensor4::zeros(n, 2 * kh * kw, h, w)?;

    let partials: Vec<(Vec<R>, Vec<R>)> = dx
        .data_mut()
        .par_chunks_mut(in_c * hw)
        .zip(doff.data_mut().par_chunks_mut(2 * kh * kw * hw))
        .enumerate()
        .map(|(i, (dx_sample, doff_sample))| {
            let dy_sample = &dy.data()[i * out_c * hw..(i + 1) * out_c * hw];

            // dW_i = dY_i @ cols^T, resampling the columns only when the
            // caller did not keep them from the forward pass.
            let scratch;
            let cols: &[R] = match cached_cols {
                Some(all) => &all[i * k * hw..(i + 1) * k * hw],
                None => {
                    let mut buf = vec![R::zero(); k * hw];
                    fill_columns_deform(x, i, kh, kw, offsets, &mut buf);
                    scratch = buf;
                    &scratch
                }
            };
            let mut dw = vec![R::zero(); out_c * k];
            R::gemm(
                out_c,
                hw,
                k,
                dy_sample,
                (hw as isize, 1),
                cols,
                (1, hw as isize),
                R::zero(),
                &mut dw,
            );

            let mut db = vec![R::zero(); out_c];
            for oc in 0..out_c {
                db[oc] = dy_sample[oc * hw..(oc + 1) * hw].iter().copied().sum();
            }

            // dcols = W^T @ dY_i, then route each column gradient through
            // the sampling: corner weights scatter into dx, the location
            // derivative accumulates into the offset gradient.
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
            scatter_deform(
                x,
                i,
                kh,
                kw,
                offsets,
                &dcols,
                dx_sample,
                doff_sample,
                need_dx,
            );
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
    Ok((dx, OffsetField::new(doff, kh, kw)?))
}

#[allow(clippy::too_many_arguments)]
fn scatter_deform<R: Real>(
    x: &Tensor4<R>,
    i: usize,
    kh: usize,
    kw: usize,
    offsets: &OffsetField<R>,
    dcols: &[R],
    dx_sample: &mut [R],
    doff_sample: &mut [R],
    need_dx: bool,
) {
    let (_, in_c, h, w) = x.shape();
    let hw = h * w;
    let (hh, ww) = (h as isize, w as isize);
    let khw_stride = kh * kw * hw;
    let one = R::one();
    for ky in 0..kh {
        for kx in 0..kw {
            let kpos = ky * kw + kx;
            let base_r = ky as f64 - ((kh - 1) / 2) as f64;
            let base_c = kx as f64 - ((kw - 1) / 2) as f64;
            let offr = offsets.tensor.plane(i, 2 * kpos);
            let offc = offsets.tensor.plane(i, 2 * kpos + 1);
            let col_base = (ky * kw + kx) * hw;
            for oy in 0..h {
                for ox in 0..w {
                    let o = oy * w + ox;
                    let pr = R::from_f64(oy as f64 + base_r) + offr[o];
                    let pc = R::from_f64(ox as f64 + base_c) + offc[o];
                    let st = stencil_at(hh, ww, pr, pc);
                    let point_mass = st.fr == R::zero() && st.fc == R::zero();

                    let mut grow = R::zero();
                    let mut gcol = R::zero();
                    for ic in 0..in_c {
                        let g = dcols[ic * khw_stride + col_base + o];
                        let plane = x.plane(i, ic);
                        let v00 = if st.oob[0] { R::zero() } else { plane[st.idx[0]] };
                        let v01 = if st.oob[1] { R::zero() } else { plane[st.idx[1]] };
                        let v10 = if st.oob[2] { R::zero() } else { plane[st.idx[2]] };
                        let v11 = if st.oob[3] { R::zero() } else { plane[st.idx[3]] };
                        // Out-of-map corners must still contribute to the
                        // location derivative as zero-valued reads, which
                        // the masked reads above already encode.
                        grow += g * ((one - st.fc) * (v10 - v00) + st.fc * (v11 - v01));
                        gcol += g * ((one - st.fr) * (v01 - v00) + st.fr * (v11 - v10));

                        if !need_dx {
                            continue;
                        }
                        let dplane = &mut dx_sample[ic * hw..(ic + 1) * hw];
                        if point_mass {
                            // Bit-exact reduction to the standard scatter.
                            if !st.oob[0] {
                                dplane[st.idx[0]] += g;
                            }
                            continue;
                        }
                        for s in 0..4 {
                            if !st.oob[s] && st.wgt[s] != R::zero() {
                                dplane[st.idx[s]] += g * st.wgt[s];
                            }
                        }
                    }
                    doff_sample[2 * kpos * hw + o] = grow;
                    doff_sample[(2 * kpos + 1) * hw + o] = gcol;
                }
            }
        }
    }
}
