//! Dense 4D tensors in `(batch, channel, row, col)` layout.
//!
//! The flat buffer is laid out with the column index fastest, then row,
//! then channel, then batch. Every value-producing operation returns a new
//! tensor; a tensor handed out by a public operation is never mutated.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense real-valued 4D array, the value carrier for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<R: Real = f64> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<R>,
}

/// Borrowed view of one `(batch, channel)` plane.
#[derive(Clone, Copy)]
pub struct PlaneView<'a, R: Real = f64> {
    pub data: &'a [R],
    pub h: usize,
    pub w: usize,
}

impl<R: Real> Tensor4<R> {
    /// All-zero tensor of the given shape. Every dimension must be >= 1.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Tensor4<R>> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "tensor dims must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        Ok(Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![R::zero(); n * c * h * w],
        })
    }

    /// All-zero tensor with the same shape as `other`.
    pub fn zeros_like(other: &Tensor4<R>) -> Tensor4<R> {
        Tensor4 {
            n: other.n,
            c: other.c,
            h: other.h,
            w: other.w,
            data: vec![R::zero(); other.data.len()],
        }
    }

    /// Builds a tensor from a flat buffer in layout order. The length must
    /// equal `n*c*h*w` and every value must be finite.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<R>) -> Result<Tensor4<R>> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "tensor dims must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape ({n},{c},{h},{w})",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite tensor value {bad}")));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    /// Flat index of `(batch, channel, row, col)`.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, r: usize, col: usize) -> usize {
        ((n * self.c + c) * self.h + r) * self.w + col
    }

    /// Inverse of [`idx`](Self::idx).
    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize, usize) {
        let col = flat % self.w;
        let r = (flat / self.w) % self.h;
        let c = (flat / (self.w * self.h)) % self.c;
        let n = flat / (self.w * self.h * self.c);
        (n, c, r, col)
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, r: usize, col: usize) -> R {
        self.data[self.idx(n, c, r, col)]
    }

    /// One `(batch, channel)` plane as a contiguous `h*w` slice.
    pub fn plane(&self, n: usize, c: usize) -> &[R] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    pub(crate) fn plane_mut(&mut self, n: usize, c: usize) -> &mut [R] {
        let start = (n * self.c + c) * self.h * self.w;
        let len = self.h * self.w;
        &mut self.data[start..start + len]
    }

    pub fn plane_view(&self, n: usize, c: usize) -> PlaneView<'_, R> {
        PlaneView {
            data: self.plane(n, c),
            h: self.h,
            w: self.w,
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&self, other: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise product; shapes must match.
    pub fn hadamard(&self, other: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Multiplies every entry by `k`.
    pub fn scale(&self, k: R) -> Tensor4<R> {
        self.map_unary(|v| v * k)
    }

    /// Applies `f` to every entry, preserving shape.
    pub fn map_unary(&self, f: impl Fn(R) -> R) -> Tensor4<R> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub(crate) fn zip_with(
        &self,
        other: &Tensor4<R>,
        f: impl Fn(R, R) -> R,
    ) -> Result<Tensor4<R>> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl<R: Real> PlaneView<'_, R> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> R {
        self.data[r * self.w + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(n: usize, c: usize, h: usize, w: usize, rng: &mut SplitMix64) -> Tensor4 {
        let data = (0..n * c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn zeros_shape_and_values() {
        let t: Tensor4 = Tensor4::zeros(1, 1, 2, 2).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor4::<f64>::zeros(2, 3, 4, 5).unwrap().numel(), 120);
        assert_eq!(Tensor4::<f64>::zeros(1, 1, 80, 80).unwrap().sum(), 0.0);
    }

    #[test]
    fn zero_dim_rejected() {
        for shape in [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)] {
            let err = Tensor4::<f64>::zeros(shape.0, shape.1, shape.2, shape.3).unwrap_err();
            assert!(matches!(err, Error::Dimension(_)));
        }
    }

    #[test]
    fn from_vec_validates() {
        assert!(matches!(
            Tensor4::from_vec(1, 1, 2, 2, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Tensor4::from_vec(1, 1, 1, 2, vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn add_identity_and_arithmetic() {
        let mut rng = SplitMix64::new(11);
        let x = random(2, 3, 4, 5, &mut rng);
        assert_eq!(x.add(&Tensor4::zeros_like(&x)).unwrap(), x);

        let a = Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor4::from_vec(1, 1, 1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_commutes() {
        let mut rng = SplitMix64::new(21);
        let a = random(2, 2, 3, 3, &mut rng);
        let b = random(2, 2, 3, 3, &mut rng);
        assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor4::<f64>::zeros(1, 1, 2, 2).unwrap();
        let b = Tensor4::<f64>::zeros(1, 1, 2, 3).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Dimension(_))));
        assert!(matches!(a.sub(&b), Err(Error::Dimension(_))));
        assert!(matches!(a.hadamard(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn map_scale_sub() {
        let mut rng = SplitMix64::new(31);
        let x = random(1, 2, 3, 4, &mut rng);
        assert_eq!(x.map_unary(|v| v), x);
        assert_eq!(x.scale(0.0), Tensor4::zeros_like(&x));
        assert_eq!(x.sub(&x).unwrap(), Tensor4::zeros_like(&x));
    }

    #[test]
    fn ops_leave_inputs_unchanged() {
        let mut rng = SplitMix64::new(41);
        let a = random(1, 1, 3, 3, &mut rng);
        let b = random(1, 1, 3, 3, &mut rng);
        let (ac, bc) = (a.clone(), b.clone());
        let _ = a.add(&b).unwrap();
        let _ = a.hadamard(&b).unwrap();
        let _ = a.scale(2.0);
        assert_eq!(a, ac);
        assert_eq!(b, bc);
    }

    #[test]
    fn index_round_trip() {
        let t = Tensor4::<f64>::zeros(2, 3, 4, 5).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for r in 0..4 {
                    for col in 0..5 {
                        assert_eq!(t.unflatten(t.idx(n, c, r, col)), (n, c, r, col));
                    }
                }
            }
        }
    }

    #[test]
    fn layout_is_col_fastest() {
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let t = Tensor4::from_vec(2, 2, 2, 3, data).unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.at(1, 0, 0, 0), 12.0);
        assert_eq!(t.plane(1, 1), &[18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn works_at_f32() {
        let a = Tensor4::<f32>::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = a.scale(2.0);
        assert_eq!(b.data(), &[2.0f32, 4.0]);
    }
}
