//! Element type abstraction.
//!
//! All numeric code is generic over [`Real`], instantiated at `f64` (the
//! default everywhere, and pinned for the gradient-check and oracle suites)
//! or `f32` (training-speed path). The two differ only in precision and in
//! which `matrixmultiply` kernel backs the convolution contraction.

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Send
    + Sync
    + Display
    + Debug
    + Default
    + 'static
{
    /// `c = a @ b + beta*c` on row-major buffers with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        astrides: (isize, isize),
        b: &[Self],
        bstrides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    /// Rounds through `f32` so the value survives the 32-bit checkpoint
    /// encoding bit-exactly. Identity in the `f32` instantiation.
    fn snap_f32(self) -> Self;

    fn as_f64(self) -> f64;

    fn from_f64(v: f64) -> Self;
}

/// Shorthand for converting an `f64` literal into the working type.
#[inline]
pub(crate) fn rf<R: Real>(v: f64) -> R {
    R::from_f64(v)
}

impl Real for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        astrides: (isize, isize),
        b: &[f64],
        bstrides: (isize, isize),
        beta: f64,
        c: &mut [f64],
    ) {
        debug_assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                astrides.0,
                astrides.1,
                b.as_ptr(),
                bstrides.0,
                bstrides.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    #[inline]
    fn snap_f32(self) -> f64 {
        self as f32 as f64
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64(v: f64) -> f64 {
        v
    }
}

impl Real for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        astrides: (isize, isize),
        b: &[f32],
        bstrides: (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        debug_assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                astrides.0,
                astrides.1,
                b.as_ptr(),
                bstrides.0,
                bstrides.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    #[inline]
    fn snap_f32(self) -> f32 {
        self
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
}
