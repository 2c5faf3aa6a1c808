//! Dense row-major tensors and the numeric kernels the rest of the crate
//! builds on.
//!
//! Image-like values use the `[height, width, channel]` layout; batches
//! prepend a leading sample axis. Convolution is **cross-correlation**: the
//! kernel is not flipped, so `out[y, x, o] = Σ in[y·s + ky − pad, x·s + kx − pad, c] · k[ky, kx, c, o]`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]. Implemented for `f32` (training) and `f64`
/// (gradient checks and oracles).
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c ← alpha · op(a) · op(b) + beta · c` on raw row/column strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the given extents.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// Safe row-major gemm: `c[m,n] (+)= op(a)[m,k] · op(b)[k,n]`.
///
/// `a` is stored as `[m,k]` (or `[k,m]` when transposed), likewise `b`.
/// With `accumulate` the product is added to `c`, otherwise `c` is overwritten.
/// The summation order depends only on the extents, so results are
/// reproducible run to run.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Trans,
    b: &[T],
    tb: Trans,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; c does not alias a or b (distinct borrows).
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Dense N-dimensional array. `shape.iter().product() == data.len()`, every
/// extent is at least one, and the rank is at least one.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 16 {
            f.debug_struct("Tensor")
                .field("shape", &self.shape)
                .field("data", &self.data)
                .finish()
        } else {
            f.debug_struct("Tensor")
                .field("shape", &self.shape)
                .field("len", &self.data.len())
                .finish_non_exhaustive()
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Validation("tensor rank must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Validation(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::Validation(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; use [`Tensor::new`] for fallible construction.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = check_shape(&shape).expect("valid tensor shape");
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len = check_shape(&shape).expect("valid tensor shape");
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * e + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Sub-tensor along the leading axis, e.g. one sample of a batch.
    pub fn slice_outer(&self, index: usize) -> Tensor<T> {
        assert!(index < self.shape[0], "outer index out of bounds");
        let inner: Vec<usize> = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let stride: usize = inner.iter().product();
        Tensor {
            shape: inner,
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::Validation("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Add, self, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Sub, self, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Mul, self, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }
}

/// Pointwise binary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
    /// `a` where `b > 0`, zero elsewhere (the ReLU backward routing).
    ReluMask,
}

/// Right-hand side of [`elementwise`]: a same-shaped tensor or a broadcast scalar.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

pub fn elementwise<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
        BinaryOp::Max => x.max(y),
        BinaryOp::Min => x.min(y),
        BinaryOp::ReluMask => {
            if y > T::zero() {
                x
            } else {
                T::zero()
            }
        }
    };
    let data = match b {
        Operand::Scalar(s) => a.data.iter().map(|&x| f(x, s)).collect(),
        Operand::Tensor(t) => {
            if t.shape != a.shape {
                return Err(Error::dim("elementwise", &a.shape, &t.shape));
            }
            a.data.iter().zip(&t.data).map(|(&x, &y)| f(x, y)).collect()
        }
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Matrix product of `[m,k]` and `[k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, &a.data, Trans::No, &b.data, Trans::No, &mut out, false);
    Tensor::new([m, n], out)
}

/// Spatial padding mode for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Zero padding so the output is `ceil(h / stride)` tall; any odd
    /// remainder of padding goes to the bottom/right.
    #[default]
    Same,
    Valid,
}

/// Resolved geometry of one 2-D convolution over a `[h, w, cin]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [in_h, in_w, cin] = input;
        let (kh, kw) = kernel;
        if stride == 0 {
            return Err(Error::Config("convolution stride must be at least 1".into()));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::Config("kernel extents must be positive".into()));
        }
        let too_big = || Error::dim("conv2d (kernel larger than input)", &input, &[kh, kw]);
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kh > in_h || kw > in_w {
                    return Err(too_big());
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::Config(format!(
                        "same padding requires odd kernel extents, got {kh}x{kw}"
                    )));
                }
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
                if kh > in_h + pad_h || kw > in_w + pad_w {
                    return Err(too_big());
                }
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
        };
        Ok(Self {
            in_h,
            in_w,
            cin,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Rows of the patch matrix (output pixels).
    pub fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Columns of the patch matrix, ordered `(ky, kx, c)` to match the
    /// `[kh, kw, cin, cout]` kernel layout.
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.cin
    }

    /// Unfolds one `[h, w, cin]` image into a `[patches, patch_len]` matrix.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        debug_assert_eq!(input.len(), self.input_len());
        debug_assert_eq!(cols.len(), self.patches() * self.patch_len());
        let row_len = self.kw * self.cin;
        let mut dst = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        cols[dst..dst + row_len].fill(T::zero());
                        dst += row_len;
                        continue;
                    }
                    let row_base = iy as usize * self.in_w;
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        let seg = &mut cols[dst..dst + self.cin];
                        if ix < 0 || ix >= self.in_w as isize {
                            seg.fill(T::zero());
                        } else {
                            let src = (row_base + ix as usize) * self.cin;
                            seg.copy_from_slice(&input[src..src + self.cin]);
                        }
                        dst += self.cin;
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`]: scatter-adds a patch matrix back
    /// onto an `[h, w, cin]` buffer.
    pub fn col2im<T: Scalar>(&self, cols: &[T], out: &mut [T]) {
        debug_assert_eq!(out.len(), self.input_len());
        debug_assert_eq!(cols.len(), self.patches() * self.patch_len());
        let mut src = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        src += self.kw * self.cin;
                        continue;
                    }
                    let row_base = iy as usize * self.in_w;
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix >= 0 && ix < self.in_w as isize {
                            let dst = (row_base + ix as usize) * self.cin;
                            for (o, &g) in out[dst..dst + self.cin]
                                .iter_mut()
                                .zip(&cols[src..src + self.cin])
                            {
                                *o += g;
                            }
                        }
                        src += self.cin;
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of one `[h, w, cin]` image with `[kh, kw, cin, cout]`
/// kernels. Bias is the caller's business.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    if input.rank() != 3 || kernels.rank() != 4 || kernels.shape[2] != input.shape[2] {
        return Err(Error::dim("conv2d", &input.shape, &kernels.shape));
    }
    let geom = ConvGeometry::new(
        [input.shape[0], input.shape[1], input.shape[2]],
        (kernels.shape[0], kernels.shape[1]),
        stride,
        padding,
    )?;
    let cout = kernels.shape[3];
    let mut cols = vec![T::zero(); geom.patches() * geom.patch_len()];
    geom.im2col(&input.data, &mut cols);
    let mut out = vec![T::zero(); geom.patches() * cout];
    gemm(
        geom.patches(),
        geom.patch_len(),
        cout,
        &cols,
        Trans::No,
        &kernels.data,
        Trans::No,
        &mut out,
        false,
    );
    Tensor::new([geom.out_h, geom.out_w, cout], out)
}

/// Geometry of a valid (unpadded) max-pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(input: [usize; 3], window: usize, stride: usize) -> Result<Self> {
        let [in_h, in_w, channels] = input;
        if window == 0 || stride == 0 {
            return Err(Error::Config("pool window and stride must be at least 1".into()));
        }
        if window > in_h || window > in_w {
            return Err(Error::dim("maxpool2d (window larger than input)", &input, &[window, window]));
        }
        Ok(Self {
            in_h,
            in_w,
            channels,
            window,
            stride,
            out_h: (in_h - window) / stride + 1,
            out_w: (in_w - window) / stride + 1,
        })
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.channels
    }

    /// Pools one image; `argmax[i]` is the flat input offset that produced
    /// output `i`. Ties resolve to the first maximum in row-major order.
    pub fn forward<T: Scalar>(&self, input: &[T], out: &mut [T], argmax: &mut [usize]) {
        let c = self.channels;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for wy in 0..self.window {
                        let row = (oy * self.stride + wy) * self.in_w;
                        for wx in 0..self.window {
                            let at = (row + ox * self.stride + wx) * c + ch;
                            let v = input[at];
                            // NaN never wins; it is caught by the finiteness checks upstream.
                            if v > best || best_at == usize::MAX {
                                best = v;
                                best_at = at;
                            }
                        }
                    }
                    let o = (oy * self.out_w + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_at;
                }
            }
        }
    }
}

/// Max pooling over `[h, w, c]` with a square window and no padding.
/// Returns the pooled tensor and, per output cell, the flat input offset of
/// its maximum.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.rank() != 3 {
        return Err(Error::dim("maxpool2d", &input.shape, &[0, 0, 0]));
    }
    let geom = PoolGeometry::new([input.shape[0], input.shape[1], input.shape[2]], window, stride)?;
    let mut out = vec![T::zero(); geom.output_len()];
    let mut argmax = vec![0; geom.output_len()];
    geom.forward(&input.data, &mut out, &mut argmax);
    Ok((Tensor::new([geom.out_h, geom.out_w, geom.channels], out)?, argmax))
}
