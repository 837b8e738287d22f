//! Dense row-major tensors and the volumetric kernels the networks are built from.
//!
//! Everything here is scalar-generic so the same kernels run in `f32` for
//! training and in `f64` for finite-difference checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type with a GEMM entry point.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c = alpha * a·b + beta * c` for strided row/column layouts.
    ///
    /// # Safety
    /// Pointers must address matrices of the given extents and strides.
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

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided matrix view into a slice, used to bounds-check GEMM calls.
#[derive(Clone, Copy)]
struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<T> MatRef<'_, T> {
    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = alpha * a·b + beta * c` with every operand bounds-checked against its slice.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.data.len() > a.last_index() || k == 0);
    assert!(b.data.len() > b.last_index() || k == 0);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: extents were checked against the backing slices above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape to {shape:?}");
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "accumulate shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `indices` of axis 0.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let row = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Spatial extents of one volumetric convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        input: [usize; 3],
    ) -> Self {
        let mut output = [0; 3];
        for a in 0..3 {
            assert!(input[a] + 2 * pad[a] >= kernel[a], "kernel larger than padded input");
            output[a] = (input[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1;
        }
        Self { cin, cout, kernel, stride, pad, input, output }
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Output depth planes processed per im2col chunk.
    fn planes_per_chunk(&self) -> usize {
        let plane = self.output[1] * self.output[2];
        (2048 / plane.max(1)).max(1)
    }
}

/// Output positions `lo..hi` along one axis whose tap `c` lands inside the input.
fn valid_range(out: usize, stride: usize, c: usize, pad: usize, input: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(c).div_ceil(stride).min(out);
    let hi = if input + pad > c { ((input + pad - c - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Fills `cols` (row-major `[cin*kvol, n]`) for output planes `d0..d1`.
fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], d0: usize, d1: usize, cols: &mut [T]) {
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [id_, ih_, iw_] = g.input;
    let [_, oh_, ow_] = g.output;
    let n = (d1 - d0) * oh_ * ow_;
    let mut row = 0;
    for ci in 0..g.cin {
        let chan = &input[ci * id_ * ih_ * iw_..(ci + 1) * id_ * ih_ * iw_];
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let mut p = 0;
                    for od in d0..d1 {
                        let z = (od * sd + a) as isize - pd as isize;
                        if z < 0 || z >= id_ as isize {
                            dst[p..p + oh_ * ow_].fill(T::zero());
                            p += oh_ * ow_;
                            continue;
                        }
                        let plane = &chan[z as usize * ih_ * iw_..];
                        for oh in 0..oh_ {
                            let y = (oh * sh + b) as isize - ph as isize;
                            if y < 0 || y >= ih_ as isize {
                                dst[p..p + ow_].fill(T::zero());
                                p += ow_;
                                continue;
                            }
                            let line = &plane[y as usize * iw_..y as usize * iw_ + iw_];
                            let (lo, hi) = valid_range(ow_, sw, c, pw, iw_);
                            let out = &mut dst[p..p + ow_];
                            out[..lo].fill(T::zero());
                            out[hi..].fill(T::zero());
                            if sw == 1 {
                                let x0 = lo + c - pw;
                                out[lo..hi].copy_from_slice(&line[x0..x0 + hi - lo]);
                            } else {
                                for (ow, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                                    *o = line[ow * sw + c - pw];
                                }
                            }
                            p += ow_;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `grad_in`.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], d0: usize, d1: usize, grad_in: &mut [T]) {
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [id_, ih_, iw_] = g.input;
    let [_, oh_, ow_] = g.output;
    let n = (d1 - d0) * oh_ * ow_;
    let mut row = 0;
    for ci in 0..g.cin {
        let chan = &mut grad_in[ci * id_ * ih_ * iw_..(ci + 1) * id_ * ih_ * iw_];
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let src = &cols[row * n..(row + 1) * n];
                    let mut p = 0;
                    for od in d0..d1 {
                        let z = (od * sd + a) as isize - pd as isize;
                        if z < 0 || z >= id_ as isize {
                            p += oh_ * ow_;
                            continue;
                        }
                        for oh in 0..oh_ {
                            let y = (oh * sh + b) as isize - ph as isize;
                            if y < 0 || y >= ih_ as isize {
                                p += ow_;
                                continue;
                            }
                            let base = (z as usize * ih_ + y as usize) * iw_;
                            let (lo, hi) = valid_range(ow_, sw, c, pw, iw_);
                            for ow in lo..hi {
                                chan[base + ow * sw + c - pw] += src[p + ow];
                            }
                            p += ow_;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Batched volumetric convolution. `x` is `N×Cin×D×H×W`, `w` is `Cout×Cin×kd×kh×kw`.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Tensor<T>, ConvGeom) {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 5, "conv3d input must be N×C×D×H×W");
    assert_eq!(ws.len(), 5, "conv3d weight must be Cout×Cin×kd×kh×kw");
    assert_eq!(xs[1], ws[1], "conv3d channel mismatch");
    let g = ConvGeom::new(ws[1], ws[0], [ws[2], ws[3], ws[4]], stride, pad, [xs[2], xs[3], xs[4]]);
    let n = xs[0];
    let k = g.cin * g.kvol();
    let out_vol = g.out_vol();
    let mut out = vec![T::zero(); n * g.cout * out_vol];
    let wmat = MatRef { data: w.data(), rows: g.cout, cols: k, rs: k, cs: 1 };
    let planes = g.planes_per_chunk();
    let plane = g.output[1] * g.output[2];
    let mut cols = Vec::new();
    for s in 0..n {
        let input = &x.data()[s * g.cin * g.in_vol()..(s + 1) * g.cin * g.in_vol()];
        let dst = &mut out[s * g.cout * out_vol..(s + 1) * g.cout * out_vol];
        if g.is_pointwise() {
            let b = MatRef { data: input, rows: k, cols: out_vol, rs: out_vol, cs: 1 };
            gemm(T::one(), wmat, b, T::zero(), dst, out_vol, 1);
        } else {
            let mut d0 = 0;
            while d0 < g.output[0] {
                let d1 = (d0 + planes).min(g.output[0]);
                let cn = (d1 - d0) * plane;
                cols.resize(k * cn, T::zero());
                im2col(&g, input, d0, d1, &mut cols);
                let b = MatRef { data: &cols, rows: k, cols: cn, rs: cn, cs: 1 };
                gemm(T::one(), wmat, b, T::zero(), &mut dst[d0 * plane..], out_vol, 1);
                d0 = d1;
            }
        }
        if let Some(bias) = bias {
            for co in 0..g.cout {
                let bv = bias.data()[co];
                for v in &mut dst[co * out_vol..(co + 1) * out_vol] {
                    *v += bv;
                }
            }
        }
    }
    let shape = vec![n, g.cout, g.output[0], g.output[1], g.output[2]];
    (Tensor::from_vec(shape, out), g)
}

/// Gradients of [`conv3d`] with respect to input, weight and bias.
///
/// Weight gradients accumulate sample by sample in batch order.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let n = x.shape()[0];
    let k = g.cin * g.kvol();
    let in_vol = g.in_vol();
    let out_vol = g.out_vol();
    let mut gw = vec![T::zero(); g.cout * k];
    let mut gb = vec![T::zero(); g.cout];
    let mut gx = if need_input { Some(vec![T::zero(); x.len()]) } else { None };
    let wt = MatRef { data: w.data(), rows: k, cols: g.cout, rs: 1, cs: k };
    let planes = g.planes_per_chunk();
    let plane = g.output[1] * g.output[2];
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for s in 0..n {
        let input = &x.data()[s * g.cin * in_vol..(s + 1) * g.cin * in_vol];
        let dy = &grad_out.data()[s * g.cout * out_vol..(s + 1) * g.cout * out_vol];
        for co in 0..g.cout {
            let mut acc = T::zero();
            for &v in &dy[co * out_vol..(co + 1) * out_vol] {
                acc += v;
            }
            gb[co] += acc;
        }
        if g.is_pointwise() {
            let dym = MatRef { data: dy, rows: g.cout, cols: out_vol, rs: out_vol, cs: 1 };
            let xt = MatRef { data: input, rows: out_vol, cols: k, rs: 1, cs: out_vol };
            gemm(T::one(), dym, xt, T::one(), &mut gw, k, 1);
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[s * g.cin * in_vol..(s + 1) * g.cin * in_vol];
                gemm(T::one(), wt, dym, T::zero(), dst, out_vol, 1);
            }
            continue;
        }
        let mut d0 = 0;
        while d0 < g.output[0] {
            let d1 = (d0 + planes).min(g.output[0]);
            let cn = (d1 - d0) * plane;
            cols.resize(k * cn, T::zero());
            im2col(g, input, d0, d1, &mut cols);
            let dym = MatRef { data: &dy[d0 * plane..], rows: g.cout, cols: cn, rs: out_vol, cs: 1 };
            let colst = MatRef { data: &cols, rows: cn, cols: k, rs: 1, cs: cn };
            gemm(T::one(), dym, colst, T::one(), &mut gw, k, 1);
            if let Some(gx) = gx.as_mut() {
                dcols.resize(k * cn, T::zero());
                gemm(T::one(), wt, dym, T::zero(), &mut dcols, cn, 1);
                let dst = &mut gx[s * g.cin * in_vol..(s + 1) * g.cin * in_vol];
                col2im(g, &dcols, d0, d1, dst);
            }
            d0 = d1;
        }
    }
    (
        gx.map(|v| Tensor::from_vec(x.shape().to_vec(), v)),
        Tensor::from_vec(w.shape().to_vec(), gw),
        Tensor::from_vec(vec![g.cout], gb),
    )
}

/// Non-overlapping max pooling over `N×C×D×H×W`; returns argmax offsets for the backward pass.
pub fn max_pool3d<T: Scalar>(x: &Tensor<T>, k: [usize; 3]) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape();
    assert_eq!(s.len(), 5);
    let (d, h, w) = (s[2], s[3], s[4]);
    assert!(d % k[0] == 0 && h % k[1] == 0 && w % k[2] == 0, "pool window must divide input {s:?}");
    let (od, oh, ow) = (d / k[0], h / k[1], w / k[2]);
    let planes = s[0] * s[1];
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..planes {
        let base = p * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut besti = base + (z * k[0] * h + y * k[1]) * w + xo * k[2];
                    let mut best = x.data()[besti];
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for c in 0..k[2] {
                                let i = base + ((z * k[0] + a) * h + y * k[1] + b) * w + xo * k[2] + c;
                                let v = x.data()[i];
                                if v > best {
                                    best = v;
                                    besti = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(besti as u32);
                }
            }
        }
    }
    (Tensor::from_vec(vec![s[0], s[1], od, oh, ow], out), arg)
}

/// Linear interpolation weights along one axis (half-pixel centers, edge clamped).
fn interp_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Linearly resizes `axis` of `x` to `out_len`.
pub fn resize_axis<T: Scalar>(x: &Tensor<T>, axis: usize, out_len: usize) -> Tensor<T> {
    let s = x.shape();
    let in_len = s[axis];
    if in_len == out_len {
        return x.clone();
    }
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let taps = interp_taps(in_len, out_len);
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        let src = &x.data()[o * in_len * inner..(o + 1) * in_len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for (j, &(i0, i1, t)) in taps.iter().enumerate() {
            let (w0, w1) = (T::lit(1.0 - t), T::lit(t));
            let row = &mut dst[j * inner..(j + 1) * inner];
            let a = &src[i0 * inner..(i0 + 1) * inner];
            let b = &src[i1 * inner..(i1 + 1) * inner];
            for q in 0..inner {
                row[q] = w0 * a[q] + w1 * b[q];
            }
        }
    }
    let mut shape = s.to_vec();
    shape[axis] = out_len;
    Tensor::from_vec(shape, out)
}

/// Adjoint of [`resize_axis`].
pub fn resize_axis_backward<T: Scalar>(grad: &Tensor<T>, axis: usize, in_len: usize) -> Tensor<T> {
    let s = grad.shape();
    let out_len = s[axis];
    if in_len == out_len {
        return grad.clone();
    }
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let taps = interp_taps(in_len, out_len);
    let mut out = vec![T::zero(); outer * in_len * inner];
    for o in 0..outer {
        let src = &grad.data()[o * out_len * inner..(o + 1) * out_len * inner];
        let dst = &mut out[o * in_len * inner..(o + 1) * in_len * inner];
        for (j, &(i0, i1, t)) in taps.iter().enumerate() {
            let (w0, w1) = (T::lit(1.0 - t), T::lit(t));
            for q in 0..inner {
                let g = src[j * inner + q];
                dst[i0 * inner + q] += w0 * g;
                dst[i1 * inner + q] += w1 * g;
            }
        }
    }
    let mut shape = s.to_vec();
    shape[axis] = in_len;
    Tensor::from_vec(shape, out)
}

/// Zero-pads (positive) or crops (negative) the last three axes, symmetric split with the
/// extra element on the trailing side.
pub fn pad3d<T: Scalar>(x: &Tensor<T>, before: [usize; 3], after: [usize; 3]) -> Tensor<T> {
    let s = x.shape();
    let (d, h, w) = (s[2], s[3], s[4]);
    let (nd, nh, nw) = (d + before[0] + after[0], h + before[1] + after[1], w + before[2] + after[2]);
    let planes = s[0] * s[1];
    let mut out = vec![T::zero(); planes * nd * nh * nw];
    for p in 0..planes {
        for z in 0..d {
            for y in 0..h {
                let src = &x.data()[((p * d + z) * h + y) * w..][..w];
                let o = ((p * nd + z + before[0]) * nh + y + before[1]) * nw + before[2];
                out[o..o + w].copy_from_slice(src);
            }
        }
    }
    Tensor::from_vec(vec![s[0], s[1], nd, nh, nw], out)
}

/// Inverse of [`pad3d`]: keeps the interior window.
pub fn crop3d<T: Scalar>(x: &Tensor<T>, before: [usize; 3], size: [usize; 3]) -> Tensor<T> {
    let s = x.shape();
    let (d, h, w) = (s[2], s[3], s[4]);
    let planes = s[0] * s[1];
    let mut out = Vec::with_capacity(planes * size.iter().product::<usize>());
    for p in 0..planes {
        for z in 0..size[0] {
            for y in 0..size[1] {
                let o = ((p * d + z + before[0]) * h + y + before[1]) * w + before[2];
                out.extend_from_slice(&x.data()[o..o + size[2]]);
            }
        }
    }
    Tensor::from_vec(vec![s[0], s[1], size[0], size[1], size[2]], out)
}
