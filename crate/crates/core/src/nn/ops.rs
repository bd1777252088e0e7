//! Layer primitives: 2-D convolution and its transpose, ReLU.
//!
//! Padding is circular along the columns (the azimuth wraps around) and
//! zero along the rows. For a kernel of extent `k` the window of output
//! position `o` starts at input position `o * stride - (k - 1) / 2`, so the
//! output extent is exactly `input / stride`.
//!
//! Both convolutions go through an im2col buffer and a dense matrix
//! product; the transposed convolution is implemented as the exact adjoint
//! of the convolution with the same geometry.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride {
    pub vertical: usize,
    pub horizontal: usize,
}

impl Stride {
    pub const ONE: Stride = Stride { vertical: 1, horizontal: 1 };

    pub fn new(vertical: usize, horizontal: usize) -> Self {
        Self { vertical, horizontal }
    }
}

/// Geometry of a convolution from a `rows × cols` grid to the strided grid.
#[derive(Debug, Clone)]
struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    /// `kh × out_h` source rows, `None` where the window hits zero padding.
    row_map: Vec<Option<usize>>,
    /// `kw × out_w` source columns (circular).
    col_map: Vec<usize>,
    /// Per kernel column, the first source column when the row of sources
    /// is a rotation of the input row (unit horizontal stride).
    col_shift: Vec<Option<usize>>,
}

impl Geometry {
    fn new(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: Stride) -> Result<Self> {
        if stride.vertical == 0 || stride.horizontal == 0 || kh == 0 || kw == 0 {
            return Err(Error::Shape("zero stride or kernel extent".into()));
        }
        if !in_h.is_multiple_of(stride.vertical) || !in_w.is_multiple_of(stride.horizontal) {
            return Err(Error::Shape(format!(
                "{in_h}x{in_w} grid not divisible by stride ({}, {})",
                stride.vertical, stride.horizontal
            )));
        }
        let out_h = in_h / stride.vertical;
        let out_w = in_w / stride.horizontal;
        let (pad_t, pad_l) = ((kh - 1) / 2, (kw - 1) / 2);
        let mut row_map = Vec::with_capacity(kh * out_h);
        for ki in 0..kh {
            for oh in 0..out_h {
                let r = (oh * stride.vertical + ki) as isize - pad_t as isize;
                row_map.push((r >= 0 && (r as usize) < in_h).then_some(r as usize));
            }
        }
        let mut col_map = Vec::with_capacity(kw * out_w);
        for kj in 0..kw {
            for ow in 0..out_w {
                let c = (ow * stride.horizontal + kj) as isize - pad_l as isize;
                col_map.push(c.rem_euclid(in_w as isize) as usize);
            }
        }
        let col_shift = (0..kw).map(|kj| (stride.horizontal == 1).then(|| col_map[kj * out_w])).collect();
        Ok(Self { in_h, in_w, out_h, out_w, kh, kw, row_map, col_map, col_shift })
    }

    fn patch(&self) -> usize {
        self.out_h * self.out_w
    }

    fn tile_rows(&self, k: usize) -> usize {
        (PATCH_BUDGET / (k * self.out_w).max(1)).clamp(1, self.out_h.max(1))
    }

    /// Patch-matrix columns of the largest tile.
    fn tile_len(&self, k: usize) -> usize {
        self.tile_rows(k) * self.out_w
    }

    /// Output-row tiles whose patch matrix holds about `PATCH_BUDGET` values.
    fn tiles(&self, k: usize) -> impl Iterator<Item = (usize, usize)> {
        let per = self.tile_rows(k);
        let h = self.out_h;
        (0..h).step_by(per).map(move |r0| (r0, (r0 + per).min(h)))
    }

    /// `(channels·kh·kw) × ((r1 - r0)·out_w)` patch matrix for output rows
    /// `r0..r1` of one input item.
    fn im2col(&self, input: &[f64], channels: usize, (r0, r1): (usize, usize), cols: &mut [f64]) {
        let nt = (r1 - r0) * self.out_w;
        for c in 0..channels {
            let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let base = ((c * self.kh + ki) * self.kw + kj) * nt;
                    let cmap = &self.col_map[kj * self.out_w..(kj + 1) * self.out_w];
                    for oh in r0..r1 {
                        let at = base + (oh - r0) * self.out_w;
                        let dst = &mut cols[at..at + self.out_w];
                        match self.row_map[ki * self.out_h + oh] {
                            None => dst.fill(0.0),
                            Some(ih) => {
                                let src = &plane[ih * self.in_w..(ih + 1) * self.in_w];
                                match self.col_shift[kj] {
                                    Some(start) => {
                                        let head = self.in_w - start;
                                        dst[..head].copy_from_slice(&src[start..]);
                                        dst[head..].copy_from_slice(&src[..start]);
                                    }
                                    None => {
                                        for (d, &ic) in dst.iter_mut().zip(cmap) {
                                            *d = src[ic];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-add patches back to the grid.
    fn col2im(&self, cols: &[f64], channels: usize, (r0, r1): (usize, usize), out: &mut [f64]) {
        let nt = (r1 - r0) * self.out_w;
        for c in 0..channels {
            let plane = &mut out[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let base = ((c * self.kh + ki) * self.kw + kj) * nt;
                    let cmap = &self.col_map[kj * self.out_w..(kj + 1) * self.out_w];
                    for oh in r0..r1 {
                        if let Some(ih) = self.row_map[ki * self.out_h + oh] {
                            let at = base + (oh - r0) * self.out_w;
                            let src = &cols[at..at + self.out_w];
                            let dst = &mut plane[ih * self.in_w..(ih + 1) * self.in_w];
                            match self.col_shift[kj] {
                                Some(start) => {
                                    let head = self.in_w - start;
                                    add_into(&mut dst[start..], &src[..head]);
                                    add_into(&mut dst[..start], &src[head..]);
                                }
                                None => {
                                    for (&s, &ic) in src.iter().zip(cmap) {
                                        dst[ic] += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Target size of one patch-matrix tile, in values; keeps it cache resident.
const PATCH_BUDGET: usize = 1 << 17;

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-major matrix view: `rows × cols` starting at `offset` with row stride `ld`.
#[derive(Clone, Copy)]
struct Mat {
    offset: usize,
    ld: usize,
    transposed: bool,
}

impl Mat {
    fn dense(cols: usize) -> Self {
        Self { offset: 0, ld: cols, transposed: false }
    }

    fn at(offset: usize, ld: usize) -> Self {
        Self { offset, ld, transposed: false }
    }

    fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    /// `(row stride, col stride)` of the logical (post-transpose) matrix.
    fn strides(self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    /// Highest element index touched by a logical `rows × cols` view, plus one.
    fn extent(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        let (rs, cs) = self.strides();
        self.offset + (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

/// `c = beta·c + a·b` where `a` is `m×k`, `b` is `k×n` and `c` is `m×n`,
/// each a strided view into its slice.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], av: Mat, b: &[f64], bv: Mat, beta: f64, c: &mut [f64], cv: Mat) {
    assert!(av.extent(m, k) <= a.len() && bv.extent(k, n) <= b.len() && cv.extent(m, n) <= c.len());
    assert!(!cv.transposed);
    let (rsa, csa) = av.strides();
    let (rsb, csb) = bv.strides();
    // SAFETY: the asserts above bound every element addressed by the views,
    // and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            rsa,
            csa,
            b.as_ptr().add(bv.offset),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.ld as isize,
            1,
        );
    }
}

fn check_kernel(kernel: &Tensor, bias: &[f64], bias_len: usize) -> Result<()> {
    if bias.len() != bias_len {
        return Err(Error::Shape(format!("bias has {} entries, expected {bias_len}", bias.len())));
    }
    if kernel.rows() == 0 || kernel.cols() == 0 {
        return Err(Error::Shape("empty kernel".into()));
    }
    Ok(())
}

/// Cross-correlation. `kernel` is `(out, in, kh, kw)`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &[f64], stride: Stride) -> Result<Tensor> {
    let [n, c, h, w] = input.shape;
    let [o, kc, kh, kw] = kernel.shape;
    if kc != c {
        return Err(Error::Shape(format!("kernel expects {kc} input channels, got {c}")));
    }
    check_kernel(kernel, bias, o)?;
    let g = Geometry::new(h, w, kh, kw, stride)?;
    let p = g.patch();
    let k = c * kh * kw;
    let mut out = Tensor::zeros([n, o, g.out_h, g.out_w]);
    let mut cols = vec![0.0; k * g.tile_len(k)];
    for b in 0..n {
        let dst = out.item_mut(b);
        for (oc, chunk) in dst.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias[oc]);
        }
        for t in g.tiles(k) {
            let nt = (t.1 - t.0) * g.out_w;
            g.im2col(input.item(b), c, t, &mut cols);
            gemm(o, k, nt, &kernel.data, Mat::dense(k), &cols, Mat::dense(nt), 1.0, dst, Mat::at(t.0 * g.out_w, p));
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, kernel: &Tensor, stride: Stride) -> Result<ConvGrads> {
    let [n, c, h, w] = input.shape;
    let [o, kc, kh, kw] = kernel.shape;
    if kc != c {
        return Err(Error::Shape(format!("kernel expects {kc} input channels, got {c}")));
    }
    let g = Geometry::new(h, w, kh, kw, stride)?;
    if grad_out.shape != [n, o, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match forward output {:?}",
            grad_out.shape,
            [n, o, g.out_h, g.out_w]
        )));
    }
    let p = g.patch();
    let k = c * kh * kw;
    let mut grad_in = Tensor::zeros(input.shape);
    let mut grad_k = Tensor::zeros(kernel.shape);
    let mut grad_b = vec![0.0; o];
    let mut cols = vec![0.0; k * g.tile_len(k)];
    for b in 0..n {
        let go = grad_out.item(b);
        for (oc, chunk) in go.chunks_exact(p).enumerate() {
            grad_b[oc] += chunk.iter().sum::<f64>();
        }
        for t in g.tiles(k) {
            let nt = (t.1 - t.0) * g.out_w;
            let go_t = Mat::at(t.0 * g.out_w, p);
            g.im2col(input.item(b), c, t, &mut cols);
            gemm(o, nt, k, go, go_t, &cols, Mat::dense(nt).t(), 1.0, &mut grad_k.data, Mat::dense(k));
            gemm(k, o, nt, &kernel.data, Mat::dense(k).t(), go, go_t, 0.0, &mut cols, Mat::dense(nt));
            g.col2im(&cols, c, t, grad_in.item_mut(b));
        }
    }
    Ok(ConvGrads { input: grad_in, kernel: grad_k, bias: grad_b })
}

/// Transposed convolution. `kernel` is `(in, out, kh, kw)`; the output grid
/// is the input grid times the stride.
pub fn deconv2d_forward(input: &Tensor, kernel: &Tensor, bias: &[f64], stride: Stride) -> Result<Tensor> {
    let [n, c, h, w] = input.shape;
    let [kc, o, kh, kw] = kernel.shape;
    if kc != c {
        return Err(Error::Shape(format!("kernel expects {kc} input channels, got {c}")));
    }
    check_kernel(kernel, bias, o)?;
    let g = Geometry::new(h * stride.vertical, w * stride.horizontal, kh, kw, stride)?;
    let p = g.patch();
    let k = o * kh * kw;
    let mut out = Tensor::zeros([n, o, g.in_h, g.in_w]);
    let mut cols = vec![0.0; k * g.tile_len(k)];
    for b in 0..n {
        let dst = out.item_mut(b);
        for t in g.tiles(k) {
            let nt = (t.1 - t.0) * g.out_w;
            let x_t = Mat::at(t.0 * g.out_w, p);
            gemm(k, c, nt, &kernel.data, Mat::dense(k).t(), input.item(b), x_t, 0.0, &mut cols, Mat::dense(nt));
            g.col2im(&cols, o, t, dst);
        }
        for (oc, chunk) in dst.chunks_exact_mut(g.in_h * g.in_w).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bias[oc]);
        }
    }
    Ok(out)
}

pub fn deconv2d_backward(grad_out: &Tensor, input: &Tensor, kernel: &Tensor, stride: Stride) -> Result<ConvGrads> {
    let [n, c, h, w] = input.shape;
    let [kc, o, kh, kw] = kernel.shape;
    if kc != c {
        return Err(Error::Shape(format!("kernel expects {kc} input channels, got {c}")));
    }
    let g = Geometry::new(h * stride.vertical, w * stride.horizontal, kh, kw, stride)?;
    if grad_out.shape != [n, o, g.in_h, g.in_w] {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match forward output {:?}",
            grad_out.shape,
            [n, o, g.in_h, g.in_w]
        )));
    }
    let p = g.patch();
    let k = o * kh * kw;
    let mut grad_in = Tensor::zeros(input.shape);
    let mut grad_k = Tensor::zeros(kernel.shape);
    let mut grad_b = vec![0.0; o];
    let mut cols = vec![0.0; k * g.tile_len(k)];
    for b in 0..n {
        let go = grad_out.item(b);
        for (oc, chunk) in go.chunks_exact(g.in_h * g.in_w).enumerate() {
            grad_b[oc] += chunk.iter().sum::<f64>();
        }
        for t in g.tiles(k) {
            let nt = (t.1 - t.0) * g.out_w;
            let x_t = Mat::at(t.0 * g.out_w, p);
            g.im2col(go, o, t, &mut cols);
            gemm(c, k, nt, &kernel.data, Mat::dense(k), &cols, Mat::dense(nt), 0.0, grad_in.item_mut(b), x_t);
            gemm(c, nt, k, input.item(b), x_t, &cols, Mat::dense(nt).t(), 1.0, &mut grad_k.data, Mat::dense(k));
        }
    }
    Ok(ConvGrads { input: grad_in, kernel: grad_k, bias: grad_b })
}

/// NaN passes through so a diverging run cannot be masked by the activation.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor { shape: input.shape, data: input.data.iter().map(|&x| if x < 0.0 { 0.0 } else { x }).collect() }
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape != input.shape {
        return Err(Error::Shape("relu gradient shape mismatch".into()));
    }
    let data = grad_out.data.iter().zip(&input.data).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
    Ok(Tensor { shape: input.shape, data })
}
