//! Raw convolution and channel-affine kernels over flat slices.
//!
//! Convolution is lowered to im2col + gemm. The gradient-of-input path uses
//! a gather-form col2im so every output element has a fixed summation order.
//! The naive nested-loop reference these are tested against lives in the
//! integration test suite, deliberately outside this module.

use super::{Scalar, Shape};

/// Output spatial extent of a stride-1 convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1);
    (input + 2 * padding).checked_sub(span).filter(|&v| v > 0)
}

/// For a kernel tap offset `shift = tap*dilation - padding`, the output
/// index range whose source index `o + shift` lands inside [0, extent).
#[inline]
fn valid_span(out_extent: usize, extent: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (extent as isize - shift).clamp(0, out_extent as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds one image [C, H, W] into a [C*k*k, out_h*out_w] patch matrix.
/// Interior spans are copied slice-wise; only the padding fringe is zeroed.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    image: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    dilation: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(image.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * out_h * out_w);
    let m = out_h * out_w;
    for ci in 0..c {
        let plane = &image[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            let dy = (kh * dilation) as isize - padding as isize;
            for kw in 0..k {
                let dx = (kw * dilation) as isize - padding as isize;
                let row = ((ci * k + kh) * k + kw) * m;
                let dst = &mut cols[row..row + m];
                let (x0, x1) = valid_span(out_w, w, dx);
                for oh in 0..out_h {
                    let ih = oh as isize + dy;
                    let out_row = &mut dst[oh * out_w..(oh + 1) * out_w];
                    if ih < 0 || ih >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    out_row[..x0].iter_mut().for_each(|v| *v = T::zero());
                    out_row[x1..].iter_mut().for_each(|v| *v = T::zero());
                    if x0 < x1 {
                        let src = ih as usize * w;
                        out_row[x0..x1].copy_from_slice(
                            &plane[(src as isize + x0 as isize + dx) as usize
                                ..(src as isize + x1 as isize + dx) as usize],
                        );
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto the input image: for every kernel
/// tap, the matching gradient row span is added into the image row. Taps are
/// accumulated in fixed (kh, kw) order, so results do not depend on timing.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    cols_grad: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    dilation: usize,
    out_h: usize,
    out_w: usize,
    image_grad: &mut [T],
) {
    debug_assert_eq!(image_grad.len(), c * h * w);
    let m = out_h * out_w;
    image_grad.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..c {
        let plane = &mut image_grad[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            let dy = (kh * dilation) as isize - padding as isize;
            for kw in 0..k {
                let dx = (kw * dilation) as isize - padding as isize;
                let src = &cols_grad[((ci * k + kh) * k + kw) * m..((ci * k + kh) * k + kw + 1) * m];
                let (x0, x1) = valid_span(out_w, w, dx);
                if x0 >= x1 {
                    continue;
                }
                for oh in 0..out_h {
                    let ih = oh as isize + dy;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_base = ih as usize * w;
                    let dst = &mut plane[(dst_base as isize + x0 as isize + dx) as usize
                        ..(dst_base as isize + x1 as isize + dx) as usize];
                    let src_row = &src[oh * out_w + x0..oh * out_w + x1];
                    for (d, s) in dst.iter_mut().zip(src_row) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    astr: (isize, isize),
    b: &[T],
    bstr: (isize, isize),
    beta: T,
    c: &mut [T],
    cstr: (isize, isize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            astr.0,
            astr.1,
            b.as_ptr(),
            bstr.0,
            bstr.1,
            beta,
            c.as_mut_ptr(),
            cstr.0,
            cstr.1,
        );
    }
}

/// Geometry of one conv2d application; all spatial math lives here.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.batch, self.c_out, self.out_h, self.out_w)
    }

    fn patch_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn spatial_out(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
) -> Vec<T> {
    let kk = d.patch_rows();
    let m = d.spatial_out();
    let mut out = vec![T::zero(); d.batch * d.c_out * m];
    let mut cols = vec![T::zero(); kk * m];
    let in_plane = d.c_in * d.h * d.w;
    for n in 0..d.batch {
        im2col(
            &input[n * in_plane..(n + 1) * in_plane],
            d.c_in,
            d.h,
            d.w,
            d.k,
            d.padding,
            d.dilation,
            d.out_h,
            d.out_w,
            &mut cols,
        );
        let dst = &mut out[n * d.c_out * m..(n + 1) * d.c_out * m];
        gemm(
            d.c_out,
            kk,
            m,
            T::one(),
            weight,
            (kk as isize, 1),
            &cols,
            (m as isize, 1),
            T::zero(),
            dst,
            (m as isize, 1),
        );
        if let Some(b) = bias {
            for co in 0..d.c_out {
                let bv = b[co];
                dst[co * m..(co + 1) * m].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias). im2col is recomputed here
/// rather than cached from the forward pass to keep tape memory flat.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    d: &ConvDims,
    want_bias: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let kk = d.patch_rows();
    let m = d.spatial_out();
    let in_plane = d.c_in * d.h * d.w;
    let out_plane = d.c_out * m;
    let mut grad_input = vec![T::zero(); d.batch * in_plane];
    let mut grad_weight = vec![T::zero(); d.c_out * kk];
    let mut grad_bias = want_bias.then(|| vec![T::zero(); d.c_out]);
    let mut cols = vec![T::zero(); kk * m];
    let mut cols_grad = vec![T::zero(); kk * m];
    for n in 0..d.batch {
        let go = &grad_out[n * out_plane..(n + 1) * out_plane];
        // dL/dW += GO . cols^T
        im2col(
            &input[n * in_plane..(n + 1) * in_plane],
            d.c_in,
            d.h,
            d.w,
            d.k,
            d.padding,
            d.dilation,
            d.out_h,
            d.out_w,
            &mut cols,
        );
        gemm(
            d.c_out,
            m,
            kk,
            T::one(),
            go,
            (m as isize, 1),
            &cols,
            (1, m as isize),
            T::one(),
            &mut grad_weight,
            (kk as isize, 1),
        );
        // dL/dX = fold(W^T . GO)
        gemm(
            kk,
            d.c_out,
            m,
            T::one(),
            weight,
            (1, kk as isize),
            go,
            (m as isize, 1),
            T::zero(),
            &mut cols_grad,
            (m as isize, 1),
        );
        col2im(
            &cols_grad,
            d.c_in,
            d.h,
            d.w,
            d.k,
            d.padding,
            d.dilation,
            d.out_h,
            d.out_w,
            &mut grad_input[n * in_plane..(n + 1) * in_plane],
        );
        if let Some(gb) = grad_bias.as_deref_mut() {
            for co in 0..d.c_out {
                let mut acc = T::zero();
                for &g in &go[co * m..(co + 1) * m] {
                    acc += g;
                }
                gb[co] += acc;
            }
        }
    }
    (grad_input, grad_weight, grad_bias)
}

/// out[n, :, h, w] = W . in[n, :, h, w] + b for every spatial location.
pub fn linear_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    batch: usize,
    c_in: usize,
    c_out: usize,
    spatial: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * c_out * spatial];
    for n in 0..batch {
        let src = &input[n * c_in * spatial..(n + 1) * c_in * spatial];
        let dst = &mut out[n * c_out * spatial..(n + 1) * c_out * spatial];
        gemm(
            c_out,
            c_in,
            spatial,
            T::one(),
            weight,
            (c_in as isize, 1),
            src,
            (spatial as isize, 1),
            T::zero(),
            dst,
            (spatial as isize, 1),
        );
        for co in 0..c_out {
            let bv = bias[co];
            dst[co * spatial..(co + 1) * spatial].iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias) for [`linear_forward`].
pub fn linear_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    batch: usize,
    c_in: usize,
    c_out: usize,
    spatial: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut grad_input = vec![T::zero(); batch * c_in * spatial];
    let mut grad_weight = vec![T::zero(); c_out * c_in];
    let mut grad_bias = vec![T::zero(); c_out];
    for n in 0..batch {
        let src = &input[n * c_in * spatial..(n + 1) * c_in * spatial];
        let go = &grad_out[n * c_out * spatial..(n + 1) * c_out * spatial];
        gemm(
            c_in,
            c_out,
            spatial,
            T::one(),
            weight,
            (1, c_in as isize),
            go,
            (spatial as isize, 1),
            T::one(),
            &mut grad_input[n * c_in * spatial..(n + 1) * c_in * spatial],
            (spatial as isize, 1),
        );
        gemm(
            c_out,
            spatial,
            c_in,
            T::one(),
            go,
            (spatial as isize, 1),
            src,
            (1, spatial as isize),
            T::one(),
            &mut grad_weight,
            (c_in as isize, 1),
        );
        for co in 0..c_out {
            let mut acc = T::zero();
            for &g in &go[co * spatial..(co + 1) * spatial] {
                acc += g;
            }
            grad_bias[co] += acc;
        }
    }
    (grad_input, grad_weight, grad_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_extent_matches_formula() {
        assert_eq!(conv_out_extent(5, 3, 1, 1), Some(5));
        assert_eq!(conv_out_extent(5, 3, 2, 2), Some(5));
        assert_eq!(conv_out_extent(5, 3, 0, 3), None);
        assert_eq!(conv_out_extent(1, 1, 0, 1), Some(1));
    }

    #[test]
    fn im2col_identity_kernel_row() {
        // k=1 im2col is the image itself.
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut cols = vec![0.0; 12];
        im2col(&img, 2, 2, 3, 1, 0, 1, 2, 3, &mut cols);
        assert_eq!(cols, img);
    }

    #[test]
    fn linear_roundtrip_identity_weight() {
        let input: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0]; // [1, 2, 1, 2]
        let weight = vec![1.0, 0.0, 0.0, 1.0];
        let bias = vec![0.0, 0.0];
        let out = linear_forward(&input, &weight, &bias, 1, 2, 2, 2);
        assert_eq!(out, input);
    }
}
