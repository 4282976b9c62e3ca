//! im2col-based convolution kernels.
//!
//! Convolutions are lowered to one GEMM per batch: patches are gathered into
//! a `[b*h*w, k*k*cin]` matrix and multiplied by the `[k*k*cin, cout]` weight
//! matrix. The 1x1 case skips patch gathering entirely. Patch gathering and
//! the col2im scatter are written against contiguous NHWC slices so the hot
//! loops stay memcpy/add-shaped.

use ndarray::{Array2, Array4, Axis};

use super::{Conv2d, ParamGrad, Scalar};

/// `dot` can return column-major output for degenerate shapes like
/// `(m,1)x(1,n)`; the scatter kernels below need standard layout.
pub(super) fn to_standard<F: Scalar>(a: Array2<F>) -> Array2<F> {
    if a.as_slice().is_some() {
        a
    } else {
        let dim = a.raw_dim();
        Array2::from_shape_vec(dim, a.iter().cloned().collect()).unwrap()
    }
}

pub(super) fn im2col<F: Scalar>(x: &Array4<F>, k: usize) -> Array2<F> {
    let (b, h, w, c) = x.dim();
    let pad = k / 2;
    let kc = k * c;
    let row_len = k * kc;
    let mut cols = Array2::<F>::zeros((b * h * w, row_len));
    let xs = x.as_slice().expect("input is standard layout");
    let cs = cols.as_slice_mut().unwrap();
    for n in 0..b {
        let img = &xs[n * h * w * c..][..h * w * c];
        for oy in 0..h {
            for ky in 0..k {
                let iy = oy as isize + ky as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue; // zero padding rows stay zero
                }
                let in_row = &img[(iy as usize) * w * c..][..w * c];
                let seg = ky * kc;
                for ox in 0..w {
                    let dst = ((n * h + oy) * w + ox) * row_len + seg;
                    let ix0 = ox as isize - pad as isize;
                    if ix0 >= 0 && (ix0 as usize) + k <= w {
                        let s0 = (ix0 as usize) * c;
                        cs[dst..dst + kc].copy_from_slice(&in_row[s0..s0 + kc]);
                    } else {
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && (ix as usize) < w {
                                let s0 = (ix as usize) * c;
                                cs[dst + kx * c..dst + (kx + 1) * c]
                                    .copy_from_slice(&in_row[s0..s0 + c]);
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col`]: scatter-adds column gradients back onto the
/// input grid.
fn col2im_add<F: Scalar>(cols: &Array2<F>, dim: (usize, usize, usize, usize), k: usize) -> Array4<F> {
    let (b, h, w, c) = dim;
    let pad = k / 2;
    let kc = k * c;
    let row_len = k * kc;
    let mut dx = Array4::<F>::zeros(dim);
    let cs = cols.as_slice().expect("cols is standard layout");
    let dxs = dx.as_slice_mut().unwrap();
    for n in 0..b {
        let img_off = n * h * w * c;
        for oy in 0..h {
            for ky in 0..k {
                let iy = oy as isize + ky as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let row_off = img_off + (iy as usize) * w * c;
                let seg = ky * kc;
                for ox in 0..w {
                    let src = ((n * h + oy) * w + ox) * row_len + seg;
                    let ix0 = ox as isize - pad as isize;
                    if ix0 >= 0 && (ix0 as usize) + k <= w {
                        let d0 = row_off + (ix0 as usize) * c;
                        for (dst, s) in dxs[d0..d0 + kc].iter_mut().zip(&cs[src..src + kc]) {
                            *dst = *dst + *s;
                        }
                    } else {
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && (ix as usize) < w {
                                let d0 = row_off + (ix as usize) * c;
                                for (dst, s) in dxs[d0..d0 + c]
                                    .iter_mut()
                                    .zip(&cs[src + kx * c..src + (kx + 1) * c])
                                {
                                    *dst = *dst + *s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(super) fn conv_forward<F: Scalar>(conv: &Conv2d<F>, x: &Array4<F>) -> Array4<F> {
    conv_forward_cols(conv, x).0
}

/// Forward pass returning the im2col buffer (kernel > 1) for reuse by the
/// weight-gradient GEMM in the backward pass.
pub(super) fn conv_forward_cols<F: Scalar>(
    conv: &Conv2d<F>,
    x: &Array4<F>,
) -> (Array4<F>, Option<Array2<F>>) {
    let (b, h, w, _) = x.dim();
    let (mut y2, cols) = if conv.kernel == 1 {
        let x2 = x.view().into_shape((b * h * w, conv.cin)).unwrap();
        (x2.dot(&conv.weight), None)
    } else {
        let cols = im2col(x, conv.kernel);
        (cols.dot(&conv.weight), Some(cols))
    };
    y2 += &conv.bias;
    y2.mapv_inplace(|v| conv.act.apply(v));
    (y2.into_shape((b, h, w, conv.cout)).unwrap(), cols)
}

pub(super) fn conv_backward<F: Scalar>(
    conv: &Conv2d<F>,
    x: &Array4<F>,
    cached_cols: Option<&Array2<F>>,
    y: &Array4<F>,
    d_out: &Array4<F>,
    want_params: bool,
    want_dx: bool,
) -> (Option<Array4<F>>, Option<ParamGrad<F>>) {
    let (b, h, w, _) = x.dim();
    let m = b * h * w;

    let mut d_pre = d_out.view().into_shape((m, conv.cout)).unwrap().to_owned();
    let y2 = y.view().into_shape((m, conv.cout)).unwrap();
    ndarray::Zip::from(&mut d_pre).and(&y2).for_each(|g, &yv| {
        *g = *g * conv.act.derivative_from_output(yv);
    });

    let grad = want_params.then(|| {
        let bias = d_pre.sum_axis(Axis(0));
        let weight = if conv.kernel == 1 {
            let x2 = x.view().into_shape((m, conv.cin)).unwrap();
            x2.t().dot(&d_pre)
        } else if let Some(cols) = cached_cols {
            cols.t().dot(&d_pre)
        } else {
            im2col(x, conv.kernel).t().dot(&d_pre)
        };
        ParamGrad { weight, bias }
    });

    let dx = want_dx.then(|| {
        let d_cols = to_standard(d_pre.dot(&conv.weight.t()));
        if conv.kernel == 1 {
            d_cols.into_shape(x.dim()).unwrap()
        } else {
            col2im_add(&d_cols, x.dim(), conv.kernel)
        }
    });

    (dx, grad)
}
