//! Minimal CPU neural-network substrate.
//!
//! Supports exactly the layer vocabulary the experiment architectures need:
//! 3x3/1x1 same-padding convolutions, 2x2 max/average pooling, 2x2 nearest
//! upsampling, global average pooling, flatten and dense layers, with ReLU,
//! sigmoid or linear activations. Data layout is NHWC (`[batch, h, w, c]`),
//! `f32` in production; the whole stack is generic over `f32`/`f64` so that
//! gradient correctness can be checked against finite differences at `f64`
//! precision.
//!
//! Reverse-mode gradients are exact and available both for parameters
//! (training) and for inputs (attacks differentiate the loss w.r.t. the
//! image).

mod conv;
mod init;
mod loss;
mod optimizer;

pub use init::fan_in_uniform;
pub use loss::{mse_loss_and_grad, softmax_ce_mean, softmax_rows};
pub use optimizer::{Optimizer, OptimizerKind};

use ndarray::{Array1, Array2, Array4, Axis};

use crate::error::{Error, Result};

/// Floating-point element type of a network (`f32` or `f64`).
pub trait Scalar: ndarray::NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Elementwise nonlinearity applied after a conv or dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply<F: Scalar>(self, v: F) -> F {
        match self {
            Activation::Linear => v,
            Activation::Relu => {
                if v > F::zero() {
                    v
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let one = F::one();
                one / (one + (-v).exp())
            }
        }
    }

    /// Derivative expressed in terms of the layer *output* `y`.
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Linear => F::one(),
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => y * (F::one() - y),
        }
    }
}

/// Convolution with odd kernel size, stride 1 and zero same-padding.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    /// Weights in GEMM layout `[k*k*cin, cout]`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub act: Activation,
}

/// Fully-connected layer over flattened features, `[cin, cout]`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub enum Layer<F> {
    Conv(Conv2d<F>),
    Dense(Dense<F>),
    /// 2x2 max pooling, stride 2.
    MaxPool2,
    /// 2x2 average pooling, stride 2.
    AvgPool2,
    /// 2x2 nearest-neighbour upsampling.
    Upsample2,
    /// Mean over the spatial dimensions, `[b,h,w,c] -> [b,1,1,c]`.
    GlobalAvgPool,
    /// `[b,h,w,c] -> [b,1,1,h*w*c]` (no data movement in NHWC).
    Flatten,
}

impl<F: Scalar> Layer<F> {
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }

    /// Short structural name used in archives and diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Dense(_) => "dense",
            Layer::MaxPool2 => "max_pool2",
            Layer::AvgPool2 => "avg_pool2",
            Layer::Upsample2 => "upsample2",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
        }
    }
}

/// Spatial shape of one example: `(height, width, channels)`.
pub type Shape = (usize, usize, usize);

/// A feed-forward stack of [`Layer`]s with a fixed input shape.
#[derive(Clone, Debug)]
pub struct Network<F> {
    pub input_shape: Shape,
    pub layers: Vec<Layer<F>>,
}

/// All layer outputs of one forward pass; `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`. Convolution layers also keep
/// their im2col buffer so the weight-gradient GEMM can reuse it.
pub struct Trace<F> {
    activations: Vec<Array4<F>>,
    cols: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Trace<F> {
    pub fn output(&self) -> &Array4<F> {
        self.activations.last().expect("trace has at least the input")
    }

    pub fn input(&self) -> &Array4<F> {
        &self.activations[0]
    }
}

/// Which gradients [`Network::backward`] should produce.
#[derive(Clone, Copy, Debug)]
pub struct GradWants {
    pub params: bool,
    pub input: bool,
}

impl GradWants {
    pub const PARAMS: GradWants = GradWants { params: true, input: false };
    pub const INPUT: GradWants = GradWants { params: false, input: true };
    pub const BOTH: GradWants = GradWants { params: true, input: true };
}

/// Weight/bias gradient of one parameterized layer.
#[derive(Clone, Debug)]
pub struct ParamGrad<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

pub struct Gradients<F> {
    /// One entry per layer; `None` for layers without parameters or when
    /// parameter gradients were not requested.
    pub params: Vec<Option<ParamGrad<F>>>,
    pub input: Option<Array4<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(input_shape: Shape, layers: Vec<Layer<F>>) -> Result<Self> {
        let net = Network { input_shape, layers };
        net.output_shape()?;
        Ok(net)
    }

    /// Shape produced per example, after validating layer compatibility.
    pub fn output_shape(&self) -> Result<Shape> {
        let mut shape = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(layer, shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind_name())))?;
        }
        Ok(shape)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    /// Inference-only forward pass; intermediate activations are dropped as
    /// soon as they are consumed.
    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let mut a = self.forward_layer(0, x);
        for i in 1..self.layers.len() {
            a = self.forward_layer(i, &a);
        }
        a
    }

    /// Forward pass keeping every activation for a later [`Self::backward`].
    pub fn forward_trace(&self, x: &Array4<F>) -> Trace<F> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut cols = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let prev = activations.last().unwrap();
            let (out, col) = match &self.layers[i] {
                Layer::Conv(c) => {
                    let (y, col) = conv::conv_forward_cols(c, prev);
                    (y, col)
                }
                _ => (self.forward_layer(i, prev), None),
            };
            activations.push(out);
            cols.push(col);
        }
        Trace { activations, cols }
    }

    fn forward_layer(&self, i: usize, x: &Array4<F>) -> Array4<F> {
        match &self.layers[i] {
            Layer::Conv(c) => conv::conv_forward(c, x),
            Layer::Dense(d) => dense_forward(d, x),
            Layer::MaxPool2 => max_pool2_forward(x),
            Layer::AvgPool2 => avg_pool2_forward(x),
            Layer::Upsample2 => upsample2_forward(x),
            Layer::GlobalAvgPool => global_avg_pool_forward(x),
            Layer::Flatten => flatten_forward(x),
        }
    }

    /// Reverse-mode sweep from a cotangent on the network output.
    ///
    /// `d_out` must have the shape of the final activation. Parameter
    /// gradients follow the conventions of the forward pass exactly (no
    /// implicit batch averaging; scale the cotangent instead).
    pub fn backward(&self, trace: &Trace<F>, d_out: Array4<F>, wants: GradWants) -> Gradients<F> {
        assert_eq!(
            trace.activations.len(),
            self.layers.len() + 1,
            "trace does not match network depth"
        );
        let mut params: Vec<Option<ParamGrad<F>>> = Vec::with_capacity(self.layers.len());
        params.resize_with(self.layers.len(), || None);

        let mut d = d_out;
        for i in (0..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            // The input cotangent of layer 0 is only needed when the caller
            // asked for input gradients.
            let need_dx = wants.input || i > 0;
            d = match &self.layers[i] {
                Layer::Conv(c) => {
                    let (dx, grad) =
                        conv::conv_backward(c, x, trace.cols[i].as_ref(), y, &d, wants.params, need_dx);
                    if wants.params {
                        params[i] = grad;
                    }
                    dx.unwrap_or_else(|| Array4::zeros(x.dim()))
                }
                Layer::Dense(dn) => {
                    let (dx, grad) = dense_backward(dn, x, y, &d, wants.params, need_dx);
                    if wants.params {
                        params[i] = grad;
                    }
                    dx.unwrap_or_else(|| Array4::zeros(x.dim()))
                }
                Layer::MaxPool2 => max_pool2_backward(x, &d),
                Layer::AvgPool2 => avg_pool2_backward(x.dim(), &d),
                Layer::Upsample2 => upsample2_backward(x.dim(), &d),
                Layer::GlobalAvgPool => global_avg_pool_backward(x.dim(), &d),
                Layer::Flatten => flatten_backward(x.dim(), d),
            };
        }
        Gradients { params, input: if wants.input { Some(d) } else { None } }
    }

    /// Iterator over mutable parameter tensors, layer by layer, used by the
    /// optimizers.
    pub(crate) fn param_layers_mut(&mut self) -> Vec<(usize, &mut Array2<F>, &mut Array1<F>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv(c) => Some((i, &mut c.weight, &mut c.bias)),
                Layer::Dense(d) => Some((i, &mut d.weight, &mut d.bias)),
                _ => None,
            })
            .collect()
    }
}

fn layer_output_shape<F: Scalar>(layer: &Layer<F>, s: Shape) -> std::result::Result<Shape, String> {
    let (h, w, c) = s;
    match layer {
        Layer::Conv(conv) => {
            if conv.kernel % 2 == 0 {
                return Err(format!("kernel size {} must be odd", conv.kernel));
            }
            if conv.cin != c {
                return Err(format!("expects {} input channels, got {c}", conv.cin));
            }
            Ok((h, w, conv.cout))
        }
        Layer::Dense(d) => {
            let features = h * w * c;
            if d.weight.nrows() != features {
                return Err(format!("expects {} input features, got {features}", d.weight.nrows()));
            }
            Ok((1, 1, d.weight.ncols()))
        }
        Layer::MaxPool2 | Layer::AvgPool2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(format!("{h}x{w} input is not divisible by 2"));
            }
            Ok((h / 2, w / 2, c))
        }
        Layer::Upsample2 => Ok((h * 2, w * 2, c)),
        Layer::GlobalAvgPool => Ok((1, 1, c)),
        Layer::Flatten => Ok((1, 1, h * w * c)),
    }
}

// ---------------------------------------------------------------------------
// dense / pooling / reshape kernels
// ---------------------------------------------------------------------------

fn as_matrix<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (b, h, w, c) = x.dim();
    x.view()
        .into_shape((b, h * w * c))
        .expect("NHWC activations are contiguous")
        .to_owned()
}

fn dense_forward<F: Scalar>(d: &Dense<F>, x: &Array4<F>) -> Array4<F> {
    let b = x.dim().0;
    let x2 = as_matrix(x);
    let mut y = x2.dot(&d.weight);
    y += &d.bias;
    y.mapv_inplace(|v| d.act.apply(v));
    let cout = d.weight.ncols();
    y.into_shape((b, 1, 1, cout)).unwrap()
}

fn dense_backward<F: Scalar>(
    d: &Dense<F>,
    x: &Array4<F>,
    y: &Array4<F>,
    d_out: &Array4<F>,
    want_params: bool,
    want_dx: bool,
) -> (Option<Array4<F>>, Option<ParamGrad<F>>) {
    let (b, h, w, c) = x.dim();
    let cout = d.weight.ncols();
    let mut d_pre = d_out.view().into_shape((b, cout)).unwrap().to_owned();
    let y2 = y.view().into_shape((b, cout)).unwrap();
    ndarray::Zip::from(&mut d_pre).and(&y2).for_each(|g, &yv| {
        *g = *g * d.act.derivative_from_output(yv);
    });

    let grad = want_params.then(|| {
        let x2 = as_matrix(x);
        ParamGrad { weight: x2.t().dot(&d_pre), bias: d_pre.sum_axis(Axis(0)) }
    });
    let dx = want_dx
        .then(|| conv::to_standard(d_pre.dot(&d.weight.t())).into_shape((b, h, w, c)).unwrap());
    (dx, grad)
}

fn max_pool2_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<F>::zeros((b, oh, ow, c));
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    for n in 0..b {
        for oy in 0..oh {
            let r0 = &xs[((n * h + 2 * oy) * w) * c..][..2 * w * c];
            let out = &mut ys[((n * oh + oy) * ow) * c..][..ow * c];
            for ox in 0..ow {
                for ch in 0..c {
                    let a = r0[(2 * ox) * c + ch];
                    let bv = r0[(2 * ox + 1) * c + ch];
                    let cv = r0[(w + 2 * ox) * c + ch];
                    let dv = r0[(w + 2 * ox + 1) * c + ch];
                    out[ox * c + ch] = a.max(bv).max(cv).max(dv);
                }
            }
        }
    }
    y
}

fn max_pool2_backward<F: Scalar>(x: &Array4<F>, d_out: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Array4::<F>::zeros((b, h, w, c));
    let xs = x.as_slice().unwrap();
    let ds = d_out.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    // Recompute the argmax; the first maximum in scan order
                    // receives the gradient, matching the forward max.
                    let idx = |dy: usize, dx_: usize| ((n * h + 2 * oy + dy) * w + 2 * ox + dx_) * c + ch;
                    let mut best = idx(0, 0);
                    for (dy, dxo) in [(0, 1), (1, 0), (1, 1)] {
                        if xs[idx(dy, dxo)] > xs[best] {
                            best = idx(dy, dxo);
                        }
                    }
                    dxs[best] = dxs[best] + ds[((n * oh + oy) * ow + ox) * c + ch];
                }
            }
        }
    }
    dx
}

fn avg_pool2_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    let mut y = Array4::<F>::zeros((b, oh, ow, c));
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    for n in 0..b {
        for oy in 0..oh {
            let r0 = &xs[((n * h + 2 * oy) * w) * c..][..2 * w * c];
            let out = &mut ys[((n * oh + oy) * ow) * c..][..ow * c];
            for ox in 0..ow {
                for ch in 0..c {
                    let s = r0[(2 * ox) * c + ch]
                        + r0[(2 * ox + 1) * c + ch]
                        + r0[(w + 2 * ox) * c + ch]
                        + r0[(w + 2 * ox + 1) * c + ch];
                    out[ox * c + ch] = s * quarter;
                }
            }
        }
    }
    y
}

fn avg_pool2_backward<F: Scalar>(in_dim: (usize, usize, usize, usize), d_out: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = in_dim;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    let mut dx = Array4::<F>::zeros((b, h, w, c));
    let ds = d_out.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let g = ds[((n * oh + oy) * ow + ox) * c + ch] * quarter;
                    for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((n * h + 2 * oy + dy) * w + 2 * ox + dxo) * c + ch;
                        dxs[i] = dxs[i] + g;
                    }
                }
            }
        }
    }
    dx
}

fn upsample2_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h * 2, w * 2);
    let mut y = Array4::<F>::zeros((b, oh, ow, c));
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    for n in 0..b {
        for iy in 0..h {
            let src = &xs[((n * h + iy) * w) * c..][..w * c];
            for dy in 0..2 {
                let dst = &mut ys[((n * oh + 2 * iy + dy) * ow) * c..][..ow * c];
                for ix in 0..w {
                    let v = &src[ix * c..(ix + 1) * c];
                    dst[(2 * ix) * c..(2 * ix + 1) * c].copy_from_slice(v);
                    dst[(2 * ix + 1) * c..(2 * ix + 2) * c].copy_from_slice(v);
                }
            }
        }
    }
    y
}

fn upsample2_backward<F: Scalar>(in_dim: (usize, usize, usize, usize), d_out: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = in_dim;
    let (oh, ow) = (h * 2, w * 2);
    let mut dx = Array4::<F>::zeros((b, h, w, c));
    let ds = d_out.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    for n in 0..b {
        for iy in 0..h {
            let dst = &mut dxs[((n * h + iy) * w) * c..][..w * c];
            for dy in 0..2 {
                let src = &ds[((n * oh + 2 * iy + dy) * ow) * c..][..ow * c];
                for ix in 0..w {
                    for ch in 0..c {
                        dst[ix * c + ch] =
                            dst[ix * c + ch] + src[(2 * ix) * c + ch] + src[(2 * ix + 1) * c + ch];
                    }
                }
            }
        }
    }
    dx
}

fn global_avg_pool_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    let scale = F::from_f64(1.0 / (h * w) as f64);
    let mut y = Array4::<F>::zeros((b, 1, 1, c));
    for n in 0..b {
        for iy in 0..h {
            for ix in 0..w {
                for ch in 0..c {
                    y[(n, 0, 0, ch)] = y[(n, 0, 0, ch)] + x[(n, iy, ix, ch)];
                }
            }
        }
    }
    y.mapv_inplace(|v| v * scale);
    y
}

fn global_avg_pool_backward<F: Scalar>(
    in_dim: (usize, usize, usize, usize),
    d_out: &Array4<F>,
) -> Array4<F> {
    let (b, h, w, c) = in_dim;
    let scale = F::from_f64(1.0 / (h * w) as f64);
    let mut dx = Array4::<F>::zeros((b, h, w, c));
    for n in 0..b {
        for iy in 0..h {
            for ix in 0..w {
                for ch in 0..c {
                    dx[(n, iy, ix, ch)] = d_out[(n, 0, 0, ch)] * scale;
                }
            }
        }
    }
    dx
}

fn flatten_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, h, w, c) = x.dim();
    x.view().into_shape((b, 1, 1, h * w * c)).unwrap().to_owned()
}

fn flatten_backward<F: Scalar>(in_dim: (usize, usize, usize, usize), d: Array4<F>) -> Array4<F> {
    d.into_shape(in_dim).unwrap()
}
