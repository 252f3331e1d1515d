//! 2-D cross-correlation and its transpose, lowered onto GEMM via im2col.

use crate::error::{Error, Result};
use crate::numerics::LayerGrads;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Geometry of a (possibly strided, padded, dilated) 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation_h: usize,
    pub dilation_w: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Stride 1, no padding, no dilation, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
            dilation_h: 1,
            dilation_w: 1,
            has_bias: true,
        }
    }

    pub fn stride(mut self, h: usize, w: usize) -> Self {
        self.stride_h = h;
        self.stride_w = w;
        self
    }

    pub fn pad(mut self, h: usize, w: usize) -> Self {
        self.pad_h = h;
        self.pad_w = w;
        self
    }

    pub fn dilation(mut self, h: usize, w: usize) -> Self {
        self.dilation_h = h;
        self.dilation_w = w;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Padding that keeps H and W unchanged at stride 1 (odd kernels).
    pub fn same_padding(self) -> Self {
        let ph = self.dilation_h * (self.kernel_h - 1) / 2;
        let pw = self.dilation_w * (self.kernel_w - 1) / 2;
        self.pad(ph, pw)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn validate(&self, op: &'static str) -> Result<()> {
        let named = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride_h", self.stride_h),
            ("stride_w", self.stride_w),
            ("dilation_h", self.dilation_h),
            ("dilation_w", self.dilation_w),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::shape(op, format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |name: &str, len: usize, k: usize, s: usize, p: usize, d: usize| {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            if padded < span {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name}: padded input {padded} smaller than dilated kernel {span}"),
                ));
            }
            Ok((padded - span) / s + 1)
        };
        Ok((
            axis("height", h, self.kernel_h, self.stride_h, self.pad_h, self.dilation_h)?,
            axis("width", w, self.kernel_w, self.stride_w, self.pad_w, self.dilation_w)?,
        ))
    }

    fn geometry(&self, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
        Geometry {
            channels: self.in_channels,
            h,
            w,
            kh: self.kernel_h,
            kw: self.kernel_w,
            sh: self.stride_h,
            sw: self.stride_w,
            ph: self.pad_h,
            pw: self.pad_w,
            dh: self.dilation_h,
            dw: self.dilation_w,
            oh,
            ow,
        }
    }
}

/// A transposed convolution: the adjoint of a [`ConvSpec`] convolution whose
/// input and output roles are swapped. `conv.in_channels` is the channel
/// count of the transposed op's *input*; weights are `in × out × kh × kw`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub conv: ConvSpec,
    pub output_pad_h: usize,
    pub output_pad_w: usize,
}

impl ConvTransposeSpec {
    /// Stride-2, 3×3, pad 1, output-padding 1: doubles H and W exactly.
    pub fn upsample2x(in_channels: usize, out_channels: usize) -> Self {
        ConvTransposeSpec {
            conv: ConvSpec::new(in_channels, out_channels, (3, 3)).stride(2, 2).pad(1, 1),
            output_pad_h: 1,
            output_pad_w: 1,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let c = &self.conv;
        [c.in_channels, c.out_channels, c.kernel_h, c.kernel_w]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        const OP: &str = "transposed_conv2d";
        let c = &self.conv;
        c.validate(OP)?;
        if self.output_pad_h >= c.stride_h || self.output_pad_w >= c.stride_w {
            return Err(Error::shape(OP, "output padding must be smaller than the stride"));
        }
        let axis = |name: &str, len: usize, k: usize, s: usize, p: usize, d: usize, op: usize| {
            let full = (len - 1) * s + d * (k - 1) + 1 + op;
            if full <= 2 * p {
                return Err(Error::shape(
                    OP,
                    format!("{name}: configuration yields non-positive output size"),
                ));
            }
            Ok(full - 2 * p)
        };
        Ok((
            axis("height", h, c.kernel_h, c.stride_h, c.pad_h, c.dilation_h, self.output_pad_h)?,
            axis("width", w, c.kernel_w, c.stride_w, c.pad_w, c.dilation_w, self.output_pad_w)?,
        ))
    }
}

/// im2col layout: rows indexed by (channel, ky, kx), columns by output pixel.
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    dh: usize,
    dw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate read by output coordinate `o` at tap `k`, if inside.
    #[inline]
    fn source(o: usize, k: usize, s: usize, d: usize, p: usize, len: usize) -> Option<usize> {
        let pos = (o * s + k * d) as isize - p as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn im2col<T: Real>(&self, src: &[T], cols: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.cols();
        for c in 0..self.channels {
            let src_c = &src[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match Self::source(oy, ky, self.sh, self.dh, self.ph, self.h) {
                            None => out_row.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &src_c[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row.iter_mut().enumerate() {
                                    *v = match Self::source(ox, kx, self.sw, self.dw, self.pw, self.w)
                                    {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add columns back onto an image (adjoint of `im2col`).
    fn col2im<T: Real>(&self, cols: &[T], dst: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.cols();
        for c in 0..self.channels {
            let dst_c = &mut dst[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::source(oy, ky, self.sh, self.dh, self.ph, self.h) else {
                            continue;
                        };
                        let in_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst_row = &mut dst_c[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in in_row.iter().enumerate() {
                            if let Some(ix) = Self::source(ox, kx, self.sw, self.dw, self.pw, self.w) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, has_bias: bool, len: usize) -> Result<()> {
    match (bias, has_bias) {
        (Some(b), true) => b.expect_shape(op, "bias", &[len]),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::shape(op, "bias given but spec has no bias")),
        (None, true) => Err(Error::shape(op, "spec requires a bias tensor")),
    }
}

fn check_conv_input<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    spec.validate(op)?;
    let (n, c, h, w) = input.dims4(op)?;
    if c != spec.in_channels {
        return Err(Error::shape(
            op,
            format!("input channels {c} != spec.in_channels {}", spec.in_channels),
        ));
    }
    weights.expect_shape(op, "weights", &spec.weight_shape())?;
    let (oh, ow) = spec.output_size(h, w)?;
    Ok((n, h, w, oh, ow))
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums<T: Real>(d_output: &Tensor<T>, channels: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in d_output.data().chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(&[channels], db).expect("non-empty bias")
}

/// Cross-correlation with zero padding, stride, and dilation.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_forward";
    let (n, h, w, oh, ow) = check_conv_input(OP, input, weights, spec)?;
    check_bias(OP, bias, spec.has_bias, spec.out_channels)?;
    let geo = spec.geometry(h, w, oh, ow);
    let (k, p) = (geo.rows(), geo.cols());
    let co = spec.out_channels;
    let in_len = spec.in_channels * h * w;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for (x, y) in input.data().chunks(in_len).zip(out.data_mut().chunks_mut(co * p)) {
        let rhs = if geo.is_pointwise() {
            x
        } else {
            geo.im2col(x, &mut cols);
            &cols
        };
        gemm(MatRef::rm(weights.data(), co, k), MatRef::rm(rhs, k, p), T::zero(), y);
    }
    if let Some(b) = bias {
        add_channel_bias(out.data_mut(), b.data(), p);
    }
    Ok(out)
}

/// Gradients of `sum(d_output ⊙ conv2d_forward(..))` with respect to the
/// input, the weights, and (when the spec has one) the bias, in that order.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    const OP: &str = "conv2d_backward";
    let (n, h, w, oh, ow) = check_conv_input(OP, input, weights, spec)?;
    let co = spec.out_channels;
    d_output.expect_shape(OP, "d_output", &[n, co, oh, ow])?;
    let geo = spec.geometry(h, w, oh, ow);
    let (k, p) = (geo.rows(), geo.cols());
    let in_len = spec.in_channels * h * w;

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let pointwise = geo.is_pointwise();
    let mut cols = vec![T::zero(); k * p];
    let mut d_cols = vec![T::zero(); k * p];
    for ((x, dy), dx) in input
        .data()
        .chunks(in_len)
        .zip(d_output.data().chunks(co * p))
        .zip(d_input.data_mut().chunks_mut(in_len))
    {
        let x_cols: &[T] = if pointwise {
            x
        } else {
            geo.im2col(x, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        gemm(MatRef::rm(dy, co, p), MatRef::rm_t(x_cols, k, p), T::one(), d_weights.data_mut());
        // dcols = Wᵀ · dY
        if pointwise {
            gemm(MatRef::rm_t(weights.data(), co, k), MatRef::rm(dy, co, p), T::zero(), dx);
        } else {
            gemm(MatRef::rm_t(weights.data(), co, k), MatRef::rm(dy, co, p), T::zero(), &mut d_cols);
            geo.col2im(&d_cols, dx);
        }
    }
    let mut grads = vec![d_weights];
    if spec.has_bias {
        grads.push(channel_sums(d_output, co, p));
    }
    Ok(LayerGrads {
        d_input,
        d_weights: grads,
    })
}

fn check_transposed_input<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvTransposeSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4(op)?;
    if c != spec.conv.in_channels {
        return Err(Error::shape(
            op,
            format!("input channels {c} != spec.in_channels {}", spec.conv.in_channels),
        ));
    }
    weights.expect_shape(op, "weights", &spec.weight_shape())?;
    let (oh, ow) = spec.output_size(h, w)?;
    Ok((n, h, w, oh, ow))
}

/// Geometry of the forward convolution (over the transposed op's output)
/// whose adjoint this transposed convolution is.
fn adjoint_geometry(spec: &ConvTransposeSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
    let c = &spec.conv;
    Geometry {
        channels: c.out_channels,
        h: oh,
        w: ow,
        kh: c.kernel_h,
        kw: c.kernel_w,
        sh: c.stride_h,
        sw: c.stride_w,
        ph: c.pad_h,
        pw: c.pad_w,
        dh: c.dilation_h,
        dw: c.dilation_w,
        oh: h,
        ow: w,
    }
}

/// Transposed convolution (fractionally strided upsampling). Output size per
/// axis is `(in − 1)·stride − 2·pad + dilation·(kernel − 1) + 1 + output_pad`.
pub fn transposed_conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvTransposeSpec,
) -> Result<Tensor<T>> {
    const OP: &str = "transposed_conv2d_forward";
    let (n, h, w, oh, ow) = check_transposed_input(OP, input, weights, spec)?;
    let co = spec.conv.out_channels;
    check_bias(OP, bias, spec.conv.has_bias, co)?;
    let ci = spec.conv.in_channels;
    let geo = adjoint_geometry(spec, h, w, oh, ow);
    let (k, p) = (geo.rows(), geo.cols());
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let mut cols = vec![T::zero(); k * p];
    for (x, y) in input.data().chunks(ci * p).zip(out.data_mut().chunks_mut(co * oh * ow)) {
        gemm(MatRef::rm_t(weights.data(), ci, k), MatRef::rm(x, ci, p), T::zero(), &mut cols);
        geo.col2im(&cols, y);
    }
    if let Some(b) = bias {
        add_channel_bias(out.data_mut(), b.data(), oh * ow);
    }
    Ok(out)
}

/// Gradients of a transposed convolution: input, weights, then bias.
pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvTransposeSpec,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    const OP: &str = "transposed_conv2d_backward";
    let (n, h, w, oh, ow) = check_transposed_input(OP, input, weights, spec)?;
    let (ci, co) = (spec.conv.in_channels, spec.conv.out_channels);
    d_output.expect_shape(OP, "d_output", &[n, co, oh, ow])?;
    let geo = adjoint_geometry(spec, h, w, oh, ow);
    let (k, p) = (geo.rows(), geo.cols());
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut cols = vec![T::zero(); k * p];
    for ((x, dy), dx) in input
        .data()
        .chunks(ci * p)
        .zip(d_output.data().chunks(co * oh * ow))
        .zip(d_input.data_mut().chunks_mut(ci * p))
    {
        geo.im2col(dy, &mut cols);
        gemm(MatRef::rm(weights.data(), ci, k), MatRef::rm(&cols, k, p), T::zero(), dx);
        gemm(MatRef::rm(x, ci, p), MatRef::rm_t(&cols, k, p), T::one(), d_weights.data_mut());
    }
    let mut grads = vec![d_weights];
    if spec.conv.has_bias {
        grads.push(channel_sums(d_output, co, oh * ow));
    }
    Ok(LayerGrads {
        d_input,
        d_weights: grads,
    })
}
