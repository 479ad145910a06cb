//! 3D convolution with dilation, zero padding and stride.
//!
//! The forward and backward passes lower each batch item to a column matrix
//! (`im2col`) and hand the contraction to a blocked GEMM. Columns are built in
//! slabs of output depth planes so peak memory stays bounded for large
//! volumes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper bound on elements in one column slab (32 MiB of f64).
const SLAB_ELEMS: usize = 1 << 22;

const AXES: [&str; 3] = ["depth", "height", "width"];

/// Per-axis kernel size, stride, zero padding and dilation rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvGeometry {
    /// Cubic kernel with stride 1 and the padding `d * (k - 1) / 2` that keeps
    /// spatial extents unchanged.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        ConvGeometry {
            kernel: [kernel; 3],
            stride: [1; 3],
            padding: [pad; 3],
            dilation: [dilation; 3],
        }
    }

    /// Kernel `k`, dilation `d`, explicit padding `p`, stride 1.
    pub fn cubic(kernel: usize, dilation: usize, padding: usize) -> Self {
        ConvGeometry {
            kernel: [kernel; 3],
            stride: [1; 3],
            padding: [padding; 3],
            dilation: [dilation; 3],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn effective_extent(&self, axis: usize) -> usize {
        effective_extent(self.kernel[axis], self.dilation[axis])
    }

    fn validate(&self) -> Result<()> {
        for (axis, name) in AXES.iter().enumerate() {
            let (k, s, d) = (self.kernel[axis], self.stride[axis], self.dilation[axis]);
            if k == 0 || s == 0 || d == 0 {
                return Err(Error::Config(format!(
                    "{name} axis: kernel, stride and dilation must be >= 1 (got k={k}, s={s}, d={d})"
                )));
            }
        }
        Ok(())
    }

    /// Output extents for the given spatial input extents.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for axis in 0..3 {
            out[axis] = conv_output_extent(
                input[axis],
                self.kernel[axis],
                self.stride[axis],
                self.padding[axis],
                self.dilation[axis],
            )
            .map_err(|e| match e {
                Error::InvalidShape(msg) => {
                    Error::InvalidShape(format!("{} axis: {msg}", AXES[axis]))
                }
                other => other,
            })?;
        }
        Ok(out)
    }
}

/// `k + (k - 1)(d - 1)`: the span of input covered by one dilated kernel.
pub fn effective_extent(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation.max(1) - 1)
}

/// `floor((in + 2p - effective) / s) + 1`, rejecting non-positive results.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    let eff = effective_extent(kernel, dilation);
    let padded = input + 2 * padding;
    if padded < eff || stride == 0 {
        return Err(Error::InvalidShape(format!(
            "output extent would be non-positive (input {input}, padding {padding}, effective kernel {eff})"
        )));
    }
    Ok((padded - eff) / stride + 1)
}

/// Output extents for any number of axes, each with its own parameters.
pub fn conv3d_output_shape(
    input: &[usize],
    kernel: &[usize],
    stride: &[usize],
    padding: &[usize],
    dilation: &[usize],
) -> Result<Vec<usize>> {
    let n = input.len();
    if [kernel.len(), stride.len(), padding.len(), dilation.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::InvalidShape(
            "per-axis parameter lists must match the input rank".into(),
        ));
    }
    (0..n)
        .map(|a| {
            conv_output_extent(input[a], kernel[a], stride[a], padding[a], dilation[a])
                .map_err(|e| Error::InvalidShape(format!("axis {a}: {e}")))
        })
        .collect()
}

/// Layer description: channel counts plus geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
}

impl Conv3dSpec {
    pub fn weight_shape(&self) -> [usize; 5] {
        let [kd, kh, kw] = self.geometry.kernel;
        [self.out_channels, self.in_channels, kd, kh, kw]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.geometry.taps() + self.out_channels
    }
}

/// Shapes resolved for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvPlan {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub geom: ConvGeometry,
}

impl ConvPlan {
    pub fn new(input_shape: &[usize], weight_shape: &[usize], geom: ConvGeometry) -> Result<Self> {
        let [n, c, d, h, w]: [usize; 5] = input_shape.try_into().map_err(|_| {
            Error::InvalidShape(format!(
                "conv3d input must be [N, C, D, H, W], got {input_shape:?}"
            ))
        })?;
        let [co, ci, kd, kh, kw]: [usize; 5] = weight_shape.try_into().map_err(|_| {
            Error::InvalidShape(format!(
                "conv3d weight must be [out, in, kd, kh, kw], got {weight_shape:?}"
            ))
        })?;
        if ci != c {
            return Err(Error::ShapeMismatch {
                lhs: input_shape.to_vec(),
                rhs: weight_shape.to_vec(),
                context: "conv3d input channels vs weight in_channels",
            });
        }
        if [kd, kh, kw] != geom.kernel {
            return Err(Error::InvalidShape(format!(
                "weight kernel {:?} disagrees with geometry kernel {:?}",
                [kd, kh, kw],
                geom.kernel
            )));
        }
        let output = geom.output_extents([d, h, w])?;
        Ok(ConvPlan {
            batch: n,
            cin: c,
            cout: co,
            input: [d, h, w],
            output,
            geom,
        })
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    pub fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn rows(&self) -> usize {
        self.cin * self.geom.taps()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.cout,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    /// Output depth planes per column slab.
    fn slab_depth(&self) -> usize {
        let per_plane = self.rows() * self.out_plane();
        (SLAB_ELEMS / per_plane.max(1)).clamp(1, self.output[0])
    }

    /// Range of output indices `o` along one axis whose input coordinate
    /// `o * s + t * d - p` lies inside `[0, len)`.
    fn valid_range(&self, axis: usize, tap: usize) -> (usize, usize) {
        let s = self.geom.stride[axis] as isize;
        let shift = (tap * self.geom.dilation[axis]) as isize - self.geom.padding[axis] as isize;
        let len = self.input[axis] as isize;
        let out = self.output[axis] as isize;
        // smallest o with o*s + shift >= 0
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        // largest o with o*s + shift <= len - 1
        let hi = if len - 1 - shift < 0 {
            -1
        } else {
            (len - 1 - shift) / s
        };
        let lo = lo.min(out);
        let hi = (hi + 1).clamp(lo, out);
        (lo as usize, hi as usize)
    }

    /// Fills `cols` (`rows x (z1 - z0) * plane`) from one batch item.
    fn im2col(&self, x: &[f64], z0: usize, z1: usize, cols: &mut [f64]) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.geom.kernel;
        let [sd, sh, sw] = self.geom.stride;
        let [dd, dh, dw] = self.geom.dilation;
        let [pd, ph, pw] = self.geom.padding;
        let width = (z1 - z0) * oh * ow;
        cols[..self.rows() * width].fill(0.0);
        let mut row = 0;
        for c in 0..self.cin {
            let xc = &x[c * self.in_volume()..(c + 1) * self.in_volume()];
            for i in 0..kd {
                let (zlo, zhi) = self.valid_range(0, i);
                for j in 0..kh {
                    let (ylo, yhi) = self.valid_range(1, j);
                    for l in 0..kw {
                        let (xlo, xhi) = self.valid_range(2, l);
                        let dst = &mut cols[row * width..(row + 1) * width];
                        for z in zlo.max(z0)..zhi.min(z1) {
                            let zz = z * sd + i * dd - pd;
                            for y in ylo..yhi {
                                let yy = y * sh + j * dh - ph;
                                let src = &xc[(zz * ih + yy) * iw..];
                                let drow = &mut dst[((z - z0) * oh + y) * ow..];
                                if xlo >= xhi {
                                    continue;
                                }
                                if sw == 1 {
                                    let start = xlo + l * dw - pw;
                                    drow[xlo..xhi]
                                        .copy_from_slice(&src[start..start + (xhi - xlo)]);
                                } else {
                                    for xo in xlo..xhi {
                                        drow[xo] = src[xo * sw + l * dw - pw];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back
    /// into the input gradient of one batch item.
    fn col2im(&self, cols: &[f64], z0: usize, z1: usize, dx: &mut [f64]) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.geom.kernel;
        let [sd, sh, sw] = self.geom.stride;
        let [dd, dh, dw] = self.geom.dilation;
        let [pd, ph, pw] = self.geom.padding;
        let width = (z1 - z0) * oh * ow;
        let mut row = 0;
        for c in 0..self.cin {
            let vol = self.in_volume();
            let dxc = &mut dx[c * vol..(c + 1) * vol];
            for i in 0..kd {
                let (zlo, zhi) = self.valid_range(0, i);
                for j in 0..kh {
                    let (ylo, yhi) = self.valid_range(1, j);
                    for l in 0..kw {
                        let (xlo, xhi) = self.valid_range(2, l);
                        let src = &cols[row * width..(row + 1) * width];
                        for z in zlo.max(z0)..zhi.min(z1) {
                            let zz = z * sd + i * dd - pd;
                            for y in ylo..yhi {
                                let yy = y * sh + j * dh - ph;
                                let srow = &src[((z - z0) * oh + y) * ow..];
                                let drow = &mut dxc[(zz * ih + yy) * iw..];
                                for xo in xlo..xhi {
                                    drow[xo * sw + l * dw - pw] += srow[xo];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c` on strided row-major
/// views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |r: isize, cst: isize, rows: usize, cols: usize| {
        ((rows.saturating_sub(1)) as isize * r + (cols.saturating_sub(1)) as isize * cst) as usize
    };
    assert!(k == 0 || a.len() > span(rsa, csa, m, k));
    assert!(k == 0 || b.len() > span(rsb, csb, k, n));
    assert!(c.len() > span(rsc, csc, m, n));
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

pub(crate) fn forward(plan: &ConvPlan, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let rows = plan.rows();
    let plane = plan.out_plane();
    let out_vol = plan.out_volume();
    let in_item = plan.cin * plan.in_volume();
    let slab = plan.slab_depth();
    let mut out = vec![0.0; plan.batch * plan.cout * out_vol];
    let mut cols = vec![0.0; rows * slab * plane];
    for n in 0..plan.batch {
        let xn = &x[n * in_item..(n + 1) * in_item];
        let on = &mut out[n * plan.cout * out_vol..(n + 1) * plan.cout * out_vol];
        let mut z0 = 0;
        while z0 < plan.output[0] {
            let z1 = (z0 + slab).min(plan.output[0]);
            let width = (z1 - z0) * plane;
            plan.im2col(xn, z0, z1, &mut cols);
            gemm(
                plan.cout,
                rows,
                width,
                w,
                (rows as isize, 1),
                &cols,
                (width as isize, 1),
                0.0,
                &mut on[z0 * plane..],
                (out_vol as isize, 1),
            );
            z0 = z1;
        }
        if let Some(b) = bias {
            for (o, chunk) in on.chunks_mut(out_vol).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    plan: &ConvPlan,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_x, need_w, need_b) = need;
    let rows = plan.rows();
    let plane = plan.out_plane();
    let out_vol = plan.out_volume();
    let in_item = plan.cin * plan.in_volume();
    let slab = plan.slab_depth();

    let mut dx = need_x.then(|| vec![0.0; plan.batch * in_item]);
    let mut dw = need_w.then(|| vec![0.0; plan.cout * rows]);
    let db = need_b.then(|| {
        let mut db = vec![0.0; plan.cout];
        for n in 0..plan.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = (n * plan.cout + o) * out_vol;
                *acc += dout[start..start + out_vol].iter().sum::<f64>();
            }
        }
        db
    });

    if need_x || need_w {
        let mut cols = vec![0.0; rows * slab * plane];
        for n in 0..plan.batch {
            let xn = &x[n * in_item..(n + 1) * in_item];
            let dn = &dout[n * plan.cout * out_vol..(n + 1) * plan.cout * out_vol];
            let mut z0 = 0;
            while z0 < plan.output[0] {
                let z1 = (z0 + slab).min(plan.output[0]);
                let width = (z1 - z0) * plane;
                let dslab = &dn[z0 * plane..];
                if let Some(dw) = dw.as_mut() {
                    plan.im2col(xn, z0, z1, &mut cols);
                    // dW[cout x rows] += dOut[cout x width] * cols^T[width x rows]
                    gemm(
                        plan.cout,
                        width,
                        rows,
                        dslab,
                        (out_vol as isize, 1),
                        &cols,
                        (1, width as isize),
                        1.0,
                        dw,
                        (rows as isize, 1),
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    // dcols[rows x width] = W^T[rows x cout] * dOut[cout x width]
                    gemm(
                        rows,
                        plan.cout,
                        width,
                        w,
                        (1, rows as isize),
                        dslab,
                        (out_vol as isize, 1),
                        0.0,
                        &mut cols,
                        (width as isize, 1),
                    );
                    plan.col2im(&cols, z0, z1, &mut dx[n * in_item..(n + 1) * in_item]);
                }
                z0 = z1;
            }
        }
    }

    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Forward-only convolution on plain tensors.
pub fn conv3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geometry: ConvGeometry,
) -> Result<Tensor> {
    let plan = ConvPlan::new(input.shape(), weight.shape(), geometry)?;
    if let Some(b) = bias {
        if b.shape() != [plan.cout] {
            return Err(Error::ShapeMismatch {
                lhs: b.shape().to_vec(),
                rhs: vec![plan.cout],
                context: "conv3d bias vs out_channels",
            });
        }
    }
    let out = forward(&plan, input.data(), weight.data(), bias.map(|b| b.data()));
    Ok(Tensor::from_parts(plan.output_shape(), out))
}
