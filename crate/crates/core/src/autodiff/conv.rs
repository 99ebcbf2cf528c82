//! Spatial ops on `(B, C, H, W)` maps: cross-correlation, soft split
//! (unfold) and bilinear upsampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::linalg::{gemm, MatRef};
use super::tape::Var;

/// Sliding-window geometry for a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent `floor((n + 2p - k) / s) + 1`, or `None` when not positive.
    pub fn output_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    win: Window,
}

impl Geometry {
    fn new(op: &'static str, shape: &[usize], win: Window) -> Result<(usize, Self)> {
        let &[b, c, h, w] = shape else {
            return Err(Error::shape(op, shape, "expected (B, C, H, W)"));
        };
        match (win.output_extent(h), win.output_extent(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((b, Self { c, h, w, oh, ow, win })),
            _ => Err(Error::shape(op, shape, format!("{win:?} leaves no output positions"))),
        }
    }

    fn patch(&self) -> usize {
        self.c * self.win.kernel * self.win.kernel
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.win == Window::new(1, 1, 0)
    }

    /// Calls `f(row, position, source_index)` for every in-bounds tap, where
    /// row = (c * k + ki) * k + kj.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.win.kernel;
        let (s, p) = (self.win.stride as isize, self.win.padding as isize);
        for ch in 0..self.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ki as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = ox as isize * s - p + kj as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, (ch * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Column matrix `(C*k*k, positions)` of one image.
    fn im2col(&self, image: &[f64]) -> Vec<f64> {
        let l = self.positions();
        let mut cols = vec![0.0; self.patch() * l];
        self.for_each_tap(|row, pos, src| cols[row * l + pos] = image[src]);
        cols
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let l = self.positions();
        self.for_each_tap(|row, pos, src| image[src] += cols[row * l + pos]);
    }
}

impl<'t> Var<'t> {
    /// Cross-correlation (kernel not flipped). `kernel` is `(C_out, C_in, k, k)`,
    /// `bias` is `(C_out,)`.
    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (x, wt) = (self.value(), kernel.value());
        let &[c_out, c_in, k, k2] = wt.shape() else {
            return Err(Error::shape("conv2d", wt.shape(), "kernel must be (C_out, C_in, k, k)"));
        };
        if k != k2 {
            return Err(Error::shape("conv2d", wt.shape(), "kernel must be square"));
        }
        if x.ndim() != 4 || x.shape()[1] != c_in {
            return Err(Error::dim("conv2d", x.shape(), wt.shape()));
        }
        if let Some(b) = bias {
            if b.value().shape() != [c_out] {
                return Err(Error::dim("conv2d", wt.shape(), b.value().shape()));
            }
        }
        let (batch, geo) = Geometry::new("conv2d", x.shape(), Window::new(k, stride, padding))?;
        let (patch, l) = (geo.patch(), geo.positions());
        let in_size = c_in * geo.h * geo.w;

        let mut out = vec![0.0; batch * c_out * l];
        for n in 0..batch {
            let image = &x.data()[n * in_size..(n + 1) * in_size];
            let cols;
            let col_ref = if geo.is_pointwise() {
                image
            } else {
                cols = geo.im2col(image);
                &cols
            };
            let dst = &mut out[n * c_out * l..(n + 1) * c_out * l];
            if let Some(b) = bias {
                let bv = b.value();
                for (o, chunk) in dst.chunks_exact_mut(l).enumerate() {
                    chunk.fill(bv.data()[o]);
                }
            }
            gemm(
                MatRef::new(wt.data(), c_out, patch),
                MatRef::new(col_ref, patch, l),
                if bias.is_some() { 1.0 } else { 0.0 },
                dst,
            );
        }
        let value = Tensor::from_parts(vec![batch, c_out, geo.oh, geo.ow], out);
        let mut inputs = vec![self, kernel];
        inputs.extend(bias);
        Ok(self.tape().record(value, &inputs, move |ctx| {
            let (x, wt, g) = (&ctx.inputs[0], &ctx.inputs[1], ctx.grad.data());
            let mut gx = ctx.needs[0].then(|| vec![0.0; x.numel()]);
            let mut gw = vec![0.0; wt.numel()];
            let mut dcols = vec![0.0; patch * l];
            for n in 0..batch {
                let image = &x.data()[n * in_size..(n + 1) * in_size];
                let gn = MatRef::new(&g[n * c_out * l..(n + 1) * c_out * l], c_out, l);
                let cols;
                let col_ref = if geo.is_pointwise() {
                    image
                } else {
                    cols = geo.im2col(image);
                    &cols
                };
                if ctx.needs[1] {
                    gemm(gn, MatRef::new(col_ref, patch, l).t(), 1.0, &mut gw);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[n * in_size..(n + 1) * in_size];
                    if geo.is_pointwise() {
                        gemm(MatRef::new(wt.data(), c_out, patch).t(), gn, 0.0, dst);
                    } else {
                        gemm(MatRef::new(wt.data(), c_out, patch).t(), gn, 0.0, &mut dcols);
                        geo.col2im(&dcols, dst);
                    }
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                ctx.needs[1].then(|| Tensor::from_parts(wt.shape().to_vec(), gw)),
            ];
            if ctx.inputs.len() == 3 {
                let mut gb = vec![0.0; c_out];
                for n in 0..batch {
                    for (o, acc) in gb.iter_mut().enumerate() {
                        *acc += g[(n * c_out + o) * l..(n * c_out + o + 1) * l].iter().sum::<f64>();
                    }
                }
                grads.push(Some(Tensor::from_parts(vec![c_out], gb)));
            }
            grads
        }))
    }

    /// Soft split: every window becomes one token holding the flattened
    /// `(C, k, k)` patch (channel-major, then kernel rows, then kernel columns).
    /// Output is `(B, positions, C*k*k)` with positions in row-major grid order.
    pub fn unfold(self, window: Window) -> Result<Var<'t>> {
        let x = self.value();
        let (batch, geo) = Geometry::new("unfold", x.shape(), window)?;
        let (patch, l) = (geo.patch(), geo.positions());
        let in_size = geo.c * geo.h * geo.w;
        let mut out = vec![0.0; batch * l * patch];
        for n in 0..batch {
            let image = &x.data()[n * in_size..(n + 1) * in_size];
            let dst = &mut out[n * l * patch..(n + 1) * l * patch];
            geo.for_each_tap(|row, pos, src| dst[pos * patch + row] = image[src]);
        }
        let value = Tensor::from_parts(vec![batch, l, patch], out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; batch * in_size];
            for n in 0..batch {
                let gn = &g[n * l * patch..(n + 1) * l * patch];
                let dst = &mut gx[n * in_size..(n + 1) * in_size];
                geo.for_each_tap(|row, pos, src| dst[src] += gn[pos * patch + row]);
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// Bilinear upsampling with half-pixel centers (`align_corners = false`).
    /// Downscaling is rejected.
    pub fn upsample_bilinear(self, target_h: usize, target_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let &[b, c, h, w] = x.shape() else {
            return Err(Error::shape("upsample_bilinear", x.shape(), "expected (B, C, H, W)"));
        };
        if target_h < h || target_w < w {
            return Err(Error::Unsupported(format!(
                "upsample_bilinear cannot downscale {h}x{w} to {target_h}x{target_w}"
            )));
        }
        if target_h == h && target_w == w {
            return self.reshape(x.shape());
        }
        let rows = interpolation_taps(h, target_h);
        let cols = interpolation_taps(w, target_w);
        let planes = b * c;
        let mut out = vec![0.0; planes * target_h * target_w];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * target_h * target_w..(p + 1) * target_h * target_w];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * target_w + ox] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, target_h, target_w], out);
        Ok(self.tape().record(value, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                let gp = &g[p * target_h * target_w..(p + 1) * target_h * target_w];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                        let v = gp[oy * target_w + ox];
                        dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += v * fy * (1.0 - fx);
                        dst[y1 * w + x1] += v * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
        }))
    }
}

/// Per output index: (lower source index, upper source index, upper weight).
pub(crate) fn interpolation_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn pointwise_unit_kernel_is_identity() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 1, 3, 4], |i| (i as f64).sin());
        let k = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.constant(x.clone()).conv2d(k, None, 1, 0).unwrap();
        assert_eq!(y.to_tensor(), x);
    }

    #[test]
    fn ones_kernel_on_center_impulse() {
        let tape = Tape::new();
        let mut img = vec![0.0; 9];
        img[4] = 1.0;
        let x = tape.constant(Tensor::new(&[1, 1, 3, 3], img).unwrap());
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = x.conv2d(k, None, 1, 1).unwrap();
        assert_eq!(y.value().data(), &[1.0; 9]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(x.conv2d(k, None, 1, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(Window::new(7, 4, 2).output_extent(224), Some(56));
        assert_eq!(Window::new(3, 2, 1).output_extent(56), Some(28));
        assert_eq!(Window::new(5, 1, 0).output_extent(3), None);
    }

    #[test]
    fn whole_image_patch() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64);
        let y = tape.constant(x.clone()).unfold(Window::new(2, 2, 0)).unwrap().to_tensor();
        assert_eq!(y.shape(), &[1, 1, 12]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn quadrant_tiling() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let y = tape.constant(x).unfold(Window::new(2, 2, 0)).unwrap().to_tensor();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert_eq!(&y.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&y.data()[12..], &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn unfold_rejects_empty_grid() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(x.unfold(Window::new(5, 1, 0)).is_err());
    }

    #[test]
    fn upsample_constant_and_degenerate() {
        let tape = Tape::new();
        let y = tape.constant(Tensor::full(&[1, 2, 3, 5], 0.7)).upsample_bilinear(7, 11).unwrap();
        assert!(y.value().data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        let y = tape.constant(Tensor::full(&[1, 1, 1, 1], -2.5)).upsample_bilinear(6, 6).unwrap();
        assert!(y.value().data().iter().all(|&v| v == -2.5));
    }

    #[test]
    fn upsample_rejects_downscaling() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(matches!(x.upsample_bilinear(2, 4), Err(Error::Unsupported(_))));
    }
}
