use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::Var;

/// Row-major matrix view: `rows x cols` with explicit strides so transposes are free.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// `out = a @ b + beta * out` with `out` dense row-major (`a.rows x b.cols`).
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset() < a.data.len() && b.max_offset() < b.data.len());
    // SAFETY: the asserts above bound every element the kernel touches within
    // the three slices, and `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct BatchPlan {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn plan(a: &[usize], b: &[usize]) -> Result<(BatchPlan, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::dim("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::dim("matmul", a, b));
    }
    let (lead_a, lead_b) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let (lead, a_batched, b_batched) = if lead_a == lead_b {
        (lead_a, !lead_a.is_empty(), !lead_b.is_empty())
    } else if lead_b.is_empty() {
        (lead_a, true, false)
    } else if lead_a.is_empty() {
        (lead_b, false, true)
    } else {
        return Err(Error::dim("matmul", a, b));
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    let plan = BatchPlan {
        batch: lead.iter().product(),
        a_batched,
        b_batched,
        m,
        k,
        n,
    };
    Ok((plan, out_shape))
}

impl<'t> Var<'t> {
    /// Matrix product over the last two axes. Leading extents must be equal or
    /// absent on one side (a 2-D operand is shared across the batch).
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        let (p, out_shape) = plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = vec![0.0; p.batch * m * n];

        if p.a_batched && !p.b_batched {
            // Fold the batch into the row extent: one large product.
            gemm(
                MatRef::new(a.data(), p.batch * m, k),
                MatRef::new(b.data(), k, n),
                0.0,
                &mut out,
            );
        } else {
            for i in 0..p.batch {
                let ai = if p.a_batched { i } else { 0 };
                let bi = if p.b_batched { i } else { 0 };
                gemm(
                    MatRef::new(&a.data()[ai * m * k..(ai + 1) * m * k], m, k),
                    MatRef::new(&b.data()[bi * k * n..(bi + 1) * k * n], k, n),
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let value = Tensor::from_parts(out_shape, out);
        let (batch, a_batched, b_batched) = (p.batch, p.a_batched, p.b_batched);
        Ok(self.tape().record(value, &[self, rhs], move |ctx| {
            let (a, b, g) = (&ctx.inputs[0], &ctx.inputs[1], ctx.grad);
            let ga = ctx.needs[0].then(|| {
                let mut ga = vec![0.0; a.numel()];
                if a_batched && !b_batched {
                    gemm(
                        MatRef::new(g.data(), batch * m, n),
                        MatRef::new(b.data(), k, n).t(),
                        0.0,
                        &mut ga,
                    );
                } else {
                    for i in 0..batch {
                        let ai = if a_batched { i } else { 0 };
                        let bi = if b_batched { i } else { 0 };
                        gemm(
                            MatRef::new(&g.data()[i * m * n..(i + 1) * m * n], m, n),
                            MatRef::new(&b.data()[bi * k * n..(bi + 1) * k * n], k, n).t(),
                            1.0,
                            &mut ga[ai * m * k..(ai + 1) * m * k],
                        );
                    }
                }
                Tensor::from_parts(a.shape().to_vec(), ga)
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = vec![0.0; b.numel()];
                if a_batched && !b_batched {
                    gemm(
                        MatRef::new(a.data(), batch * m, k).t(),
                        MatRef::new(g.data(), batch * m, n),
                        0.0,
                        &mut gb,
                    );
                } else {
                    for i in 0..batch {
                        let ai = if a_batched { i } else { 0 };
                        let bi = if b_batched { i } else { 0 };
                        gemm(
                            MatRef::new(&a.data()[ai * m * k..(ai + 1) * m * k], m, k).t(),
                            MatRef::new(&g.data()[i * m * n..(i + 1) * m * n], m, n),
                            1.0,
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                }
                Tensor::from_parts(b.shape().to_vec(), gb)
            });
            vec![ga, gb]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_product() {
        let tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        assert_eq!(i.matmul(b).unwrap().value().data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn row_times_column() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn batched_against_per_slice_products() {
        let tape = Tape::new();
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn(&[2, 4, 2], |i| (i as f64 * 0.11).cos());
        let c = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().to_tensor();
        for s in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    let want: f64 = (0..4).map(|k| a.at(&[s, i, k]) * b.at(&[s, k, j])).sum();
                    assert!((c.at(&[s, i, j]) - want).abs() < 1e-14);
                }
            }
        }
    }
}
