//! Dense row-major `f64` matrices and a strided GEMM wrapper.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape {rows}x{cols} does not match {} values", data.len());
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Strided view of a matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Row-major `rows x cols` matrix, optionally read transposed.
    pub fn of(t: &Tensor, transpose: bool) -> (usize, usize, View) {
        if transpose {
            (t.cols, t.rows, View { offset: 0, rs: 1, cs: t.cols })
        } else {
            (t.rows, t.cols, View { offset: 0, rs: t.cols, cs: 1 })
        }
    }
}

fn extent(rows: usize, cols: usize, v: View) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        v.offset + (rows - 1) * v.rs + (cols - 1) * v.cs + 1
    }
}

/// `c = beta * c + alpha * a * b` over strided views: `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_view(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, n, cv) <= c.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[cv.offset + i * cv.rs + j * cv.cs];
                *x *= beta;
            }
        }
        return;
    }
    assert!(extent(m, k, av) <= a.len(), "gemm lhs out of bounds");
    assert!(extent(k, n, bv) <= b.len(), "gemm rhs out of bounds");
    // SAFETY: every index touched lies within the extents checked above, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `c = beta * c + alpha * op(a) * op(b)` on whole tensors.
pub fn gemm(alpha: f64, a: &Tensor, ta: bool, b: &Tensor, tb: bool, beta: f64, c: &mut Tensor) {
    let (m, k, av) = View::of(a, ta);
    let (k2, n, bv) = View::of(b, tb);
    assert_eq!(k, k2, "inner dimensions differ: {m}x{k} * {k2}x{n}");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    let cv = View { offset: 0, rs: n, cs: 1 };
    gemm_view(m, k, n, alpha, &a.data, av, &b.data, bv, beta, &mut c.data, cv);
}

pub fn matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let m = if ta { a.cols } else { a.rows };
    let n = if tb { b.rows } else { b.cols };
    let mut c = Tensor::zeros(m, n);
    gemm(1.0, a, ta, b, tb, 0.0, &mut c);
    c
}

/// Numerically stable softmax of a slice, with optional `false` = excluded entries.
pub fn softmax(logits: &[f64], allowed: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| allowed.map_or(true, |a| a[i]);
    let max = logits.iter().enumerate().filter(|(i, _)| ok(*i)).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> =
        logits.iter().enumerate().map(|(i, x)| if ok(i) { (x - max).exp() } else { 0.0 }).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        let a = Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_vec(3, 2, vec![1., 0., 0., 1., 1., 1.]);
        assert_eq!(matmul(&a, false, &b, false).data, vec![4., 5., 10., 11.]);
        assert_eq!(matmul(&b, true, &a, true).data, vec![4., 10., 5., 11.]);
        assert_eq!(matmul(&a, false, &a, true).data, vec![14., 32., 32., 77.]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[3f64.ln(), 0.0], None);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let p = softmax(&[5.0, 1.0, 1.0], Some(&[false, true, true]));
        assert_eq!(p, vec![0.0, 0.5, 0.5]);
    }
}
