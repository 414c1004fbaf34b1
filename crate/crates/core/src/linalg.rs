//! Dense row-major matrices and the handful of kernels the denoiser needs.
//!
//! Every kernel computes each output row independently with a fixed accumulation
//! order, so a row's value does not depend on how many other rows share the call.
//! Full-graph and per-node evaluations therefore agree bit for bit.

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "row length");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `indices` stacked into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (o, &i) in indices.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yo, &xv) in y.iter_mut().zip(x) {
        *yo += a * xv;
    }
}

/// `out[i] += x[i] · w` for a `k × m` row-major weight `w`.
pub fn add_matmul(x: &Matrix, w: &[f64], out: &mut Matrix) {
    let (k, m) = (x.cols, out.cols);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(x.rows, out.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        let yi = &mut out.data[i * m..(i + 1) * m];
        for (kk, &a) in xi.iter().enumerate() {
            if a != 0.0 {
                axpy(yi, a, &w[kk * m..(kk + 1) * m]);
            }
        }
    }
}

/// `x · w + bias`.
pub fn affine(x: &Matrix, w: &[f64], bias: Option<&[f64]>, out_cols: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows, out_cols);
    if let Some(b) = bias {
        for i in 0..x.rows {
            out.row_mut(i).copy_from_slice(b);
        }
    }
    add_matmul(x, w, &mut out);
    out
}

pub fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = w[r * cols + c];
        }
    }
    t
}

/// `dx[i] += dy[i] · wᵀ`, given `wt`, the `m × k` transpose of the weight.
pub fn add_matmul_transposed(dy: &Matrix, wt: &[f64], dx: &mut Matrix) {
    add_matmul(dy, wt, dx)
}

/// `dw += xᵀ · dy`, accumulated over rows in order.
pub fn add_outer(x: &Matrix, dy: &Matrix, dw: &mut [f64]) {
    let (k, m) = (x.cols, dy.cols);
    debug_assert_eq!(dw.len(), k * m);
    for i in 0..x.rows {
        let xi = x.row(i);
        let gi = dy.row(i);
        for (kk, &a) in xi.iter().enumerate() {
            if a != 0.0 {
                axpy(&mut dw[kk * m..(kk + 1) * m], a, gi);
            }
        }
    }
}

/// `db += Σ_i dy[i]`.
pub fn add_column_sums(dy: &Matrix, db: &mut [f64]) {
    for i in 0..dy.rows {
        for (b, &g) in db.iter_mut().zip(dy.row(i)) {
            *b += g;
        }
    }
}

pub fn relu_in_place(m: &mut Matrix) {
    for v in &mut m.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the pre-activation was not positive.
pub fn relu_backward(pre: &Matrix, grad: &mut Matrix) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_naive() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 0.0, -2.0, 0.5, 3.0, 1.0]);
        let w: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let b = [1.0, -1.0];
        let y = affine(&x, &w, Some(&b), 2);
        for i in 0..2 {
            for j in 0..2 {
                let naive: f64 = b[j] + (0..3).map(|k| x.row(i)[k] * w[k * 2 + j]).sum::<f64>();
                assert!((y.row(i)[j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64).sin()).collect());
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).cos()).collect();
        let all = affine(&x, &w, None, 5);
        for i in 0..3 {
            let one = affine(&x.gather(&[i]), &w, None, 5);
            assert_eq!(one.row(0), all.row(i));
        }
    }

    #[test]
    fn transposed_and_outer() {
        let dy = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]; // 3x2
        let wt = transpose(&w, 3, 2);
        let mut dx = Matrix::zeros(2, 3);
        add_matmul_transposed(&dy, &wt, &mut dx);
        assert_eq!(dx.data, vec![1.0, 2.0, 6.0, 3.0, 4.0, 14.0]);
        let x = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let mut dw = vec![0.0; 6];
        add_outer(&x, &dy, &mut dw);
        assert_eq!(dw, vec![1.0, 2.0, 3.0, 4.0, 4.0, 6.0]);
    }
}
