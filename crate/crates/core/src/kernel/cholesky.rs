//! Lower-triangular factor of a symmetric positive-definite matrix, stored packed
//! by rows so that new rows can be appended in O(N^2).

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct GrowingCholesky {
    n: usize,
    data: Vec<f64>,
}

/// Failure to extend the factor: the pivot of `row` was not positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct NotPositive {
    pub row: usize,
    pub pivot: f64,
}

impl GrowingCholesky {
    pub fn len(&self) -> usize {
        self.n
    }

    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = Self::offset(i);
        &self.data[start..start + i + 1]
    }

    /// Factors the full row-major `n x n` matrix `a`.
    pub fn factor(a: &[f64], n: usize) -> Result<Self, NotPositive> {
        let mut chol = Self {
            n: 0,
            data: Vec::with_capacity(Self::offset(n)),
        };
        for i in 0..n {
            chol.push(&a[i * n..i * n + i], a[i * n + i])?;
        }
        Ok(chol)
    }

    /// Appends the row/column `[cross; diag]` of the matrix being factored.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> Result<(), NotPositive> {
        debug_assert_eq!(cross.len(), self.n);
        let mut row = cross.to_vec();
        self.forward(&mut row);
        let pivot = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(NotPositive { row: self.n, pivot });
        }
        row.push(pivot.sqrt());
        self.data.extend_from_slice(&row);
        self.n += 1;
        Ok(())
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let mut acc = b[i];
            for (l, y) in row[..i].iter().zip(&b[..i]) {
                acc -= l * y;
            }
            b[i] = acc / row[i];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        for i in (0..self.n).rev() {
            y[i] /= self.row(i)[i];
            let xi = y[i];
            for (j, l) in self.row(i)[..i].iter().enumerate() {
                y[j] -= l * xi;
            }
        }
    }
}
