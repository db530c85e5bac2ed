//! Dense least squares by Householder QR.

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    left: cols,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Relative pivot size below which a column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-12;

/// Minimizes `‖A x − b‖₂` for a tall matrix (`rows ≥ cols ≥ 1`).
pub fn least_squares(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.rows, a.cols);
    if n == 0 || m < n {
        return Err(Error::InvalidParameter(format!(
            "least squares needs rows >= cols >= 1, got {m}x{n}"
        )));
    }
    if b.len() != m {
        return Err(Error::LengthMismatch {
            left: m,
            right: b.len(),
        });
    }
    if a.data.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix entry".into()));
    }

    // column-major working copy; columns are contiguous for the reflections
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)]).collect())
        .collect();
    let mut rhs = b.to_vec();
    let mut diag = vec![0.0; n];

    for j in 0..n {
        let (head, tail) = cols.split_at_mut(j + 1);
        let v = &mut head[j][j..];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |target: &mut [f64]| {
            let dot: f64 = v.iter().zip(target.iter()).map(|(p, q)| p * q).sum();
            let s = 2.0 * dot / vnorm2;
            for (t, p) in target.iter_mut().zip(v.iter()) {
                *t -= s * p;
            }
        };
        for col in tail.iter_mut() {
            reflect(&mut col[j..]);
        }
        reflect(&mut rhs[j..]);
    }

    let largest = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if let Some(column) = diag
        .iter()
        .position(|d| d.abs() <= RANK_TOLERANCE * largest || largest == 0.0)
    {
        return Err(Error::RankDeficient { column });
    }

    // back substitution with R stored above the diagonal of `cols`
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for k in i + 1..n {
            acc -= cols[k][i] * x[k];
        }
        x[i] = acc / diag[i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gauss_elimination(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
                row.push(b[i]);
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
                .unwrap();
            m.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn identity_solve_is_exact() {
        let x = least_squares(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn overdetermined_single_column() {
        // normal equations: (AᵀA) x = Aᵀb -> 2x = 2
        let a = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let x = least_squares(&a, &[0.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duplicated_columns_are_rank_deficient() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        ])
        .unwrap();
        assert!(matches!(
            least_squares(&a, &[1.0, 0.0, 1.0]),
            Err(Error::RankDeficient { column: 1 })
        ));
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = DenseMatrix::from_rows(&rows).unwrap();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = least_squares(&a, &b).unwrap();
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        for g in a.transpose_mul_vec(&r) {
            assert!(g.abs() <= 1e-8 * bnorm);
        }
    }

    proptest! {
        #[test]
        fn square_systems_match_gaussian_elimination(
            seed in 0u64..10_000, n in 1usize..8
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| rng.random_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 }).collect())
                .collect();
            let a = DenseMatrix::from_rows(&rows).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = least_squares(&a, &b).unwrap();
            let y = gauss_elimination(&a, &b);
            let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p - q).abs() <= 1e-10 * scale);
            }
        }
    }
}
