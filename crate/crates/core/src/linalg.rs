//! Dense least squares via Householder QR with column-norm pivoting.
//!
//! Storage is column-major (`a[i + j * m]`), matching `nalgebra::DMatrix`, so
//! design matrices can be sliced out of a problem without transposition.
//!
//! Rank is decided on the diagonal of `R`: column `k` counts toward the rank
//! when `|R[k,k]| > RANK_RTOL * |R[0,0]|`. Columns beyond the rank get a zero
//! coefficient (basic solution), which still attains the minimal residual.

use nalgebra::DMatrix;

/// Relative tolerance on `|R[k,k]| / |R[0,0]|` below which a column is
/// treated as linearly dependent.
pub const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    m: usize,
    n: usize,
    qr: Vec<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    /// Factor an `m x n` column-major matrix.
    pub fn factor(mut a: Vec<f64>, m: usize, n: usize) -> Self {
        assert_eq!(a.len(), m * n, "buffer does not match shape");
        let kmax = m.min(n);
        let mut tau = vec![0.0; kmax];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n)
            .map(|j| a[j * m..(j + 1) * m].iter().map(|v| v * v).sum())
            .collect();

        for k in 0..kmax {
            // Partial norms are recomputed rather than downdated; m*n per step
            // keeps the same order as the factorization itself.
            for (j, nj) in norms.iter_mut().enumerate().skip(k) {
                *nj = a[j * m + k..(j + 1) * m].iter().map(|v| v * v).sum();
            }
            let mut p = k;
            for j in k + 1..n {
                if norms[j] > norms[p] {
                    p = j;
                }
            }
            if p != k {
                for i in 0..m {
                    a.swap(k * m + i, p * m + i);
                }
                perm.swap(k, p);
                norms.swap(k, p);
            }

            let col = k * m;
            let x0 = a[col + k];
            let tail: f64 = a[col + k + 1..col + m].iter().map(|v| v * v).sum();
            if tail == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            let norm = (x0 * x0 + tail).sqrt();
            let beta = if x0 >= 0.0 { -norm } else { norm };
            tau[k] = (beta - x0) / beta;
            let scale = 1.0 / (x0 - beta);
            for v in &mut a[col + k + 1..col + m] {
                *v *= scale;
            }
            a[col + k] = beta;

            for j in k + 1..n {
                let cj = j * m;
                let mut s = a[cj + k];
                for i in k + 1..m {
                    s += a[col + i] * a[cj + i];
                }
                s *= tau[k];
                a[cj + k] -= s;
                for i in k + 1..m {
                    a[cj + i] -= s * a[col + i];
                }
            }
        }

        let r00 = if kmax > 0 { a[0].abs() } else { 0.0 };
        let mut rank = 0;
        if r00 > 0.0 {
            while rank < kmax && a[rank * m + rank].abs() > RANK_RTOL * r00 {
                rank += 1;
            }
        }

        Self {
            m,
            n,
            qr: a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n
    }

    /// Ratio of largest to smallest retained diagonal of `R`; infinite when
    /// some column was dropped.
    pub fn condition_estimate(&self) -> f64 {
        if self.n == 0 {
            return 1.0;
        }
        let kmax = self.m.min(self.n);
        if kmax == 0 {
            return f64::INFINITY;
        }
        let r00 = self.r(0, 0).abs();
        let last = self.r(kmax - 1, kmax - 1).abs();
        if self.rank < self.n || last == 0.0 {
            f64::INFINITY
        } else {
            r00 / last
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.qr[j * self.m + i]
    }

    /// `b <- Q^T b` for a single column of length `m`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let m = self.m;
        for k in 0..self.tau.len() {
            let t = self.tau[k];
            if t == 0.0 {
                continue;
            }
            let col = k * m;
            let mut s = b[k];
            for i in k + 1..m {
                s += self.qr[col + i] * b[i];
            }
            s *= t;
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.qr[col + i];
            }
        }
    }

    /// Basic least-squares solution for one right-hand side. Returns the
    /// coefficient vector and the residual sum of squares.
    pub fn solve(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let mut c = rhs.to_vec();
        self.apply_qt(&mut c);
        let r = self.rank;
        let mut y = vec![0.0; r];
        for i in (0..r).rev() {
            let mut s = c[i];
            for j in i + 1..r {
                s -= self.r(i, j) * y[j];
            }
            y[i] = s / self.r(i, i);
        }
        let mut coef = vec![0.0; self.n];
        for (j, yj) in y.into_iter().enumerate() {
            coef[self.perm[j]] = yj;
        }
        let rss = c[r..].iter().map(|v| v * v).sum();
        (coef, rss)
    }

    /// `x^T (A^T A)^+ x` restricted to the retained columns. For a row of the
    /// factored matrix this is its leverage (hat-matrix diagonal).
    pub fn leverage(&self, x: &[f64]) -> f64 {
        let r = self.rank;
        let mut w = vec![0.0; r];
        let mut h = 0.0;
        for i in 0..r {
            let mut s = x[self.perm[i]];
            for (j, wj) in w.iter().enumerate().take(i) {
                s -= self.r(j, i) * wj;
            }
            w[i] = s / self.r(i, i);
            h += w[i] * w[i];
        }
        h
    }
}

/// Result of a multi-output least-squares fit sharing one design matrix.
#[derive(Debug, Clone)]
pub struct LsFit {
    /// `d x n_y` coefficients, one column per output.
    pub coef: DMatrix<f64>,
    /// Residual sum of squares, per output.
    pub rss: Vec<f64>,
    pub qr: PivotedQr,
}

impl LsFit {
    pub fn total_rss(&self) -> f64 {
        self.rss.iter().sum()
    }
}

/// Least squares of `y` on the rows `rows` of `design`. When `row_scale` is
/// given, row `rows[t]` is multiplied by `row_scale[t]` (square-root weights).
pub fn lstsq_rows(
    design: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
    row_scale: Option<&[f64]>,
) -> LsFit {
    let m = rows.len();
    let d = design.ncols();
    let mut a = Vec::with_capacity(m * d);
    for j in 0..d {
        for (t, &i) in rows.iter().enumerate() {
            let s = row_scale.map_or(1.0, |w| w[t]);
            a.push(design[(i, j)] * s);
        }
    }
    let qr = PivotedQr::factor(a, m, d);
    let ny = y.ncols();
    let mut coef = DMatrix::zeros(d, ny);
    let mut rss = Vec::with_capacity(ny);
    let mut rhs = vec![0.0; m];
    for k in 0..ny {
        for (t, &i) in rows.iter().enumerate() {
            rhs[t] = y[(i, k)] * row_scale.map_or(1.0, |w| w[t]);
        }
        let (c, r) = qr.solve(&rhs);
        coef.set_column(k, &nalgebra::DVector::from_vec(c));
        rss.push(r);
    }
    LsFit { coef, rss, qr }
}

/// Single-output weighted least squares; `row_scale` are square-root weights.
pub fn lstsq_single(
    design: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    row_scale: &[f64],
) -> (Vec<f64>, PivotedQr) {
    let m = rows.len();
    let d = design.ncols();
    let mut a = Vec::with_capacity(m * d);
    for j in 0..d {
        for (t, &i) in rows.iter().enumerate() {
            a.push(design[(i, j)] * row_scale[t]);
        }
    }
    let qr = PivotedQr::factor(a, m, d);
    let rhs: Vec<f64> = rows
        .iter()
        .zip(row_scale)
        .map(|(&i, s)| y[i] * s)
        .collect();
    let (c, _) = qr.solve(&rhs);
    (c, qr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col_major(rows: &[&[f64]]) -> (Vec<f64>, usize, usize) {
        let m = rows.len();
        let n = rows[0].len();
        let mut a = vec![0.0; m * n];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                a[i + j * m] = *v;
            }
        }
        (a, m, n)
    }

    #[test]
    fn exact_square_solve() {
        let (a, m, n) = col_major(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let qr = PivotedQr::factor(a, m, n);
        assert_eq!(qr.rank(), 2);
        let (x, rss) = qr.solve(&[3.0, 5.0]);
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
        assert!(rss < 1e-28);
    }

    #[test]
    fn detects_duplicate_column() {
        let (a, m, n) = col_major(&[&[1.0, 2.0, 2.0], &[1.0, 3.0, 3.0], &[1.0, 5.0, 5.0]]);
        let qr = PivotedQr::factor(a, m, n);
        assert_eq!(qr.rank(), 2);
        assert!(qr.condition_estimate().is_infinite());
        // Basic solution still fits y = 1 + x exactly.
        let (x, rss) = qr.solve(&[3.0, 4.0, 6.0]);
        assert!(rss < 1e-20);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] + x[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leverage_sums_to_rank() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![1.0, i as f64, ((i * i) % 5) as f64])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let (a, m, n) = col_major(&refs);
        let qr = PivotedQr::factor(a, m, n);
        let total: f64 = rows.iter().map(|r| qr.leverage(r)).sum();
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn wide_matrix_is_rank_limited() {
        let (a, m, n) = col_major(&[&[1.0, 2.0, 3.0]]);
        let qr = PivotedQr::factor(a, m, n);
        assert_eq!(qr.rank(), 1);
        let (_, rss) = qr.solve(&[4.0]);
        assert!(rss.abs() < 1e-24);
    }
}
