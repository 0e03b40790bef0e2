//! Dense least squares by Householder QR.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LstsqError {
    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },
    #[error("design has {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
}

/// Solution of `min ‖A·c − b‖₂` plus the residual RMS.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqFit {
    pub coef: Vec<f64>,
    pub rms: f64,
}

/// Solves the least-squares problem for row-major `rows` (each of equal
/// length). Columns are scaled to unit norm before factorization; a column
/// whose reduced norm falls below `1e-10` of its scale is rank deficient.
pub fn lstsq(rows: &[Vec<f64>], b: &[f64]) -> Result<LstsqFit, LstsqError> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if m < n || n == 0 {
        return Err(LstsqError::Underdetermined { rows: m, cols: n });
    }
    // Column-major copy with unit-norm columns.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut scale = vec![1.0; n];
    for (j, col) in a.iter_mut().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LstsqError::RankDeficient { column: j });
        }
        scale[j] = norm;
        col.iter_mut().for_each(|v| *v /= norm);
    }
    let mut y = b.to_vec();
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(LstsqError::RankDeficient { column: k });
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k + 1) {
                let d: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vnorm2;
                for (c, p) in col[k..].iter_mut().zip(&v) {
                    *c -= d * p;
                }
            }
            let d: f64 = v.iter().zip(&y[k..]).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vnorm2;
            for (c, p) in y[k..].iter_mut().zip(&v) {
                *c -= d * p;
            }
        }
    }
    let mut coef = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in k + 1..n {
            s -= a[j][k] * coef[j];
        }
        coef[k] = s / diag[k];
    }
    for (c, s) in coef.iter_mut().zip(&scale) {
        *c /= s;
    }
    let ss: f64 = rows
        .iter()
        .zip(b)
        .map(|(r, bi)| {
            let p: f64 = r.iter().zip(&coef).map(|(x, c)| x * c).sum();
            (p - bi) * (p - bi)
        })
        .sum();
    Ok(LstsqFit { coef, rms: (ss / m as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let b: Vec<f64> = (0..5).map(|i| 2.0 - 3.0 * i as f64).collect();
        let fit = lstsq(&rows, &b).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-12 && (fit.coef[1] + 3.0).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn overdetermined_mean() {
        let rows = vec![vec![1.0]; 4];
        let fit = lstsq(&rows, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((fit.coef[0] - 3.0).abs() < 1e-12);
        assert!((fit.rms - (14.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_rejected() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(lstsq(&rows, &[0.0; 6]), Err(LstsqError::RankDeficient { .. })));
        assert!(lstsq(&[vec![1.0, 2.0]], &[1.0]).is_err());
    }
}
