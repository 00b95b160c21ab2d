use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `ln(sum(exp(v)))` with the max-shift trick.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("log_sum_exp of an empty slice"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "log_sum_exp requires finite inputs".into(),
        ));
    }
    Ok(lse(values))
}

/// Unchecked variant for hot paths. Inputs may include `-inf`.
#[inline]
pub(crate) fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as the columns of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("symmetric_eigen", "square matrix", format!("{}x{}", n, a.cols())));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let scale: f64 = m.as_slice().iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_c)] = v[(r, old_c)];
        }
    }
    Ok((values, vectors))
}

/// Projects mean-centred rows onto the two leading principal axes.
///
/// Each axis is sign-normalised so its largest-magnitude component is
/// positive, which makes the output deterministic.
pub fn pca_project_2d(data: &Matrix) -> Result<Matrix> {
    let (n, d) = data.shape();
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "pca_project_2d needs at least 2 rows and 2 columns, got {n}x{d}"
        )));
    }
    let means = data.column_means();
    let mut centered = data.clone();
    for r in 0..n {
        for (x, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *x -= m;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for row in centered.row_iter() {
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total_var: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    if total_var <= 0.0 {
        return Err(Error::Degenerate(
            "pca_project_2d: all rows identical (zero variance)".into(),
        ));
    }
    let (_, vecs) = symmetric_eigen(&cov)?;
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    for (a, axis) in axes.iter_mut().enumerate() {
        for r in 0..d {
            axis[r] = vecs[(r, a)];
        }
        let lead = axis
            .iter()
            .copied()
            .max_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(1.0);
        if lead < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut out = Matrix::zeros(n, 2);
    for (r, row) in centered.row_iter().enumerate() {
        for (a, axis) in axes.iter().enumerate() {
            out[(r, a)] = row.iter().zip(axis).map(|(x, w)| x * w).sum();
        }
    }
    Ok(out)
}
