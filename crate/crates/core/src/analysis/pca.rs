use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal components of a point set: covariance eigenvectors sorted by
/// decreasing eigenvalue, each signed so its largest-magnitude loading is
/// positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit<R: AsRef<[f64]>>(points: &[R], k: usize) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Empty("PCA input"));
        };
        let d = first.as_ref().len();
        if d == 0 || points.iter().any(|p| p.as_ref().len() != d) {
            return Err(Error::Mismatch("PCA points must share a positive dimension".into()));
        }
        if k == 0 || k > d {
            return Err(Error::Config(alloc::format!("cannot keep {k} components of {d} dimensions")));
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![vec![0.0; d]; d];
        for p in points {
            let c: Vec<f64> = p.as_ref().iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[i][j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= n;
                cov[j][i] = cov[i][j];
            }
        }
        let (values, vectors) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(k);
        let mut eigenvalues = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut v: Vec<f64> = (0..d).map(|r| vectors[r][idx]).collect();
            let lead = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            eigenvalues.push(values[idx]);
        }
        Ok(Self { mean, components, eigenvalues })
    }

    /// Coordinates of `point` along each kept component.
    pub fn transform(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(point).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect()
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns the eigenvalues and
/// a matrix whose columns are the matching unit eigenvectors.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_eigenpairs() {
        let (vals, vecs) = jacobi_eigen(vec![vec![3.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(vals, [3.0, 1.0]);
        assert_eq!(vecs, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn planar_points_are_reconstructed_exactly() {
        // points in span{(1,1,0,0), (0,0,1,-1)} around an offset
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let (a, b) = ((i as f64).sin() * 3.0, (i as f64 * 0.7).cos());
                vec![a + 1.0, a + 1.0, b - 2.0, -b - 2.0]
            })
            .collect();
        let pca = Pca::fit(&pts, 2).unwrap();
        for p in &pts {
            let z = pca.transform(p);
            let back: Vec<f64> = (0..4).map(|j| pca.mean[j] + z[0] * pca.components[0][j] + z[1] * pca.components[1][j]).collect();
            for (x, y) in back.iter().zip(p) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sign_convention_makes_leading_loading_positive() {
        let pts = vec![vec![0.0, 0.0], vec![-1.0, -2.0], vec![1.0, 2.0]];
        let pca = Pca::fit(&pts, 1).unwrap();
        let c = &pca.components[0];
        assert!(c[1] > 0.0 && c[1].abs() >= c[0].abs());
    }
}
