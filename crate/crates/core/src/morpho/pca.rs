use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedInput {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cannot keep {k} components of {dim}-dimensional data")]
    InvalidComponentCount { k: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component (denominator `m - 1`).
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(ci, (x, m))| ci * (x - m))
                    .sum()
            })
            .collect()
    }
}

/// Principal components of the rows of `data` and the projections of
/// every row onto the first `k` of them.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn pca_project(data: &[Vec<f64>], k: usize) -> Result<(PcaModel, Vec<Vec<f64>>), PcaError> {
    let m = data.len();
    if m < 2 {
        return Err(PcaError::TooFewSamples(m));
    }
    let dim = data[0].len();
    if let Some((row, r)) = data.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(PcaError::RaggedInput {
            row,
            got: r.len(),
            expected: dim,
        });
    }
    if k == 0 || k > dim {
        return Err(PcaError::InvalidComponentCount { k, dim });
    }

    let mut mean = vec![0.0; dim];
    for r in data {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut cov = vec![0.0; dim * dim];
    for r in data {
        for i in 0..dim {
            let di = r[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (m - 1) as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }

    let (values, vectors) = symmetric_eigen(&cov, dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut c: Vec<f64> = (0..dim).map(|r| vectors[r * dim + idx]).collect();
        let pivot = c
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if math::abs(v) > math::abs(best) { v } else { best });
        if pivot < 0.0 {
            for v in &mut c {
                *v = -*v;
            }
        }
        components.push(c);
        explained_variance.push(values[idx].max(0.0));
    }
    let model = PcaModel {
        mean,
        components,
        explained_variance,
    };
    let projections = data.iter().map(|r| model.project(r)).collect();
    Ok((model, projections))
}

/// Eigen-decomposition of a symmetric row-major `n x n` matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and the eigenvector matrix with
/// eigenvectors in columns, both unsorted.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (math::abs(theta) + math::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for kk in 0..n {
                    let akp = a[kk * n + p];
                    let akq = a[kk * n + q];
                    a[kk * n + p] = c * akp - s * akq;
                    a[kk * n + q] = s * akp + c * akq;
                }
                for kk in 0..n {
                    let apk = a[p * n + kk];
                    let aqk = a[q * n + kk];
                    a[p * n + kk] = c * apk - s * aqk;
                    a[q * n + kk] = s * apk + c * aqk;
                }
                for kk in 0..n {
                    let vkp = v[kk * n + p];
                    let vkq = v[kk * n + q];
                    v[kk * n + p] = c * vkp - s * vkq;
                    v[kk * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_project_identically() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![0.0, 5.0, 1.0]];
        let (_, proj) = pca_project(&rows, 2).unwrap();
        assert_eq!(proj[0], proj[1]);
    }

    #[test]
    fn rank_one_data_has_one_component() {
        let dir = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| dir.iter().map(|d| 10.0 + d * i as f64).collect())
            .collect();
        let (model, _) = pca_project(&rows, 4).unwrap();
        assert!(model.explained_variance[0] > 1.0);
        assert!(model.explained_variance[1].abs() < 1e-9);
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        for (c, d) in model.components[0].iter().zip(dir) {
            assert!((c - d / norm).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_convention() {
        let rows = vec![vec![0.0, 0.0], vec![-1.0, -3.0], vec![1.0, 3.0]];
        let (model, _) = pca_project(&rows, 1).unwrap();
        assert!(model.components[0][1] > 0.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(pca_project(&[vec![1.0]], 1), Err(PcaError::TooFewSamples(1)));
        assert_eq!(
            pca_project(&[vec![1.0, 2.0], vec![1.0]], 1),
            Err(PcaError::RaggedInput {
                row: 1,
                got: 1,
                expected: 2
            })
        );
        assert_eq!(
            pca_project(&[vec![1.0], vec![2.0]], 2),
            Err(PcaError::InvalidComponentCount { k: 2, dim: 1 })
        );
    }

    #[test]
    fn jacobi_on_a_known_matrix() {
        // eigenvalues 1 and 3
        let (vals, _) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        let mut vals = vals;
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
    }
}
