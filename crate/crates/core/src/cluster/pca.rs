//! Principal component analysis via symmetric eigendecomposition.
//!
//! When there are fewer rows than features the eigenproblem is solved on the
//! `n × n` Gram matrix and mapped back, which keeps 25k-wide latents cheap.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{MarlError, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Row-major `components × features`, orthonormal rows.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub features: usize,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    /// Fits up to `max_components` directions with non-zero variance.
    pub fn fit(rows: &[f64], n: usize, features: usize, max_components: usize) -> Result<Self> {
        if n == 0 || features == 0 || rows.len() != n * features {
            return Err(MarlError::dimension("pca input", n * features, rows.len()));
        }
        let mut mean = vec![0.0; features];
        for r in rows.chunks(features) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered: Vec<f64> = rows
            .chunks(features)
            .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m))
            .collect();

        let denom = (n.max(2) - 1) as f64;
        let gram_side = n.min(features);
        let mut gram = vec![0.0; gram_side * gram_side];
        let f = features as isize;
        if n <= features {
            // X Xᵀ
            f64::gemm(n, features, n, &centered, f, 1, &centered, 1, f, 0.0, &mut gram, n as isize, 1);
        } else {
            // Xᵀ X
            f64::gemm(features, n, features, &centered, 1, f, &centered, f, 1, 0.0, &mut gram, f, 1);
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(gram_side, gram_side, &gram));
        let mut order: Vec<usize> = (0..gram_side).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let tol = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max) * 1e-10;
        let mut components = Vec::new();
        let mut explained_variance = Vec::new();
        for &j in order.iter().take(max_components) {
            let lambda = eig.eigenvalues[j];
            if !(lambda > tol) {
                break;
            }
            let u = eig.eigenvectors.column(j);
            let mut v: Vec<f64> = if n <= features {
                // v = Xᵀ u / sqrt(λ)
                let s = lambda.sqrt();
                (0..features)
                    .map(|c| (0..n).map(|r| centered[r * features + c] * u[r]).sum::<f64>() / s)
                    .collect()
            } else {
                u.iter().copied().collect()
            };
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            // Deterministic sign: largest-magnitude entry positive.
            let pivot = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b })
                .0;
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.extend(v);
            explained_variance.push(lambda / denom);
        }
        if explained_variance.is_empty() {
            return Err(MarlError::Input("pca input has zero variance".into()));
        }
        Ok(Pca { mean, components, explained_variance, features })
    }

    pub fn transform(&self, rows: &[f64]) -> Result<Vec<f64>> {
        if rows.len() % self.features != 0 {
            return Err(MarlError::dimension("pca transform", self.features, rows.len()));
        }
        let n = rows.len() / self.features;
        let k = self.n_components();
        let centered: Vec<f64> = rows
            .chunks(self.features)
            .flat_map(|r| r.iter().zip(&self.mean).map(|(v, m)| v - m))
            .collect();
        let mut out = vec![0.0; n * k];
        let f = self.features as isize;
        f64::gemm(n, self.features, k, &centered, f, 1, &self.components, 1, f, 0.0, &mut out, k as isize, 1);
        Ok(out)
    }
}
