//! PCA reconstruction-error baseline.
//!
//! Windows are flattened, centered with the training mean, and projected
//! onto the leading principal components; the anomaly score is the squared
//! residual norm. When there are fewer samples than flattened dimensions
//! the components come from the Gram matrix (identical eigenvectors for
//! the nonzero spectrum, far cheaper than a 3584² covariance).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ScoredLabels;
use crate::data::PmuWindow;
use crate::error::{Error, Result};

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaComponents {
    Count(usize),
    /// Smallest count whose eigenvalues capture this fraction of total
    /// variance.
    VarianceFraction(f64),
}

#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k×d, rows orthonormal.
    components: Vec<f64>,
    k: usize,
    d: usize,
    /// Eigenvalues of the kept components (population covariance scale).
    pub explained: Vec<f64>,
}

fn flatten(windows: &[PmuWindow]) -> Result<(Vec<f64>, usize)> {
    if windows.is_empty() {
        return Err(Error::Data("PCA needs at least one window".into()));
    }
    let d = windows[0].data.numel();
    let mut rows = Vec::with_capacity(windows.len() * d);
    for w in windows {
        if w.data.numel() != d {
            return Err(Error::Data("windows have inconsistent sizes".into()));
        }
        rows.extend_from_slice(w.data.data());
    }
    Ok((rows, d))
}

/// Fit principal components on flattened normal training windows.
pub fn fit_pca(train: &[PmuWindow], n_components: PcaComponents) -> Result<PcaModel> {
    let (rows, d) = flatten(train)?;
    let n = train.len();
    if let PcaComponents::Count(k) = n_components {
        if k >= d {
            return Err(Error::Config(format!(
                "n_components {k} must be below the flattened dimension {d}"
            )));
        }
        if k == 0 {
            return Err(Error::Config("n_components must be ≥ 1".into()));
        }
        if k > n {
            return Err(Error::Config(format!(
                "n_components {k} exceeds the {n} training windows"
            )));
        }
    }
    if let PcaComponents::VarianceFraction(f) = n_components {
        if !(0.0 < f && f <= 1.0) {
            return Err(Error::Config(format!(
                "variance fraction must lie in (0, 1], got {f}"
            )));
        }
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += rows[i * d + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut centered = rows;
    for i in 0..n {
        for j in 0..d {
            centered[i * d + j] -= mean[j];
        }
    }
    let xc = DMatrix::from_row_slice(n, d, &centered);

    // eigenpairs of the population covariance XᵀX/n, descending
    let (mut eigvals, mut eigvecs): (Vec<f64>, Vec<DVector<f64>>) = if n < d {
        let gram = &xc * xc.transpose() / n as f64;
        let eig = SymmetricEigen::new(gram);
        let mut pairs: Vec<(f64, usize)> = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut vals = Vec::new();
        let mut vecs = Vec::new();
        for (val, idx) in pairs {
            if val <= 1e-12 {
                continue;
            }
            // covariance eigenvector: Xᵀu / ‖Xᵀu‖
            let u = eig.eigenvectors.column(idx);
            let mut v = xc.transpose() * u;
            let norm = v.norm();
            if norm > 0.0 {
                v /= norm;
            }
            vals.push(val);
            vecs.push(v);
        }
        (vals, vecs)
    } else {
        let cov = xc.transpose() * &xc / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut pairs: Vec<(f64, usize)> = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let vals = pairs.iter().map(|p| p.0.max(0.0)).collect();
        let vecs = pairs
            .iter()
            .map(|p| eig.eigenvectors.column(p.1).into_owned())
            .collect();
        (vals, vecs)
    };

    let total_variance: f64 = centered
        .chunks(d)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64;

    let k = match n_components {
        PcaComponents::Count(k) => k.min(eigvals.len()),
        PcaComponents::VarianceFraction(f) => {
            let target = f * total_variance;
            let mut acc = 0.0;
            let mut k = 0;
            for &v in &eigvals {
                if acc >= target {
                    break;
                }
                acc += v;
                k += 1;
            }
            k.max(1)
        }
    };
    eigvals.truncate(k);
    eigvecs.truncate(k);

    let mut components = Vec::with_capacity(k * d);
    for v in &eigvecs {
        components.extend(v.iter());
    }
    Ok(PcaModel {
        mean,
        components,
        k,
        d,
        explained: eigvals,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.k
    }

    /// Squared residual after projecting onto the retained subspace.
    pub fn reconstruction_error(&self, window: &PmuWindow) -> Result<f64> {
        if window.data.numel() != self.d {
            return Err(Error::Data(format!(
                "window has {} values, PCA was fitted on {}",
                window.data.numel(),
                self.d
            )));
        }
        let mut xc: Vec<f64> = window
            .data
            .data()
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| v - m)
            .collect();
        // coefficients c = V·xc, then residual xc − Vᵀc
        let mut coeffs = vec![0.0; self.k];
        for (ki, c) in coeffs.iter_mut().enumerate() {
            let row = &self.components[ki * self.d..(ki + 1) * self.d];
            *c = row.iter().zip(&xc).map(|(a, b)| a * b).sum();
        }
        for (ki, c) in coeffs.iter().enumerate() {
            let row = &self.components[ki * self.d..(ki + 1) * self.d];
            for (x, r) in xc.iter_mut().zip(row) {
                *x -= c * r;
            }
        }
        Ok(xc.iter().map(|v| v * v).sum())
    }
}

/// Fit on normal training windows, score the test windows by squared
/// reconstruction residual.
pub fn pca_baseline(
    train: &[PmuWindow],
    test: &[PmuWindow],
    n_components: PcaComponents,
) -> Result<ScoredLabels> {
    let model = fit_pca(train, n_components)?;
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for w in test {
        scores.push(model.reconstruction_error(w)?);
        labels.push(w.label);
    }
    ScoredLabels::new(scores, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn window_from(values: Vec<f64>, label: bool) -> PmuWindow {
        let n = values.len();
        PmuWindow {
            data: Tensor::new(vec![1, n], values).unwrap(),
            start_index: 0,
            label,
        }
    }

    #[test]
    fn planar_data_has_zero_residual_with_two_components() {
        // points in the span of two fixed directions in R⁴
        let a = [1.0, 0.0, 1.0, 0.0];
        let b = [0.0, 1.0, 0.0, -1.0];
        let train: Vec<PmuWindow> = (0..40)
            .map(|i| {
                let s = (i as f64 * 0.37).sin();
                let c = (i as f64 * 0.91).cos();
                let v: Vec<f64> = (0..4).map(|j| 3.0 * s * a[j] + 2.0 * c * b[j]).collect();
                window_from(v, false)
            })
            .collect();
        let model = fit_pca(&train, PcaComponents::Count(2)).unwrap();
        for w in &train {
            assert!(model.reconstruction_error(w).unwrap() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_point_scores_its_squared_norm() {
        // training data along e0 only (zero mean), probe along e1
        let train: Vec<PmuWindow> = (0..10)
            .map(|i| {
                let s = (i as f64) - 4.5;
                window_from(vec![s, 0.0, 0.0], false)
            })
            .collect();
        let model = fit_pca(&train, PcaComponents::Count(1)).unwrap();
        let probe = window_from(vec![0.0, 2.0, 0.0], true);
        let err = model.reconstruction_error(&probe).unwrap();
        assert!((err - 4.0).abs() < 1e-10);
    }

    #[test]
    fn component_count_validation() {
        let train: Vec<PmuWindow> = (0..5)
            .map(|i| window_from(vec![i as f64, 1.0, 2.0], false))
            .collect();
        assert!(fit_pca(&train, PcaComponents::Count(3)).is_err()); // k ≥ d
        assert!(fit_pca(&train, PcaComponents::Count(0)).is_err());
        assert!(fit_pca(&train, PcaComponents::VarianceFraction(0.0)).is_err());
        assert!(fit_pca(&train, PcaComponents::Count(2)).is_ok());
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        // n > d forces the covariance route; duplicating rows forces the
        // Gram route on the same geometry
        let base: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.7;
                vec![t.sin(), t.cos(), (2.0 * t).sin() * 0.3]
            })
            .collect();
        let cov_route: Vec<PmuWindow> = base.iter().map(|v| window_from(v.clone(), false)).collect();
        let model_cov = fit_pca(&cov_route, PcaComponents::Count(2)).unwrap();

        let gram_route: Vec<PmuWindow> = base[..2]
            .iter()
            .map(|v| window_from(v.clone(), false))
            .collect();
        let model_gram = fit_pca(&gram_route, PcaComponents::Count(1)).unwrap();
        assert_eq!(model_gram.n_components(), 1);

        // both models reconstruct their own training data consistently
        let probe = window_from(vec![0.5, -0.2, 0.1], true);
        let e1 = model_cov.reconstruction_error(&probe).unwrap();
        assert!(e1.is_finite() && e1 >= 0.0);
    }

    #[test]
    fn variance_fraction_keeps_enough_components() {
        let train: Vec<PmuWindow> = (0..30)
            .map(|i| {
                let t = i as f64;
                window_from(vec![(0.3 * t).sin() * 5.0, (0.9 * t).cos(), 0.01 * (1.3 * t).sin()], false)
            })
            .collect();
        let m95 = fit_pca(&train, PcaComponents::VarianceFraction(0.95)).unwrap();
        let m50 = fit_pca(&train, PcaComponents::VarianceFraction(0.50)).unwrap();
        assert!(m95.n_components() >= m50.n_components());
        let total: f64 = fit_pca(&train, PcaComponents::VarianceFraction(1.0))
            .unwrap()
            .explained
            .iter()
            .sum();
        let kept: f64 = m95.explained.iter().sum();
        assert!(kept / total >= 0.95);
    }
}
