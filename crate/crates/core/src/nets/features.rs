//! Feature-space export: penultimate fully-connected activations projected
//! onto their top two principal components.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::ModelGraph;

#[derive(Clone, Debug)]
pub struct FeatureRow {
    pub id: String,
    pub label: String,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug)]
pub struct FeatureExport {
    pub rows: Vec<FeatureRow>,
    /// Fraction of total variance captured by (pc1, pc2).
    pub explained: (f64, f64),
}

impl FeatureExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,label,pc1,pc2\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.id, r.label, r.pc1, r.pc2));
        }
        out
    }
}

/// Run each sample through the classifier, collect the activation feeding
/// the final classifier layer, and project onto the top two principal
/// components of the mean-centered feature matrix.
pub fn extract_features<T: Scalar>(
    model: &ModelGraph<T>,
    samples: &[(String, String, Tensor<T>)],
) -> Result<FeatureExport> {
    let feature_layer = model.meta.feature_layer.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "model {} exposes no feature layer",
            model.meta.name
        ))
    })?;
    if samples.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "PCA needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let mut feats: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for (_, _, img) in samples {
        let (h, w) = img.dims2()?;
        let x = img.reshape(vec![1, 1, h, w])?;
        let trace = model.forward_trace(&x)?;
        feats.push(trace[feature_layer].data().iter().map(|v| v.to_f64()).collect());
    }
    let dim = feats[0].len();
    if dim < 2 {
        return Err(Error::InvalidParameter("feature dimension below 2".into()));
    }
    let (proj, explained) = pca2(&feats, dim)?;
    let rows = samples
        .iter()
        .zip(proj)
        .map(|((id, label, _), (pc1, pc2))| FeatureRow {
            id: id.clone(),
            label: label.clone(),
            pc1,
            pc2,
        })
        .collect();
    Ok(FeatureExport { rows, explained })
}

/// Mean-center, eigendecompose the covariance, project on the top two
/// components. Returns per-sample (pc1, pc2) and explained-variance ratios.
pub fn pca2(rows: &[Vec<f64>], dim: usize) -> Result<(Vec<(f64, f64)>, (f64, f64))> {
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(mean.iter()).map(|(v, m)| v - m).collect())
        .collect();
    // covariance = XᵀX / (n-1)
    let mut cov = vec![0.0; dim * dim];
    for r in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (n as f64 - 1.0);
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(cov, dim);
    let total: f64 = eigvals.iter().sum();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    let (i1, i2) = (order[0], order[1]);
    let v1 = column(&eigvecs, dim, i1);
    let v2 = column(&eigvecs, dim, i2);
    let proj = centered
        .iter()
        .map(|r| (dot(r, &v1), dot(r, &v2)))
        .collect();
    let explained = if total > 0.0 {
        (eigvals[i1] / total, eigvals[i2] / total)
    } else {
        (0.0, 0.0)
    };
    Ok((proj, explained))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Column `c` with a deterministic sign: largest-magnitude entry positive.
fn column(m: &[f64], dim: usize, c: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|r| m[r * dim + c]).collect();
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_samples_put_all_variance_on_pc1() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let t = i as f64;
                vec![2.0 * t, -t, 0.5 * t]
            })
            .collect();
        let (_, explained) = pca2(&rows, 3).unwrap();
        assert!((explained.0 - 1.0).abs() < 1e-10);
        assert!(explained.1.abs() < 1e-10);
    }

    #[test]
    fn eigenvalue_sum_equals_total_variance() {
        let rows = vec![
            vec![1.0, 2.0, 0.5],
            vec![-0.3, 1.1, 2.2],
            vec![0.7, -1.4, 0.9],
            vec![2.5, 0.2, -0.8],
            vec![-1.1, 0.6, 1.4],
        ];
        let dim = 3;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let total_var: f64 = (0..dim)
            .map(|j| {
                rows.iter()
                    .map(|r| (r[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            })
            .sum();

        let mut cov = vec![0.0; dim * dim];
        for r in &rows {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let (eigvals, _) = jacobi_eigen(cov, dim);
        let eig_sum: f64 = eigvals.iter().sum();
        assert!((eig_sum - total_var).abs() < 1e-10);
    }

    #[test]
    fn projection_matches_power_iteration_oracle() {
        // deterministic pseudo-random 10x4 feature matrix
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                (0..4)
                    .map(|j| (((i * 7 + j * 13) % 11) as f64 - 5.0) * 0.3)
                    .collect()
            })
            .collect();
        let dim = 4;
        let (proj, _) = pca2(&rows, dim).unwrap();

        // oracle: power iteration with deflation on the covariance matrix
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let centered: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect();
        let mut cov = vec![0.0; dim * dim];
        for r in &centered {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += r[i] * r[j] / (n - 1.0);
                }
            }
        }
        let power = |m: &[f64]| -> (f64, Vec<f64>) {
            let mut v = vec![1.0; dim];
            for _ in 0..10_000 {
                let mut nv = vec![0.0; dim];
                for i in 0..dim {
                    for j in 0..dim {
                        nv[i] += m[i * dim + j] * v[j];
                    }
                }
                let norm = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = nv.iter().map(|x| x / norm).collect();
            }
            let mut mv = vec![0.0; dim];
            for i in 0..dim {
                for j in 0..dim {
                    mv[i] += cov_like(m, dim, i, j) * v[j];
                }
            }
            let lambda = dot(&v, &mv);
            (lambda, v)
        };
        fn cov_like(m: &[f64], dim: usize, i: usize, j: usize) -> f64 {
            m[i * dim + j]
        }
        let (l1, v1) = power(&cov);
        let mut deflated = cov.clone();
        for i in 0..dim {
            for j in 0..dim {
                deflated[i * dim + j] -= l1 * v1[i] * v1[j];
            }
        }
        let (_, v2) = power(&deflated);

        for (k, r) in centered.iter().enumerate() {
            let o1 = dot(r, &v1);
            let o2 = dot(r, &v2);
            assert!(
                (proj[k].0.abs() - o1.abs()).abs() < 1e-6,
                "pc1 of sample {k}: {} vs oracle {o1}",
                proj[k].0
            );
            assert!(
                (proj[k].1.abs() - o2.abs()).abs() < 1e-6,
                "pc2 of sample {k}: {} vs oracle {o2}",
                proj[k].1
            );
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        use crate::nets::builders::{build_cov_ctnet, ClassifierConfig};
        let cfg = ClassifierConfig {
            input: (32, 32),
            widths: [4, 4, 4, 4],
            fc_widths: (8, 4),
            ..ClassifierConfig::default()
        };
        let m = build_cov_ctnet::<f32>(&cfg, 0).unwrap();
        let img = Tensor::<f32>::zeros(&[32, 32]);
        let samples = vec![
            ("a".to_string(), "healthy".to_string(), img.clone()),
            ("b".to_string(), "infected".to_string(), img),
        ];
        assert!(extract_features(&m, &samples).is_err());
    }
}
