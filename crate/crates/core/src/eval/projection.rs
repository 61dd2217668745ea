use std::fs;
use std::path::Path;

use bhtsne::tSNE;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ProjectionMethod {
    /// Stochastic neighbor embedding initialized from the principal components.
    Tsne { perplexity: f64, epochs: usize },
    Pca,
}

impl Default for ProjectionMethod {
    fn default() -> Self {
        Self::Tsne {
            perplexity: 30.0,
            epochs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// 2-D coordinates for labelled embeddings.
///
/// Perplexity is clamped to `(N - 1) / 3`; if the neighbor embedding yields non-finite
/// coordinates the principal components are returned instead. The method actually used
/// is returned alongside the points.
pub fn export_projection(
    points: &[(String, String, Vec<f64>)],
    method: ProjectionMethod,
) -> Result<(Vec<ProjectedPoint>, ProjectionMethod)> {
    if points.len() < MIN_POINTS {
        return Err(invalid!("need at least {MIN_POINTS} embeddings, got {}", points.len()));
    }
    let dim = points[0].2.len();
    if dim == 0 || points.iter().any(|p| p.2.len() != dim || p.2.iter().any(|v| !v.is_finite())) {
        return Err(invalid!("embeddings must be finite and share a non-zero dimension"));
    }
    let pca = principal_components(points.iter().map(|p| p.2.as_slice()), dim);
    let (coords, used) = match method {
        ProjectionMethod::Pca => (pca, ProjectionMethod::Pca),
        ProjectionMethod::Tsne { perplexity, epochs } => {
            let perplexity = perplexity.min((points.len() - 1) as f64 / 3.0);
            let rows: Vec<&[f64]> = points.iter().map(|p| p.2.as_slice()).collect();
            // small-scale start, as in the reference initialization
            let scale = pca.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let init: Vec<f64> = pca.iter().map(|v| v / scale * 1e-2).collect();
            let y = tSNE::<f64, &[f64]>::new(&rows)
                .perplexity(perplexity)
                .epochs(epochs)
                .initial_embedding(init)
                .exact(|a, b| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum())
                .embedding();
            if y.iter().all(|v| v.is_finite()) {
                (y, ProjectionMethod::Tsne { perplexity, epochs })
            } else {
                log::warn!("neighbor embedding diverged, falling back to principal components");
                (pca, ProjectionMethod::Pca)
            }
        }
    };
    let out = points
        .iter()
        .zip(coords.chunks_exact(2))
        .map(|((id, label, _), xy)| ProjectedPoint {
            id: id.clone(),
            label: label.clone(),
            x: xy[0],
            y: xy[1],
        })
        .collect();
    Ok((out, used))
}

/// Row-major `(N, 2)` scores on the two leading principal axes, signs fixed so each
/// axis has a positive largest-magnitude loading.
fn principal_components<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Vec<f64> {
    let n = rows.clone().count();
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let data = DMatrix::from_row_iterator(n, dim, rows.flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)));
    let cov = data.transpose() * &data / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n * 2];
    for (k, &axis) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(axis).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        let proj = &data * v;
        for (i, p) in proj.iter().enumerate() {
            out[i * 2 + k] = *p;
        }
    }
    out
}

/// Tab-separated `id label x y` lines with a header.
pub fn save_projection(points: &[ProjectedPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("id\tlabel\tx\ty\n");
    for p in points {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", p.id, p.label, p.x, p.y));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn clusters(n: usize) -> Vec<(String, String, Vec<f64>)> {
        let mut rng = SeededRng::new(3);
        (0..2 * n)
            .map(|i| {
                let c = i / n;
                let centre = if c == 0 { -10.0 } else { 10.0 };
                let v = (0..8).map(|_| centre + rng.normal()).collect();
                (format!("p{i}"), format!("c{c}"), v)
            })
            .collect()
    }

    fn separation(points: &[ProjectedPoint]) -> (f64, f64) {
        let d = |a: &ProjectedPoint, b: &ProjectedPoint| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                if a.label == b.label {
                    intra += d(a, b);
                    ni += 1;
                } else {
                    inter += d(a, b);
                    nx += 1;
                }
            }
        }
        (inter / nx as f64, intra / ni as f64)
    }

    #[test]
    fn clusters_stay_apart_under_both_methods() {
        let pts = clusters(20);
        for method in [ProjectionMethod::Pca, ProjectionMethod::default()] {
            let (out, used) = export_projection(&pts, method).unwrap();
            assert_eq!(out.len(), 40);
            let (inter, intra) = separation(&out);
            assert!(inter > intra, "{used:?}: {inter} vs {intra}");
            if let ProjectionMethod::Tsne { perplexity, .. } = used {
                assert_eq!(perplexity, 13.0);
            }
        }
    }

    #[test]
    fn duplicates_stay_finite_and_few_points_fail() {
        let pts: Vec<_> = (0..12).map(|i| (format!("p{i}"), "x".to_string(), vec![1.0, 2.0, 3.0])).collect();
        let (out, _) = export_projection(&pts, ProjectionMethod::default()).unwrap();
        assert!(out.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        assert!(export_projection(&pts[..9], ProjectionMethod::Pca).unwrap_err().is_validation());
    }
}
