use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AlignmentSequence;
use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::SeededRng;

/// `K x D` cluster centroids used to label frames with unit ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    k: usize,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative drop in inertia falls below this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 50,
            max_iters: 300,
            tolerance: 1e-4,
        }
    }
}

/// Inertia after each assignment step.
#[derive(Debug, Clone, Default)]
pub struct KMeansReport {
    pub inertia: Vec<f64>,
}

impl KMeansReport {
    pub fn iterations(&self) -> usize {
        self.inertia.len()
    }
}

impl Codebook {
    pub fn new(centroids: Vec<f32>, k: usize, dim: usize) -> Result<Self> {
        if k < 2 || dim == 0 || centroids.len() != k * dim {
            return Err(invalid!("codebook must be K x D with K >= 2, got {} values for {k} x {dim}", centroids.len()));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("codebook has non-finite centroids"));
        }
        let distinct: HashSet<Vec<u32>> = centroids
            .chunks_exact(dim)
            .map(|c| c.iter().map(|v| v.to_bits()).collect())
            .collect();
        if distinct.len() != k {
            return Err(invalid!("codebook centroids are not pairwise distinct"));
        }
        Ok(Self { centroids, k, dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lower index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        nearest(&self.centroids, self.dim, x)
    }

    const MAGIC: &'static [u8; 4] = b"UCBK";
    const VERSION: u32 = 1;

    /// Layout (little-endian): magic `UCBK`, `u32 version`, `u32 K`, `u32 D`, then `K * D` f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.centroids.len());
        out.extend_from_slice(Self::MAGIC);
        for v in [Self::VERSION, self.k as u32, self.dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != Self::MAGIC {
            return Err(Error::format("codebook", "missing UCBK header"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        if word(4) != Self::VERSION as usize {
            return Err(Error::format("codebook", format!("unsupported version {}", word(4))));
        }
        let (k, dim) = (word(8), word(12));
        let payload = &bytes[16..];
        if payload.len() != k * dim * 4 {
            return Err(Error::format("codebook", "payload length does not match header"));
        }
        let centroids = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(centroids, k, dim)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &c)| (x as f64 - c).powi(2)).sum()
}

fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d: f64 = x
            .iter()
            .zip(c)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn nearest_f64(centroids: &[Vec<f64>], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations over the pooled frames.
pub fn fit_codebook(
    features: &[FeatureMatrix],
    cfg: &KMeansConfig,
    rng: &mut SeededRng,
) -> Result<(Codebook, KMeansReport)> {
    let k = cfg.k;
    if k < 2 {
        return Err(invalid!("k-means needs K >= 2, got {k}"));
    }
    let dim = features
        .first()
        .map(FeatureMatrix::cols)
        .ok_or_else(|| invalid!("no feature matrices to cluster"))?;
    if let Some(f) = features.iter().find(|f| f.cols() != dim) {
        return Err(invalid!("feature dims differ: {} vs {dim}", f.cols()));
    }
    let points: Vec<&[f32]> = features.iter().flat_map(|f| f.iter_rows()).collect();
    let distinct: HashSet<Vec<u32>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < k {
        return Err(invalid!(
            "only {} distinct frames for K = {k} clusters",
            distinct.len()
        ));
    }

    let mut centroids = seed_plus_plus(&points, k, rng);
    let mut labels = vec![0usize; points.len()];
    let mut dists = vec![0.0f64; points.len()];
    let mut report = KMeansReport::default();

    for _ in 0..cfg.max_iters {
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (l, d) = nearest_f64(&centroids, p);
            labels[i] = l;
            dists[i] = d;
            inertia += d;
        }
        let converged = match report.inertia.last() {
            Some(&prev) => prev <= 0.0 || (prev - inertia) / prev < cfg.tolerance,
            None => inertia == 0.0,
        };
        report.inertia.push(inertia);
        if converged {
            break;
        }
        update_centroids(&points, &mut labels, &dists, &mut centroids, dim);
    }

    let flat = centroids.iter().flatten().map(|&v| v as f32).collect();
    let cb = Codebook::new(flat, k, dim)?;
    log::debug!(
        "k-means: K={k}, {} frames, {} iterations, inertia {:.4}",
        points.len(),
        report.iterations(),
        report.inertia.last().copied().unwrap_or(0.0)
    );
    Ok((cb, report))
}

fn seed_plus_plus(points: &[&[f32]], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let to_f64 = |p: &[f32]| p.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut centroids = vec![to_f64(points[rng.below(points.len())])];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.uniform() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        let c = to_f64(points[pick.expect("distinct frames guarantee positive mass")]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(
    points: &[&[f32]],
    labels: &mut [usize],
    dists: &[f64],
    centroids: &mut [Vec<f64>],
    dim: usize,
) {
    let k = centroids.len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels.iter()) {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(p.iter()) {
            *s += v as f64;
        }
    }
    // Empty clusters take the worst-served point whose cluster can spare it.
    let mut taken = HashSet::new();
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1 && !taken.contains(&i))
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = donor {
            taken.insert(i);
            let old = labels[i];
            counts[old] -= 1;
            for (s, &v) in sums[old].iter_mut().zip(points[i].iter()) {
                *s -= v as f64;
            }
            labels[i] = c;
            counts[c] = 1;
            sums[c] = points[i].iter().map(|&v| v as f64).collect();
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

/// Label every frame with its nearest centroid.
pub fn assign_units(features: &FeatureMatrix, cb: &Codebook) -> Result<AlignmentSequence> {
    if features.cols() != cb.dim() {
        return Err(invalid!(
            "feature dim {} does not match codebook dim {}",
            features.cols(),
            cb.dim()
        ));
    }
    let tokens = features
        .iter_rows()
        .map(|r| cb.nearest(r).0 as u32)
        .collect();
    AlignmentSequence::ua(tokens, cb.k() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64, per: usize) -> (FeatureMatrix, Vec<usize>) {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let mut rng = SeededRng::new(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push((center[0] + 0.5 * rng.normal()) as f32);
                data.push((center[1] + 0.5 * rng.normal()) as f32);
                labels.push(c);
            }
        }
        let n = labels.len();
        (FeatureMatrix::new(data, n, 2, 50.0).unwrap(), labels)
    }

    #[test]
    fn k_of_one_is_rejected() {
        let (f, _) = blobs(0, 10);
        let cfg = KMeansConfig { k: 1, ..Default::default() };
        assert!(fit_codebook(&[f], &cfg, &mut SeededRng::new(0)).unwrap_err().is_validation());
    }

    #[test]
    fn too_few_distinct_frames_is_rejected() {
        let f = FeatureMatrix::new(vec![1.0; 20], 10, 2, 50.0).unwrap();
        let cfg = KMeansConfig { k: 2, ..Default::default() };
        assert!(fit_codebook(&[f], &cfg, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn k_distinct_points_are_their_own_centroids() {
        let pts = [1.0f32, 2.0, -3.0, 0.5, 7.0, 7.0];
        let f = FeatureMatrix::new(pts.to_vec(), 3, 2, 50.0).unwrap();
        let cfg = KMeansConfig { k: 3, ..Default::default() };
        let (cb, _) = fit_codebook(&[f], &cfg, &mut SeededRng::new(5)).unwrap();
        let mut got: Vec<Vec<f32>> = (0..3).map(|i| cb.centroid(i).to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = pts.chunks(2).map(<[f32]>::to_vec).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn assignment_matches_exhaustive_scan() {
        let (f, _) = blobs(3, 40);
        let cfg = KMeansConfig { k: 6, ..Default::default() };
        let (cb, _) = fit_codebook(&[f.clone()], &cfg, &mut SeededRng::new(1)).unwrap();
        let ua = assign_units(&f, &cb).unwrap();
        for (row, &tok) in f.iter_rows().zip(ua.tokens()) {
            let dists: Vec<f64> = (0..cb.k())
                .map(|c| {
                    row.iter()
                        .zip(cb.centroid(c))
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum()
                })
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = dists.iter().position(|&d| d == min).unwrap();
            assert_eq!(tok as usize, first);
        }
        assert!(ua.tokens().iter().all(|&t| (t as usize) < cb.k()));
    }

    #[test]
    fn centroid_row_maps_to_its_index_and_ties_go_low() {
        let cb = Codebook::new(vec![0.0, 0.0, 5.0, 5.0, -1.0, 0.0, 9.0, 9.0, 1.0, 0.0, 3.0, 3.0], 6, 2).unwrap();
        let f = FeatureMatrix::new(cb.centroid(3).to_vec(), 1, 2, 50.0).unwrap();
        assert_eq!(assign_units(&f, &cb).unwrap().tokens(), &[3]);
        // (0,0) is equidistant from (-1,0) at index 2 and (1,0) at index 5
        let cb = Codebook::new(vec![9.0, 9.0, 8.0, 8.0, -1.0, 0.0, 7.0, 7.0, 6.0, 6.0, 1.0, 0.0], 6, 2).unwrap();
        let f = FeatureMatrix::new(vec![0.0, 0.0], 1, 2, 50.0).unwrap();
        assert_eq!(assign_units(&f, &cb).unwrap().tokens(), &[2]);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let cb = Codebook::new(vec![0.0, 1.0, 2.0], 3, 1).unwrap();
        let f = FeatureMatrix::new(vec![0.0, 0.0], 1, 2, 50.0).unwrap();
        assert!(assign_units(&f, &cb).is_err());
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = Codebook::new(vec![0.0, 1.0, 2.0, 3.0], 2, 2).unwrap();
        assert_eq!(Codebook::from_bytes(&cb.to_bytes()).unwrap(), cb);
    }

    #[test]
    fn same_seed_same_codebook() {
        let (f, _) = blobs(9, 30);
        let cfg = KMeansConfig { k: 5, ..Default::default() };
        let a = fit_codebook(&[f.clone()], &cfg, &mut SeededRng::new(2)).unwrap().0;
        let b = fit_codebook(&[f], &cfg, &mut SeededRng::new(2)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..10 {
            let (f, _) = blobs(seed, 50);
            let cfg = KMeansConfig { k: 7, ..Default::default() };
            let (_, rep) = fit_codebook(&[f], &cfg, &mut SeededRng::new(seed)).unwrap();
            for w in rep.inertia.windows(2) {
                assert!(w[1] <= w[0], "{:?}", rep.inertia);
            }
        }
    }
}
