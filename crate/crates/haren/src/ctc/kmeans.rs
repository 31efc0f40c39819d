//! Lloyd's K-means with k-means++ seeding, plus the codebook file format.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Codebook file magic.
const MAGIC: &[u8; 4] = b"HRNC";
const FORMAT_VERSION: u32 = 1;

/// Diagnostics from a fit; absent on codebooks loaded from disk.
#[derive(Clone, Debug)]
pub struct FitInfo {
    pub seed: u64,
    pub iterations: usize,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    /// k x dim, row-major.
    pub centroids: Vec<f64>,
    /// Final sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub fit: Option<FitInfo>,
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Versioned binary serialization: magic, version, k, dim, then the
    /// centroids as little-endian f64, row-major.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.centroids.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.k as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.centroids {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let format_err = |offset: u64, message: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(format_err(
                bytes.len() as u64,
                format!("header requires 16 bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format_err(4, format!("unsupported format version {version}")));
        }
        let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expect = 16 + k * dim * 8;
        if bytes.len() != expect {
            return Err(format_err(
                bytes.len().min(expect) as u64,
                format!("expected {expect} bytes, got {}", bytes.len()),
            ));
        }
        let centroids: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Codebook {
            k,
            dim,
            centroids,
            inertia: 0.0,
            fit: None,
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index, ties broken toward the lowest index.
fn nearest(centroids: &[f64], dim: usize, k: usize, point: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = sq_dist(&centroids[c * dim..(c + 1) * dim], point);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

#[allow(clippy::needless_range_loop)]
fn kmeanspp_seed(features: &Mat, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.rows;
    let dim = features.cols;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(features.row(first));
    let mut dists: Vec<f64> = (0..n)
        .map(|i| sq_dist(features.row(i), &centroids[0..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                draw -= d;
                if draw <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicated points); fall back to
            // a uniform draw.
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(features.row(pick));
        let base = c * dim;
        for i in 0..n {
            let d = sq_dist(features.row(i), &centroids[base..base + dim]);
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    centroids
}

/// Fit `k` centroids on `features` (N x dim). Deterministic under `seed`;
/// converges when assignments stabilize or after `max_iter` sweeps. Empty
/// clusters are re-seeded from the point farthest from its centroid.
#[allow(clippy::needless_range_loop)]
pub fn kmeans_fit(features: &Mat, k: usize, seed: u64, max_iter: usize) -> Result<Codebook> {
    let n = features.rows;
    let dim = features.cols;
    if k < 2 {
        return Err(Error::parameter(format!("centroid count must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::parameter(format!(
            "k-means requires at least k={k} points, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_seed(features, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..max_iter {
        iterations += 1;
        // Assignment step.
        let mut changed = false;
        let mut inertia = 0.0;
        let mut point_dist = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(&centroids, dim, k, features.row(i));
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            point_dist[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        // Update step.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed from the globally farthest point.
                let far = point_dist
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(features.row(far));
            } else {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }

    // Final inertia against the converged centroids.
    let inertia: f64 = (0..n)
        .map(|i| nearest(&centroids, dim, k, features.row(i)).1)
        .sum();
    Ok(Codebook {
        k,
        dim,
        centroids,
        inertia,
        fit: Some(FitInfo {
            seed,
            iterations,
            inertia_history: history,
        }),
    })
}

/// Nearest-centroid token per frame, ties toward the lowest index.
pub fn tokenize(features: &Mat, codebook: &Codebook) -> Result<Vec<usize>> {
    if features.cols != codebook.dim {
        return Err(Error::Shape {
            op: "tokenize",
            lhs: vec![features.rows, features.cols],
            rhs: vec![codebook.k, codebook.dim],
        });
    }
    Ok((0..features.rows)
        .map(|i| nearest(&codebook.centroids, codebook.dim, codebook.k, features.row(i)).0)
        .collect())
}
