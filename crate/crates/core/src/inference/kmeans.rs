//! Lloyd's k-means with k-means++ seeding on 3D coordinates.

use rand::Rng;

use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    /// Sum of squared distances after each centroid update.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut bd = dist2(p, &centroids[0]);
    for (c, q) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, q);
        if d < bd {
            bd = d;
            best = c;
        }
    }
    best
}

pub fn objective(points: &[[f64; 3]], centroids: &[[f64; 3]], assignment: &[usize]) -> f64 {
    points.iter().zip(assignment).map(|(p, &a)| dist2(p, &centroids[a])).sum()
}

/// k-means++: first centre uniform, then each next centre drawn with
/// probability proportional to squared distance from the nearest chosen one.
pub fn kmeans_pp_init<R: Rng + ?Sized>(points: &[[f64; 3]], k: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centres until the assignment is stable or
/// `max_iter` assignment steps have run. A cluster left empty is re-seeded at
/// the point farthest from its own centre.
pub fn lloyd(points: &[[f64; 3]], init: Vec<[f64; 3]>, max_iter: usize) -> KMeans {
    let k = init.len();
    let mut centroids = init;
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        iterations += 1;
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for d in 0..3 {
                sums[a][d] += p[d];
            }
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = [sums[c][0] / n, sums[c][1] / n, sums[c][2] / n];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = dist2(&points[i], &centroids[assignment[i]]);
                        let dj = dist2(&points[j], &centroids[assignment[j]]);
                        di.partial_cmp(&dj).expect("finite").then(j.cmp(&i))
                    })
                    .expect("non-empty");
                centroids[c] = points[far];
            }
        }
        history.push(objective(points, &centroids, &assignment));
    }
    KMeans {
        assignment,
        centroids,
        objective: history,
        iterations,
    }
}

/// Seeded k-means++ followed by Lloyd iterations.
pub fn kmeans(points: &[[f64; 3]], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("k = {k} must be in [1, {}]", points.len())));
    }
    let mut rng = stream(seed, Stream::Cluster, 0);
    let init = kmeans_pp_init(points, k, &mut rng);
    Ok(lloyd(points, init, MAX_ITER))
}
