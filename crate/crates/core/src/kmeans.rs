//! Seeded Lloyd k-means with k-means++ seeding, used to initialize the
//! cluster weights from pretrained codes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &ArrayView2<f64>, k: usize, rng: &mut SeededRng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut dist: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(x: &ArrayView2<f64>, mut centroids: Array2<f64>, max_iters: usize) -> KMeansResult {
    let (n, d) = x.dim();
    let k = centroids.nrows();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, r) in x.rows().into_iter().enumerate() {
            let (c, _) = nearest(r, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &r);
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                let mean: Array1<f64> = sums.row(c).mapv(|v| v / counts[c] as f64);
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    let mut inertia = 0.0;
    for (i, r) in x.rows().into_iter().enumerate() {
        let (c, dist) = nearest(r, &centroids);
        assignment[i] = c;
        inertia += dist;
    }
    KMeansResult {
        centroids,
        assignment,
        inertia,
    }
}

/// Best of `restarts` runs by within-cluster sum of squares.
pub fn kmeans(
    x: &ArrayView2<f64>,
    k: usize,
    max_iters: usize,
    restarts: usize,
    rng: &mut SeededRng,
) -> Result<KMeansResult> {
    if k == 0 || k > x.nrows() {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= k <= N, got k={k}, N={}",
            x.nrows()
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus_init(x, k, rng);
        let run = lloyd(x, init, max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_clouds() {
        let x = array![
            [0.0, 0.1],
            [0.1, 0.0],
            [0.05, 0.05],
            [5.0, 5.1],
            [5.1, 5.0],
            [5.05, 4.95]
        ];
        let r = kmeans(&x.view(), 2, 25, 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[0], r.assignment[2]);
        assert_eq!(r.assignment[3], r.assignment[4]);
        assert_ne!(r.assignment[0], r.assignment[3]);
        assert!(r.inertia < 0.1);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let x = array![[0.0], [1.0]];
        assert!(kmeans(&x.view(), 3, 10, 1, &mut SeededRng::new(0)).is_err());
    }
}
