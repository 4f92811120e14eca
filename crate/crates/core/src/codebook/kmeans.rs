//! Seeded k-means++ / Lloyd clustering on row-major point sets.

use rand::Rng;

use crate::par;
use crate::rng::stream;
use crate::{Error, Result};

/// Result of one k-means run. `objective[i]` is the sum of squared distances
/// right after the i-th assignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `q * dim`, row-major.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub dim: usize,
}

impl KMeansFit {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("at least one assignment")
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(data: &[f64], dim: usize, limit: usize) -> usize {
    let mut rows: Vec<&[f64]> = data.chunks_exact(dim).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut n = usize::from(!rows.is_empty());
    for w in rows.windows(2) {
        if w[0] != w[1] {
            n += 1;
            if n >= limit {
                break;
            }
        }
    }
    n
}

/// Nearest centroid (ties to the lower index) and its squared distance.
pub(crate) fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    nearest_from(x, centroids, dim, 0)
}

/// [`nearest`], starting from centroid `hint` so that other candidates can be
/// abandoned once their partial sum exceeds the best distance. Sums run in
/// element order, so the result is exactly that of a full scan.
pub(crate) fn nearest_from(x: &[f64], centroids: &[f64], dim: usize, hint: usize) -> (usize, f64) {
    let mut best = (hint, sq_dist(x, &centroids[hint * dim..(hint + 1) * dim]));
    'next: for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        if c == hint {
            continue;
        }
        let mut d = 0.0;
        for (block_x, block_c) in x.chunks(16).zip(cent.chunks(16)) {
            for (a, b) in block_x.iter().zip(block_c) {
                d += (a - b) * (a - b);
            }
            if d > best.1 {
                continue 'next;
            }
        }
        if d < best.1 || (d == best.1 && c < best.0) {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(data: &[f64], dim: usize, q: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(q * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = data.chunks_exact(dim).map(|x| sq_dist(x, &centroids[..dim])).collect();
    for _ in 1..q {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against landing on a zero-weight tail by rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (w, x) in d2.iter_mut().zip(data.chunks_exact(dim)) {
            *w = w.min(sq_dist(x, c));
        }
    }
    centroids
}

/// k-means with k-means++ seeding from the `seed` stream named `name`.
/// Stops when no centroid moves by `tol` or more (Euclidean) or after
/// `max_iter` Lloyd iterations. Empty clusters are re-seeded with the point
/// farthest from its centroid.
pub fn kmeans(
    data: &[f64],
    dim: usize,
    q: usize,
    seed: u64,
    name: &str,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::invalid("point data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    if q < 1 {
        return Err(Error::invalid("need at least one cluster"));
    }
    if n < q {
        return Err(Error::invalid(format!("{n} points cannot form {q} clusters")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input to k-means".into()));
    }
    let distinct = count_distinct(data, dim, q);
    if distinct < q {
        return Err(Error::invalid(format!(
            "only {distinct} distinct points for {q} clusters"
        )));
    }
    let mut rng = stream(seed, name);
    let mut centroids = plus_plus_init(data, dim, q, &mut rng);
    let mut objective = Vec::new();
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    loop {
        let assigned = par::map_range(n, |i| {
            nearest_from(&data[i * dim..(i + 1) * dim], &centroids, dim, labels[i])
        });
        let mut obj = 0.0;
        for (l, (c, d)) in labels.iter_mut().zip(&assigned) {
            *l = *c;
            obj += d;
        }
        objective.push(obj);
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        // fixed-order reduction
        let mut sums = vec![0.0; q * dim];
        let mut counts = vec![0usize; q];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *s += x;
            }
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; n];
        for c in 0..q {
            if counts[c] == 0 {
                continue;
            }
            for (nv, s) in next[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *nv = s / counts[c] as f64;
            }
        }
        for c in 0..q {
            if counts[c] > 0 {
                continue;
            }
            // farthest point from its own (updated) centroid
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if taken[i] || counts[labels[i]] <= 1 {
                    continue;
                }
                let l = labels[i];
                let d = sq_dist(&data[i * dim..(i + 1) * dim], &next[l * dim..(l + 1) * dim]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                taken[i] = true;
                counts[labels[i]] -= 1;
                next[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
            }
        }
        let shift = (0..q)
            .map(|c| sq_dist(&next[c * dim..(c + 1) * dim], &centroids[c * dim..(c + 1) * dim]).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            // one last assignment against the final centroids
            let assigned = par::map_range(n, |i| {
                nearest_from(&data[i * dim..(i + 1) * dim], &centroids, dim, labels[i])
            });
            let mut obj = 0.0;
            for (l, (c, d)) in labels.iter_mut().zip(&assigned) {
                *l = *c;
                obj += d;
            }
            objective.push(obj);
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        labels,
        objective,
        iterations,
        dim,
    })
}
