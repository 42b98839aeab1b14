//! k-means++ seeding and Lloyd iterations over dense `f64` rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};
use crate::exec::{pairwise_sum, Execution};
use crate::nn::seeded_rng;

/// Borrowed `n × d` row-major point set.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    pub data: &'a [f64],
    pub n: usize,
    pub d: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], d: usize) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(MarlError::dimension("point set", format!("multiple of {d}"), data.len()));
        }
        Ok(Points { data, n: data.len() / d, d })
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { restarts: 10, max_iterations: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// WCSS after every assignment pass; non-increasing.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl ClusterModel {
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, ties to the lowest index.
fn nearest(p: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks(d).enumerate() {
        let dist = sq_dist(p, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn assign(points: Points<'_>, centers: &[f64], exec: Execution) -> (Vec<usize>, Vec<f64>) {
    exec.map_range(points.n, |i| nearest(points.row(i), centers, points.d)).into_iter().unzip()
}

fn check_k(points: Points<'_>, k: usize) -> Result<()> {
    if k == 0 || k > points.n {
        return Err(MarlError::Parameter(format!("k = {k} must be in 1..={}", points.n)));
    }
    Ok(())
}

/// k-means++ initial centers.
pub fn kmeans_plus_plus(points: Points<'_>, k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_k(points, k)?;
    let d = points.d;
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(points.row(rng.gen_range(0..points.n)));
    let mut dist: Vec<f64> = (0..points.n).map(|i| sq_dist(points.row(i), &centers[..d])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..points.n)
        };
        let c = points.row(pick).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.row(i), &c));
        }
        centers.extend(c);
    }
    Ok(centers)
}

/// Lloyd iterations from the given centers until assignments stop changing.
pub fn lloyd(points: Points<'_>, mut centers: Vec<f64>, max_iterations: usize, seed: u64, exec: Execution) -> Result<ClusterModel> {
    let d = points.d;
    let k = centers.len() / d;
    check_k(points, k)?;
    let (mut assignments, mut dists) = assign(points, &centers, exec);
    let mut wcss_trace = vec![pairwise_sum(&dists)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        update_centers(points, &mut centers, &mut assignments, &mut dists, k);
        let (next, next_d) = assign(points, &centers, exec);
        let stable = next == assignments;
        assignments = next;
        dists = next_d;
        wcss_trace.push(pairwise_sum(&dists));
        if stable {
            converged = true;
            break;
        }
    }
    Ok(ClusterModel {
        k,
        dim: d,
        centers,
        assignments,
        wcss: *wcss_trace.last().expect("non-empty"),
        wcss_trace,
        iterations,
        converged,
        seed,
    })
}

/// Means of current members. An empty cluster takes over the point farthest
/// from its own center (ties to the lowest index).
fn update_centers(points: Points<'_>, centers: &mut [f64], assignments: &mut [usize], dists: &mut [f64], k: usize) {
    let d = points.d;
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for (c, s) in centers[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = s / counts[j] as f64;
            }
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..points.n)
            .filter(|&i| counts[assignments[i]] > 1)
            .fold(None, |best: Option<(usize, f64)>, i| match best {
                Some((_, bd)) if dists[i] <= bd => best,
                _ => Some((i, dists[i])),
            });
        if let Some((i, _)) = far {
            counts[assignments[i]] -= 1;
            counts[j] = 1;
            assignments[i] = j;
            dists[i] = 0.0;
            centers[j * d..(j + 1) * d].copy_from_slice(points.row(i));
        }
    }
}

/// One k-means++ initialisation followed by Lloyd iterations.
pub fn kmeans(points: Points<'_>, k: usize, seed: u64, max_iterations: usize, exec: Execution) -> Result<ClusterModel> {
    let mut rng = seeded_rng(seed, k as u64);
    let init = kmeans_plus_plus(points, k, &mut rng)?;
    lloyd(points, init, max_iterations, seed, exec)
}

fn restart_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64)
}

fn pick_best(models: Vec<ClusterModel>) -> ClusterModel {
    models
        .into_iter()
        .reduce(|best, m| if m.wcss < best.wcss { m } else { best })
        .expect("at least one restart")
}

/// Lowest-WCSS model over `restarts` independent k-means++ runs. Restarts run
/// in parallel; the winner does not depend on the execution mode.
pub fn kmeans_best(points: Points<'_>, k: usize, seed: u64, cfg: &KMeansConfig, exec: Execution) -> Result<ClusterModel> {
    check_k(points, k)?;
    let restarts = cfg.restarts.max(1);
    let models = exec.map_range(restarts, |r| kmeans(points, k, restart_seed(seed, r), cfg.max_iterations, Execution::Sequential));
    let mut best = pick_best(models.into_iter().collect::<Result<Vec<_>>>()?);
    best.seed = seed;
    Ok(best)
}

/// Best WCSS for each `k` in `ks` (ascending). Each `k` also tries a warm start
/// from the best `k − 1` centers plus the point farthest from them, so the
/// curve never increases with `k`.
pub fn wcss_curve(points: Points<'_>, ks: &[usize], seed: u64, cfg: &KMeansConfig, exec: Execution) -> Result<Vec<(usize, f64)>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut out = Vec::with_capacity(ks.len());
    let mut prev: Option<ClusterModel> = None;
    for k in ks {
        let mut model = kmeans_best(points, k, seed, cfg, exec)?;
        if let Some(p) = prev.as_ref().filter(|p| p.k + 1 == k) {
            let (_, dists) = assign(points, &p.centers, exec);
            let far = dists
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            let mut init = p.centers.clone();
            init.extend_from_slice(points.row(far));
            let warm = lloyd(points, init, cfg.max_iterations, seed, exec)?;
            if warm.wcss < model.wcss {
                model = warm;
            }
        }
        out.push((k, model.wcss));
        prev = Some(model);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<f64> {
        let mut rng = seeded_rng(3, 0);
        let mut v = Vec::new();
        for c in [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)] {
            for _ in 0..20 {
                v.push(c.0 + rng.gen_range(-1.0..1.0));
                v.push(c.1 + rng.gen_range(-1.0..1.0));
            }
        }
        v
    }

    #[test]
    fn separates_well_spaced_blobs() {
        let data = blobs();
        let p = Points::new(&data, 2).unwrap();
        let m = kmeans_best(p, 3, 1, &KMeansConfig::default(), Execution::default()).unwrap();
        assert!(m.converged);
        let sizes = m.cluster_sizes();
        assert_eq!(sizes.iter().filter(|&&s| s == 20).count(), 3);
        for blob in 0..3 {
            let a = m.assignments[blob * 20];
            assert!(m.assignments[blob * 20..(blob + 1) * 20].iter().all(|&x| x == a));
        }
    }

    #[test]
    fn trace_is_non_increasing_and_fixed_point_holds() {
        let data = blobs();
        let p = Points::new(&data, 2).unwrap();
        let m = kmeans(p, 5, 9, 300, Execution::Sequential).unwrap();
        assert!(m.wcss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let (again, _) = assign(p, &m.centers, Execution::Sequential);
        assert_eq!(again, m.assignments);
    }

    #[test]
    fn k_equal_n_gives_zero_wcss_and_k_out_of_range_errors() {
        let data = [0.0, 1.0, 5.0, 9.0];
        let p = Points::new(&data, 1).unwrap();
        assert_eq!(kmeans_best(p, 4, 0, &KMeansConfig::default(), Execution::Sequential).unwrap().wcss, 0.0);
        assert!(matches!(kmeans(p, 5, 0, 10, Execution::Sequential), Err(MarlError::Parameter(_))));
        assert!(matches!(kmeans(p, 0, 0, 10, Execution::Sequential), Err(MarlError::Parameter(_))));
    }

    #[test]
    fn k_one_center_is_mean() {
        let data = [1.0, 2.0, 3.0, 10.0];
        let m = kmeans(Points::new(&data, 1).unwrap(), 1, 0, 10, Execution::Sequential).unwrap();
        assert_eq!(m.centers, vec![4.0]);
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let data = [2.0; 12];
        let m = kmeans_best(Points::new(&data, 2).unwrap(), 3, 4, &KMeansConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(m.wcss, 0.0);
        assert_eq!(m.assignments.len(), 6);
    }

    #[test]
    fn execution_modes_agree() {
        let data = blobs();
        let p = Points::new(&data, 2).unwrap();
        let cfg = KMeansConfig::default();
        let a = wcss_curve(p, &[1, 2, 3, 4, 5, 6], 7, &cfg, Execution::Sequential).unwrap();
        let b = wcss_curve(p, &[1, 2, 3, 4, 5, 6], 7, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1].1 <= w[0].1));
    }
}
