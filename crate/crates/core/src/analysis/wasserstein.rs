//! Exact Wasserstein-1 distances between discrete distributions.
//!
//! In one dimension the distance is the integral of `|F_P - F_Q|` and is
//! computed exactly for any weights. In higher dimensions both clouds must be
//! uniform; they are subsampled to a common size of at most
//! [`MAX_ASSIGNMENT_SIZE`] and the optimal matching under Euclidean cost is
//! found with the Hungarian algorithm.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::sorted_sum;

pub const MAX_ASSIGNMENT_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedCloud {
    pub fn uniform(points: Vec<Vec<f64>>) -> Self {
        let w = 1.0 / points.len().max(1) as f64;
        let weights = vec![w; points.len()];
        Self { points, weights }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn is_uniform(&self) -> bool {
        let w0 = self.weights.first().copied().unwrap_or(0.0);
        self.weights
            .iter()
            .all(|&w| (w - w0).abs() <= 1e-12 * w0.abs())
    }
}

pub fn wasserstein1(p: &WeightedCloud, q: &WeightedCloud, seed: u64) -> Result<f64> {
    if p.points.is_empty() || q.points.is_empty() {
        return Err(Error::Contract(
            "Wasserstein distance of an empty cloud".into(),
        ));
    }
    if p.points.len() != p.weights.len() || q.points.len() != q.weights.len() {
        return Err(Error::Contract(
            "cloud weights and points differ in length".into(),
        ));
    }
    let (mp, mq) = (p.mass(), q.mass());
    if (mp - mq).abs() > 1e-9 * mp.abs().max(mq.abs()) {
        return Err(Error::Contract(format!("unequal total mass {mp} vs {mq}")));
    }
    let d = p.dim();
    if d == 0 || q.dim() != d || p.points.iter().chain(&q.points).any(|x| x.len() != d) {
        return Err(Error::Contract(
            "clouds must share one positive dimension".into(),
        ));
    }
    if d == 1 {
        let a: Vec<(f64, f64)> = p
            .points
            .iter()
            .map(|x| x[0])
            .zip(p.weights.iter().copied())
            .collect();
        let b: Vec<(f64, f64)> = q
            .points
            .iter()
            .map(|x| x[0])
            .zip(q.weights.iter().copied())
            .collect();
        return Ok(w1_line(a, b) / mp);
    }
    if !p.is_uniform() || !q.is_uniform() {
        return Err(Error::Contract(
            "clouds in dimension >= 2 must carry uniform weights".into(),
        ));
    }
    wasserstein1_uniform(&p.points, &q.points, seed)
}

/// `W1` between uniform clouds, subsampling both to
/// `min(|P|, |Q|, MAX_ASSIGNMENT_SIZE)` points with a seeded draw.
///
/// The arguments are put in a canonical order first, so the result is
/// bit-for-bit symmetric.
pub fn wasserstein1_uniform(p: &[Vec<f64>], q: &[Vec<f64>], seed: u64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Contract(
            "Wasserstein distance of an empty cloud".into(),
        ));
    }
    let (p, q) = if cloud_cmp(q, p).is_lt() {
        (q, p)
    } else {
        (p, q)
    };
    if p[0].len() == 1 {
        let a = p.iter().map(|x| (x[0], 1.0 / p.len() as f64)).collect();
        let b = q.iter().map(|x| (x[0], 1.0 / q.len() as f64)).collect();
        return Ok(w1_line(a, b));
    }
    let size = p.len().min(q.len()).min(MAX_ASSIGNMENT_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |cloud: &[Vec<f64>], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        if cloud.len() == size {
            cloud.to_vec()
        } else {
            let mut idx = sample(rng, cloud.len(), size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| cloud[i].clone()).collect()
        }
    };
    let ps = pick(p, &mut rng);
    let qs = pick(q, &mut rng);
    let cost: Vec<Vec<f64>> = ps
        .iter()
        .map(|x| qs.iter().map(|y| euclid(x, y)).collect())
        .collect();
    let (_, assign) = assignment(&cost);
    let mut matched: Vec<f64> = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .collect();
    Ok(sorted_sum(&mut matched) / size as f64)
}

fn cloud_cmp(a: &[Vec<f64>], b: &[Vec<f64>]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `int |F_P - F_Q|` for weighted atoms on the line.
fn w1_line(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .copied()
        .chain(b.iter().map(|&(x, w)| (x, -w)))
        .collect();
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut acc = 0.0;
    let mut diff = 0.0;
    for j in 0..events.len() {
        diff += events[j].1;
        if j + 1 < events.len() {
            acc += diff.abs() * (events[j + 1].0 - events[j].0);
        }
    }
    acc
}

/// Minimum-cost perfect matching on a square cost matrix by the Hungarian
/// method with row and column potentials, `O(n^3)`. Returns the total cost and
/// `assign[row] = column`.
pub fn assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    (total, assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line(xs: &[f64]) -> WeightedCloud {
        WeightedCloud::uniform(xs.iter().map(|&x| vec![x]).collect())
    }

    #[test]
    fn diracs_on_the_line() {
        assert_eq!(wasserstein1(&line(&[0.0]), &line(&[1.0]), 0).unwrap(), 1.0);
    }

    #[test]
    fn identical_clouds() {
        let c = WeightedCloud::uniform(vec![vec![0.1, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0]]);
        assert_eq!(wasserstein1(&c, &c, 0).unwrap(), 0.0);
        assert_eq!(
            wasserstein1(&line(&[0.3, -2.0]), &line(&[-2.0, 0.3]), 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_point_shift_by_brute_force() {
        // Couplings {0->0.5, 1->1.5} cost 0.5; {0->1.5, 1->0.5} cost 1.0.
        let v = wasserstein1(&line(&[0.0, 1.0]), &line(&[0.5, 1.5]), 0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn line_handles_unequal_sizes_and_weights() {
        // delta_0 vs (delta_{-1} + delta_1)/2: each half unit of mass travels 1.
        let v = wasserstein1(&line(&[0.0]), &line(&[-1.0, 1.0]), 0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let p = WeightedCloud {
            points: vec![vec![0.0], vec![1.0]],
            weights: vec![0.25, 0.75],
        };
        let q = WeightedCloud {
            points: vec![vec![0.0]],
            weights: vec![1.0],
        };
        assert!((wasserstein1(&p, &q, 0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unequal_mass_is_a_contract_error() {
        let p = WeightedCloud {
            points: vec![vec![0.0]],
            weights: vec![1.0],
        };
        let q = WeightedCloud {
            points: vec![vec![0.0]],
            weights: vec![0.5],
        };
        assert!(matches!(wasserstein1(&p, &q, 0), Err(Error::Contract(_))));
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(i: usize, used: &mut Vec<bool>, cost: &[Vec<f64>], acc: f64, best: &mut f64) {
            if i == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, used, cost, acc + cost[i][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; cost.len()], cost, 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
                    .collect();
                let (c, assign) = assignment(&cost);
                let mut seen = assign.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((c - brute_force(&cost)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<Vec<f64>> = (0..600).map(|_| vec![rng.random(), rng.random()]).collect();
        let q: Vec<Vec<f64>> = (0..700).map(|_| vec![rng.random(), rng.random()]).collect();
        let a = wasserstein1_uniform(&p, &q, 9).unwrap();
        let b = wasserstein1_uniform(&p, &q, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
