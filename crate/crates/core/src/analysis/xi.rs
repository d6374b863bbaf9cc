use nalgebra::{DMatrix, DVector};

use crate::activations::Interval;

/// Per training point, the fraction of neurons with `|a_i| >= a_hat / 2`
/// whose pre-activation at that point lies in the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMassReport {
    pub masses: Vec<f64>,
}

impl XiMassReport {
    pub fn min(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `a` has one entry per neuron and `h` is `neurons x n`.
pub fn xi_mass(a: &DVector<f64>, h: &DMatrix<f64>, a_hat: f64, interval: Interval) -> XiMassReport {
    let p = h.nrows();
    let heavy: Vec<bool> = a.iter().map(|v| v.abs() >= a_hat / 2.0).collect();
    let masses = (0..h.ncols())
        .map(|k| {
            let count = (0..p)
                .filter(|&i| heavy[i] && interval.contains(h[(i, k)]))
                .count();
            count as f64 / p as f64
        })
        .collect();
    XiMassReport { masses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};

    #[test]
    fn zero_preactivations_full_mass() {
        let a = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let r = xi_mass(&a, &DMatrix::zeros(4, 3), 1.0, Interval::new(-1.0, 1.0));
        assert_eq!(r.masses, vec![1.0; 3]);
    }

    #[test]
    fn empty_interval_zero_mass() {
        let a = DVector::from_vec(vec![1.0, -1.0]);
        let r = xi_mass(&a, &DMatrix::zeros(2, 2), 1.0, Interval::empty());
        assert_eq!(r.min(), 0.0);
    }

    #[test]
    fn gaussian_preactivations_match_cdf() {
        let m = 10_000;
        let gkk: [f64; 3] = [0.5, 0.125, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DVector::from_element(m, 1.0);
        let h = DMatrix::from_fn(m, 3, |_, k| {
            Normal::new(0.0, gkk[k].sqrt()).unwrap().sample(&mut rng)
        });
        let r = xi_mass(&a, &h, 1.0, Interval::new(-1.0, 1.0));
        for (k, &g) in gkk.iter().enumerate() {
            let nd = SNormal::new(0.0, g.sqrt()).unwrap();
            let p = nd.cdf(1.0) - nd.cdf(-1.0);
            let se = (p * (1.0 - p) / m as f64).sqrt();
            assert!(
                (r.masses[k] - p).abs() < 4.0 * se + 1e-12,
                "k={k}: {} vs {p}",
                r.masses[k]
            );
        }
    }
}
