//! The equicorrelated Gaussian model, complete rankings, and seeded RNG
//! plumbing shared by every stochastic routine.
//!
//! A vector `X` has a uniform correlation structure when every pairwise
//! correlation equals one constant `rho` in `[0, 1]`. Such a vector is a
//! one-factor model
//!
//! ```text
//! X_i = sigma_i * (sqrt(rho) * M + sqrt(1 - rho) * Z_i) + mu_i
//! ```
//!
//! with `M, Z_1, .., Z_n` iid standard normal. Conditioning on `M = m` makes
//! the components independent, which is what the recursive engine exploits.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Generator used by every stochastic operation in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent child seed from `base` and a path of stream tags.
///
/// Each tag is folded in with the SplitMix64 finalizer, so distinct paths
/// give statistically unrelated seeds and the derivation is stable across
/// platforms and releases. Floating tags should be passed as `f64::to_bits`.
pub fn split_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x5851_f42d_4c95_7f2d);
    for &tag in path {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformCorrelationModel {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    rho: f64,
}

impl UniformCorrelationModel {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, rho: f64) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if mu.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least 2 variables, got {}",
                mu.len()
            )));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidModel(format!("rho must lie in [0, 1], got {rho}")));
        }
        if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel(format!("sigma[{i}] = {s} is not positive")));
        }
        if let Some((i, m)) = mu.iter().enumerate().find(|(_, m)| !m.is_finite()) {
            return Err(Error::InvalidModel(format!("mu[{i}] = {m} is not finite")));
        }
        Ok(Self { mu, sigma, rho })
    }

    /// Zero means and unit marginal variances.
    pub fn standard(n: usize, rho: f64) -> Result<Self> {
        Self::new(vec![0.0; n], vec![1.0; n], rho)
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_standard(&self) -> bool {
        self.mu.iter().all(|&m| m == 0.0) && self.sigma.iter().all(|&s| s == 1.0)
    }

    /// All means equal and all SDs equal, so every ordering is equally likely.
    pub fn is_exchangeable(&self) -> bool {
        self.mu.iter().all(|&m| m == self.mu[0]) && self.sigma.iter().all(|&s| s == self.sigma[0])
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let s = self.sigma[i] * self.sigma[j];
            if i == j {
                s
            } else {
                self.rho * s
            }
        })
    }

    /// One draw of `X` through the one-factor representation. The common
    /// factor is drawn first, then the idiosyncratic terms in index order.
    pub fn one_factor_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.one_factor_sample_into(rng, &mut out);
        out
    }

    pub fn one_factor_sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let load = self.rho.sqrt();
        let idio = (1.0 - self.rho).sqrt();
        let m: f64 = rng.sample(StandardNormal);
        for ((x, &mu), &sigma) in out.iter_mut().zip(&self.mu).zip(&self.sigma) {
            let z: f64 = rng.sample(StandardNormal);
            *x = sigma * (load * m + idio * z) + mu;
        }
    }

    /// Reorders the components so that the constraint `ranking` becomes the
    /// canonical chain `x_1 <= x_2 <= .. <= x_n` on the returned model.
    pub fn apply_ranking(&self, ranking: &Ranking) -> Result<Self> {
        if ranking.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: ranking.len(),
            });
        }
        let mu = ranking.order.iter().map(|&i| self.mu[i]).collect();
        let sigma = ranking.order.iter().map(|&i| self.sigma[i]).collect();
        Ok(Self {
            mu,
            sigma,
            rho: self.rho,
        })
    }

    /// Adds `c` to every prior mean.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.mu.iter().map(|m| m + c).collect(), self.sigma.clone(), self.rho)
    }
}

/// A complete ordering `X[order[0]] <= X[order[1]] <= .. <= X[order[n-1]]`.
///
/// Indices are zero-based here; the CLI and CSV surfaces use one-based
/// component numbers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking {
    order: Vec<usize>,
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::InvalidModel(format!(
                    "ranking {order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(k, &i)| k == i)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (k, &i) in self.order.iter().enumerate() {
            inv[i] = k;
        }
        Self { order: inv }
    }

    /// Whether `x` satisfies the ordering (non-strict).
    pub fn is_satisfied_by(&self, x: &[f64]) -> bool {
        self.order.windows(2).all(|w| x[w[0]] <= x[w[1]])
    }

    /// Position of each component in the ascending order, i.e. its rank
    /// minus one.
    pub fn positions(&self) -> Vec<usize> {
        self.inverse().order
    }
}

/// Permutation sorting `x` ascending, ties broken by the lower index.
pub fn extract_ranking(x: &[f64]) -> Ranking {
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable sort keeps equal keys in index order
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    Ranking { order }
}

/// Conditional moments of every component given a ranking, in the
/// original component order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub variance: Vec<f64>,
    pub sd: Vec<f64>,
    /// Natural log of the probability of the ranking.
    pub log_prob: f64,
}

impl ConditionalMoments {
    pub fn n(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn covariance_examples() {
        let m = UniformCorrelationModel::standard(2, 0.5).unwrap();
        assert_eq!(m.covariance_matrix(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let m = UniformCorrelationModel::standard(3, 0.0).unwrap();
        assert_eq!(m.covariance_matrix(), DMatrix::identity(3, 3));
        let m = UniformCorrelationModel::new(vec![0.0; 2], vec![2.0, 3.0], 0.25).unwrap();
        assert_eq!(m.covariance_matrix(), DMatrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 9.0]));
    }

    #[test]
    fn model_validation() {
        assert!(UniformCorrelationModel::standard(1, 0.0).is_err());
        assert!(UniformCorrelationModel::standard(3, -0.1).is_err());
        assert!(UniformCorrelationModel::standard(3, 1.1).is_err());
        assert!(UniformCorrelationModel::new(vec![0.0; 3], vec![1.0, 0.0, 1.0], 0.2).is_err());
        assert!(UniformCorrelationModel::new(vec![0.0; 3], vec![1.0; 2], 0.2).is_err());
        assert!(UniformCorrelationModel::standard(3, 1.0).is_ok());
        let m = UniformCorrelationModel::standard(4, 0.3).unwrap();
        assert!(m.is_standard());
        assert!(!m.shifted(1.0).unwrap().is_standard());
    }

    #[test]
    fn sample_with_full_correlation_is_constant() {
        let m = UniformCorrelationModel::standard(6, 1.0).unwrap();
        let mut rng = seeded_rng(17);
        for _ in 0..10 {
            let x = m.one_factor_sample(&mut rng);
            assert!(x.iter().all(|&v| v == x[0]));
        }
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let m = UniformCorrelationModel::standard(5, 0.4).unwrap();
        let a = m.one_factor_sample(&mut seeded_rng(99));
        let b = m.one_factor_sample(&mut seeded_rng(99));
        assert_eq!(a, b);
        assert_ne!(a, m.one_factor_sample(&mut seeded_rng(100)));
    }

    #[test]
    fn sample_mean_independent_case() {
        let n = 4;
        let m = UniformCorrelationModel::new(vec![5.0; n], vec![1.0; n], 0.0).unwrap();
        let mut rng = seeded_rng(3);
        let draws = 100_000;
        let mut sum = vec![0.0; n];
        for _ in 0..draws {
            for (s, x) in sum.iter_mut().zip(m.one_factor_sample(&mut rng)) {
                *s += x;
            }
        }
        let bound = 4.0 * 10f64.powf(-2.5) * (n as f64).sqrt();
        for s in sum {
            assert!((s / draws as f64 - 5.0).abs() < bound);
        }
    }

    #[test]
    fn sample_covariance_matches() {
        let m = UniformCorrelationModel::new(vec![1.0, -2.0, 0.5], vec![1.0, 2.0, 0.5], 0.35).unwrap();
        let cov = m.covariance_matrix();
        let n = m.n();
        let draws = 100_000;
        let mut rng = seeded_rng(2024);
        let xs: Vec<Vec<f64>> = (0..draws).map(|_| m.one_factor_sample(&mut rng)).collect();
        let mean: Vec<f64> = (0..n)
            .map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / draws as f64)
            .collect();
        for i in 0..n {
            for j in 0..n {
                let c = xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>()
                    / (draws - 1) as f64;
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / draws as f64).sqrt();
                assert!((c - cov[(i, j)]).abs() < 5.0 * se, "({i},{j}): {c} vs {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn extract_ranking_examples() {
        assert_eq!(extract_ranking(&[0.3, -1.2, 0.7]).order(), &[1, 0, 2]);
        assert_eq!(extract_ranking(&[1.0, 1.0, 0.0]).order(), &[2, 0, 1]);
        assert!(extract_ranking(&[-1.0, 0.0, 2.0, 3.0]).is_identity());
    }

    #[test]
    fn apply_ranking_examples() {
        let m = UniformCorrelationModel::new(vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 2.0], 0.2).unwrap();
        assert_eq!(m.apply_ranking(&Ranking::identity(3)).unwrap(), m);

        let two = UniformCorrelationModel::new(vec![1.5, -0.5], vec![1.0, 1.0], 0.0).unwrap();
        let swapped = two.apply_ranking(&Ranking::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(swapped.mu(), &[-0.5, 1.5]);

        let r = Ranking::new(vec![2, 0, 1]).unwrap();
        let back = m.apply_ranking(&r).unwrap().apply_ranking(&r.inverse()).unwrap();
        assert_eq!(back, m);

        assert!(matches!(
            m.apply_ranking(&Ranking::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ranking_rejects_non_permutations() {
        assert!(Ranking::new(vec![0, 0, 1]).is_err());
        assert!(Ranking::new(vec![0, 3, 1]).is_err());
        assert!(Ranking::new(vec![1, 2, 0]).is_ok());
    }

    #[test]
    fn split_seed_is_stable_and_distinct() {
        assert_eq!(split_seed(7, &[1, 2]), split_seed(7, &[1, 2]));
        assert_ne!(split_seed(7, &[1, 2]), split_seed(7, &[2, 1]));
        assert_ne!(split_seed(7, &[1]), split_seed(8, &[1]));
        assert_ne!(split_seed(7, &[]), split_seed(7, &[0]));
    }

    fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn covariance_is_permutation_equivariant(
            (sigma, order) in (2usize..=6).prop_flat_map(|n| {
                (prop::collection::vec(0.1f64..3.0, n), permutation(n))
            }),
            rho in 0.0f64..=1.0,
        ) {
            let n = sigma.len();
            let m = UniformCorrelationModel::new(vec![0.0; n], sigma, rho).unwrap();
            let r = Ranking::new(order).unwrap();
            let permuted = m.apply_ranking(&r).unwrap().covariance_matrix();
            let base = m.covariance_matrix();
            let p = DMatrix::from_fn(n, n, |k, i| if r.order()[k] == i { 1.0 } else { 0.0 });
            let expected = &p * base * p.transpose();
            prop_assert!((permuted - expected).abs().max() < 1e-12);
        }

        #[test]
        fn sampled_rankings_are_permutations(seed in any::<u64>(), n in 2usize..12, rho in 0.0f64..=1.0) {
            let m = UniformCorrelationModel::standard(n, rho).unwrap();
            let x = m.one_factor_sample(&mut seeded_rng(seed));
            let r = extract_ranking(&x);
            prop_assert!(Ranking::new(r.order().to_vec()).is_ok());
            prop_assert!(r.is_satisfied_by(&x));
        }
    }
}
