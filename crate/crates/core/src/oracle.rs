//! Monte Carlo ground truth and the large-n limit formulas.
//!
//! Sampling is split into fixed-size chunks, each with its own seed derived
//! from the caller's seed and the chunk index. Chunks may run in parallel,
//! but they are consumed in index order and the stopping point depends only
//! on the chunk contents, so estimates are identical for any thread count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss::std_normal_quantile;
use crate::model::{seeded_rng, split_seed, Ranking, UniformCorrelationModel};

const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_accepted: usize,
    pub n_proposed: usize,
}

impl McEstimate {
    /// Distance from `target` in units of standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.std_error
    }

    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Sample mean and variance of each component with their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub mean: Vec<McEstimate>,
    pub variance: Vec<McEstimate>,
}

impl MomentEstimates {
    /// SD estimate of component `l` and its delta-method standard error.
    pub fn sd(&self, l: usize) -> (f64, f64) {
        let v = self.variance[l];
        let sd = v.value.max(0.0).sqrt();
        (sd, v.std_error / (2.0 * sd))
    }

    pub fn acceptance_rate(&self) -> f64 {
        let m = &self.mean[0];
        m.n_accepted as f64 / m.n_proposed as f64
    }
}

/// Summary statistics of one scalar sample: mean and variance with
/// standard errors. The variance error uses the fourth central moment,
/// `Var(s^2) ~ (m4 - m2^2) / N`.
fn summarize(xs: impl Iterator<Item = f64> + Clone, accepted: usize, proposed: usize) -> (McEstimate, McEstimate) {
    let n = accepted as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    let mean_est = McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_accepted: accepted,
        n_proposed: proposed,
    };
    let var_est = McEstimate {
        value: var,
        std_error: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        n_accepted: accepted,
        n_proposed: proposed,
    };
    (mean_est, var_est)
}

/// Draws from `model` until at least `target_accepted` draws satisfy
/// `ranking`, then estimates the conditional mean and variance of every
/// component. Practical for `n <= 8` (acceptance near `1/n!`).
pub fn rejection_conditional_moments(
    model: &UniformCorrelationModel,
    ranking: &Ranking,
    target_accepted: usize,
    max_proposed: usize,
    seed: u64,
) -> Result<MomentEstimates> {
    let n = model.n();
    if ranking.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ranking.len(),
        });
    }
    if target_accepted < 2 {
        return Err(Error::Domain("need at least 2 accepted samples".into()));
    }

    let run_chunk = |idx: usize| -> (usize, Vec<f64>) {
        let start = idx * CHUNK;
        let size = CHUNK.min(max_proposed - start);
        let mut rng = seeded_rng(split_seed(seed, &[idx as u64]));
        let mut x = vec![0.0; n];
        let mut kept = Vec::new();
        for _ in 0..size {
            model.one_factor_sample_into(&mut rng, &mut x);
            if ranking.is_satisfied_by(&x) {
                kept.extend_from_slice(&x);
            }
        }
        (size, kept)
    };

    let total_chunks = max_proposed.div_ceil(CHUNK);
    let wave = rayon::current_num_threads().max(1);
    let mut samples: Vec<f64> = Vec::new();
    let mut proposed = 0;
    let mut next = 0;
    while samples.len() / n < target_accepted && next < total_chunks {
        let end = (next + wave).min(total_chunks);
        let results: Vec<(usize, Vec<f64>)> = (next..end).into_par_iter().map(run_chunk).collect();
        for (size, kept) in results {
            if samples.len() / n >= target_accepted {
                break;
            }
            proposed += size;
            samples.extend(kept);
        }
        next = end;
    }
    let accepted = samples.len() / n;
    if accepted < target_accepted {
        return Err(Error::InsufficientAcceptance {
            accepted,
            target: target_accepted,
            proposed,
            rate: accepted as f64 / proposed.max(1) as f64,
        });
    }

    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for l in 0..n {
        let column = samples.iter().skip(l).step_by(n).copied();
        let (m, v) = summarize(column, accepted, proposed);
        mean.push(m);
        variance.push(v);
    }
    Ok(MomentEstimates { mean, variance })
}

/// Mean and variance of the `k`-th smallest (1-based) of `n` iid standard
/// normals, estimated from `replications` sorted samples.
pub fn order_statistic_moments_mc(
    n: usize,
    k: usize,
    replications: usize,
    seed: u64,
) -> Result<(McEstimate, McEstimate)> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("rank {k} outside 1..={n}")));
    }
    if replications < 2 {
        return Err(Error::Domain("need at least 2 replications".into()));
    }
    let chunks = replications.div_ceil(CHUNK);
    let draws: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|idx| {
            let size = CHUNK.min(replications - idx * CHUNK);
            let mut rng = seeded_rng(split_seed(seed, &[idx as u64]));
            let mut z = vec![0.0; n];
            (0..size)
                .map(|_| {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    *z.select_nth_unstable_by(k - 1, f64::total_cmp).1
                })
                .collect::<Vec<f64>>()
        })
        .flatten()
        .collect();
    Ok(summarize(draws.iter().copied(), replications, replications))
}

/// Monte Carlo estimate of `E[Z_(k)]` for `n` iid standard normals.
pub fn expected_order_statistic_mc(n: usize, k: usize, replications: usize, seed: u64) -> Result<McEstimate> {
    order_statistic_moments_mc(n, k, replications, seed).map(|(mean, _)| mean)
}

/// The two readings of the large-n conditional mean of component
/// `ceil(p n)` under the standard structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitVariant {
    /// `(1 - rho) * Phi^{-1}(p)`, as the limit is stated.
    Statement,
    /// `sqrt(1 - rho) * Phi^{-1}(p)`, as the derivation produces it.
    Proof,
}

impl std::str::FromStr for LimitVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "statement" => Ok(Self::Statement),
            "proof" => Ok(Self::Proof),
            other => Err(Error::Domain(format!("unknown limit variant '{other}'"))),
        }
    }
}

pub fn limit_mean(p: f64, rho: f64, variant: LimitVariant) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    let q = std_normal_quantile(p)?;
    Ok(match variant {
        LimitVariant::Statement => (1.0 - rho) * q,
        LimitVariant::Proof => (1.0 - rho).sqrt() * q,
    })
}

/// Large-n conditional variance of any interior component: `rho`.
pub fn limit_variance(rho: f64) -> f64 {
    rho
}

/// Finite-n conditional variance of a component under the standard
/// structure, from the order-statistic variance: `rho + (1 - rho) v`.
pub fn finite_n_variance(rho: f64, order_stat_variance: f64) -> f64 {
    rho + (1.0 - rho) * order_stat_variance
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn two_iid_minimum() {
        let model = UniformCorrelationModel::standard(2, 0.0).unwrap();
        let est = rejection_conditional_moments(&model, &Ranking::identity(2), 1_000_000, 10_000_000, 11).unwrap();
        let m = -1.0 / PI.sqrt();
        assert!(est.mean[0].within_se(m, 3.0), "{:?}", est.mean[0]);
        assert!(est.mean[1].within_se(-m, 3.0));
        assert!(est.variance[0].within_se(1.0 - 1.0 / PI, 3.0));
        assert!(est.mean[0].n_accepted >= 1_000_000);
    }

    #[test]
    fn exchangeable_acceptance_rate() {
        let model = UniformCorrelationModel::standard(8, 0.3).unwrap();
        let est = rejection_conditional_moments(&model, &Ranking::identity(8), 50, 20_000_000, 5).unwrap();
        let p = 1.0 / 40_320.0;
        let proposed = est.mean[0].n_proposed as f64;
        let se = (p * (1.0 - p) / proposed).sqrt();
        assert!((est.acceptance_rate() - p).abs() < 5.0 * se, "rate {}", est.acceptance_rate());
    }

    #[test]
    fn rejection_is_deterministic() {
        let model = UniformCorrelationModel::new(vec![0.2, -0.1, 0.0], vec![1.0, 2.0, 0.5], 0.4).unwrap();
        let r = Ranking::new(vec![2, 0, 1]).unwrap();
        let a = rejection_conditional_moments(&model, &r, 5_000, 1_000_000, 42).unwrap();
        let b = rejection_conditional_moments(&model, &r, 5_000, 1_000_000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejection_reports_insufficient_acceptance() {
        let model = UniformCorrelationModel::standard(7, 0.0).unwrap();
        let err = rejection_conditional_moments(&model, &Ranking::identity(7), 1_000, 10_000, 1).unwrap_err();
        match err {
            Error::InsufficientAcceptance { proposed, rate, .. } => {
                assert_eq!(proposed, 10_000);
                assert!(rate < 0.01);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_statistic_examples() {
        let est = expected_order_statistic_mc(2, 1, 200_000, 3).unwrap();
        assert!(est.within_se(-1.0 / PI.sqrt(), 3.0), "{est:?}");
        let est = expected_order_statistic_mc(7, 4, 200_000, 4).unwrap();
        assert!(est.within_se(0.0, 3.0), "{est:?}");
        assert!(expected_order_statistic_mc(3, 0, 10, 1).is_err());
        assert!(expected_order_statistic_mc(3, 4, 10, 1).is_err());
    }

    #[test]
    fn order_statistic_variance_of_two() {
        // Var[min(Z1, Z2)] = 1 - 1/pi
        let (_, var) = order_statistic_moments_mc(2, 2, 300_000, 8).unwrap();
        assert!(var.within_se(1.0 - 1.0 / PI, 3.0), "{var:?}");
    }

    #[test]
    fn limit_formulas() {
        for variant in [LimitVariant::Statement, LimitVariant::Proof] {
            assert_eq!(limit_mean(0.5, 0.3, variant).unwrap(), 0.0);
            assert_abs_diff_eq!(limit_mean(0.75, 0.0, variant).unwrap(), 0.674_49, epsilon = 1e-5);
            assert!(limit_mean(1.0, 0.3, variant).is_err());
            assert!(limit_mean(0.0, 0.3, variant).is_err());
        }
        assert_abs_diff_eq!(limit_mean(0.75, 0.75, LimitVariant::Proof).unwrap(), 0.337_24, epsilon = 1e-5);
        assert_abs_diff_eq!(limit_mean(0.75, 0.75, LimitVariant::Statement).unwrap(), 0.168_62, epsilon = 1e-5);
        assert_eq!(limit_variance(0.0), 0.0);
        assert_eq!(limit_variance(0.25), 0.25);
        assert_eq!(limit_variance(1.0), 1.0);
        assert_eq!(finite_n_variance(0.5, 0.2), 0.6);
    }
}
