//! Batch studies: convergence of conditional SDs in the dimension, the
//! effect of prior means that agree or disagree with the ranking, and the
//! mean-variance portfolio simulation.
//!
//! Every stochastic job derives its seed from the master seed through
//! [`instance_seed`], and all results are gathered in grid order, so the
//! tables do not depend on how many worker threads ran them.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{extract_ranking, seeded_rng, split_seed, Ranking, UniformCorrelationModel};
use crate::portfolio::{certainty_equivalent, MeanVarianceSolver};
use crate::recursive::{conditional_moments, QuadratureSpec};

/// Sink for human-readable progress lines.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// Silent progress sink.
pub fn quiet(_: &str) {}

/// One-based component index `ceil(q n)` of quantile `q`.
pub fn quantile_index(q: f64, n: usize) -> Result<usize> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("quantile must lie in (0, 1], got {q}")));
    }
    // guard against q * n landing a hair above an integer
    let idx = (q * n as f64 - 1e-9).ceil() as usize;
    Ok(idx.clamp(1, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub n_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub quadrature: QuadratureSpec,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_values: vec![5, 15, 25, 75],
            rho_values: vec![0.0, 0.25, 0.5, 0.75],
            quantiles: vec![0.25, 0.5, 0.75, 1.0],
            quadrature: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub rho: f64,
    pub quantile: f64,
    /// One-based component number.
    pub index: usize,
    pub sd: f64,
}

/// Conditional SD of the `ceil(q n)`-th component of the standard
/// structure given the identity ranking, for every `(n, rho, q)`.
pub fn run_convergence(config: &ConvergenceConfig, progress: Progress) -> Result<Vec<ConvergenceRow>> {
    for &q in &config.quantiles {
        quantile_index(q, 2)?;
    }
    let mut rows = Vec::new();
    for &n in &config.n_values {
        for &rho in &config.rho_values {
            let tag = format!("convergence n={n} rho={rho}");
            progress(&tag);
            let model = UniformCorrelationModel::standard(n, rho).map_err(|e| e.tagged(&tag))?;
            let res = conditional_moments(&model, &Ranking::identity(n), &config.quadrature)
                .map_err(|e| e.tagged(&tag))?;
            for &q in &config.quantiles {
                let index = quantile_index(q, n)?;
                rows.push(ConvergenceRow {
                    n,
                    rho,
                    quantile: q,
                    index,
                    sd: res.sd[index - 1],
                });
            }
        }
    }
    Ok(rows)
}

/// Equi-spaced prior means of Euclidean length `|r|`, increasing when
/// `r > 0` (agreeing with the identity ranking) and decreasing when `r < 0`.
pub fn reinforcement_mu(n: usize, r: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("reinforcement index needs n >= 2, got {n}")));
    }
    let nu: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect();
    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(nu.iter().map(|v| r * v / norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforcementConfig {
    pub n_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub r_values: Vec<f64>,
    pub quantile: f64,
    pub quadrature: QuadratureSpec,
}

impl Default for ReinforcementConfig {
    fn default() -> Self {
        Self {
            n_values: vec![5, 75],
            rho_values: vec![0.0, 0.5],
            r_values: (0..21).map(|k| -2.0 + 0.2 * k as f64).collect(),
            quantile: 0.5,
            quadrature: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforcementRow {
    pub n: usize,
    pub rho: f64,
    pub r: f64,
    pub index: usize,
    pub sd: f64,
}

/// Conditional SD of the `ceil(quantile n)`-th component for prior means
/// `reinforcement_mu(n, r)` and unit SDs, given the identity ranking.
pub fn run_reinforcement(config: &ReinforcementConfig, progress: Progress) -> Result<Vec<ReinforcementRow>> {
    let mut rows = Vec::new();
    for &n in &config.n_values {
        let index = quantile_index(config.quantile, n)?;
        for &rho in &config.rho_values {
            progress(&format!("reinforce n={n} rho={rho}"));
            for &r in &config.r_values {
                let tag = format!("reinforce n={n} rho={rho} r={r}");
                let mu = reinforcement_mu(n, r).map_err(|e| e.tagged(&tag))?;
                let model = UniformCorrelationModel::new(mu, vec![1.0; n], rho).map_err(|e| e.tagged(&tag))?;
                let res = conditional_moments(&model, &Ranking::identity(n), &config.quadrature)
                    .map_err(|e| e.tagged(&tag))?;
                rows.push(ReinforcementRow {
                    n,
                    rho,
                    r,
                    index,
                    sd: res.sd[index - 1],
                });
            }
        }
    }
    Ok(rows)
}

/// Hyperparameters of one simulated portfolio instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    /// Prior means are drawn iid `N(0, sigma_mu^2)`.
    pub sigma_mu: f64,
    /// Variance scale of the covariance diagonal, `xi_ii = s_i sigma2`.
    pub sigma2_big_sigma: f64,
    /// Prior covariance of the returns is `tau * xi`.
    pub tau: f64,
    pub gamma: f64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            sigma_mu: 2.5e-7,
            sigma2_big_sigma: 1e-3,
            tau: 0.1,
            gamma: 4.0,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_mu", self.sigma_mu),
            ("sigma2_big_sigma", self.sigma2_big_sigma),
            ("tau", self.tau),
            ("gamma", self.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub instances: usize,
    pub params: SimulationParams,
    pub master_seed: u64,
    pub quadrature: QuadratureSpec,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_values: vec![5, 15, 25, 75],
            rho_values: vec![0.0, 0.25, 0.5, 0.75],
            instances: 100,
            params: SimulationParams::default(),
            master_seed: 20_240_601,
            quadrature: QuadratureSpec::default(),
        }
    }
}

/// Wall-clock milliseconds spent forming each estimate and its portfolio.
/// Not reproducible; kept out of the CSV tables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimatorTimings {
    pub prior_ms: f64,
    pub clair_ms: f64,
    pub rank_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub n: usize,
    pub rho: f64,
    pub instance: usize,
    pub seed: u64,
    pub ceq_prior: f64,
    pub ceq_clair: f64,
    pub ceq_rank: f64,
    pub timings: EstimatorTimings,
}

impl InstanceResult {
    /// The seed-determined part of the result.
    pub fn key(&self) -> (usize, u64, usize, u64, [u64; 3]) {
        (
            self.n,
            self.rho.to_bits(),
            self.instance,
            self.seed,
            [self.ceq_prior.to_bits(), self.ceq_clair.to_bits(), self.ceq_rank.to_bits()],
        )
    }
}

/// Seed of instance `instance` at grid point `(n, rho)`:
/// `split_seed(master, [n, rho.to_bits(), instance])`.
pub fn instance_seed(master_seed: u64, n: usize, rho: f64, instance: usize) -> u64 {
    split_seed(master_seed, &[n as u64, rho.to_bits(), instance as u64])
}

/// The simulated inputs of one instance before any estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMarket {
    pub prior_mean: Vec<f64>,
    /// Covariance of returns, `S D S`.
    pub big_xi: DMatrix<f64>,
    /// Prior model of the returns, `N(prior_mean, tau * xi)`.
    pub prior: UniformCorrelationModel,
    /// Realized returns.
    pub x: Vec<f64>,
    pub ranking: Ranking,
}

/// Draws prior means, the covariance, and the realized returns for one
/// instance, in that order from a single stream seeded with `seed`.
pub fn simulate_market(n: usize, rho: f64, params: &SimulationParams, seed: u64) -> Result<SimulatedMarket> {
    params.validate()?;
    let mut rng = seeded_rng(seed);
    let prior_mean: Vec<f64> = (0..n)
        .map(|_| params.sigma_mu * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let chi2 = ChiSquared::new(n as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let scale: Vec<f64> = (0..n)
        .map(|_| (chi2.sample(&mut rng) * params.sigma2_big_sigma).sqrt())
        .collect();
    let big_xi = DMatrix::from_fn(n, n, |i, j| {
        let s = scale[i] * scale[j];
        if i == j {
            s
        } else {
            rho * s
        }
    });
    let tau_sqrt = params.tau.sqrt();
    let prior = UniformCorrelationModel::new(
        prior_mean.clone(),
        scale.iter().map(|s| s * tau_sqrt).collect(),
        rho,
    )?;
    let x = prior.one_factor_sample(&mut rng);
    let ranking = extract_ranking(&x);
    Ok(SimulatedMarket {
        prior_mean,
        big_xi,
        prior,
        x,
        ranking,
    })
}

/// One full instance: simulate, estimate the means three ways, solve the
/// three portfolios against the true covariance, and score each by its
/// certainty equivalent under the realized returns.
pub fn simulate_instance(
    n: usize,
    rho: f64,
    params: &SimulationParams,
    seed: u64,
    instance: usize,
    quadrature: &QuadratureSpec,
) -> Result<InstanceResult> {
    let market = simulate_market(n, rho, params, seed)?;
    let x = DVector::from_vec(market.x.clone());
    let solver = MeanVarianceSolver::new(&market.big_xi, params.gamma)?;
    let score = |w: &DVector<f64>| certainty_equivalent(w, &x, &market.big_xi, params.gamma);

    let t = Instant::now();
    let w_prior = solver.solve(&DVector::from_vec(market.prior_mean.clone()))?.weights;
    let prior_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let w_clair = solver.solve(&x)?.weights;
    let clair_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let rank_mean = conditional_moments(&market.prior, &market.ranking, quadrature)?.mean;
    let w_rank = solver.solve(&DVector::from_vec(rank_mean))?.weights;
    let rank_ms = t.elapsed().as_secs_f64() * 1e3;

    Ok(InstanceResult {
        n,
        rho,
        instance,
        seed,
        ceq_prior: score(&w_prior)?,
        ceq_clair: score(&w_clair)?,
        ceq_rank: score(&w_rank)?,
        timings: EstimatorTimings {
            prior_ms,
            clair_ms,
            rank_ms,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFailure {
    pub n: usize,
    pub rho: f64,
    pub instance: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n: usize,
    pub rho: f64,
    /// Instances that completed and entered the averages.
    pub completed: usize,
    pub mean_prior: f64,
    pub mean_clair: f64,
    pub mean_rank: f64,
    /// `100 (clair - rank) / |clair|`.
    pub pct_diff_clair_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioStudy {
    pub instances: Vec<InstanceResult>,
    pub failures: Vec<InstanceFailure>,
    pub aggregates: Vec<AggregateRow>,
}

pub fn percent_difference(clair: f64, rank: f64) -> f64 {
    100.0 * (clair - rank) / clair.abs()
}

/// Averages completed instances per `(n, rho)` in grid order.
pub fn aggregate(n_values: &[usize], rho_values: &[f64], instances: &[InstanceResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &n in n_values {
        for &rho in rho_values {
            let group: Vec<&InstanceResult> = instances
                .iter()
                .filter(|r| r.n == n && r.rho.to_bits() == rho.to_bits())
                .collect();
            let count = group.len();
            let avg = |f: fn(&InstanceResult) -> f64| {
                if count == 0 {
                    f64::NAN
                } else {
                    group.iter().map(|r| f(r)).sum::<f64>() / count as f64
                }
            };
            let mean_clair = avg(|r| r.ceq_clair);
            let mean_rank = avg(|r| r.ceq_rank);
            rows.push(AggregateRow {
                n,
                rho,
                completed: count,
                mean_prior: avg(|r| r.ceq_prior),
                mean_clair,
                mean_rank,
                pct_diff_clair_rank: percent_difference(mean_clair, mean_rank),
            });
        }
    }
    rows
}

/// Runs every instance of the study. Instances are independent jobs and
/// run in parallel; a failing instance is recorded and left out of the
/// averages.
pub fn run_portfolio_study(config: &SimulationConfig, progress: Progress) -> Result<PortfolioStudy> {
    config.params.validate()?;
    config.quadrature.validate()?;
    if config.instances == 0 {
        return Err(Error::Domain("instances must be at least 1".into()));
    }
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    for &n in &config.n_values {
        for &rho in &config.rho_values {
            progress(&format!("portfolio n={n} rho={rho} ({} instances)", config.instances));
            let results: Vec<std::result::Result<InstanceResult, InstanceFailure>> = (0..config.instances)
                .into_par_iter()
                .map(|i| {
                    let seed = instance_seed(config.master_seed, n, rho, i);
                    simulate_instance(n, rho, &config.params, seed, i, &config.quadrature).map_err(|e| {
                        InstanceFailure {
                            n,
                            rho,
                            instance: i,
                            seed,
                            error: e.to_string(),
                        }
                    })
                })
                .collect();
            for r in results {
                match r {
                    Ok(ok) => instances.push(ok),
                    Err(fail) => {
                        progress(&format!(
                            "instance n={} rho={} #{} (seed {}) failed: {}",
                            fail.n, fail.rho, fail.instance, fail.seed, fail.error
                        ));
                        failures.push(fail);
                    }
                }
            }
        }
    }
    let aggregates = aggregate(&config.n_values, &config.rho_values, &instances);
    Ok(PortfolioStudy {
        instances,
        failures,
        aggregates,
    })
}
