//! Mean-variance portfolio selection under a budget constraint, and the
//! certainty-equivalent score used to compare estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `max_{sum w = 1}  mu_hat' w - (gamma / 2) w' xi w`
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    mu_hat: DVector<f64>,
    big_xi: DMatrix<f64>,
    gamma: f64,
}

impl PortfolioProblem {
    pub fn new(mu_hat: DVector<f64>, big_xi: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let n = mu_hat.len();
        if big_xi.nrows() != n || big_xi.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: big_xi.nrows().max(big_xi.ncols()),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("risk aversion must be positive, got {gamma}")));
        }
        let asym = (&big_xi - big_xi.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::Domain(format!("covariance not symmetric (max |xi - xi'| = {asym:e})")));
        }
        Ok(Self { mu_hat, big_xi, gamma })
    }

    pub fn n(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn mu_hat(&self) -> &DVector<f64> {
        &self.mu_hat
    }

    pub fn big_xi(&self) -> &DMatrix<f64> {
        &self.big_xi
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSolution {
    pub weights: DVector<f64>,
    /// Multiplier of the budget constraint.
    pub lagrange_multiplier: f64,
}

impl PortfolioSolution {
    /// Largest component of `mu_hat - gamma xi w - lambda 1`.
    pub fn stationarity_residual(&self, problem: &PortfolioProblem) -> f64 {
        let grad = problem.mu_hat() - problem.big_xi() * &self.weights * problem.gamma();
        grad.iter()
            .map(|g| (g - self.lagrange_multiplier).abs())
            .fold(0.0, f64::max)
    }
}

/// Reusable factorization of a covariance matrix for repeated solves with
/// different return estimates.
pub struct MeanVarianceSolver {
    chol: Cholesky<f64, Dyn>,
    /// `xi^{-1} 1`
    inv_ones: DVector<f64>,
    ones_inv_ones: f64,
    gamma: f64,
}

impl MeanVarianceSolver {
    pub fn new(big_xi: &DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("risk aversion must be positive, got {gamma}")));
        }
        let chol = Cholesky::new(big_xi.clone()).ok_or(Error::SingularCovariance)?;
        let inv_ones = chol.solve(&DVector::from_element(big_xi.nrows(), 1.0));
        let ones_inv_ones = inv_ones.sum();
        Ok(Self {
            chol,
            inv_ones,
            ones_inv_ones,
            gamma,
        })
    }

    /// Closed-form KKT point:
    /// `w = xi^{-1} (mu - lambda 1) / gamma`,
    /// `lambda = (1' xi^{-1} mu - gamma) / (1' xi^{-1} 1)`.
    ///
    /// The weights do not depend on a common shift of `mu`, so `mu` is
    /// centred first; shifted inputs then give the same weights to rounding.
    pub fn solve(&self, mu_hat: &DVector<f64>) -> Result<PortfolioSolution> {
        let n = self.inv_ones.len();
        if mu_hat.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mu_hat.len(),
            });
        }
        let shift = mu_hat.mean();
        let centred = mu_hat.add_scalar(-shift);
        let inv_mu = self.chol.solve(&centred);
        let lambda = (inv_mu.sum() - self.gamma) / self.ones_inv_ones;
        let weights = (inv_mu - &self.inv_ones * lambda) / self.gamma;
        Ok(PortfolioSolution {
            weights,
            lagrange_multiplier: lambda + shift,
        })
    }
}

pub fn solve_mean_variance(problem: &PortfolioProblem) -> Result<PortfolioSolution> {
    MeanVarianceSolver::new(problem.big_xi(), problem.gamma())?.solve(problem.mu_hat())
}

/// Realized certainty-equivalent return `x' w - (gamma / 2) w' xi w`.
pub fn certainty_equivalent(
    weights: &DVector<f64>,
    x_true: &DVector<f64>,
    big_xi: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    let n = weights.len();
    for got in [x_true.len(), big_xi.nrows(), big_xi.ncols()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("risk aversion must be positive, got {gamma}")));
    }
    let risk = weights.dot(&(big_xi * weights));
    Ok(x_true.dot(weights) - 0.5 * gamma * risk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seeded_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize) -> PortfolioProblem {
        let mut rng = seeded_rng(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let xi = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let xi = (&xi + xi.transpose()) * 0.5;
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.2..0.2));
        PortfolioProblem::new(mu, xi, rng.random_range(0.5..8.0)).unwrap()
    }

    #[test]
    fn equal_weights_for_symmetric_problem() {
        let p = PortfolioProblem::new(DVector::zeros(4), DMatrix::identity(4, 4), 4.0).unwrap();
        let s = solve_mean_variance(&p).unwrap();
        for w in s.weights.iter() {
            assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_asset_hand_solution() {
        let p = PortfolioProblem::new(DVector::from_vec(vec![0.1, 0.3]), DMatrix::identity(2, 2), 4.0).unwrap();
        let s = solve_mean_variance(&p).unwrap();
        assert_abs_diff_eq!(s.weights[0], 0.475, epsilon = 1e-14);
        assert_abs_diff_eq!(s.weights[1], 0.525, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lagrange_multiplier, (0.4 - 4.0) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn parallel_shift_leaves_weights() {
        let p = PortfolioProblem::new(DVector::from_vec(vec![0.1, 0.3]), DMatrix::identity(2, 2), 4.0).unwrap();
        let q = PortfolioProblem::new(p.mu_hat().add_scalar(7.3), p.big_xi().clone(), 4.0).unwrap();
        let a = solve_mean_variance(&p).unwrap();
        let b = solve_mean_variance(&q).unwrap();
        assert!((a.weights - b.weights).abs().max() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = PortfolioProblem::new(DVector::zeros(2), xi, 4.0).unwrap();
        assert_eq!(solve_mean_variance(&p).unwrap_err(), Error::SingularCovariance);
        assert!(PortfolioProblem::new(DVector::zeros(2), DMatrix::identity(2, 2), 0.0).is_err());
        assert!(PortfolioProblem::new(DVector::zeros(3), DMatrix::identity(2, 2), 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(PortfolioProblem::new(DVector::zeros(2), asym, 1.0).is_err());
    }

    #[test]
    fn ceq_examples() {
        let xi = DMatrix::identity(2, 2);
        let w = DVector::from_vec(vec![0.475, 0.525]);
        let x = DVector::from_vec(vec![0.1, 0.3]);
        assert_abs_diff_eq!(certainty_equivalent(&w, &x, &xi, 4.0).unwrap(), -0.7975, epsilon = 1e-14);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let x = DVector::from_vec(vec![0.37, -9.0]);
        assert_abs_diff_eq!(certainty_equivalent(&w, &x, &xi, 4.0).unwrap(), 0.37 - 2.0, epsilon = 1e-14);
        assert!(certainty_equivalent(&w, &DVector::zeros(3), &xi, 4.0).is_err());
    }

    #[test]
    fn clairvoyance_dominates_other_feasible_weights() {
        for seed in 0..100 {
            let n = 2 + (seed as usize % 9);
            let p = random_problem(seed, n);
            let best = solve_mean_variance(&p).unwrap();
            let top = certainty_equivalent(&best.weights, p.mu_hat(), p.big_xi(), p.gamma()).unwrap();
            let mut rng = seeded_rng(1000 + seed);
            for _ in 0..20 {
                let mut w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let fix = (1.0 - w.sum()) / n as f64;
                w.add_scalar_mut(fix);
                let other = certainty_equivalent(&w, p.mu_hat(), p.big_xi(), p.gamma()).unwrap();
                assert!(top >= other - 1e-12, "seed {seed}");
            }
        }
    }

    proptest! {
        #[test]
        fn solution_invariants(seed in any::<u64>(), n in 2usize..=10, c in prop::sample::select(vec![-5.0, 0.1, 100.0])) {
            let p = random_problem(seed, n);
            let s = solve_mean_variance(&p).unwrap();
            prop_assert!((s.weights.sum() - 1.0).abs() < 1e-10);
            prop_assert!(s.stationarity_residual(&p) < 1e-8);
            let shifted = PortfolioProblem::new(p.mu_hat().add_scalar(c), p.big_xi().clone(), p.gamma()).unwrap();
            let t = solve_mean_variance(&shifted).unwrap();
            prop_assert!((&s.weights - &t.weights).abs().max() < 1e-10);
            prop_assert!(t.stationarity_residual(&shifted) < 1e-8);
        }
    }
}
