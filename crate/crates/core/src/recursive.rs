//! Conditional moments given a complete ranking by recursive integration.
//!
//! Conditioning on the common factor `M = m` makes the components
//! independent with densities `phi_i(m, .)` of `N(mu_i + sigma_i sqrt(rho) m,
//! sigma_i^2 (1 - rho))`. The probability of the chain `x_1 <= .. <= x_n`
//! then factors into nested one-dimensional running integrals
//!
//! ```text
//! b_0(m, x) = 1
//! b_i(m, x) = int_{-inf}^{x} b_{i-1}(m, t) phi_i(m, t) dt
//! B         = int phi(m) int b_{n-1}(m, x) phi_n(m, x) dx dm
//! ```
//!
//! and the numerator `A` for component `l` repeats the chain with an extra
//! factor `g(x) = x` (or `x^2`) at step `l`. `E[X_l | R] = A / B`.
//!
//! Every running integral is a fourth-order cumulative rule on one uniform x-grid
//! per m-node; the outer integral is Simpson's rule on a fixed m-grid. The
//! b-chain is computed once per node and each numerator branches off it at
//! its own step, which makes all `n` means and second moments cost
//! `O(n^2 * x_nodes * m_nodes)`.
//!
//! The chain values shrink roughly like `1 / i!`, so after each step the
//! largest magnitude is factored out into a log scale.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss::std_normal_pdf;
use crate::model::{ConditionalMoments, Ranking, UniformCorrelationModel};

/// Grids for the outer factor integral and the inner running integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Simpson nodes on `[-m_halfwidth, m_halfwidth]`; must be odd.
    pub m_nodes: usize,
    /// Uniform nodes of the per-m x-grid.
    pub x_nodes: usize,
    /// Half-width of the m-grid in SDs of the common factor.
    pub m_halfwidth: f64,
    /// Conditional SDs of padding beyond the extreme conditional means.
    pub x_padding: f64,
    /// Factor the running maximum out of each recursion step. Only worth
    /// turning off to check that results do not depend on it.
    pub rescale: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            m_nodes: 101,
            x_nodes: 2001,
            m_halfwidth: 8.0,
            x_padding: 8.0,
            rescale: true,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_nodes < 21 {
            return Err(Error::InvalidQuadrature(format!("m_nodes = {} < 21", self.m_nodes)));
        }
        if self.m_nodes % 2 == 0 {
            return Err(Error::InvalidQuadrature(format!(
                "m_nodes = {} must be odd for Simpson's rule",
                self.m_nodes
            )));
        }
        if self.x_nodes < 201 {
            return Err(Error::InvalidQuadrature(format!("x_nodes = {} < 201", self.x_nodes)));
        }
        if !(self.m_halfwidth >= 6.0) {
            return Err(Error::InvalidQuadrature(format!(
                "m_halfwidth = {} < 6",
                self.m_halfwidth
            )));
        }
        if !(self.x_padding >= 6.0) {
            return Err(Error::InvalidQuadrature(format!("x_padding = {} < 6", self.x_padding)));
        }
        Ok(())
    }

    /// Same grids with both node counts doubled (odd counts stay odd).
    pub fn refined(&self) -> Self {
        Self {
            m_nodes: 2 * self.m_nodes - 1,
            x_nodes: 2 * self.x_nodes - 1,
            ..*self
        }
    }

    /// m-grid nodes paired with Simpson weight times the factor density.
    fn m_grid(&self) -> Vec<(f64, f64)> {
        let k_max = self.m_nodes - 1;
        let h = 2.0 * self.m_halfwidth / k_max as f64;
        (0..self.m_nodes)
            .map(|k| {
                let m = -self.m_halfwidth + k as f64 * h;
                let simpson = if k == 0 || k == k_max {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (m, simpson * h / 3.0 * std_normal_pdf(m))
            })
            .collect()
    }
}

/// One tabulated running integral over the x-grid at a fixed m-node.
///
/// The represented function is `values * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionState {
    pub values: Vec<f64>,
    pub log_scale: f64,
}

impl RecursionState {
    /// The constant function 1.
    pub fn unit(len: usize) -> Self {
        Self {
            values: vec![1.0; len],
            log_scale: 0.0,
        }
    }

    /// Running integral of `values * weight` from the left end of the
    /// grid, written into `out`.
    pub fn integrate_into(&self, weight: &[f64], h: f64, out: &mut RecursionState) {
        debug_assert_eq!(self.values.len(), weight.len());
        out.values.clear();
        out.values.extend(self.values.iter().zip(weight).map(|(v, w)| v * w));
        out.log_scale = self.log_scale;
        cumulate_in_place(&mut out.values, h);
    }

    /// Like [`integrate_into`](Self::integrate_into) with an extra factor
    /// `g(x_j)` in the integrand.
    pub fn integrate_weighted_into(
        &self,
        weight: &[f64],
        g: &[f64],
        h: f64,
        out: &mut RecursionState,
    ) {
        out.values.clear();
        out.values.extend(
            self.values
                .iter()
                .zip(weight)
                .zip(g)
                .map(|((v, w), g)| v * w * g),
        );
        out.log_scale = self.log_scale;
        cumulate_in_place(&mut out.values, h);
    }

    /// Integral of `values * weight (* g)` over the whole grid, without the
    /// log scale applied. Uses the same rule as the running integrals.
    pub fn total(&self, weight: &[f64], g: Option<&[f64]>, h: f64) -> f64 {
        let f: Vec<f64> = match g {
            Some(g) => self
                .values
                .iter()
                .zip(weight)
                .zip(g)
                .map(|((v, w), g)| v * w * g)
                .collect(),
            None => self.values.iter().zip(weight).map(|(v, w)| v * w).collect(),
        };
        let mut f = f;
        cumulate_in_place(&mut f, h);
        f[f.len() - 1]
    }

    /// Moves the largest magnitude into `log_scale`, leaving
    /// `max |values| == 1`. All-zero states are left untouched.
    pub fn rescale(&mut self) {
        let peak = self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if peak > 0.0 && peak.is_finite() {
            let inv = 1.0 / peak;
            self.values.iter_mut().for_each(|v| *v *= inv);
            self.log_scale += peak.ln();
        }
    }
}

/// Replaces samples `f_j` on a uniform grid by the running integral
/// `F_j = int_{x_0}^{x_j} f`.
///
/// Interior panels use the four-point rule
/// `h/24 (-f_{j-2} + 13 f_{j-1} + 13 f_j - f_{j+1})`, exact for cubics;
/// the two end panels fall back to the trapezoid. The chain functions get
/// steeper with every step (slopes grow with the step count), and plain
/// trapezoid error compounds accordingly.
fn cumulate_in_place(f: &mut [f64], h: f64) {
    let len = f.len();
    debug_assert!(len >= 4);
    let c = h / 24.0;
    let mut fm1 = f[0];
    let mut f0 = f[1];
    let mut acc = 0.5 * h * (fm1 + f0);
    f[0] = 0.0;
    f[1] = acc;
    for j in 2..len {
        let fm2 = fm1;
        fm1 = f0;
        f0 = f[j];
        let panel = if j + 1 < len {
            c * (-fm2 + 13.0 * (fm1 + f0) - f[j + 1])
        } else {
            0.5 * h * (fm1 + f0)
        };
        acc += panel;
        f[j] = acc;
    }
}

/// Per-m-node output: log of the conditional ranking probability and the
/// conditional first and second moments of each canonical component.
struct NodeResult {
    log_prob: f64,
    mean: Vec<f64>,
    second: Vec<f64>,
}

/// Component densities on the shared x-grid for one m-node.
struct NodeGrid {
    x: Vec<f64>,
    x2: Vec<f64>,
    h: f64,
    phi: Vec<Vec<f64>>,
}

impl NodeGrid {
    fn new(model: &UniformCorrelationModel, m: f64, spec: &QuadratureSpec) -> Self {
        let load = model.rho().sqrt();
        let idio = (1.0 - model.rho()).sqrt();
        let centers: Vec<f64> = model
            .mu()
            .iter()
            .zip(model.sigma())
            .map(|(&mu, &s)| mu + s * load * m)
            .collect();
        let sds: Vec<f64> = model.sigma().iter().map(|&s| s * idio).collect();
        let max_sd = sds.iter().cloned().fold(0.0, f64::max);
        let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - spec.x_padding * max_sd;
        let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spec.x_padding * max_sd;
        let h = (hi - lo) / (spec.x_nodes - 1) as f64;
        let x: Vec<f64> = (0..spec.x_nodes).map(|j| lo + j as f64 * h).collect();
        let x2 = x.iter().map(|v| v * v).collect();
        let phi = centers
            .iter()
            .zip(&sds)
            .map(|(&c, &s)| {
                let inv = 1.0 / s;
                x.iter().map(|&v| std_normal_pdf((v - c) * inv) * inv).collect()
            })
            .collect();
        Self { x, x2, h, phi }
    }
}

/// Runs the b-chain, returning `b_0 .. b_{n-1}` and `log B(m)`.
fn forward_chain(grid: &NodeGrid, rescale: bool) -> (Vec<RecursionState>, f64) {
    let n = grid.phi.len();
    let len = grid.x.len();
    let mut states = Vec::with_capacity(n);
    states.push(RecursionState::unit(len));
    for i in 0..n - 1 {
        let mut next = RecursionState {
            values: Vec::with_capacity(len),
            log_scale: 0.0,
        };
        states[i].integrate_into(&grid.phi[i], grid.h, &mut next);
        if rescale {
            next.rescale();
        }
        states.push(next);
    }
    let last = &states[n - 1];
    let total = last.total(&grid.phi[n - 1], None, grid.h);
    let log_prob = if total > 0.0 {
        last.log_scale + total.ln()
    } else {
        f64::NEG_INFINITY
    };
    (states, log_prob)
}

/// `A / B` at one node for component `target` and moment function `g`.
fn branch_ratio(
    grid: &NodeGrid,
    chain: &[RecursionState],
    target: usize,
    g: &[f64],
    b_total: f64,
    b_log_scale: f64,
    rescale: bool,
    scratch: &mut [RecursionState; 2],
) -> f64 {
    let n = grid.phi.len();
    let base = &chain[target];
    let (a_total, a_log_scale) = if target == n - 1 {
        (base.total(&grid.phi[n - 1], Some(g), grid.h), base.log_scale)
    } else {
        let [cur, nxt] = scratch;
        base.integrate_weighted_into(&grid.phi[target], g, grid.h, cur);
        if rescale {
            cur.rescale();
        }
        for i in target + 1..n - 1 {
            cur.integrate_into(&grid.phi[i], grid.h, nxt);
            if rescale {
                nxt.rescale();
            }
            std::mem::swap(cur, nxt);
        }
        (cur.total(&grid.phi[n - 1], None, grid.h), cur.log_scale)
    };
    a_total / b_total * (a_log_scale - b_log_scale).exp()
}

fn node_result(
    model: &UniformCorrelationModel,
    m: f64,
    spec: &QuadratureSpec,
    with_moments: bool,
) -> NodeResult {
    let grid = NodeGrid::new(model, m, spec);
    let n = model.n();
    let (chain, log_prob) = forward_chain(&grid, spec.rescale);
    if !with_moments || !log_prob.is_finite() {
        return NodeResult {
            log_prob,
            mean: vec![0.0; if with_moments { n } else { 0 }],
            second: vec![0.0; if with_moments { n } else { 0 }],
        };
    }
    let last = &chain[n - 1];
    let b_total = last.total(&grid.phi[n - 1], None, grid.h);
    let b_log_scale = last.log_scale;

    let empty = || RecursionState {
        values: Vec::with_capacity(grid.x.len()),
        log_scale: 0.0,
    };
    let mut scratch = [empty(), empty()];
    let mut mean = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for target in 0..n {
        mean.push(branch_ratio(
            &grid, &chain, target, &grid.x, b_total, b_log_scale, spec.rescale, &mut scratch,
        ));
        second.push(branch_ratio(
            &grid, &chain, target, &grid.x2, b_total, b_log_scale, spec.rescale, &mut scratch,
        ));
    }
    NodeResult {
        log_prob,
        mean,
        second,
    }
}

fn check_inputs(model: &UniformCorrelationModel, spec: &QuadratureSpec) -> Result<()> {
    spec.validate()?;
    if model.rho() >= 1.0 {
        return Err(Error::DegenerateModel { rho: model.rho() });
    }
    Ok(())
}

/// Evaluates every m-node (in parallel) and returns them in grid order
/// with their outer weights, so reductions are schedule-independent.
fn evaluate_nodes(
    model: &UniformCorrelationModel,
    spec: &QuadratureSpec,
    with_moments: bool,
) -> Vec<(f64, NodeResult)> {
    spec.m_grid()
        .into_par_iter()
        .map(|(m, w)| (w, node_result(model, m, spec, with_moments)))
        .collect()
}

/// Returns the largest node log-probability and `log sum_k w_k exp(l_k - max)`.
fn log_outer_sum(nodes: &[(f64, NodeResult)]) -> Option<(f64, f64)> {
    let peak = nodes
        .iter()
        .filter(|(w, r)| *w > 0.0 && r.log_prob.is_finite())
        .map(|(_, r)| r.log_prob)
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return None;
    }
    let sum: f64 = nodes
        .iter()
        .map(|(w, r)| w * (r.log_prob - peak).exp())
        .sum();
    Some((peak, sum.ln()))
}

/// `log P(X_1 <= X_2 <= .. <= X_n)` for the model as given.
pub fn log_ranking_probability(model: &UniformCorrelationModel, spec: &QuadratureSpec) -> Result<f64> {
    check_inputs(model, spec)?;
    let nodes = evaluate_nodes(model, spec, false);
    let (peak, log_sum) = log_outer_sum(&nodes).ok_or_else(|| {
        Error::NumericalFailure("ranking probability underflowed at every m-node".into())
    })?;
    Ok(peak + log_sum)
}

/// Conditional mean, second moment, and variance of every component given
/// `ranking`, reported in the model's original component order.
pub fn conditional_moments(
    model: &UniformCorrelationModel,
    ranking: &Ranking,
    spec: &QuadratureSpec,
) -> Result<ConditionalMoments> {
    check_inputs(model, spec)?;
    let canonical = model.apply_ranking(ranking)?;
    let n = model.n();
    let nodes = evaluate_nodes(&canonical, spec, true);
    let (peak, log_sum) = log_outer_sum(&nodes).ok_or_else(|| {
        Error::NumericalFailure("ranking probability underflowed at every m-node".into())
    })?;

    // Posterior weights of the m-nodes given the ranking.
    let weights: Vec<f64> = nodes
        .iter()
        .map(|(w, r)| if r.log_prob.is_finite() { w * (r.log_prob - peak).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();

    let mut mean_c = vec![0.0; n];
    let mut second_c = vec![0.0; n];
    for (wk, (_, r)) in weights.iter().zip(&nodes) {
        if *wk == 0.0 {
            continue;
        }
        for l in 0..n {
            mean_c[l] += wk * r.mean[l];
            second_c[l] += wk * r.second[l];
        }
    }

    let mut mean = vec![0.0; n];
    let mut second_moment = vec![0.0; n];
    let mut variance = vec![0.0; n];
    for (k, &orig) in ranking.order().iter().enumerate() {
        let mu = mean_c[k] / total;
        let s2 = second_c[k] / total;
        let mut var = s2 - mu * mu;
        if !var.is_finite() || var < -1e-8 {
            return Err(Error::NumericalFailure(format!(
                "variance of component {} computed as {var:e}; grid too coarse",
                orig + 1
            )));
        }
        if var < 0.0 {
            var = 0.0;
        }
        mean[orig] = mu;
        second_moment[orig] = s2;
        variance[orig] = var;
    }
    let sd = variance.iter().map(|v| v.sqrt()).collect();
    Ok(ConditionalMoments {
        mean,
        second_moment,
        variance,
        sd,
        log_prob: peak + log_sum,
    })
}

/// Runs [`conditional_moments`] over a family of models, typically one per
/// dimension in a sweep. Errors carry the dimension of the failing case.
pub fn conditional_moments_all_n(
    cases: &[(UniformCorrelationModel, Ranking)],
    spec: &QuadratureSpec,
) -> Result<Vec<ConditionalMoments>> {
    cases
        .iter()
        .map(|(model, ranking)| {
            conditional_moments(model, ranking, spec).map_err(|e| e.tagged(format!("n = {}", model.n())))
        })
        .collect()
}
