//! Convergence lab: local SGD with periodic averaging on synthetic
//! quadratics, and an empirical check of the `O(1/t)` rate bound.
//!
//! Client `k` holds `F_k(c) = 1/2 (c - a_k)^T H_k (c - a_k) + b_k` with
//! diagonal `H_k`. Stochastic gradients add isotropic gaussian noise with
//! per-coordinate standard deviation `sigma`, so `E|g - grad F_k|^2 =
//! dim * sigma^2`.
//!
//! Time starts at `t = 1` with every client at the start point. At step `t`
//! each client moves `v^k = c^k - eta_t g^k`; when `t` is a multiple of `E`
//! the server draws `K` of `N` clients without replacement and broadcasts
//! `sum_{k in S} p_k (N/K) v^k`. `c_bar_t = sum_k p_k c_t^k` is tracked at
//! every step, synced or not.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

const DIVERGENCE_GAP: f64 = 1e12;
const G_MARGIN: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProblem {
    centers: Vec<Vec<f64>>,
    curvature: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    weights: Vec<f64>,
    sigma: f64,
    mean_curvature: Vec<f64>,
    optimum: Vec<f64>,
    l: f64,
    mu: f64,
    f_star: f64,
    heterogeneity_gap: f64,
}

impl ConvexProblem {
    /// `centers[k]` is `a_k`, `curvature[k]` the diagonal of `H_k`.
    pub fn new(
        centers: Vec<Vec<f64>>,
        curvature: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        weights: Vec<f64>,
        sigma: f64,
    ) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::Invalid("problem needs at least one client".into()));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(Error::Invalid("problem dimension must be at least 1".into()));
        }
        if curvature.len() != n || offsets.len() != n || weights.len() != n {
            return Err(Error::shape(
                "ConvexProblem::new",
                format!(
                    "{n} centers but {} curvatures, {} offsets, {} weights",
                    curvature.len(),
                    offsets.len(),
                    weights.len()
                ),
            ));
        }
        if centers.iter().chain(&curvature).any(|v| v.len() != dim) {
            return Err(Error::shape("ConvexProblem::new", format!("vectors must have length {dim}")));
        }
        let all = centers.iter().chain(&curvature).flatten().chain(&offsets).chain(&weights);
        if all.clone().any(|v| !v.is_finite()) || !sigma.is_finite() {
            return Err(Error::NonFinite("ConvexProblem::new"));
        }
        if sigma < 0.0 {
            return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        if weights.iter().any(|&p| p <= 0.0) {
            return Err(Error::Invalid("client weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("client weights sum to {total}, not 1")));
        }
        if curvature.iter().flatten().any(|&h| h <= 0.0) {
            return Err(Error::Invalid("curvatures must be positive".into()));
        }

        let l = curvature.iter().flatten().copied().fold(f64::MIN, f64::max);
        let mu = curvature.iter().flatten().copied().fold(f64::MAX, f64::min);
        let mut mean_curvature = vec![0.0; dim];
        let mut optimum = vec![0.0; dim];
        for k in 0..n {
            for j in 0..dim {
                mean_curvature[j] += weights[k] * curvature[k][j];
                optimum[j] += weights[k] * curvature[k][j] * centers[k][j];
            }
        }
        for j in 0..dim {
            optimum[j] /= mean_curvature[j];
        }
        let mut p = ConvexProblem {
            centers,
            curvature,
            offsets,
            weights,
            sigma,
            mean_curvature,
            optimum,
            l,
            mu,
            f_star: 0.0,
            heterogeneity_gap: 0.0,
        };
        p.f_star = p.objective(&p.optimum.clone());
        let floor: f64 = p.weights.iter().zip(&p.offsets).map(|(w, b)| w * b).sum();
        p.heterogeneity_gap = p.f_star - floor;
        if p.heterogeneity_gap < -1e-12 {
            return Err(Error::Degenerate(format!(
                "heterogeneity gap {} is negative",
                p.heterogeneity_gap
            )));
        }
        p.heterogeneity_gap = p.heterogeneity_gap.max(0.0);
        Ok(p)
    }

    pub fn num_clients(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn smoothness(&self) -> f64 {
        self.l
    }

    pub fn strong_convexity(&self) -> f64 {
        self.mu
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn optimal_value(&self) -> f64 {
        self.f_star
    }

    /// `F* - sum_k p_k F_k*`.
    pub fn heterogeneity_gap(&self) -> f64 {
        self.heterogeneity_gap
    }

    /// Expected squared norm of the gradient noise of one client.
    pub fn noise_variance(&self) -> f64 {
        self.dim() as f64 * self.sigma * self.sigma
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.num_clients() as f64;
        self.weights.iter().all(|&p| (p - u).abs() <= 1e-15)
    }

    pub fn start(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    pub fn client_objective(&self, k: usize, c: &[f64]) -> f64 {
        let q: f64 = (0..self.dim())
            .map(|j| {
                let d = c[j] - self.centers[k][j];
                self.curvature[k][j] * d * d
            })
            .sum();
        0.5 * q + self.offsets[k]
    }

    pub fn objective(&self, c: &[f64]) -> f64 {
        (0..self.num_clients())
            .map(|k| self.weights[k] * self.client_objective(k, c))
            .sum()
    }

    pub fn client_gradient(&self, k: usize, c: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = self.curvature[k][j] * (c[j] - self.centers[k][j]);
        }
    }

    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.mean_curvature[j] * (c[j] - self.optimum[j]))
            .collect()
    }

    /// `F(c) - F*`, evaluated as `1/2 (c - c*)^T H_bar (c - c*)` so it stays
    /// accurate when tiny.
    pub fn gap(&self, c: &[f64]) -> f64 {
        0.5 * (0..self.dim())
            .map(|j| {
                let d = c[j] - self.optimum[j];
                self.mean_curvature[j] * d * d
            })
            .sum::<f64>()
    }

    pub fn distance_sq(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.optimum).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub num_clients: usize,
    pub dim: usize,
    /// Standard deviation of the client minimisers around the origin.
    pub heterogeneity: f64,
    pub sigma: f64,
    pub mu: f64,
    pub l: f64,
    pub seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            num_clients: 10,
            dim: 20,
            heterogeneity: 1.0,
            sigma: 0.1,
            mu: 1.0,
            l: 4.0,
            seed: 0,
        }
    }
}

/// Uniform-weight quadratics with diagonal curvature in `[mu, l]`. Client
/// `k` has curvature exactly `mu` on coordinate `k mod dim` and exactly `l`
/// on `(k + 1) mod dim`, so the problem constants are attained. Minimisers
/// are `heterogeneity * N(0, I)`, offsets are zero.
pub fn make_problem(spec: &ProblemSpec) -> Result<ConvexProblem> {
    if spec.num_clients == 0 || spec.dim == 0 {
        return Err(Error::Invalid("num_clients and dim must be at least 1".into()));
    }
    if !(spec.mu > 0.0 && spec.l >= spec.mu && spec.l.is_finite()) {
        return Err(Error::Invalid(format!(
            "need 0 < mu <= L, got mu={} L={}",
            spec.mu, spec.l
        )));
    }
    if !(spec.heterogeneity >= 0.0 && spec.heterogeneity.is_finite()) {
        return Err(Error::Invalid(format!("heterogeneity must be >= 0, got {}", spec.heterogeneity)));
    }
    let mut r = rng::stream(spec.seed, &[tag::CONVERGENCE, 0]);
    let n = spec.num_clients;
    let d = spec.dim;
    let mut centers = Vec::with_capacity(n);
    let mut curvature = Vec::with_capacity(n);
    for k in 0..n {
        centers.push(
            (0..d)
                .map(|_| spec.heterogeneity * r.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>(),
        );
        let mut h: Vec<f64> = (0..d).map(|_| r.random_range(spec.mu..=spec.l)).collect();
        h[(k + 1) % d] = spec.l;
        h[k % d] = spec.mu;
        curvature.push(h);
    }
    ConvexProblem::new(centers, curvature, vec![0.0; n], vec![1.0 / n as f64; n], spec.sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub local_steps: usize,
    pub participants: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// `eta_t = lr_scale / (t + gamma)`
    pub lr_scale: f64,
}

impl RateConfig {
    /// `gamma = max(8L/mu - 1, E)`, `eta_t = 2 / (mu (t + gamma))`.
    pub fn theorem(problem: &ConvexProblem, local_steps: usize, participants: usize, horizon: usize) -> Self {
        let ratio = problem.smoothness() / problem.strong_convexity();
        RateConfig {
            local_steps,
            participants,
            horizon,
            gamma: (8.0 * ratio - 1.0).max(local_steps as f64),
            lr_scale: 2.0 / problem.strong_convexity(),
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.lr_scale / (t as f64 + self.gamma)
    }

    pub fn is_sync(&self, t: usize) -> bool {
        t % self.local_steps == 0
    }

    pub fn validate(&self, problem: &ConvexProblem) -> Result<()> {
        let n = problem.num_clients();
        if self.local_steps == 0 || self.horizon == 0 {
            return Err(Error::Invalid("local_steps and horizon must be at least 1".into()));
        }
        if self.participants == 0 || self.participants > n {
            return Err(Error::Invalid(format!(
                "participants must lie in 1..={n}, got {}",
                self.participants
            )));
        }
        if self.participants < n && !problem.is_uniform() {
            return Err(Error::Invalid(
                "partial participation requires uniform client weights".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.lr_scale.is_finite() && self.lr_scale >= 0.0) {
            return Err(Error::Invalid("gamma and lr_scale must be finite, lr_scale >= 0".into()));
        }
        if 1.0 + self.gamma <= 0.0 {
            return Err(Error::Invalid(format!("1 + gamma must be positive, got {}", 1.0 + self.gamma)));
        }
        Ok(())
    }

    /// Step-size preconditions of the rate bound that this config breaks.
    pub fn violated_preconditions(&self, problem: &ConvexProblem) -> Vec<String> {
        let mut out = Vec::new();
        let eta1 = self.eta(1);
        let cap = (1.0 / problem.strong_convexity()).min(1.0 / (4.0 * problem.smoothness()));
        if eta1 > cap * (1.0 + 1e-12) {
            out.push(format!("eta_1 = {eta1} exceeds min(1/mu, 1/(4L)) = {cap}"));
        }
        if self.local_steps as f64 > 1.0 + self.gamma {
            out.push(format!(
                "eta_t <= 2 eta_(t+E) fails: E = {} > 1 + gamma = {}",
                self.local_steps,
                1.0 + self.gamma
            ));
        }
        out
    }
}

/// What the observer sees at step `t`: iterates `c_t^k`, and the local
/// steps `v_(t+1)^k` before any synchronisation.
pub struct StepView<'a> {
    pub t: usize,
    pub eta: f64,
    pub iterates: &'a [Vec<f64>],
    pub local_steps: &'a [Vec<f64>],
    pub sync: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `gaps[t - 1] = F(c_bar_t) - F*` for `t = 1..=horizon`.
    pub gaps: Vec<f64>,
    pub initial_distance_sq: f64,
    /// Largest stochastic gradient norm seen, without margin.
    pub max_gradient_norm: f64,
    pub final_average: Vec<f64>,
}

fn weighted_average(problem: &ConvexProblem, xs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; problem.dim()];
    for (p, x) in problem.weights.iter().zip(xs) {
        for (o, v) in out.iter_mut().zip(x) {
            *o += p * v;
        }
    }
    out
}

fn sampled_average(problem: &ConvexProblem, xs: &[Vec<f64>], chosen: &[usize]) -> Vec<f64> {
    let scale = problem.num_clients() as f64 / chosen.len() as f64;
    let mut out = vec![0.0; problem.dim()];
    for &k in chosen {
        let w = problem.weights[k] * scale;
        for (o, v) in out.iter_mut().zip(&xs[k]) {
            *o += w * v;
        }
    }
    out
}

pub fn run_local_sgd_avg(problem: &ConvexProblem, cfg: &RateConfig, seed: u64) -> Result<Trajectory> {
    run_observed(problem, cfg, seed, |_| {})
}

/// [`run_local_sgd_avg`] with a callback invoked once per step.
pub fn run_observed(
    problem: &ConvexProblem,
    cfg: &RateConfig,
    seed: u64,
    mut observe: impl FnMut(&StepView<'_>),
) -> Result<Trajectory> {
    cfg.validate(problem)?;
    let n = problem.num_clients();
    let d = problem.dim();
    let mut r = rng::stream(seed, &[tag::CONVERGENCE, 1]);
    let mut iterates = vec![problem.start(); n];
    let mut local = vec![vec![0.0; d]; n];
    let mut grad = vec![0.0; d];
    let mut gaps = Vec::with_capacity(cfg.horizon);
    let mut max_norm: f64 = 0.0;
    let start = weighted_average(problem, &iterates);
    let initial_distance_sq = problem.distance_sq(&start);
    gaps.push(problem.gap(&start));

    for t in 1..cfg.horizon {
        let eta = cfg.eta(t);
        for k in 0..n {
            problem.client_gradient(k, &iterates[k], &mut grad);
            if problem.sigma > 0.0 {
                for g in grad.iter_mut() {
                    *g += problem.sigma * r.sample::<f64, _>(StandardNormal);
                }
            }
            max_norm = max_norm.max(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
            for j in 0..d {
                local[k][j] = iterates[k][j] - eta * grad[j];
            }
        }
        let sync = cfg.is_sync(t);
        observe(&StepView {
            t,
            eta,
            iterates: &iterates,
            local_steps: &local,
            sync,
        });
        if sync {
            let avg = if cfg.participants == n {
                weighted_average(problem, &local)
            } else {
                let mut chosen = index::sample(&mut r, n, cfg.participants).into_vec();
                chosen.sort_unstable();
                sampled_average(problem, &local, &chosen)
            };
            for it in iterates.iter_mut() {
                it.copy_from_slice(&avg);
            }
        } else {
            std::mem::swap(&mut iterates, &mut local);
        }
        let gap = problem.gap(&weighted_average(problem, &iterates));
        if !(gap <= DIVERGENCE_GAP) {
            let broken = cfg.violated_preconditions(problem);
            return Err(Error::Divergence {
                step: t + 1,
                gap,
                precondition: if broken.is_empty() {
                    "none of the step-size preconditions is violated".into()
                } else {
                    broken.join("; ")
                },
            });
        }
        gaps.push(gap);
    }

    Ok(Trajectory {
        gaps,
        initial_distance_sq,
        max_gradient_norm: max_norm,
        final_average: weighted_average(problem, &iterates),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `sum_k p_k^2 sigma_k^2 + 6 L Gamma + 8 (E-1)^2 G^2`
    pub b: f64,
    /// `((N-K)/(N-1)) (4/K) E^2 G^2`
    pub c: f64,
    pub g: f64,
    pub heterogeneity_gap: f64,
    pub noise_term: f64,
}

impl BoundConstants {
    pub fn compute(problem: &ConvexProblem, cfg: &RateConfig, g: f64) -> Self {
        let e = cfg.local_steps as f64;
        let n = problem.num_clients();
        let k = cfg.participants;
        let noise_term: f64 = problem
            .weights
            .iter()
            .map(|p| p * p * problem.noise_variance())
            .sum();
        let gamma = problem.heterogeneity_gap();
        let b = noise_term + 6.0 * problem.smoothness() * gamma + 8.0 * (e - 1.0).powi(2) * g * g;
        let c = if k >= n {
            0.0
        } else {
            (n - k) as f64 / (n - 1) as f64 * (4.0 / k as f64) * e * e * g * g
        };
        BoundConstants {
            b,
            c,
            g,
            heterogeneity_gap: gamma,
            noise_term,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    pub l: f64,
    pub mu: f64,
    pub gamma: f64,
    pub b: f64,
    pub c: f64,
    pub initial_distance_sq: f64,
}

impl TheoremBound {
    /// `(2L / ((t + gamma) mu)) ((B + C)/mu + 2L |c_bar_1 - c*|^2)`
    pub fn at(&self, t: usize) -> f64 {
        2.0 * self.l / ((t as f64 + self.gamma) * self.mu)
            * ((self.b + self.c) / self.mu + 2.0 * self.l * self.initial_distance_sq)
    }
}

pub fn theorem_bound(
    problem: &ConvexProblem,
    cfg: &RateConfig,
    constants: &BoundConstants,
    initial_distance_sq: f64,
) -> TheoremBound {
    TheoremBound {
        l: problem.smoothness(),
        mu: problem.strong_convexity(),
        gamma: cfg.gamma,
        b: constants.b,
        c: constants.c,
        initial_distance_sq,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    /// Some means exceed the bound, but not beyond their own noise.
    Inconclusive,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub runs: usize,
    pub mean_gap: Vec<f64>,
    pub std_error: Vec<f64>,
    pub bound: Vec<f64>,
    /// Steps where the mean gap exceeds the bound.
    pub violations: usize,
    /// Steps where it exceeds the bound by more than three standard errors.
    pub significant_violations: usize,
    pub high_variance: bool,
    pub slope: f64,
    pub g_emp: f64,
    pub gamma: f64,
    pub constants: BoundConstants,
    pub verdict: Verdict,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Averages `runs` seeded trajectories, evaluates the bound with
/// `G = 1.1 * (largest gradient norm over all runs)` and fits the decay
/// exponent over `t in [T/10, T]`.
pub fn certify_rate(problem: &ConvexProblem, cfg: &RateConfig, runs: usize, seed: u64) -> Result<CertificationReport> {
    if runs == 0 {
        return Err(Error::Invalid("certification needs at least one run".into()));
    }
    cfg.validate(problem)?;
    let trajectories: Vec<Trajectory> = (0..runs)
        .into_par_iter()
        .map(|i| run_local_sgd_avg(problem, cfg, rng::derive_seed(seed, &[tag::CONVERGENCE, 2, i as u64])))
        .collect::<Result<_>>()?;

    let horizon = cfg.horizon;
    let r = runs as f64;
    let mut mean_gap = vec![0.0; horizon];
    for tr in &trajectories {
        for (m, g) in mean_gap.iter_mut().zip(&tr.gaps) {
            *m += g / r;
        }
    }
    let std_error: Vec<f64> = (0..horizon)
        .map(|i| {
            if runs < 2 {
                return f64::INFINITY;
            }
            let var = trajectories
                .iter()
                .map(|tr| (tr.gaps[i] - mean_gap[i]).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            (var / r).sqrt()
        })
        .collect();

    let g_emp = G_MARGIN
        * trajectories
            .iter()
            .map(|t| t.max_gradient_norm)
            .fold(0.0, f64::max);
    let constants = BoundConstants::compute(problem, cfg, g_emp);
    let tb = theorem_bound(problem, cfg, &constants, trajectories[0].initial_distance_sq);
    let bound: Vec<f64> = (1..=horizon).map(|t| tb.at(t)).collect();

    let mut violations = 0;
    let mut significant = 0;
    for i in 0..horizon {
        if mean_gap[i] > bound[i] {
            violations += 1;
            if mean_gap[i] - 3.0 * std_error[i] > bound[i] {
                significant += 1;
            }
        }
    }
    let high_variance = (0..horizon).any(|i| std_error[i] > 0.25 * mean_gap[i] && mean_gap[i] > 0.0);

    let first = (horizon / 10).max(1);
    let xs: Vec<f64> = (first..=horizon).map(|t| t as f64 + cfg.gamma).collect();
    let slope = loglog_slope(&xs, &mean_gap[first - 1..]);

    let verdict = if violations == 0 {
        Verdict::Certified
    } else if significant == 0 || high_variance {
        Verdict::Inconclusive
    } else {
        Verdict::Violated
    };
    Ok(CertificationReport {
        runs,
        mean_gap,
        std_error,
        bound,
        violations,
        significant_violations: significant,
        high_variance,
        slope,
        g_emp,
        gamma: cfg.gamma,
        constants,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Lemma quantities
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub checked: usize,
    pub failures: usize,
    /// Largest measured / allowed ratio (error-norm z-score for unbiasedness).
    pub worst: f64,
}

impl LemmaCheck {
    pub fn holds(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub g_emp: f64,
    /// Client drift `sum_k p_k |c_bar_t - c_t^k|^2` against `4 eta_t^2 (E-1)^2 G^2`.
    pub divergence: LemmaCheck,
    /// Mean of the sampled aggregate against the full average.
    pub unbiased: LemmaCheck,
    /// Sampling variance against `((N-K)/(N-1)) (4/K) eta_t^2 E^2 G^2`.
    pub sampling_variance: LemmaCheck,
}

/// Resampling check of the sampled aggregate at a set of `local_steps`.
/// Returns (norm of the mean error in units of its standard error, mean of
/// `|avg_S - v_bar|^2`, its standard error).
fn resample(
    problem: &ConvexProblem,
    local: &[Vec<f64>],
    k: usize,
    resamples: usize,
    r: &mut rng::Stream,
) -> (f64, f64, f64) {
    let n = problem.num_clients();
    let d = problem.dim();
    let full = weighted_average(problem, local);
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut dev = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut chosen = index::sample(r, n, k).into_vec();
        chosen.sort_unstable();
        let avg = sampled_average(problem, local, &chosen);
        let mut sq = 0.0;
        for j in 0..d {
            sum[j] += avg[j];
            sum_sq[j] += avg[j] * avg[j];
            sq += (avg[j] - full[j]).powi(2);
        }
        dev.push(sq);
    }
    let m = resamples as f64;
    let mut err_sq = 0.0;
    let mut se_sq = 0.0;
    for j in 0..d {
        let mean = sum[j] / m;
        let var = (sum_sq[j] / m - mean * mean).max(0.0) * m / (m - 1.0);
        se_sq += var / m;
        err_sq += (mean - full[j]).powi(2);
    }
    let z = if se_sq > 0.0 {
        (err_sq / se_sq).sqrt()
    } else if err_sq <= 1e-24 {
        0.0
    } else {
        f64::INFINITY
    };
    let dev_mean = dev.iter().sum::<f64>() / m;
    let dev_var = dev.iter().map(|x| (x - dev_mean).powi(2)).sum::<f64>() / (m - 1.0);
    (z, dev_mean, (dev_var / m).sqrt())
}

/// Runs one trajectory, then checks the drift bound at every step and the
/// sampling lemmas at `checkpoints` evenly spaced synchronisation steps with
/// `resamples` draws each.
pub fn lemma_checks(
    problem: &ConvexProblem,
    cfg: &RateConfig,
    seed: u64,
    resamples: usize,
    checkpoints: usize,
) -> Result<LemmaReport> {
    if resamples < 2 {
        return Err(Error::Invalid("need at least two resamples".into()));
    }
    let syncs: Vec<usize> = (1..cfg.horizon).filter(|&t| cfg.is_sync(t)).collect();
    let picks: Vec<usize> = if syncs.is_empty() || checkpoints == 0 {
        Vec::new()
    } else {
        let m = checkpoints.min(syncs.len());
        (0..m)
            .map(|i| syncs[i * (syncs.len() - 1) / (m - 1).max(1)])
            .collect()
    };

    let mut drift = Vec::with_capacity(cfg.horizon);
    let mut kept: Vec<(usize, f64, Vec<Vec<f64>>)> = Vec::new();
    let tr = run_observed(problem, cfg, seed, |v| {
        let avg = weighted_average(problem, v.iterates);
        let spread: f64 = problem
            .weights
            .iter()
            .zip(v.iterates)
            .map(|(p, c)| p * problem.distance_sq_between(&avg, c))
            .sum();
        drift.push((v.eta, spread));
        if v.sync && picks.binary_search(&v.t).is_ok() {
            kept.push((v.t, v.eta, v.local_steps.to_vec()));
        }
    })?;
    let g = G_MARGIN * tr.max_gradient_norm;
    let e = cfg.local_steps as f64;

    let mut divergence = LemmaCheck {
        checked: 0,
        failures: 0,
        worst: 0.0,
    };
    for &(eta, spread) in &drift {
        let allowed = 4.0 * eta * eta * (e - 1.0).powi(2) * g * g;
        divergence.checked += 1;
        let ratio = if allowed > 0.0 {
            spread / allowed
        } else if spread <= 1e-24 {
            0.0
        } else {
            f64::INFINITY
        };
        divergence.worst = divergence.worst.max(ratio);
        if spread > allowed * (1.0 + 1e-9) + 1e-24 {
            divergence.failures += 1;
        }
    }

    let n = problem.num_clients();
    let k = cfg.participants;
    let mut unbiased = LemmaCheck {
        checked: 0,
        failures: 0,
        worst: 0.0,
    };
    let mut variance = unbiased;
    for (t, eta, local) in &kept {
        let mut r = rng::stream(seed, &[tag::CONVERGENCE, 3, *t as u64]);
        let (z, dev_mean, dev_se) = resample(problem, local, k, resamples, &mut r);
        unbiased.checked += 1;
        unbiased.worst = unbiased.worst.max(z);
        if z > 3.0 {
            unbiased.failures += 1;
        }
        let allowed = if k >= n {
            0.0
        } else {
            (n - k) as f64 / (n - 1) as f64 * (4.0 / k as f64) * eta * eta * e * e * g * g
        };
        variance.checked += 1;
        if allowed > 0.0 {
            variance.worst = variance.worst.max(dev_mean / allowed);
        }
        if dev_mean - 3.0 * dev_se > allowed + 1e-24 {
            variance.failures += 1;
        }
    }

    Ok(LemmaReport {
        g_emp: g,
        divergence,
        unbiased,
        sampling_variance: variance,
    })
}

impl ConvexProblem {
    fn distance_sq_between(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> ConvexProblem {
        ConvexProblem::new(
            vec![vec![0.0], vec![2.0]],
            vec![vec![1.0], vec![1.0]],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn two_point_closed_form() {
        let p = two_point();
        assert_eq!(p.optimum(), &[1.0]);
        assert_eq!(p.optimal_value(), 0.5);
        assert_eq!(p.heterogeneity_gap(), 0.5);
    }

    #[test]
    fn two_point_bound_is_ten_over_t_plus_seven() {
        let p = two_point();
        let cfg = RateConfig::theorem(&p, 1, 2, 100);
        assert_eq!(cfg.gamma, 7.0);
        let k = BoundConstants::compute(&p, &cfg, 123.0);
        assert_eq!(k.b, 3.0);
        assert_eq!(k.c, 0.0);
        let tb = theorem_bound(&p, &cfg, &k, 1.0);
        for t in [1usize, 2, 10, 1000] {
            assert!((tb.at(t) - 10.0 / (t as f64 + 7.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneous_problem_has_zero_gap_constant() {
        let p = make_problem(&ProblemSpec {
            heterogeneity: 0.0,
            sigma: 0.0,
            ..ProblemSpec::default()
        })
        .unwrap();
        assert_eq!(p.heterogeneity_gap(), 0.0);
        let cfg = RateConfig::theorem(&p, 1, 10, 10);
        assert_eq!(BoundConstants::compute(&p, &cfg, 5.0).b, 0.0);
    }

    #[test]
    fn make_problem_attains_its_constants() {
        let p = make_problem(&ProblemSpec::default()).unwrap();
        assert_eq!(p.smoothness(), 4.0);
        assert_eq!(p.strong_convexity(), 1.0);
        assert!(p.is_uniform());
    }

    #[test]
    fn scalar_contraction_matches_hand_recursion() {
        let p = ConvexProblem::new(vec![vec![3.0]], vec![vec![2.0]], vec![0.0], vec![1.0], 0.0).unwrap();
        let cfg = RateConfig::theorem(&p, 1, 1, 50);
        let tr = run_local_sgd_avg(&p, &cfg, 0).unwrap();
        let mut c = 0.0f64;
        for t in 1..=50 {
            let gap = (c - 3.0) * (c - 3.0);
            assert!((tr.gaps[t - 1] - gap).abs() <= 1e-12 * gap.max(1.0));
            c -= cfg.eta(t) * 2.0 * (c - 3.0);
        }
    }

    #[test]
    fn zero_step_size_freezes_the_average() {
        let p = make_problem(&ProblemSpec::default()).unwrap();
        let cfg = RateConfig {
            lr_scale: 0.0,
            ..RateConfig::theorem(&p, 3, 5, 30)
        };
        let tr = run_local_sgd_avg(&p, &cfg, 1).unwrap();
        assert!(tr.gaps.iter().all(|&g| g == tr.gaps[0]));
    }

    #[test]
    fn noiseless_homogeneous_gap_decreases() {
        let p = make_problem(&ProblemSpec {
            heterogeneity: 0.0,
            sigma: 0.0,
            ..ProblemSpec::default()
        })
        .unwrap();
        // identical minimisers at the origin would start at the optimum
        let shifted = ConvexProblem::new(
            vec![vec![1.0; 20]; 10],
            p.curvature.clone(),
            vec![0.0; 10],
            vec![0.1; 10],
            0.0,
        )
        .unwrap();
        let tr = run_local_sgd_avg(&shifted, &RateConfig::theorem(&shifted, 1, 10, 200), 0).unwrap();
        assert!(tr.gaps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn large_steps_diverge_with_a_named_precondition() {
        let p = make_problem(&ProblemSpec::default()).unwrap();
        let cfg = RateConfig {
            lr_scale: 100.0,
            gamma: 0.0,
            ..RateConfig::theorem(&p, 1, 10, 500)
        };
        match run_local_sgd_avg(&p, &cfg, 0) {
            Err(Error::Divergence { precondition, .. }) => assert!(precondition.contains("eta_1")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn full_participation_has_no_sampling_term() {
        let p = make_problem(&ProblemSpec::default()).unwrap();
        let cfg = RateConfig::theorem(&p, 5, 10, 10);
        assert_eq!(BoundConstants::compute(&p, &cfg, 3.0).c, 0.0);
        let partial = RateConfig::theorem(&p, 5, 5, 10);
        assert!(BoundConstants::compute(&p, &partial, 3.0).c > 0.0);
    }

    #[test]
    fn non_uniform_weights_need_full_participation() {
        let p = ConvexProblem::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]],
            vec![0.0, 0.0],
            vec![0.25, 0.75],
            0.0,
        )
        .unwrap();
        assert!(RateConfig::theorem(&p, 1, 1, 10).validate(&p).is_err());
        assert!(RateConfig::theorem(&p, 1, 2, 10).validate(&p).is_ok());
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = (1..100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        assert!((loglog_slope(&xs, &ys) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_sample_with_big_noise_is_not_a_violation() {
        let p = make_problem(&ProblemSpec {
            sigma: 50.0,
            ..ProblemSpec::default()
        })
        .unwrap();
        let cfg = RateConfig::theorem(&p, 5, 5, 200);
        let rep = certify_rate(&p, &cfg, 1, 0).unwrap();
        assert_ne!(rep.verdict, Verdict::Violated);
        assert!(rep.high_variance);
    }
}
