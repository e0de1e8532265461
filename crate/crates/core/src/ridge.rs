//! Ridge and minimum-norm least squares for the noisy linear model, their
//! in- and out-of-sample risks, closed-form risk predictions in the classical
//! and proportional regimes, and Monte Carlo double-descent sweeps.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::det_equiv::{mp_stieltjes, mp_stieltjes_derivative};
use crate::error::{invalid, mismatch, Error, Result};
use crate::randgen::{gaussian_matrix, linear_targets, trial_seed, DataMatrix, GroundTruth};
use crate::results::{mean_stderr, ResultRow, STATUS_OK};

/// Which of the equivalent closed forms produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// `(AAᵀ/n + γI_p)^{-1} Ay/n`.
    Primal,
    /// `A(AᵀA/n + γI_n)^{-1} y/n`.
    Dual,
    /// Minimum-norm least squares through the pseudoinverse.
    Pseudoinverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub beta: DVector<f64>,
    pub gamma: f64,
    pub solved_via: Route,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPair {
    pub r_in: f64,
    pub r_out: f64,
}

/// A design matrix `A` (p × n, samples as columns) with the Gram matrix of its
/// smaller side, reusable across several regularization strengths.
pub(crate) struct Design<'a> {
    a: &'a DMatrix<f64>,
    /// `AAᵀ/n` if `p ≤ n`, else `AᵀA/n`.
    gram: DMatrix<f64>,
    primal: bool,
}

impl<'a> Design<'a> {
    pub(crate) fn new(a: &'a DMatrix<f64>) -> Self {
        let (p, n) = a.shape();
        let nf = n as f64;
        let primal = p <= n;
        let gram = if primal { a * a.transpose() / nf } else { a.tr_mul(a) / nf };
        Self { a, gram, primal }
    }

    fn n(&self) -> f64 {
        self.a.ncols() as f64
    }

    fn factor(&self, gamma: f64) -> Result<Cholesky<f64, Dyn>> {
        let k = self.gram.nrows();
        Cholesky::new(&self.gram + DMatrix::identity(k, k) * gamma)
            .ok_or_else(|| Error::Singularity(format!("ridge system not positive definite at γ = {gamma}")))
    }

    /// Ridge solution through the smaller of the two systems, or through
    /// `route` when one is forced.
    pub(crate) fn solve(&self, y: &DVector<f64>, gamma: f64, route: Option<Route>) -> Result<RidgeSolution> {
        if gamma == 0.0 {
            return Ok(RidgeSolution { beta: min_norm_solution(self.a, y), gamma, solved_via: Route::Pseudoinverse });
        }
        let n = self.n();
        let route = route.unwrap_or(if self.primal { Route::Primal } else { Route::Dual });
        let beta = match route {
            Route::Primal => {
                let (p, _) = self.a.shape();
                let gram = if self.primal { self.gram.clone() } else { self.a * self.a.transpose() / n };
                let chol = Cholesky::new(gram + DMatrix::identity(p, p) * gamma)
                    .ok_or_else(|| Error::Singularity("primal ridge system not positive definite".into()))?;
                chol.solve(&(self.a * y / n))
            }
            Route::Dual => {
                let m = self.a.ncols();
                let gram = if self.primal { self.a.tr_mul(self.a) / n } else { self.gram.clone() };
                let chol = Cholesky::new(gram + DMatrix::identity(m, m) * gamma)
                    .ok_or_else(|| Error::Singularity("dual ridge system not positive definite".into()))?;
                self.a * chol.solve(&(y / n))
            }
            Route::Pseudoinverse => min_norm_solution(self.a, y),
        };
        Ok(RidgeSolution { beta, gamma, solved_via: route })
    }

    /// In-sample risk conditioned on the design, noise averaged analytically:
    /// `(1/n)‖Aᵀγ(Ĉ+γ)^{-1}β*‖² + (σ²/n) Σ (λᵢ/(λᵢ+γ))²`.
    pub(crate) fn conditional_in_sample(&self, truth: &GroundTruth, gamma: f64, eigs: &[f64]) -> Result<f64> {
        let n = self.n();
        if gamma == 0.0 {
            // The fit reproduces every signal direction in the column space of Aᵀ.
            return Ok(truth.sigma2 * rank(self.a) as f64 / n);
        }
        let chol = self.factor(gamma)?;
        let residual = if self.primal {
            self.a.tr_mul(&(chol.solve(&truth.beta_star) * gamma))
        } else {
            chol.solve(&self.a.tr_mul(&truth.beta_star)) * gamma
        };
        let bias = residual.norm_squared() / n;
        let noise: f64 = eigs.iter().map(|&l| (l.max(0.0) / (l.max(0.0) + gamma)).powi(2)).sum();
        Ok(bias + truth.sigma2 * noise / n)
    }

    pub(crate) fn gram_eigenvalues(&self) -> Vec<f64> {
        self.gram.symmetric_eigenvalues().iter().copied().collect()
    }
}

fn svd_cutoff(a: &DMatrix<f64>, s: &DVector<f64>) -> f64 {
    let (p, n) = a.shape();
    p.max(n) as f64 * f64::EPSILON * s.max()
}

fn rank(a: &DMatrix<f64>) -> usize {
    let s = a.singular_values();
    let cut = svd_cutoff(a, &s);
    s.iter().filter(|&&v| v > cut).count()
}

/// `β = (Aᵀ)⁺y`, singular values below `max(p,n)·ε·σ_max` treated as zero.
fn min_norm_solution(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let cut = svd_cutoff(a, &svd.singular_values);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    // Aᵀ = V Σ Uᵀ, so (Aᵀ)⁺ = U Σ⁺ Vᵀ.
    let mut coords = vt * y;
    for (c, &s) in coords.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cut { *c / s } else { 0.0 };
    }
    u * coords
}

fn check_fit_inputs(x: &DataMatrix, y: &DVector<f64>, gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma must be finite and nonnegative"));
    }
    if y.len() != x.n() {
        return Err(mismatch(format!("{} targets for {} samples", y.len(), x.n())));
    }
    Ok(())
}

/// Ridge regression of `y` on the columns of `X`; `γ = 0` gives the
/// minimum-norm least-squares solution.
pub fn ridge_fit(x: &DataMatrix, y: &DVector<f64>, gamma: f64) -> Result<RidgeSolution> {
    check_fit_inputs(x, y, gamma)?;
    Design::new(&x.entries).solve(y, gamma, None)
}

/// As [`ridge_fit`] with the closed form chosen by the caller.
pub fn ridge_fit_via(x: &DataMatrix, y: &DVector<f64>, gamma: f64, route: Route) -> Result<RidgeSolution> {
    check_fit_inputs(x, y, gamma)?;
    if gamma == 0.0 && route != Route::Pseudoinverse {
        return Err(invalid("γ = 0 requires the pseudoinverse route"));
    }
    Design::new(&x.entries).solve(y, gamma, Some(route))
}

/// How the in-sample risk is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InSampleMode {
    /// Conditional on `X`, with the noise averaged in closed form.
    Conditional,
    /// `(1/n)‖Xᵀβ − Xᵀβ*‖²` on the fitted solution.
    Realized,
}

/// In-sample and out-of-sample risks of a fitted solution.
///
/// Without a test set the out-of-sample risk is `‖β − β*‖²`, the exact
/// conditional risk for isotropic inputs.
pub fn empirical_risks(
    solution: &RidgeSolution,
    truth: &GroundTruth,
    x: &DataMatrix,
    test: Option<(&DataMatrix, &DVector<f64>)>,
    mode: InSampleMode,
) -> Result<RiskPair> {
    let p = x.p();
    if solution.beta.len() != p || truth.beta_star.len() != p {
        return Err(mismatch("solution, truth and data dimensions differ"));
    }
    let err = &solution.beta - &truth.beta_star;
    let r_in = match mode {
        InSampleMode::Conditional => {
            let design = Design::new(&x.entries);
            let eigs = design.gram_eigenvalues();
            design.conditional_in_sample(truth, solution.gamma, &eigs)?
        }
        InSampleMode::Realized => x.entries.tr_mul(&err).norm_squared() / x.n() as f64,
    };
    let r_out = match test {
        None => err.norm_squared(),
        Some((xt, _)) => {
            if xt.p() != p {
                return Err(mismatch("test dimension differs from training dimension"));
            }
            xt.entries.tr_mul(&err).norm_squared() / xt.n() as f64
        }
    };
    Ok(RiskPair { r_in, r_out })
}

/// Asymptotic regime of [`risk_theory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `p` fixed while `n → ∞`.
    Classical,
    /// `p/n → c ∈ (0, ∞)`.
    Proportional,
}

/// Limiting ridge risks for isotropic Gaussian data, `c = p/n`.
///
/// The proportional forms use `m = m(−γ)` and its z-derivative `m′`:
/// `R_out = γ²‖β*‖²m′ + σ²c(m − γm′)` and
/// `R_in = γ²‖β*‖²(m − γm′) + σ²c(1 − 2γm + γ²m′)`.
pub fn risk_theory(gamma: f64, c: f64, beta_norm2: f64, sigma2: f64, regime: Regime) -> Result<RiskPair> {
    if !(gamma >= 0.0) || !(c > 0.0) {
        return Err(invalid("need γ ≥ 0 and c > 0"));
    }
    match regime {
        Regime::Classical => {
            let r = (gamma * gamma * beta_norm2 + c * sigma2) / (1.0 + gamma).powi(2);
            Ok(RiskPair { r_in: r, r_out: r })
        }
        Regime::Proportional if gamma == 0.0 => ridgeless_limits(c, beta_norm2, sigma2),
        Regime::Proportional => {
            let m = mp_stieltjes(c, Complex64::new(-gamma, 0.0))?.re;
            let dm = mp_stieltjes_derivative(c, gamma)?;
            let g2 = gamma * gamma;
            Ok(RiskPair {
                r_in: g2 * beta_norm2 * (m - gamma * dm) + sigma2 * c * (1.0 - 2.0 * gamma * m + g2 * dm),
                r_out: g2 * beta_norm2 * dm + sigma2 * c * (m - gamma * dm),
            })
        }
    }
}

/// `γ → 0` limits of the proportional risks.
///
/// Over-parameterized (`c > 1`) fits interpolate, so the in-sample risk
/// against the noiseless signal tends to `σ²`.
pub fn ridgeless_limits(c: f64, beta_norm2: f64, sigma2: f64) -> Result<RiskPair> {
    if !(c > 0.0) {
        return Err(invalid("c must be positive"));
    }
    if c == 1.0 {
        return Err(Error::Singularity("ridgeless risk diverges at p = n".into()));
    }
    Ok(if c < 1.0 {
        RiskPair { r_in: sigma2 * c, r_out: sigma2 * c / (1.0 - c) }
    } else {
        RiskPair { r_in: sigma2, r_out: beta_norm2 * (1.0 - 1.0 / c) + sigma2 / (c - 1.0) }
    })
}

/// Parameters of a double-descent sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Sample-to-dimension ratios `n/p`.
    pub ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub p: usize,
    pub sigma2: f64,
    pub beta_norm2: f64,
    pub seed: u64,
    /// Estimate the in-sample risk on the realized noise instead of conditionally.
    pub realized_in_sample: bool,
    /// Estimate the out-of-sample risk on a fresh test set of this size.
    pub test_size: Option<usize>,
}

/// Ratios within this distance of `p = n` are flagged in the output.
pub const NEAR_PEAK: f64 = 0.02;

/// Monte Carlo ridge fits against the proportional theory, one row per
/// (γ, ratio, metric), sorted by γ then ratio.
///
/// Trial `t` uses seed `seed + t` at every sweep point, so all points share
/// common random numbers and results do not depend on scheduling.
pub fn sweep_double_descent(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    if spec.trials == 0 || spec.p == 0 {
        return Err(invalid("need at least one trial and p ≥ 1"));
    }
    if spec.ratios.iter().chain(&spec.gammas).any(|v| !v.is_finite()) || spec.ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(invalid("ratios must be positive and gammas finite"));
    }
    if spec.gammas.iter().any(|&g| g < 0.0) {
        return Err(invalid("gammas must be nonnegative"));
    }
    let mut ratios = spec.ratios.clone();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let mut gammas = spec.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();

    let truth = GroundTruth::random_direction(spec.p, spec.beta_norm2, spec.sigma2, spec.seed)?;
    let per_ratio: Vec<Vec<Vec<Result<RiskPair>>>> = ratios
        .iter()
        .map(|&ratio| {
            let n = ((ratio * spec.p as f64).round() as usize).max(1);
            (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(spec, &truth, &gammas, n, trial_seed(spec.seed, t as u64)))
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (gi, &gamma) in gammas.iter().enumerate() {
        for (ri, &ratio) in ratios.iter().enumerate() {
            let n = ((ratio * spec.p as f64).round() as usize).max(1);
            let c = spec.p as f64 / n as f64;
            let outcomes: Vec<&Result<RiskPair>> = per_ratio[ri].iter().map(|t| &t[gi]).collect();
            let ok: Vec<RiskPair> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failed = outcomes.len() - ok.len();
            let theory = risk_theory(gamma, c, spec.beta_norm2, spec.sigma2, Regime::Proportional);

            let mut status = Vec::new();
            if (c - 1.0).abs() < NEAR_PEAK {
                status.push("near_peak".to_string());
            }
            if let Err(e) = &theory {
                status.push(format!("theory_missing: {e}"));
            }
            if failed > 0 {
                let first = outcomes.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
                status.push(format!("failed_trials={failed}: {first}"));
            }
            let status = if status.is_empty() { STATUS_OK.to_string() } else { status.join("; ") };
            let theory = theory.ok();
            for (metric, pick) in [("r_in", 0usize), ("r_out", 1)] {
                let values: Vec<f64> = ok.iter().map(|r| if pick == 0 { r.r_in } else { r.r_out }).collect();
                let (mean, se) = mean_stderr(&values);
                rows.push(ResultRow {
                    ratio,
                    gamma,
                    metric: metric.to_string(),
                    empirical_mean: (!values.is_empty()).then_some(mean),
                    empirical_stderr: (values.len() > 1).then_some(se),
                    theory: theory.map(|t| if pick == 0 { t.r_in } else { t.r_out }),
                    trials: values.len(),
                    status: status.clone(),
                });
            }
        }
    }
    Ok(rows)
}

fn run_trial(spec: &SweepSpec, truth: &GroundTruth, gammas: &[f64], n: usize, seed: u64) -> Vec<Result<RiskPair>> {
    let setup = || -> Result<_> {
        let x = gaussian_matrix(spec.p, n, 1.0, seed)?;
        let y = linear_targets(&x, truth, seed)?;
        let test = match spec.test_size {
            Some(m) => Some(gaussian_matrix(spec.p, m, 1.0, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?),
            None => None,
        };
        Ok((x, y, test))
    };
    let (x, y, test) = match setup() {
        Ok(v) => v,
        Err(e) => return gammas.iter().map(|_| Err(Error::InvalidArgument(e.to_string()))).collect(),
    };
    let design = Design::new(&x.entries);
    let eigs = design.gram_eigenvalues();
    gammas
        .iter()
        .map(|&gamma| {
            let sol = design.solve(&y, gamma, None)?;
            let err = &sol.beta - &truth.beta_star;
            let r_in = if spec.realized_in_sample {
                x.entries.tr_mul(&err).norm_squared() / n as f64
            } else {
                design.conditional_in_sample(truth, gamma, &eigs)?
            };
            let r_out = match &test {
                Some(xt) => xt.entries.tr_mul(&err).norm_squared() / xt.n() as f64,
                None => err.norm_squared(),
            };
            if !(r_in.is_finite() && r_out.is_finite()) {
                return Err(Error::Singularity(format!("non-finite risk at γ = {gamma}")));
            }
            Ok(RiskPair { r_in, r_out })
        })
        .collect()
}
