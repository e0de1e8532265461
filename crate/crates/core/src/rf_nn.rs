//! Random-feature regression `y ≈ φ(WX)ᵀβ`: features, ridge fit, MSEs,
//! expected kernels, the nonlinear deterministic equivalent and its
//! train/test MSE predictions, and the ridgeless `θ` fixed point with its
//! eigendecay scaling laws.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::activation::{ActivationKind, ActivationSpec};
use crate::det_equiv::fixed_point;
use crate::error::{invalid, mismatch, Error, Result};
use crate::randgen::{normal_matrix, sphere_dataset, stream_rng, trial_seed, DataMatrix, GroundTruth, STREAM_WEIGHTS};
use crate::results::{mean_stderr, ResultRow, STATUS_OK};
use crate::ridge::{Design, Route};
use crate::spectral::{check_symmetric, eigh, eigvalsh, SpectralDecomposition};

/// Entrywise `φ(WX)`, a `d × n` feature matrix.
pub fn rf_features(w: &DMatrix<f64>, x: &DataMatrix, act: &ActivationSpec) -> Result<DMatrix<f64>> {
    if w.ncols() != x.p() {
        return Err(mismatch(format!("W has {} columns but data dimension is {}", w.ncols(), x.p())));
    }
    Ok((w * &x.entries).map(|v| act.eval(v)))
}

fn check_rf(features: &DMatrix<f64>, y: &DVector<f64>, gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("random-feature ridge needs γ > 0"));
    }
    if features.ncols() != y.len() {
        return Err(mismatch(format!("{} targets for {} samples", y.len(), features.ncols())));
    }
    Ok(())
}

/// `β = (ΦΦᵀ/n + γI_d)^{-1}Φy/n` through the smaller linear system.
pub fn rf_fit(features: &DMatrix<f64>, y: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    check_rf(features, y, gamma)?;
    Ok(Design::new(features).solve(y, gamma, None)?.beta)
}

/// As [`rf_fit`] with the closed form chosen by the caller.
pub fn rf_fit_via(features: &DMatrix<f64>, y: &DVector<f64>, gamma: f64, route: Route) -> Result<DVector<f64>> {
    check_rf(features, y, gamma)?;
    Ok(Design::new(features).solve(y, gamma, Some(route))?.beta)
}

/// `(1/m)‖y − Φᵀβ‖²`.
pub fn rf_empirical_mse(beta: &DVector<f64>, features: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if beta.len() != features.nrows() || y.len() != features.ncols() {
        return Err(mismatch("β, features and targets disagree"));
    }
    Ok((y - features.tr_mul(beta)).norm_squared() / y.len() as f64)
}

/// How `E_w[φ(Xᵀw)φ(wᵀX′)]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    /// Average over `samples` standard Gaussian weight vectors.
    MonteCarlo { samples: usize, seed: u64 },
    /// Closed form; identity and ReLU only.
    Analytic,
}

impl KernelMethod {
    pub const DEFAULT_SAMPLES: usize = 100_000;
}

const MC_BATCH: usize = 512;
const MC_GROUPS: usize = 8;

/// Expected feature kernel `E_w[φ(Xᵀw)φ(wᵀX₂)]`, `w ~ N(0, I_p)`.
pub fn kernel_expectation(
    x: &DataMatrix,
    x2: &DataMatrix,
    act: &ActivationSpec,
    method: KernelMethod,
) -> Result<DMatrix<f64>> {
    if x.p() != x2.p() {
        return Err(mismatch("both data matrices need the same dimension"));
    }
    match method {
        KernelMethod::Analytic => match act.kind() {
            ActivationKind::Identity => Ok(x.entries.tr_mul(&x2.entries)),
            ActivationKind::Relu => Ok(relu_kernel(&x.entries, &x2.entries)),
            _ => Err(Error::Unsupported(format!("no closed-form kernel for `{}`", act.name()))),
        },
        KernelMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(invalid("Monte Carlo kernel needs at least one sample"));
            }
            Ok(monte_carlo_kernel(&x.entries, &x2.entries, act, samples, seed))
        }
    }
}

/// Degree-one arc-cosine kernel, `E[max(wᵀx,0)max(wᵀx′,0)]`.
fn relu_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let inner = a.tr_mul(b);
    let na: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        let scale = na[i] * nb[j];
        if scale == 0.0 {
            return 0.0;
        }
        let rho = (inner[(i, j)] / scale).clamp(-1.0, 1.0);
        scale / (2.0 * PI) * ((1.0 - rho * rho).sqrt() + (PI - rho.acos()) * rho)
    })
}

// Batches are summed within fixed contiguous groups, then groups in order, so
// the result does not depend on the thread count.
fn monte_carlo_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, act: &ActivationSpec, samples: usize, seed: u64) -> DMatrix<f64> {
    let batches = samples.div_ceil(MC_BATCH);
    let per_group = batches.div_ceil(MC_GROUPS);
    let same = std::ptr::eq(a, b);
    let partial: Vec<DMatrix<f64>> = (0..MC_GROUPS)
        .into_par_iter()
        .map(|g| {
            let mut acc = DMatrix::zeros(a.ncols(), b.ncols());
            for batch in (g * per_group)..((g + 1) * per_group).min(batches) {
                let size = MC_BATCH.min(samples - batch * MC_BATCH);
                let mut rng = stream_rng(trial_seed(seed, batch as u64), STREAM_WEIGHTS);
                let w = normal_matrix(&mut rng, size, a.nrows(), 1.0);
                let fa = (&w * a).map(|v| act.eval(v));
                if same {
                    acc += fa.tr_mul(&fa);
                } else {
                    let fb = (&w * b).map(|v| act.eval(v));
                    acc += fa.tr_mul(&fb);
                }
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(a.ncols(), b.ncols());
    for m in partial {
        total += m;
    }
    total / samples as f64
}

/// Train, cross and test blocks of the expected feature kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTriplet {
    pub k_train: DMatrix<f64>,
    pub k_cross: DMatrix<f64>,
    pub k_test: DMatrix<f64>,
}

/// Symmetry tolerance of kernel blocks (relative to the largest entry).
pub const KERNEL_SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue tolerated in a PSD block (relative to max(1, ‖K‖)).
pub const PSD_TOL: f64 = 1e-8;

pub(crate) fn check_psd(k: &DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    check_symmetric(k).map_err(|_| invalid(format!("{what} is not symmetric")))?;
    let eigs = eigvalsh(k)?;
    let scale = eigs.amax().max(1.0);
    if eigs[0] < -PSD_TOL * scale {
        return Err(invalid(format!("{what} is not positive semi-definite (eigenvalue {:e})", eigs[0])));
    }
    Ok(eigs)
}

impl KernelTriplet {
    pub fn new(k_train: DMatrix<f64>, k_cross: DMatrix<f64>, k_test: DMatrix<f64>) -> Result<Self> {
        if k_cross.nrows() != k_train.nrows() || k_cross.ncols() != k_test.nrows() {
            return Err(mismatch("cross block must be n × n′"));
        }
        check_psd(&k_train, "training kernel")?;
        check_psd(&k_test, "test kernel")?;
        Ok(Self { k_train, k_cross, k_test })
    }

    /// All three blocks from one kernel evaluation on `[X, X′]`, so Monte
    /// Carlo estimates share the same weight sample.
    pub fn compute(x: &DataMatrix, x_test: &DataMatrix, act: &ActivationSpec, method: KernelMethod) -> Result<Self> {
        if x.p() != x_test.p() {
            return Err(mismatch("train and test dimensions differ"));
        }
        let (n, m) = (x.n(), x_test.n());
        let mut joint = DMatrix::zeros(x.p(), n + m);
        joint.columns_mut(0, n).copy_from(&x.entries);
        joint.columns_mut(n, m).copy_from(&x_test.entries);
        let z = DataMatrix { entries: joint, meta: x.meta.clone() };
        let mut k = kernel_expectation(&z, &z, act, method)?;
        // Exact symmetry; the Monte Carlo sum is symmetric only up to rounding.
        k = (&k + k.transpose()) * 0.5;
        Self::new(
            k.view((0, 0), (n, n)).into_owned(),
            k.view((0, n), (n, m)).into_owned(),
            k.view((n, n), (m, m)).into_owned(),
        )
    }
}

/// Solution of the nonlinear deterministic-equivalent fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearDE {
    pub delta: f64,
    /// `(d/n)/(1+δ)`, so that `K̃ = k_tilde_scale · K`.
    pub k_tilde_scale: f64,
    /// `|F(δ) − δ| / max(1, δ)`.
    pub residual: f64,
    pub iterations: usize,
}

fn clean_spectrum(k_eigs: &[f64]) -> Result<Vec<f64>> {
    if k_eigs.is_empty() {
        return Err(invalid("empty kernel spectrum"));
    }
    let top = k_eigs.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) || k_eigs.iter().any(|v| !v.is_finite()) {
        return Err(invalid("kernel spectrum must be finite and not identically zero"));
    }
    if k_eigs.iter().any(|&v| v < -PSD_TOL * top.max(1.0)) {
        return Err(invalid("kernel spectrum has negative eigenvalues"));
    }
    Ok(k_eigs.iter().map(|&v| v.max(0.0)).collect())
}

/// `δ = (1/n) Σᵢ κᵢ/((d/n)κᵢ/(1+δ) + γ)`.
///
/// Iterates from the upper bound `(1/n)Σκᵢ/γ`, from which the sequence
/// decreases monotonically to the fixed point.
pub fn nonlinear_de_delta(k_eigs: &[f64], n: usize, d: usize, gamma: f64, tol: f64) -> Result<NonlinearDE> {
    if !(gamma > 0.0) || n == 0 || d == 0 {
        return Err(invalid("need γ > 0, n ≥ 1 and d ≥ 1"));
    }
    let kappa = clean_spectrum(k_eigs)?;
    let nf = n as f64;
    let ratio = d as f64 / nf;
    let map = |delta: Complex64| {
        let dl = delta.re;
        let v: f64 = kappa.iter().map(|&k| k / (ratio * k / (1.0 + dl) + gamma)).sum::<f64>() / nf;
        Complex64::new(v, 0.0)
    };
    let start = kappa.iter().sum::<f64>() / (nf * gamma);
    let (delta, residual, iterations) = match fixed_point(map, Complex64::new(start, 0.0), tol) {
        Ok((d, r, k)) => (d.re, r, k),
        Err(Error::Convergence { .. }) => {
            // Contraction factor near one (kernel rank close to d): the map is
            // increasing with F(0) > 0 and F(start) < start, so bisect.
            let g = |x: f64| map(Complex64::new(x, 0.0)).re - x;
            let (mut lo, mut hi) = (0.0, start);
            let mut steps = 0;
            while hi - lo > tol * hi.max(1.0) && steps < 4000 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 { lo = mid } else { hi = mid }
                steps += 1;
            }
            let d = 0.5 * (lo + hi);
            (d, g(d).abs() / d.max(1.0), crate::det_equiv::MAX_ITERATIONS + steps)
        }
        Err(e) => return Err(e),
    };
    Ok(NonlinearDE { delta, k_tilde_scale: ratio / (1.0 + delta), residual, iterations })
}

/// Predicted training and test MSE of random-feature ridge regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseTheory {
    pub e_train: f64,
    pub e_test: f64,
    pub de: NonlinearDE,
}

/// Deterministic-equivalent train/test MSEs for `d` random features at ridge `γ`.
pub fn nn_mse_theory(
    kernels: &KernelTriplet,
    y: &DVector<f64>,
    y_test: &DVector<f64>,
    n: usize,
    d: usize,
    gamma: f64,
    tol: f64,
) -> Result<MseTheory> {
    let dec = eigh(&kernels.k_train)?;
    nn_mse_theory_with(&dec, kernels, y, y_test, n, d, gamma, tol)
}

/// As [`nn_mse_theory`] with a precomputed decomposition of the training kernel.
#[allow(clippy::too_many_arguments)]
pub fn nn_mse_theory_with(
    dec: &SpectralDecomposition,
    kernels: &KernelTriplet,
    y: &DVector<f64>,
    y_test: &DVector<f64>,
    n: usize,
    d: usize,
    gamma: f64,
    tol: f64,
) -> Result<MseTheory> {
    let m = kernels.k_test.nrows();
    if kernels.k_train.nrows() != n || y.len() != n || y_test.len() != m || kernels.k_cross.shape() != (n, m) {
        return Err(mismatch("kernel blocks and targets disagree with n, n′"));
    }
    let de = nonlinear_de_delta(dec.eigenvalues.as_slice(), n, d, gamma, tol)?;
    let s = de.k_tilde_scale;
    let nf = n as f64;
    let lam: Vec<f64> = dec.eigenvalues.iter().map(|&l| s * l.max(0.0)).collect();

    // Spectral sums of Q̃ = (K̃ + γI)^{-1}.
    let tr_qkq: f64 = lam.iter().map(|&l| l / (l + gamma).powi(2)).sum();
    let tr_kqkq: f64 = lam.iter().map(|&l| (l / (l + gamma)).powi(2)).sum();
    let den = d as f64 - tr_kqkq;
    if !(den > 1e-12 * d as f64) {
        return Err(Error::NearPhaseTransition(format!(
            "d − tr(K̃Q̃K̃Q̃) = {den:e} at d = {d}, γ = {gamma}"
        )));
    }
    let yc = dec.eigenvectors.tr_mul(y);
    let y_q2 = yc.iter().zip(&lam).map(|(c, &l)| c * c / (l + gamma).powi(2)).sum::<f64>();
    let y_qkq = yc.iter().zip(&lam).map(|(c, &l)| c * c * l / (l + gamma).powi(2)).sum::<f64>();
    let e_train = gamma * gamma / nf * (tr_qkq / den * y_qkq + y_q2);

    // Test error: bias-like term from the cross kernel and a variance term.
    let mf = m as f64;
    let qy = dec.apply_to(|l| 1.0 / (s * l.max(0.0) + gamma), y);
    let pred = kernels.k_cross.tr_mul(&qy) * s;
    let fit = (y_test - pred).norm_squared() / mf;
    let b = dec.eigenvectors.tr_mul(&kernels.k_cross) * s;
    let mut tr_cross = 0.0;
    for (i, row) in b.row_iter().enumerate() {
        let q = 1.0 / (lam[i] + gamma);
        tr_cross += q * (1.0 + gamma * q) * row.norm_squared();
    }
    let tr_test = s * kernels.k_test.trace();
    let e_test = fit + y_qkq / den * (tr_test - tr_cross) / mf;
    Ok(MseTheory { e_train, e_test, de })
}

/// Ridgeless limit `θ = lim γδ(γ)`, solving
/// `d/n = (1/n) Σ κᵢ/(κᵢ + (n/d)θ)` by bisection.
pub fn theta_fixed_point(k_eigs: &[f64], d_over_n: f64, tol: f64) -> Result<f64> {
    if !(d_over_n > 0.0 && d_over_n < 1.0) {
        return Err(Error::Domain("θ is defined for 0 < d/n < 1".into()));
    }
    let kappa = clean_spectrum(k_eigs)?;
    if kappa.iter().any(|&k| k <= 0.0) {
        return Err(Error::Domain("θ needs a full-rank kernel".into()));
    }
    let inv = 1.0 / d_over_n;
    let nf = kappa.len() as f64;
    // Decreasing in θ: positive at 0, negative at the upper bracket.
    let g = |theta: f64| kappa.iter().map(|&k| k / (k + inv * theta)).sum::<f64>() / nf - d_over_n;
    let mut lo = 0.0;
    let mut hi = kappa.iter().copied().fold(0.0, f64::max) * inv;
    while hi - lo > tol * hi.max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Kernel eigendecay profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingLaw {
    /// Spectral density `∝ αᵗ`, `α ∈ (0, 1)`.
    Exponential { alpha: f64 },
    /// Spectral density `∝ t^{−β}`, `β ∈ (0, 2)`, `β ≠ 1`.
    Polynomial { beta: f64 },
}

/// Closed-form small-`d/n` behavior of `θ`.
///
/// Exponential: `θ = (1/α) log(n/d)/(n/d) + C_α d/n`, `C_α = (1/α)log(π/sin πα)`.
/// Polynomial: `θ = C_β (d/n)^{1 + 1/(2−β)}`, `C_β = (|sin πβ|/π)^{1/(2−β)}`.
pub fn scaling_law_closed_form(kind: ScalingLaw, d_over_n: f64) -> Result<f64> {
    if !(d_over_n > 0.0 && d_over_n < 1.0) {
        return Err(Error::Domain("closed forms hold for 0 < d/n < 1".into()));
    }
    match kind {
        ScalingLaw::Exponential { alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Domain("exponential decay needs α ∈ (0, 1)".into()));
            }
            let r = 1.0 / d_over_n;
            let c = (PI / (PI * alpha).sin()).ln() / alpha;
            Ok(r.ln() / (alpha * r) + c * d_over_n)
        }
        ScalingLaw::Polynomial { beta } => {
            if !(beta > 0.0 && beta < 2.0) || beta == 1.0 {
                return Err(Error::Domain("polynomial decay needs β ∈ (0, 2) with β ≠ 1".into()));
            }
            let e = 1.0 / (2.0 - beta);
            let c = ((PI * beta).sin().abs() / PI).powf(e);
            Ok(c * d_over_n.powf(1.0 + e))
        }
    }
}

/// `n` quantiles of the exponential spectral density `∝ αᵗ` on `[0, ∞)`.
pub fn exponential_spectrum(alpha: f64, n: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(invalid("need α ∈ (0, 1) and n ≥ 1"));
    }
    let rate = -alpha.ln();
    Ok((0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln() / rate).collect())
}

/// A two-class synthetic task on sphere data: `y = sign(β*ᵀx)` with
/// `β*` uniform on the sphere.
#[derive(Debug, Clone)]
pub struct SignTask {
    pub x: DataMatrix,
    pub y: DVector<f64>,
    pub x_test: DataMatrix,
    pub y_test: DVector<f64>,
}

impl SignTask {
    pub fn generate(p: usize, n: usize, n_test: usize, seed: u64) -> Result<Self> {
        let truth = GroundTruth::random_direction(p, 1.0, 0.0, seed)?;
        let x = sphere_dataset(p, n, seed)?;
        // A distinct seed for the test draw; the design stream is shared.
        let x_test = sphere_dataset(p, n_test, seed ^ TEST_SEED_MASK)?;
        let label = |x: &DataMatrix| x.entries.tr_mul(&truth.beta_star).map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        Ok(Self { y: label(&x), y_test: label(&x_test), x, x_test })
    }
}

const TEST_SEED_MASK: u64 = 0x9e37_79b9_7f4a_7c15;

/// Random-feature ridge sweep over feature ratios `d/n` and ridges `γ`.
#[derive(Debug, Clone)]
pub struct RfSweepSpec {
    pub d_ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub activation: ActivationSpec,
    pub kernel: KernelMethod,
    pub seed: u64,
    pub tol: f64,
}

/// Empirical (averaged over `W`, data fixed) and theoretical train/test MSEs.
/// Rows are ordered by γ, then ratio, then metric (`e_train`, `e_test`).
pub fn rf_sweep(
    x: &DataMatrix,
    y: &DVector<f64>,
    x_test: &DataMatrix,
    y_test: &DVector<f64>,
    spec: &RfSweepSpec,
) -> Result<Vec<ResultRow>> {
    let n = x.n();
    if y.len() != n || y_test.len() != x_test.n() {
        return Err(mismatch("targets disagree with the data sizes"));
    }
    if spec.trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    if spec.d_ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) || spec.gammas.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(invalid("feature ratios and γ must be positive"));
    }
    let kernels = KernelTriplet::compute(x, x_test, &spec.activation, spec.kernel)?;
    let dec = eigh(&kernels.k_train)?;

    let mut rows = Vec::new();
    for &gamma in &spec.gammas {
        for &ratio in &spec.d_ratios {
            let d = ((ratio * n as f64).round() as usize).max(1);
            let theory = nn_mse_theory_with(&dec, &kernels, y, y_test, n, d, gamma, spec.tol);
            let outcomes: Vec<Result<(f64, f64)>> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(trial_seed(spec.seed, t as u64), STREAM_WEIGHTS);
                    let w = normal_matrix(&mut rng, d, x.p(), 1.0);
                    let phi = rf_features(&w, x, &spec.activation)?;
                    let beta = rf_fit(&phi, y, gamma)?;
                    let phi_test = rf_features(&w, x_test, &spec.activation)?;
                    Ok((rf_empirical_mse(&beta, &phi, y)?, rf_empirical_mse(&beta, &phi_test, y_test)?))
                })
                .collect();
            let ok: Vec<(f64, f64)> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failed = outcomes.len() - ok.len();
            let mut status = Vec::new();
            if let Err(e) = &theory {
                status.push(format!("theory_missing: {e}"));
            }
            if failed > 0 {
                let first = outcomes.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
                status.push(format!("failed_trials={failed}: {first}"));
            }
            let status = if status.is_empty() { STATUS_OK.to_string() } else { status.join("; ") };
            let theory = theory.ok();
            for (metric, train) in [("e_train", true), ("e_test", false)] {
                let values: Vec<f64> = ok.iter().map(|&(a, b)| if train { a } else { b }).collect();
                let (mean, se) = mean_stderr(&values);
                rows.push(ResultRow {
                    ratio,
                    gamma,
                    metric: metric.to_string(),
                    empirical_mean: (!values.is_empty()).then_some(mean),
                    empirical_stderr: (values.len() > 1).then_some(se),
                    theory: theory.as_ref().map(|t| if train { t.e_train } else { t.e_test }),
                    trials: values.len(),
                    status: status.clone(),
                });
            }
        }
    }
    Ok(rows)
}
