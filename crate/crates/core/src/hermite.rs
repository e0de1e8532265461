//! Normalized Hermite polynomials, Gaussian Hermite coefficients of
//! activations, linear-equivalent kernels of random networks, the
//! conjugate-kernel depth recursion and the neural-tangent-kernel recursion.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;

use crate::activation::ActivationSpec;
use crate::error::{invalid, mismatch, Error, Result};
use crate::quadrature::{composite_legendre, gauss_hermite};
use crate::randgen::{normal_matrix, stream_rng, DataMatrix, STREAM_WEIGHTS};
use crate::results::fmt_sig9;
use crate::rf_nn::check_psd;
use crate::spectral::eigh;

// Monomial coefficients (constant term first) of the probabilists' Hermite
// polynomials He₀..He₈, from the Rodrigues formula.
const HERMITE_TABLE: [&[f64]; 9] = [
    &[1.0],
    &[0.0, 1.0],
    &[-1.0, 0.0, 1.0],
    &[0.0, -3.0, 0.0, 1.0],
    &[3.0, 0.0, -6.0, 0.0, 1.0],
    &[0.0, 15.0, 0.0, -10.0, 0.0, 1.0],
    &[-15.0, 0.0, 45.0, 0.0, -15.0, 0.0, 1.0],
    &[0.0, -105.0, 0.0, 105.0, 0.0, -21.0, 0.0, 1.0],
    &[105.0, 0.0, -420.0, 0.0, 210.0, 0.0, -28.0, 0.0, 1.0],
];

/// Largest supported Hermite degree.
pub const MAX_DEGREE: usize = 8;

/// Orthonormal Hermite polynomial `He_i(t)/√(i!)` for the standard Gaussian.
pub fn hermite_poly(i: usize, t: f64) -> Result<f64> {
    let coeffs = HERMITE_TABLE
        .get(i)
        .ok_or_else(|| Error::Unsupported(format!("Hermite degree {i} exceeds {MAX_DEGREE}")))?;
    let value = coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c);
    let factorial: f64 = (1..=i).map(|k| k as f64).product();
    Ok(value / factorial.sqrt())
}

/// `E[f(ξ)]`, `ξ ~ N(0,1)`, by Gauss–Hermite quadrature of the given order.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, order: usize) -> f64 {
    let (x, w) = gauss_hermite(order);
    x.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum()
}

/// First Hermite coefficients and second moment of an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteCoeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// `E[φ(ξ)²]`.
    pub nu: f64,
}

impl HermiteCoeffs {
    pub const IDENTITY: Self = Self { a0: 0.0, a1: 1.0, a2: 0.0, nu: 1.0 };
}

/// Writes `activation,a0,a1,a2,nu` rows.
pub fn write_coeffs_csv<W: Write>(rows: &[(String, HermiteCoeffs)], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io { path: "<csv>".into(), source: e.into() };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["activation", "a0", "a1", "a2", "nu"]).map_err(io)?;
    for (name, c) in rows {
        w.write_record([name.clone(), fmt_sig9(c.a0), fmt_sig9(c.a1), fmt_sig9(c.a2), fmt_sig9(c.nu)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
}

/// Truncation of the Gaussian integral; the weight is below 1e-31 beyond it.
const HALF_WIDTH: i32 = 12;
pub const DEFAULT_ORDER: usize = 60;

/// `a_i = E[φ(ξ)He_i(ξ)]` for `i ≤ 2` and `ν = E[φ(ξ)²]`.
///
/// Integrates against the Gaussian density with a composite Gauss–Legendre
/// rule on `[−12, 12]`: unit panels with integer edges and `quadrature_order`
/// nodes each. Kinks at the origin then sit on a panel edge, which plain
/// Gauss–Hermite cannot exploit.
pub fn hermite_coeffs(act: &ActivationSpec, quadrature_order: usize) -> Result<HermiteCoeffs> {
    if quadrature_order < 20 {
        return Err(invalid("quadrature order must be at least 20"));
    }
    let (x, w) = composite_legendre(-HALF_WIDTH, HALF_WIDTH, quadrature_order);
    let norm = 1.0 / (2.0 * PI).sqrt();
    let (mut a0, mut a1, mut a2, mut nu) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &wt) in x.iter().zip(&w) {
        let v = act.eval(t);
        if !v.is_finite() {
            return Err(Error::Domain(format!("`{}` is not finite at {t}", act.name())));
        }
        let g = wt * norm * (-0.5 * t * t).exp();
        a0 += g * v;
        a1 += g * v * t;
        a2 += g * v * (t * t - 1.0) / 2f64.sqrt();
        nu += g * v * v;
    }
    let edge = HALF_WIDTH as f64;
    let tail = norm * (-0.5 * edge * edge).exp() * act.eval(edge).powi(2).max(act.eval(-edge).powi(2));
    if !(nu.is_finite()) || tail > 1e-14 * nu.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "`{}` grows too fast to be square-integrable under the Gaussian measure",
            act.name()
        )));
    }
    Ok(HermiteCoeffs { a0, a1, a2, nu })
}

/// `t ↦ (φ(t) − a₀)/√(ν − a₀²)`, which has `a₀ = 0` and `ν = 1`.
pub fn normalize_activation(act: &ActivationSpec, quadrature_order: usize) -> Result<ActivationSpec> {
    let c = hermite_coeffs(act, quadrature_order)?;
    let var = c.nu - c.a0 * c.a0;
    if !(var > 1e-12 * c.nu.max(1e-300)) {
        return Err(Error::DegenerateActivation(format!("`{}` is constant under the Gaussian measure", act.name())));
    }
    Ok(act.affine(format!("normalized-{}", act.name()), c.a0, var.sqrt()))
}

fn ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0)
}

/// `a₀²11ᵀ + a₁²XᵀX + (a₂²/p)11ᵀ + (ν − a₀² − a₁²)I`, the linear equivalent of
/// `E_w[φ(Xᵀw)φ(wᵀX)]` for sphere data.
pub fn linear_equivalent_kernel(x: &DataMatrix, c: &HermiteCoeffs) -> DMatrix<f64> {
    let n = x.n();
    let p = x.p() as f64;
    x.entries.tr_mul(&x.entries) * (c.a1 * c.a1)
        + ones(n) * (c.a0 * c.a0 + c.a2 * c.a2 / p)
        + DMatrix::identity(n, n) * (c.nu - c.a0 * c.a0 - c.a1 * c.a1)
}

/// `(α_{ℓ,1}, α_{ℓ,2})` for `ℓ = 0..L`, starting from `(1, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CKLayerParams {
    pub alphas: Vec<(f64, f64)>,
}

impl CKLayerParams {
    /// Runs the recursion from per-layer `(a₁, a₂)` of normalized activations.
    pub fn from_coeffs(coeffs: &[(f64, f64)]) -> Self {
        let mut alphas = vec![(1.0, 0.0)];
        for &(a1, a2) in coeffs {
            let (p1, p2) = *alphas.last().expect("nonempty");
            alphas.push((a1 * p1, (a1 * a1 * p2 * p2 + a2 * a2 * p1.powi(4)).sqrt()));
        }
        Self { alphas }
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.alphas.len() - 1
    }
}

/// Deviation allowed from `a₀ = 0` and `ν = 1` in [`ck_alphas`].
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// CK recursion for a network with the given (normalized) activations.
pub fn ck_alphas(activations: &[ActivationSpec], quadrature_order: usize) -> Result<CKLayerParams> {
    let mut coeffs = Vec::with_capacity(activations.len());
    for (l, act) in activations.iter().enumerate() {
        let c = hermite_coeffs(act, quadrature_order)?;
        if c.a0.abs() > NORMALIZATION_TOL || (c.nu - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Precondition(format!(
                "layer {} activation `{}` has a0 = {:.3e}, nu = {:.6}; normalize it first",
                l + 1,
                act.name(),
                c.a0,
                c.nu
            )));
        }
        coeffs.push((c.a1, c.a2));
    }
    Ok(CKLayerParams::from_coeffs(&coeffs))
}

/// `α²_{ℓ,1}XᵀX + (α²_{ℓ,2}/p)11ᵀ + (1 − α²_{ℓ,1})I`.
pub fn ck_linear_equivalent(x: &DataMatrix, params: &CKLayerParams, layer: usize) -> Result<DMatrix<f64>> {
    let &(a1, a2) = params
        .alphas
        .get(layer)
        .ok_or_else(|| invalid(format!("layer {layer} out of range 0..={}", params.depth())))?;
    let n = x.n();
    Ok(x.entries.tr_mul(&x.entries) * (a1 * a1)
        + ones(n) * (a2 * a2 / x.p() as f64)
        + DMatrix::identity(n, n) * (1.0 - a1 * a1))
}

/// `K_{NTK,ℓ} = K_ℓ + K_{NTK,ℓ−1} ∘ K′_ℓ` from `K_{NTK,0} = gram0`.
pub fn ntk_recursion(ck: &[DMatrix<f64>], ck_prime: &[DMatrix<f64>], gram0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if ck.is_empty() || ck.len() != ck_prime.len() {
        return Err(mismatch("need equally long, nonempty kernel lists"));
    }
    let shape = gram0.shape();
    if shape.0 != shape.1 || ck.iter().chain(ck_prime).any(|k| k.shape() != shape) {
        return Err(mismatch("all kernels must be n × n"));
    }
    let mut ntk = gram0.clone();
    for (k, kp) in ck.iter().zip(ck_prime) {
        ntk = k + ntk.component_mul(kp);
    }
    check_psd(&ntk, "NTK").map_err(|e| Error::Domain(e.to_string()))?;
    Ok(ntk)
}

/// Degree-two truncation of the Gaussian dual kernel
/// `E[φ(u)φ(v)]`, `(u, v)` unit-variance with correlation `K_ij`:
/// `a₀² + a₁²K_ij + a₂²K_ij²` off the diagonal and `ν` on it.
pub fn dual_kernel_linearized(k_prev: &DMatrix<f64>, c: &HermiteCoeffs) -> DMatrix<f64> {
    DMatrix::from_fn(k_prev.nrows(), k_prev.ncols(), |i, j| {
        if i == j {
            c.nu
        } else {
            let k = k_prev[(i, j)];
            c.a0 * c.a0 + c.a1 * c.a1 * k + c.a2 * c.a2 * k * k
        }
    })
}

/// Monte Carlo `E[φ(g)φ(g)ᵀ]` for `g ~ N(0, cov)`.
pub fn gaussian_dual_kernel_mc(cov: &DMatrix<f64>, act: &ActivationSpec, samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    check_psd(cov, "covariance")?;
    let dec = eigh(cov)?;
    let mut root = dec.eigenvectors.clone();
    for (j, mut col) in root.column_iter_mut().enumerate() {
        col *= dec.eigenvalues[j].max(0.0).sqrt();
    }
    let n = cov.nrows();
    let mut rng = stream_rng(seed, STREAM_WEIGHTS);
    let mut acc = DMatrix::zeros(n, n);
    let batch = 1024;
    let mut done = 0;
    while done < samples {
        let m = batch.min(samples - done);
        let g = (&root * normal_matrix(&mut rng, n, m, 1.0)).map(|v| act.eval(v));
        acc += &g * g.transpose();
        done += m;
    }
    Ok(acc / samples as f64)
}

/// How the derivative kernels `K′_ℓ` of the NTK recursion are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeKernel {
    /// Hermite coefficients of `φ′` fed through [`dual_kernel_linearized`].
    Linearized,
    /// [`gaussian_dual_kernel_mc`] with `φ′`, for non-smooth derivatives.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Per-layer linearized CK matrices `K̃_ℓ` and derivative kernels `K′_ℓ`,
/// `ℓ = 1..L`, for normalized activations on sphere data. Ready for
/// [`ntk_recursion`] with `gram0 = XᵀX`.
pub fn ntk_layer_kernels(
    x: &DataMatrix,
    activations: &[ActivationSpec],
    quadrature_order: usize,
    method: DerivativeKernel,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let params = ck_alphas(activations, quadrature_order)?;
    let mut ck = Vec::with_capacity(activations.len());
    let mut ck_prime = Vec::with_capacity(activations.len());
    for (l, act) in activations.iter().enumerate() {
        let prev = ck_linear_equivalent(x, &params, l)?;
        let deriv = act.derivative_activation();
        let kp = match method {
            DerivativeKernel::Linearized => dual_kernel_linearized(&prev, &hermite_coeffs(&deriv, quadrature_order)?),
            DerivativeKernel::MonteCarlo { samples, seed } => {
                gaussian_dual_kernel_mc(&prev, &deriv, samples, seed.wrapping_add(l as u64))?
            }
        };
        ck.push(ck_linear_equivalent(x, &params, l + 1)?);
        ck_prime.push(kp);
    }
    Ok((ck, ck_prime))
}

/// Relative spectral-norm gap `‖A − B‖₂/‖B‖₂` of symmetric matrices.
pub fn relative_spectral_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let diff = crate::spectral::eigvalsh(&(a - b))?;
    let base = crate::spectral::eigvalsh(b)?;
    Ok(diff.amax() / base.amax())
}

/// Spectral norm of a symmetric matrix minus the identity.
pub fn distance_to_identity(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    Ok(crate::spectral::eigvalsh(&(k - DMatrix::identity(n, n)))?.amax())
}

/// Width-`width` features of a fully connected network with `W₁` standard
/// Gaussian and `W_ℓ ~ N(0, 1/d_{ℓ−1})` afterwards, one matrix per layer.
pub fn network_features(x: &DataMatrix, activations: &[ActivationSpec], width: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if width == 0 {
        return Err(invalid("width must be positive"));
    }
    let mut out = Vec::with_capacity(activations.len());
    let mut h = x.entries.clone();
    for (l, act) in activations.iter().enumerate() {
        let mut rng = stream_rng(crate::randgen::trial_seed(seed, l as u64), STREAM_WEIGHTS);
        let sd = if l == 0 { 1.0 } else { 1.0 / (h.nrows() as f64).sqrt() };
        let w = normal_matrix(&mut rng, width, h.nrows(), sd);
        h = (w * h).map(|v| act.eval(v));
        out.push(h.clone());
    }
    Ok(out)
}

/// Empirical conjugate kernel `(1/d)ΦᵀΦ`.
pub fn empirical_ck(features: &DMatrix<f64>) -> DMatrix<f64> {
    features.tr_mul(features) / features.nrows() as f64
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::randgen::sphere_dataset;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn poly_values() {
        assert_eq!(hermite_poly(0, 5.0).unwrap(), 1.0);
        assert_eq!(hermite_poly(1, 0.3).unwrap(), 0.3);
        assert_eq!(hermite_poly(2, 1.0).unwrap(), 0.0);
        assert!((hermite_poly(2, 3.0).unwrap() - 8.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(hermite_poly(9, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn poly_table_matches_recurrence() {
        for &t in &[-2.5, -0.3, 0.0, 1.1, 3.7] {
            let (mut prev, mut cur) = (1.0, t);
            for i in 2..=MAX_DEGREE {
                let next = t * cur - (i - 1) as f64 * prev;
                prev = cur;
                cur = next;
                let fact: f64 = (1..=i).map(|k| k as f64).product();
                let want = cur / fact.sqrt();
                assert!((hermite_poly(i, t).unwrap() - want).abs() < 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn orthonormality() {
        for i in 0..=4 {
            for j in 0..=4 {
                let v = gaussian_expectation(|t| hermite_poly(i, t).unwrap() * hermite_poly(j, t).unwrap(), 40);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10, "<He{i}, He{j}> = {v}");
            }
        }
    }

    #[test]
    fn identity_coeffs() {
        let c = hermite_coeffs(&ActivationSpec::identity(), 40).unwrap();
        for (got, want) in [(c.a0, 0.0), (c.a1, 1.0), (c.a2, 0.0), (c.nu, 1.0)] {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn tanh_coeffs() {
        let c = hermite_coeffs(&ActivationSpec::tanh(), DEFAULT_ORDER).unwrap();
        assert!(c.a0.abs() < 1e-15);
        assert!(c.a2.abs() < 1e-15);
        assert!((c.a1 - 0.6057).abs() < 1e-3);
        assert!((c.a1 - 0.605_705_509_6).abs() < 1e-9);
    }

    #[test]
    fn relu_against_half_gaussian_moments() {
        let c = hermite_coeffs(&ActivationSpec::relu(), DEFAULT_ORDER).unwrap();
        // E[max(ξ,0)] = 1/√(2π), E[ξ max(ξ,0)] = 1/2, E[ξ² max(ξ,0)] = √(2/π).
        assert!((c.a0 - INV_SQRT_2PI).abs() < 1e-10);
        assert!((c.a1 - 0.5).abs() < 1e-10);
        assert!((c.nu - 0.5).abs() < 1e-10);
        let want_a2 = ((2.0 / PI).sqrt() - INV_SQRT_2PI) / 2f64.sqrt();
        assert!((c.a2 - want_a2).abs() < 1e-10);
        assert!((c.a2 - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn quadrature_stability() {
        for act in [ActivationSpec::tanh(), ActivationSpec::relu(), ActivationSpec::sign()] {
            let a = hermite_coeffs(&act, 40).unwrap();
            let b = hermite_coeffs(&act, 80).unwrap();
            for (x, y) in [(a.a0, b.a0), (a.a1, b.a1), (a.a2, b.a2), (a.nu, b.nu)] {
                assert!((x - y).abs() <= 1e-8, "{}: {x} vs {y}", act.name());
            }
        }
    }

    #[test]
    fn parseval_partial_sums() {
        for act in [ActivationSpec::tanh(), ActivationSpec::relu(), ActivationSpec::identity(), ActivationSpec::sign()] {
            let c = hermite_coeffs(&act, DEFAULT_ORDER).unwrap();
            assert!(c.a0 * c.a0 + c.a1 * c.a1 + c.a2 * c.a2 <= c.nu + 1e-10, "{}", act.name());
        }
    }

    #[test]
    fn super_exponential_growth_rejected() {
        let wild = ActivationSpec::custom("exp-square", |t: f64| (t * t / 2.0).exp(), |t: f64| t * (t * t / 2.0).exp());
        assert!(matches!(hermite_coeffs(&wild, 40), Err(Error::Domain(_))));
        let cubic = ActivationSpec::custom("exp-cube", |t: f64| (t * t * t).exp(), |_| 0.0);
        assert!(matches!(hermite_coeffs(&cubic, 40), Err(Error::Domain(_))));
        assert!(hermite_coeffs(&ActivationSpec::relu(), 10).is_err());
        let fine = ActivationSpec::custom("exp", f64::exp, f64::exp);
        let c = hermite_coeffs(&fine, 40).unwrap();
        assert!((c.nu - 2f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn normalization() {
        let relu = normalize_activation(&ActivationSpec::relu(), DEFAULT_ORDER).unwrap();
        let c = hermite_coeffs(&relu, DEFAULT_ORDER).unwrap();
        assert!(c.a0.abs() < 1e-10 && (c.nu - 1.0).abs() < 1e-10);
        let want = 0.5 / (0.5 - 1.0 / (2.0 * PI)).sqrt();
        assert!((c.a1 - want).abs() < 1e-10);
        assert!((c.a1 - 0.856_45).abs() < 1e-4);

        let twice = normalize_activation(&relu, DEFAULT_ORDER).unwrap();
        for t in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            assert!((twice.eval(t) - relu.eval(t)).abs() < 1e-12);
        }
        let flat = ActivationSpec::custom("const", |_| 2.0, |_| 0.0);
        assert!(matches!(normalize_activation(&flat, 40), Err(Error::DegenerateActivation(_))));
    }

    #[test]
    fn normalized_tanh_slope() {
        let t = normalize_activation(&ActivationSpec::tanh(), DEFAULT_ORDER).unwrap();
        let c = hermite_coeffs(&t, DEFAULT_ORDER).unwrap();
        assert!((c.a1 - 0.964_608_689_4).abs() < 1e-8);
    }

    #[test]
    fn kernel_formula_cases() {
        let x = sphere_dataset(16, 5, 1).unwrap();
        let k = linear_equivalent_kernel(&x, &HermiteCoeffs::IDENTITY);
        assert!((k - x.entries.tr_mul(&x.entries)).amax() < 1e-15);
        let pure = HermiteCoeffs { a0: 0.0, a1: 0.0, a2: 0.3, nu: 0.7 };
        let k = linear_equivalent_kernel(&x, &pure);
        let want = ones(5) * (0.09 / 16.0) + DMatrix::identity(5, 5) * 0.7;
        assert!((k - want).amax() < 1e-15);
    }

    #[test]
    fn alphas_cases() {
        let id = ck_alphas(&[ActivationSpec::identity(), ActivationSpec::identity()], 40).unwrap();
        for &(a1, a2) in &id.alphas {
            assert!((a1 - 1.0).abs() < 1e-12 && a2.abs() < 1e-12);
        }
        let p = CKLayerParams::from_coeffs(&[(0.9649, 0.0), (0.9649, 0.0)]);
        assert!((p.alphas[2].0 - 0.9649f64.powi(2)).abs() < 1e-15);
        assert!((p.alphas[2].0 - 0.9311).abs() < 1e-4);
        assert_eq!(p.alphas[2].1, 0.0);
        let err = ck_alphas(&[ActivationSpec::identity(), ActivationSpec::tanh()], 40).unwrap_err();
        assert!(matches!(&err, Error::Precondition(m) if m.contains("layer 2")), "{err}");
    }

    #[test]
    fn alphas_decay_geometrically() {
        let t = normalize_activation(&ActivationSpec::tanh(), DEFAULT_ORDER).unwrap();
        let p = ck_alphas(&vec![t; 12], DEFAULT_ORDER).unwrap();
        let a1 = hermite_coeffs(&normalize_activation(&ActivationSpec::tanh(), 60).unwrap(), 60).unwrap().a1;
        for l in 1..=12 {
            assert!(p.alphas[l].0.abs() < p.alphas[l - 1].0.abs());
            assert!((p.alphas[l].0 - a1.powi(l as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn ck_equivalent_cases() {
        let x = sphere_dataset(20, 6, 2).unwrap();
        let p = CKLayerParams { alphas: vec![(1.0, 0.0), (0.0, 0.0)] };
        assert!((ck_linear_equivalent(&x, &p, 0).unwrap() - x.entries.tr_mul(&x.entries)).amax() < 1e-15);
        assert!((ck_linear_equivalent(&x, &p, 1).unwrap() - DMatrix::identity(6, 6)).amax() < 1e-15);
        assert!(ck_linear_equivalent(&x, &p, 2).is_err());
    }

    #[test]
    fn ck_offdiagonal_shrinks_by_a1_squared() {
        let x = sphere_dataset(30, 8, 3).unwrap();
        let t = normalize_activation(&ActivationSpec::tanh(), DEFAULT_ORDER).unwrap();
        let a1 = hermite_coeffs(&t, DEFAULT_ORDER).unwrap().a1;
        let p = ck_alphas(&[t.clone(), t.clone(), t], DEFAULT_ORDER).unwrap();
        for l in 1..=3 {
            let prev = ck_linear_equivalent(&x, &p, l - 1).unwrap();
            let cur = ck_linear_equivalent(&x, &p, l).unwrap();
            // Odd activation: a₂ = 0, so the rank-one term stays zero.
            assert!(((cur[(0, 1)] / prev[(0, 1)]) - a1 * a1).abs() < 1e-10);
        }
    }

    #[test]
    fn depth_one_matches_linearization_kernel() {
        let x = sphere_dataset(24, 7, 4).unwrap();
        let t = normalize_activation(&ActivationSpec::relu(), DEFAULT_ORDER).unwrap();
        let c = hermite_coeffs(&t, DEFAULT_ORDER).unwrap();
        let p = ck_alphas(std::slice::from_ref(&t), DEFAULT_ORDER).unwrap();
        let a = ck_linear_equivalent(&x, &p, 1).unwrap();
        let b = linear_equivalent_kernel(&x, &c);
        // Equal up to the O(1e-12) normalization residue carried by c.
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn ntk_identity_doubles_gram() {
        let x = sphere_dataset(10, 4, 5).unwrap();
        let g = x.entries.tr_mul(&x.entries);
        let (ck, kp) = ntk_layer_kernels(&x, &[ActivationSpec::identity()], 40, DerivativeKernel::Linearized).unwrap();
        assert!((&kp[0] - ones(4)).amax() < 1e-12);
        let ntk = ntk_recursion(&ck, &kp, &g).unwrap();
        assert!((ntk - &g * 2.0).amax() < 1e-12);
    }

    #[test]
    fn ntk_collapses_with_zero_derivatives() {
        let x = sphere_dataset(10, 4, 6).unwrap();
        let g = x.entries.tr_mul(&x.entries);
        let ks = vec![g.clone(), DMatrix::identity(4, 4)];
        let zeros = vec![DMatrix::zeros(4, 4); 2];
        assert_eq!(ntk_recursion(&ks, &zeros, &g).unwrap(), ks[1]);
        assert!(ntk_recursion(&ks, &zeros[..1], &g).is_err());
    }

    #[test]
    fn ntk_two_by_two_by_hand() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let k1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.2, 0.2, 1.0]);
        let k2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let p1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let p2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.4, 0.5]);
        // Layer 1: [2 + 1, 0.2 + 0.15; ·, 1 + 1] = [3, 0.35; 0.35, 2].
        // Layer 2: [1 + 1.5, 0.1 + 0.14; ·, 1 + 1] = [2.5, 0.24; 0.24, 2].
        let ntk = ntk_recursion(&[k1, k2], &[p1, p2], &g).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.5, 0.24, 0.24, 2.0]);
        assert!((ntk - want).amax() < 1e-15);
    }

    #[test]
    fn linearized_derivative_kernel_matches_monte_carlo() {
        let x = sphere_dataset(40, 6, 7).unwrap();
        let t = normalize_activation(&ActivationSpec::tanh(), DEFAULT_ORDER).unwrap();
        let (_, lin) = ntk_layer_kernels(&x, std::slice::from_ref(&t), DEFAULT_ORDER, DerivativeKernel::Linearized).unwrap();
        let (_, mc) = ntk_layer_kernels(&x, &[t], DEFAULT_ORDER, DerivativeKernel::MonteCarlo { samples: 200_000, seed: 3 }).unwrap();
        // Degree-two truncation error is O(|ε|³) with |ε| ≲ 0.5 here, plus MC noise.
        assert!((&lin[0] - &mc[0]).amax() < 2e-2, "{}", (&lin[0] - &mc[0]).amax());
    }

    #[test]
    fn coeff_csv() {
        let mut buf = Vec::new();
        write_coeffs_csv(&[("identity".into(), HermiteCoeffs::IDENTITY)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "activation,a0,a1,a2,nu\nidentity,0,1.00000000e0,0,1.00000000e0\n");
    }
}
