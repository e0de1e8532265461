//! Marčenko–Pastur law and fixed-point solvers for deterministic equivalents
//! of sample-covariance and Gram resolvents.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre;

pub const MAX_ITERATIONS: usize = 10_000;

/// Parameters of the MP law with ratio `c = p/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MPParams {
    pub c: f64,
    pub edges: (f64, f64),
    /// Mass of the atom at zero.
    pub atom: f64,
}

impl MPParams {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(invalid("MP ratio must be positive and finite"));
        }
        let s = c.sqrt();
        Ok(Self {
            c,
            edges: ((1.0 - s).powi(2), (1.0 + s).powi(2)),
            atom: (1.0 - 1.0 / c).max(0.0),
        })
    }
}

/// Stieltjes transform of the MP law, the root of `czm² − (1−c−z)m + 1 = 0`
/// that is a Stieltjes transform.
pub fn mp_stieltjes(c: f64, z: Complex64) -> Result<Complex64> {
    let mp = MPParams::new(c)?;
    let (lo, hi) = mp.edges;
    if z.im == 0.0 && z.re >= lo && z.re <= hi {
        return Err(Error::Domain(format!("z = {} lies in the MP support [{lo}, {hi}]", z.re)));
    }
    if z == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain("z = 0 is the atom of the MP law".into()));
    }
    let b = 1.0 - c - z;
    // Product of principal roots: branch cut exactly on the support, s ~ z at infinity.
    let s = (z - lo).sqrt() * (z - hi).sqrt();
    // Two algebraically equal expressions; take the one without cancellation.
    let m = if (b - s).norm() > (b + s).norm() {
        2.0 / (b - s)
    } else {
        (b + s) / (2.0 * c * z)
    };
    let m = enforce_axioms(c, z, m);
    let resid = (c * z * m * m - b * m + 1.0).norm();
    let scale = 1.0 + (c * z * m * m).norm() + (b * m).norm();
    if !(resid <= 1e-12 * scale) {
        return Err(Error::Domain(format!("MP root residual {resid:e} at z = {z}")));
    }
    Ok(m)
}

// The branch choice above is exact away from the support; this only guards
// against rounding flipping the sign right next to it.
fn enforce_axioms(c: f64, z: Complex64, m: Complex64) -> Complex64 {
    let other = 1.0 / (c * z * m);
    let ok = |m: Complex64| {
        if z.im != 0.0 {
            z.im * m.im > 0.0
        } else if z.re < 0.0 {
            m.re > 0.0
        } else {
            true
        }
    };
    if ok(m) || !ok(other) { m } else { other }
}

/// Continuous part of the MP density.
pub fn mp_density(c: f64, x: f64) -> Result<f64> {
    let mp = MPParams::new(c)?;
    if !(x > 0.0) {
        return Err(Error::Domain("MP density is evaluated at x > 0; the atom is in MPParams".into()));
    }
    let (lo, hi) = mp.edges;
    let v = (x - lo).max(0.0) * (hi - x).max(0.0);
    Ok(v.sqrt() / (2.0 * PI * c * x))
}

/// Distribution function of the MP law, atom included.
pub fn mp_cdf(c: f64, x: f64) -> Result<f64> {
    let mp = MPParams::new(c)?;
    if x < 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = mp.edges;
    if x <= lo {
        return Ok(mp.atom);
    }
    if x >= hi {
        return Ok(1.0);
    }
    // x = lo + w(1 − cos θ)/2 removes the square-root edges.
    let w = hi - lo;
    let theta_x = (1.0 - 2.0 * (x - lo) / w).clamp(-1.0, 1.0).acos();
    let (nodes, weights) = gauss_legendre(32);
    let panels = 16;
    let h = theta_x / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = (k as f64 + 0.5) * h;
        for (t, wt) in nodes.iter().zip(&weights) {
            let th = mid + 0.5 * h * t;
            let xt = lo + 0.5 * w * (1.0 - th.cos());
            let sin = th.sin();
            total += 0.5 * h * wt * (0.5 * w * sin).powi(2) / (2.0 * PI * c * xt);
        }
    }
    Ok((mp.atom + total).min(1.0))
}

/// A solved deterministic-equivalent fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DEFixedPoint {
    pub z: Complex64,
    pub delta: Complex64,
    /// `|F(δ) − δ| / max(1, |δ|)` at the returned `δ`.
    pub residual: f64,
    pub iterations: usize,
}

/// Iterates `δ ← F(δ)` from `start`, switching to half-damping as soon as a
/// step grows. Stops when a step is at most `tol·max(1, |δ|)`.
pub(crate) fn fixed_point<F>(f: F, start: Complex64, tol: f64) -> Result<(Complex64, f64, usize)>
where
    F: Fn(Complex64) -> Complex64,
{
    let mut delta = start;
    let mut last_step = f64::INFINITY;
    let mut damped = false;
    for k in 1..=MAX_ITERATIONS {
        let image = f(delta);
        let next = if damped { 0.5 * (delta + image) } else { image };
        let step = (next - delta).norm();
        if !step.is_finite() {
            return Err(Error::Convergence { iterations: k, residual: step });
        }
        if step > last_step {
            damped = true;
        }
        last_step = step;
        delta = next;
        if step <= tol * delta.norm().max(1.0) {
            let residual = (f(delta) - delta).norm() / delta.norm().max(1.0);
            return Ok((delta, residual, k));
        }
    }
    Err(Error::Convergence { iterations: MAX_ITERATIONS, residual: last_step })
}

fn check_covariance(c_eigs: &[f64], n: usize) -> Result<()> {
    if c_eigs.is_empty() || n == 0 {
        return Err(invalid("need a nonempty covariance spectrum and n ≥ 1"));
    }
    if c_eigs.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(invalid("covariance eigenvalues must be positive and finite"));
    }
    Ok(())
}

/// `δ(z)` of the sample covariance `(1/n)C^{1/2}ZZᵀC^{1/2}`, solving
/// `δ = (1/n) Σᵢ cᵢ/(cᵢ/(1+δ) − z)`.
pub fn solve_delta_scm(c_eigs: &[f64], n: usize, z: Complex64, tol: f64) -> Result<DEFixedPoint> {
    check_covariance(c_eigs, n)?;
    if z.im == 0.0 && z.re > 0.0 {
        return Err(Error::Domain("z must avoid the positive real axis".into()));
    }
    let p = c_eigs.len() as f64;
    let nf = n as f64;
    let map = |d: Complex64| {
        c_eigs.iter().map(|&c| c / (c / (1.0 + d) - z)).sum::<Complex64>() / nf
    };
    let start = if z.norm() > 0.0 {
        Complex64::new(p / (nf * z.norm()), 0.0)
    } else {
        Complex64::new(p / nf, 0.0)
    };
    let (delta, residual, iterations) = fixed_point(map, start, tol)?;
    Ok(DEFixedPoint { z, delta, residual, iterations })
}

/// Deterministic equivalents of both resolvents at `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DEResolvents {
    /// `1/(cᵢ/(1+δ) − z)`: the diagonal of `Q̃_Ĉ(z)` in the eigenbasis of `C`.
    pub scm_diagonal: Vec<Complex64>,
    /// `−1/(z(1+δ))`; `Q̃_G(z)` is this multiple of the identity.
    pub gram_scalar: Complex64,
    pub fixed_point: DEFixedPoint,
}

pub fn de_resolvents(c_eigs: &[f64], n: usize, z: Complex64, tol: f64) -> Result<DEResolvents> {
    let fp = solve_delta_scm(c_eigs, n, z, tol)?;
    if z.norm() == 0.0 {
        return Err(Error::Singularity("the Gram equivalent is singular at z = 0".into()));
    }
    let d = fp.delta;
    Ok(DEResolvents {
        scm_diagonal: c_eigs.iter().map(|&c| 1.0 / (c / (1.0 + d) - z)).collect(),
        gram_scalar: -1.0 / (z * (1.0 + d)),
        fixed_point: fp,
    })
}

/// `m′(−γ)`, the z-derivative of the MP transform, from implicit
/// differentiation of the MP equation.
pub fn mp_stieltjes_derivative(c: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    let m = mp_stieltjes(c, Complex64::new(-gamma, 0.0))?.re;
    let den = 2.0 * c * gamma * m + 1.0 - c + gamma;
    if den.abs() <= 1e-14 {
        return Err(Error::Singularity("MP derivative denominator vanishes".into()));
    }
    Ok(m * (c * m + 1.0) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_8;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn params() {
        let mp = MPParams::new(0.5).unwrap();
        assert!((mp.edges.1 - 2.914_213_562_373_095).abs() < 1e-14);
        assert_eq!(mp.atom, 0.0);
        assert_eq!(MPParams::new(2.0).unwrap().atom, 0.5);
        assert!(MPParams::new(0.0).is_err());
    }

    #[test]
    fn golden_ratio_at_c_one() {
        let m = mp_stieltjes(1.0, re(-1.0)).unwrap();
        assert!((m.re - GOLDEN).abs() < 1e-14);
        assert_eq!(m.im, 0.0);
    }

    #[test]
    fn classical_limit() {
        let m = mp_stieltjes(1e-8, re(-1.0)).unwrap();
        assert!((m.re - 0.5).abs() < 1e-6);
    }

    #[test]
    fn probe_above_support() {
        let m = mp_stieltjes(0.5, Complex64::new(1.0, 1e-6)).unwrap();
        assert!(m.im > 0.0);
        assert!(matches!(mp_stieltjes(0.5, re(1.0)), Err(Error::Domain(_))));
        assert!(matches!(mp_stieltjes(2.0, re(0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn axioms() {
        for &c in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            for &(x, y) in &[(-3.0, 0.0), (0.5, 0.7), (2.0, -1.0), (10.0, 0.0), (0.05, 1e-9)] {
                let z = Complex64::new(x, y);
                let Ok(m) = mp_stieltjes(c, z) else { continue };
                let mc = mp_stieltjes(c, z.conj()).unwrap();
                assert!((m.conj() - mc).norm() < 1e-13);
                if y != 0.0 {
                    assert!(y * m.im > 0.0, "c={c} z={z} m={m}");
                }
            }
            let y = 1e6;
            let m = mp_stieltjes(c, Complex64::new(0.0, y)).unwrap();
            assert!((Complex64::new(0.0, -y) * m - 1.0).norm() < 1e-3);
            // Far right of the support the transform is ~ −1/z.
            let m = mp_stieltjes(c, re(1e4)).unwrap();
            assert!((m.re * 1e4 + 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn density_values() {
        assert_eq!(mp_density(0.5, 5.0).unwrap(), 0.0);
        assert_eq!(mp_density(1.0, 4.0).unwrap(), 0.0);
        assert!(mp_density(1.0, 0.0).is_err());
    }

    #[test]
    fn density_mass_plus_atom() {
        for &c in &[0.1, 0.5, 1.0, 2.0] {
            let mp = MPParams::new(c).unwrap();
            let (lo, hi) = mp.edges;
            // Independent of mp_cdf: midpoint rule in the θ variable.
            let steps = 200_000;
            let w = hi - lo;
            let mut mass = 0.0;
            for k in 0..steps {
                let th = PI * (k as f64 + 0.5) / steps as f64;
                let x = lo + 0.5 * w * (1.0 - th.cos());
                mass += mp_density(c, x).unwrap() * 0.5 * w * th.sin() * PI / steps as f64;
            }
            assert!((mass + mp.atom - 1.0).abs() < 1e-6, "c={c}: {}", mass + mp.atom);
            assert!((mp_cdf(c, hi - 1e-12).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cdf_is_monotone_with_atom() {
        let mut last = 0.0;
        for k in 0..=100 {
            let x = 6.0 * k as f64 / 100.0;
            let f = mp_cdf(2.0, x).unwrap();
            assert!(f >= last - 1e-15);
            last = f;
        }
        assert_eq!(mp_cdf(2.0, 0.0).unwrap(), 0.5);
        assert_eq!(mp_cdf(2.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn scm_delta_matches_mp() {
        for &(p, n) in &[(100usize, 200usize), (300, 100), (64, 64)] {
            let c = p as f64 / n as f64;
            for &z in &[re(-1.0), re(-0.1), Complex64::new(1.0, 0.5), Complex64::new(-2.0, -3.0)] {
                let fp = solve_delta_scm(&vec![1.0; p], n, z, 1e-14).unwrap();
                let want = c * mp_stieltjes(c, z).unwrap();
                assert!((fp.delta - want).norm() <= 1e-10, "p={p} n={n} z={z}");
            }
        }
    }

    #[test]
    fn scm_golden_and_classical() {
        let fp = solve_delta_scm(&vec![1.0; 50], 50, re(-1.0), 1e-14).unwrap();
        assert!((fp.delta.re - GOLDEN).abs() < 1e-10);
        assert!(fp.residual <= 1e-12);

        let fp = solve_delta_scm(&[1.0; 4], 1_000_000, re(-1.0), 1e-15).unwrap();
        let classical = 4.0 / (2.0 * 1e6);
        assert!((fp.delta.re - classical).abs() < 1e-3 * classical);
    }

    #[test]
    fn scm_rejects_positive_axis() {
        assert!(solve_delta_scm(&[1.0], 2, re(1.0), 1e-12).is_err());
        assert!(solve_delta_scm(&[0.0], 2, re(-1.0), 1e-12).is_err());
    }

    #[test]
    fn resolvent_equivalents() {
        let gamma = 0.3;
        let de = de_resolvents(&[1.0; 2], 10_000_000, re(-gamma), 1e-15).unwrap();
        assert!((de.scm_diagonal[0].re - 1.0 / (1.0 + gamma)).abs() < 1e-6);

        let de = de_resolvents(&vec![1.0; 20], 20, re(-1.0), 1e-14).unwrap();
        assert!((de.gram_scalar.re - GOLDEN).abs() < 1e-10);
        let d = de.fixed_point.delta.re;
        assert!((1.0 / (1.0 + d) - d).abs() < 1e-10);
    }

    #[test]
    fn derivative_values() {
        let v = mp_stieltjes_derivative(1.0, 1.0).unwrap();
        assert!((v - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        let g = 0.7;
        let v = mp_stieltjes_derivative(1e-9, g).unwrap();
        assert!((v - 1.0 / (1.0 + g).powi(2)).abs() < 1e-6);
        assert!(mp_stieltjes_derivative(1.0, 0.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for &c in &[0.5, 1.0, 2.0] {
            for &g in &[0.1, 1.0] {
                let fd = (mp_stieltjes(c, re(-g + h)).unwrap().re - mp_stieltjes(c, re(-g - h)).unwrap().re)
                    / (2.0 * h);
                let v = mp_stieltjes_derivative(c, g).unwrap();
                assert!(v > 0.0);
                assert!((v - fd).abs() <= 1e-6, "c={c} γ={g}: {v} vs {fd}");
            }
        }
    }
}
