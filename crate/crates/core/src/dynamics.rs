//! Gradient-flow trajectories of random-feature regression, NTK-regime output
//! trajectories, and contour evaluation of weight projections along the flow.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::results::fmt_sig9;
use crate::rf_nn::check_psd;
use crate::spectral::{bilinear, contour_integral, eigh, real_part_checked, ContourSpec, SpectralDecomposition};

/// One point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub loss: f64,
    pub projection: Option<f64>,
}

/// Writes `t,loss,projection`; a missing projection is an empty field.
pub fn write_trajectory_csv<W: Write>(samples: &[TrajectorySample], mut out: W) -> Result<()> {
    let io = |e| Error::Io { path: "<trajectory>".into(), source: e };
    writeln!(out, "t,loss,projection").map_err(io)?;
    for s in samples {
        let proj = s.projection.map(fmt_sig9).unwrap_or_default();
        writeln!(out, "{},{},{}", fmt_sig9(s.t), fmt_sig9(s.loss), proj).map_err(io)?;
    }
    Ok(())
}

/// Beyond `ηtλ_min = 50` every transient is below e^{-50} and `t` is capped.
pub const SATURATION_EXPONENT: f64 = 50.0;

/// Relative eigenvalue floor below which `ΦΦᵀ/n` counts as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Largest admissible `max_z Re(−ηtz)` on a contour: beyond it cancellation
/// in the quadrature sum wipes out the digits of the result.
pub const MAX_CONTOUR_GROWTH: f64 = 30.0;

fn check_time(eta: f64, t: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("learning rate must be positive"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("time must be finite and nonnegative"));
    }
    Ok(())
}

/// Time after which the flow is saturated: `50/(η λ_min)`.
pub fn saturation_time(eta: f64, lambda_min: f64) -> f64 {
    SATURATION_EXPONENT / (eta * lambda_min)
}

/// Gradient flow `dβ/dt = −η(Sβ − Φy/n)` with `S = ΦΦᵀ/n` diagonalized once.
#[derive(Debug, Clone)]
pub struct GradientFlow {
    features: DMatrix<f64>,
    y: DVector<f64>,
    spectrum: SpectralDecomposition,
    /// `Φy/n`.
    drive: DVector<f64>,
    /// `S^{-1}Φy/n`, the unregularized minimizer.
    limit: DVector<f64>,
}

impl GradientFlow {
    pub fn new(features: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (d, n) = features.shape();
        if y.len() != n {
            return Err(mismatch(format!("targets have length {}, features have {n} columns", y.len())));
        }
        if d > n {
            return Err(Error::RankDeficient(format!("Φ is {d} × {n}; full row rank needs d ≤ n")));
        }
        let s = features * features.transpose() / n as f64;
        let spectrum = eigh(&s)?;
        let eigs = &spectrum.eigenvalues;
        if !(eigs[0] > RANK_TOL * eigs[d - 1]) {
            return Err(Error::RankDeficient(format!(
                "ΦΦᵀ/n has smallest eigenvalue {:e} against largest {:e}",
                eigs[0],
                eigs[d - 1]
            )));
        }
        let drive = features * y / n as f64;
        let limit = spectrum.apply_to(|l| 1.0 / l, &drive);
        Ok(Self { features: features.clone(), y: y.clone(), spectrum, drive, limit })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.spectrum.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.spectrum.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.spectrum.eigenvalues[self.spectrum.eigenvalues.len() - 1]
    }

    pub fn limit(&self) -> &DVector<f64> {
        &self.limit
    }

    /// `e^{−ηtS}β₀ + (I − e^{−ηtS})S^{-1}Φy/n`.
    pub fn beta(&self, beta0: &DVector<f64>, eta: f64, t: f64) -> Result<DVector<f64>> {
        check_time(eta, t)?;
        if beta0.len() != self.limit.len() {
            return Err(mismatch("β₀ must have one entry per feature"));
        }
        if t == 0.0 {
            return Ok(beta0.clone());
        }
        let offset = beta0 - &self.limit;
        Ok(&self.limit + self.spectrum.apply_to(|l| (-eta * t * l).exp(), &offset))
    }

    /// `(1/n)‖y − Φᵀβ‖²`.
    pub fn loss(&self, beta: &DVector<f64>) -> f64 {
        (&self.y - self.features.tr_mul(beta)).norm_squared() / self.y.len() as f64
    }

    /// `vᵀβ(t)` by contour quadrature of the resolvent of `S`, never
    /// touching the eigendecomposition except to check the contour.
    pub fn contour_projection(&self, v: &DVector<f64>, beta0: &DVector<f64>, eta: f64, t: f64, contour: &ContourSpec) -> Result<f64> {
        check_time(eta, t)?;
        let d = self.limit.len();
        if v.len() != d || beta0.len() != d {
            return Err(mismatch("v and β₀ must have one entry per feature"));
        }
        let inside = contour.enclosed(self.spectrum.eigenvalues.as_slice())?;
        if inside != d {
            return Err(Error::Singularity(format!("contour encloses {inside} of {d} eigenvalues")));
        }
        let t = t.min(saturation_time(eta, self.lambda_min()));
        let growth = eta * t * (contour.radius - contour.center.re);
        if growth > MAX_CONTOUR_GROWTH {
            return Err(Error::Domain(format!(
                "exp(−ηtz) reaches e^{growth:.1} on the contour; shrink ηt or the contour"
            )));
        }
        let s = &self.features * self.features.transpose() / self.y.len() as f64;
        let rate = Complex64::new(-eta * t, 0.0);
        let value = contour_integral(&s, contour, |z, solver| {
            // Q(z) is complex symmetric, so vᵀQb = (Qv)ᵀb with one solve.
            let qv = solver.solve(v);
            let decay = (rate * z).exp();
            decay * bilinear(beta0, &qv) + (1.0 - decay) / z * bilinear(&self.drive, &qv)
        })?;
        real_part_checked(value)
    }
}

/// β(t) of the gradient flow from `beta0`.
pub fn gradient_flow_beta(features: &DMatrix<f64>, y: &DVector<f64>, beta0: &DVector<f64>, eta: f64, t: f64) -> Result<DVector<f64>> {
    GradientFlow::new(features, y)?.beta(beta0, eta, t)
}

/// Training loss and optional projection `vᵀβ(t)` at each time.
pub fn gradient_flow_trajectory(
    features: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    eta: f64,
    times: &[f64],
    v: Option<&DVector<f64>>,
) -> Result<Vec<TrajectorySample>> {
    let flow = GradientFlow::new(features, y)?;
    if v.is_some_and(|v| v.len() != beta0.len()) {
        return Err(mismatch("projection vector must have one entry per feature"));
    }
    times
        .par_iter()
        .map(|&t| {
            let beta = flow.beta(beta0, eta, t)?;
            Ok(TrajectorySample { t, loss: flow.loss(&beta), projection: v.map(|v| v.dot(&beta)) })
        })
        .collect()
}

/// The circle centred at `λ_max/2` with radius `0.6λ_max`, enclosing
/// `[0, λ_max]` with margin `0.1λ_max`.
pub fn dynamics_contour(lambda_max: f64, nodes: usize) -> Result<ContourSpec> {
    if !(lambda_max > 0.0) {
        return Err(invalid("largest eigenvalue must be positive"));
    }
    ContourSpec::new(Complex64::new(0.5 * lambda_max, 0.0), 0.6 * lambda_max, nodes)
}

/// `vᵀβ(t)` by contour integration; see [`GradientFlow::contour_projection`].
#[allow(clippy::too_many_arguments)]
pub fn contour_beta_projection(
    v: &DVector<f64>,
    features: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    eta: f64,
    t: f64,
    contour: &ContourSpec,
) -> Result<f64> {
    GradientFlow::new(features, y)?.contour_projection(v, beta0, eta, t, contour)
}

/// NTK-regime outputs `ŷ(t) = e^{−ηtK}ŷ₀ + (I − e^{−ηtK})y`.
#[derive(Debug, Clone)]
pub struct NtkFlow {
    spectrum: SpectralDecomposition,
    y: DVector<f64>,
}

impl NtkFlow {
    pub fn new(k_ntk: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if k_ntk.nrows() != y.len() {
            return Err(mismatch("kernel and targets disagree in size"));
        }
        check_psd(k_ntk, "NTK")?;
        Ok(Self { spectrum: eigh(k_ntk)?, y: y.clone() })
    }

    pub fn outputs(&self, yhat0: &DVector<f64>, eta: f64, t: f64) -> Result<DVector<f64>> {
        check_time(eta, t)?;
        if yhat0.len() != self.y.len() {
            return Err(mismatch("initial outputs disagree with targets in size"));
        }
        if t == 0.0 {
            return Ok(yhat0.clone());
        }
        // Eigenvalues clipped at zero: the PSD tolerance admits tiny negatives.
        Ok(&self.y + self.spectrum.apply_to(|l| (-eta * t * l.max(0.0)).exp(), &(yhat0 - &self.y)))
    }
}

/// Loss `(1/n)‖y − ŷ(t)‖²` along the NTK trajectory; no projection.
pub fn ntk_trajectory(k_ntk: &DMatrix<f64>, y: &DVector<f64>, yhat0: &DVector<f64>, eta: f64, times: &[f64]) -> Result<Vec<TrajectorySample>> {
    let flow = NtkFlow::new(k_ntk, y)?;
    times
        .par_iter()
        .map(|&t| {
            let out = flow.outputs(yhat0, eta, t)?;
            Ok(TrajectorySample { t, loss: (y - out).norm_squared() / y.len() as f64, projection: None })
        })
        .collect()
}
