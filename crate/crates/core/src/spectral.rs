//! Eigendecompositions, empirical spectral measures, resolvents, Stieltjes
//! transforms, and eigenspectral functionals evaluated either directly or by
//! contour integration of the resolvent.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};

/// Relative asymmetry tolerated by [`eigh`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Minimum distance between a contour and any eigenvalue.
pub const CONTOUR_CLEARANCE: f64 = 1e-8;
/// Tolerated imaginary residue of a contour functional (relative to max(1, |value|)).
pub const CONTOUR_IMAG_TOL: f64 = 1e-8;

/// Eigenvalues ascending, eigenvector `i` in column `i`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// `U f(Λ) Uᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        scaled * self.eigenvectors.transpose()
    }

    /// `U f(Λ) Uᵀ v` without forming the matrix.
    pub fn apply_to(&self, f: impl Fn(f64) -> f64, v: &DVector<f64>) -> DVector<f64> {
        let mut coords = self.eigenvectors.tr_mul(v);
        for (c, &l) in coords.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= f(l);
        }
        &self.eigenvectors * coords
    }
}

pub(crate) fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(invalid(format!("matrix is {}×{}, not square", s.nrows(), s.ncols())));
    }
    let scale = s.amax().max(1.0);
    let n = s.nrows();
    for j in 0..n {
        for i in 0..j {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(invalid("matrix is not symmetric"));
            }
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(())
}

/// Full symmetric eigendecomposition with ascending eigenvalues.
pub fn eigh(s: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    check_symmetric(s)?;
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// Ascending eigenvalues only; much cheaper than [`eigh`].
pub fn eigvalsh(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(s)?;
    let mut v: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(v))
}

/// Histogram of a spectrum: equal-width bins, masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io { path: "<csv>".into(), source: e.into() };
        w.write_record(["bin_left", "bin_right", "mass"]).map_err(io)?;
        for (k, m) in self.masses.iter().enumerate() {
            w.write_record([
                crate::results::fmt_sig9(self.edges[k]),
                crate::results::fmt_sig9(self.edges[k + 1]),
                crate::results::fmt_sig9(*m),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }
}

/// Normalized counting measure binned over `range`. Bins are closed on the
/// left; the last bin is closed on both ends. Values outside the range land in
/// the boundary bins.
pub fn esd_histogram(eigenvalues: &[f64], bins: usize, range: (f64, f64)) -> Result<EmpiricalMeasure> {
    if eigenvalues.is_empty() {
        return Err(invalid("empty spectrum"));
    }
    let (lo, hi) = range;
    if bins == 0 || !(hi > lo) {
        return Err(invalid("need at least one bin and a non-degenerate range"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in eigenvalues {
        let k = ((x - lo) / width).floor();
        let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    let n = eigenvalues.len() as f64;
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let masses = counts.into_iter().map(|c| c as f64 / n).collect();
    Ok(EmpiricalMeasure { edges, masses })
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and the distribution function `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // Ties form one jump of the empirical CDF.
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = cdf(sorted[i]);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

fn nearest_eigen_distance(eigs: &DVector<f64>, z: Complex64) -> f64 {
    eigs.iter().map(|&l| (Complex64::new(l, 0.0) - z).norm()).fold(f64::INFINITY, f64::min)
}

fn shifted(s: &DMatrix<f64>, z: Complex64) -> DMatrix<Complex64> {
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(s[(i, j)], 0.0);
        if i == j { v - z } else { v }
    })
}

/// `(S − zI)^{-1}`.
pub fn resolvent(s: &DMatrix<f64>, z: Complex64) -> Result<DMatrix<Complex64>> {
    let eigs = eigvalsh(s)?;
    if nearest_eigen_distance(&eigs, z) <= 1e-12 * eigs.amax().max(1.0) {
        return Err(Error::Singularity(format!("z = {z} is an eigenvalue")));
    }
    let n = s.nrows();
    shifted(s, z)
        .lu()
        .try_inverse()
        .filter(|q| q.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singularity(format!("S − zI is singular at z = {z} (n = {n})")))
}

/// `(1/n) Σ 1/(λᵢ − z)` from a spectrum.
pub fn stieltjes_from_eigenvalues(eigs: &[f64], z: Complex64) -> Complex64 {
    let sum: Complex64 = eigs.iter().map(|&l| 1.0 / (Complex64::new(l, 0.0) - z)).sum();
    sum / eigs.len() as f64
}

/// Stieltjes transform of the spectral measure of `S`, from its eigenvalues.
pub fn empirical_stieltjes(s: &DMatrix<f64>, z: Complex64) -> Result<Complex64> {
    let eigs = eigvalsh(s)?;
    if nearest_eigen_distance(&eigs, z) <= 1e-12 * eigs.amax().max(1.0) {
        return Err(Error::Singularity(format!("z = {z} is an eigenvalue")));
    }
    Ok(stieltjes_from_eigenvalues(eigs.as_slice(), z))
}

/// Density recovered by inverse Stieltjes transform at height `eta`:
/// `(1/π) Im m(x + iη)`. The estimate carries an `O(η)` smoothing bias.
pub fn stieltjes_density<M>(m: M, grid: &[f64], eta: f64) -> Result<Vec<f64>>
where
    M: Fn(Complex64) -> Result<Complex64>,
{
    if !(eta > 0.0 && eta <= 0.1) {
        return Err(invalid("eta must lie in (0, 0.1]"));
    }
    grid.iter().map(|&x| Ok(m(Complex64::new(x, eta))?.im / PI)).collect()
}

/// Brute-force eigenspectral functional `(1/|I|) Σ_{i∈I} f(λᵢ)(aᵀuᵢ)(uᵢᵀb)`.
///
/// `indices` refer to eigenvalues in ascending order, starting at 0.
pub fn spectral_functional(
    s: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
    a: &DVector<f64>,
    b: &DVector<f64>,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(invalid("index set is empty"));
    }
    let n = s.nrows();
    if a.len() != n || b.len() != n {
        return Err(mismatch("a and b must match the matrix size"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(invalid(format!("eigen index {bad} out of range")));
    }
    let dec = eigh(s)?;
    let total: f64 = indices
        .iter()
        .map(|&i| {
            let u = dec.eigenvectors.column(i);
            f(dec.eigenvalues[i]) * a.dot(&u) * u.dot(b)
        })
        .sum();
    Ok(total / indices.len() as f64)
}

/// Circle `center + radius·e^{iθ}` discretized with `nodes` trapezoidal points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub center: Complex64,
    pub radius: f64,
    pub nodes: usize,
}

impl ContourSpec {
    pub const DEFAULT_NODES: usize = 512;

    pub fn new(center: Complex64, radius: f64, nodes: usize) -> Result<Self> {
        let c = Self { center, radius, nodes };
        c.validate()?;
        Ok(c)
    }

    /// A circle on the real axis covering `[lo, hi]` with the given margin.
    pub fn around(lo: f64, hi: f64, margin: f64, nodes: usize) -> Result<Self> {
        Self::new(Complex64::new(0.5 * (lo + hi), 0.0), 0.5 * (hi - lo) + margin, nodes)
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("contour radius must be positive"));
        }
        if self.nodes < 16 {
            return Err(invalid("contour needs at least 16 nodes"));
        }
        Ok(())
    }

    /// Number of eigenvalues strictly inside; fails if any sits within the
    /// clearance of the circle.
    pub fn enclosed(&self, eigs: &[f64]) -> Result<usize> {
        let mut inside = 0;
        for &l in eigs {
            let d = (Complex64::new(l, 0.0) - self.center).norm() - self.radius;
            if d.abs() <= CONTOUR_CLEARANCE {
                return Err(Error::Singularity(format!("eigenvalue {l} lies on the contour")));
            }
            if d < 0.0 {
                inside += 1;
            }
        }
        Ok(inside)
    }
}

/// LU factorization of `S − zI` at one quadrature node.
pub struct ShiftedSolver {
    lu: LU<Complex64, Dyn, Dyn>,
}

impl ShiftedSolver {
    /// `(S − zI)^{-1} b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<Complex64> {
        let rhs = b.map(|v| Complex64::new(v, 0.0));
        self.lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(b.len(), Complex64::new(f64::NAN, f64::NAN)))
    }
}

/// `aᵀw` without conjugation.
pub fn bilinear(a: &DVector<f64>, w: &DVector<Complex64>) -> Complex64 {
    a.iter().zip(w.iter()).map(|(&x, y)| y * x).sum()
}

/// Trapezoidal evaluation of `−(1/2πi) ∮ g(z) dz` on `contour`, where the
/// integrand receives the node and a solver for `S − zI`. Node evaluations may
/// run in parallel; the sum is taken in node order.
pub fn contour_integral<G>(s: &DMatrix<f64>, contour: &ContourSpec, integrand: G) -> Result<Complex64>
where
    G: Fn(Complex64, &ShiftedSolver) -> Complex64 + Sync,
{
    contour.validate()?;
    let n = contour.nodes;
    let terms: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
            let z = contour.center + contour.radius * phase;
            let solver = ShiftedSolver { lu: shifted(s, z).lu() };
            integrand(z, &solver) * contour.radius * phase
        })
        .collect();
    let total: Complex64 = terms.iter().sum();
    let value = -total / n as f64;
    if !value.re.is_finite() || !value.im.is_finite() {
        return Err(Error::Singularity("resolvent blew up on the contour".into()));
    }
    Ok(value)
}

pub(crate) fn real_part_checked(value: Complex64) -> Result<f64> {
    if value.im.abs() > CONTOUR_IMAG_TOL * value.re.abs().max(1.0) {
        return Err(Error::Domain(format!(
            "contour functional has imaginary part {:e}; refine the contour",
            value.im
        )));
    }
    Ok(value.re)
}

/// Eigenspectral functional over the eigenvalues enclosed by `contour`, by
/// quadrature of `−(1/(2πi|I|)) ∮ f(z) aᵀQ(z)b dz`. Eigenvalues are used
/// only to count the enclosed set and to check the clearance rule.
pub fn contour_functional<F>(
    s: &DMatrix<f64>,
    f: F,
    a: &DVector<f64>,
    b: &DVector<f64>,
    contour: &ContourSpec,
) -> Result<f64>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    let n = s.nrows();
    if a.len() != n || b.len() != n {
        return Err(mismatch("a and b must match the matrix size"));
    }
    contour.validate()?;
    let eigs = eigvalsh(s)?;
    let inside = contour.enclosed(eigs.as_slice())?;
    if inside == 0 {
        return Err(Error::EmptyContour);
    }
    let value = contour_integral(s, contour, |z, solver| f(z) * bilinear(a, &solver.solve(b)))?;
    real_part_checked(value / inside as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randgen::{normal_matrix, stream_rng};

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let g = normal_matrix(&mut stream_rng(seed, 0), n, n, 1.0);
        (&g + g.transpose()) * 0.5
    }

    #[test]
    fn eigh_identity_and_diagonal() {
        let d = eigh(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(d.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);

        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0]));
        let d = eigh(&s).unwrap();
        assert_eq!(d.eigenvalues.as_slice(), &[-1.0, 2.0]);
        assert!((d.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((d.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigh_reconstructs_and_is_orthonormal() {
        let s = random_symmetric(8, 1);
        let d = eigh(&s).unwrap();
        let u = &d.eigenvectors;
        assert!((u.transpose() * u - DMatrix::identity(8, 8)).amax() <= 1e-10);
        assert!((d.apply(|l| l) - &s).amax() <= 1e-10);
        assert!(d.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigh_rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(eigh(&s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn histogram_cases() {
        let h = esd_histogram(&[0.3; 5], 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.masses.iter().filter(|&&m| m == 1.0).count(), 1);

        let h = esd_histogram(&[0.0, 1.0], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.masses, vec![0.5, 0.5]);

        let h = esd_histogram(&[-5.0, 0.6, 9.0], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.masses[0], 1.0 / 3.0);
        assert_eq!(h.masses[3], 1.0 / 3.0);
        assert!(esd_histogram(&[], 3, (0.0, 1.0)).is_err());
        assert!(esd_histogram(&[1.0], 3, (1.0, 1.0)).is_err());
    }

    #[test]
    fn histogram_csv_header() {
        let h = esd_histogram(&[0.0, 1.0], 2, (0.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_left,bin_right,mass\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn ks_of_exact_uniform_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn resolvent_cases() {
        let q = resolvent(&DMatrix::zeros(3, 3), Complex64::new(-1.0, 0.0)).unwrap();
        let eye = DMatrix::<Complex64>::identity(3, 3);
        assert!((q - eye).iter().all(|v| v.norm() < 1e-15));

        let gamma = 0.25;
        let q = resolvent(&DMatrix::identity(2, 2), Complex64::new(-gamma, 0.0)).unwrap();
        assert!((q[(0, 0)].re - 1.0 / (1.0 + gamma)).abs() < 1e-15);

        let s = random_symmetric(16, 2);
        let z = Complex64::new(0.0, 2.0);
        let q = resolvent(&s, z).unwrap();
        let resid = shifted(&s, z) * q - DMatrix::<Complex64>::identity(16, 16);
        assert!(resid.iter().map(|v| v.norm()).fold(0.0, f64::max) <= 1e-10);

        let err = resolvent(&DMatrix::identity(2, 2), Complex64::new(1.0, 0.0));
        assert!(matches!(err, Err(Error::Singularity(_))));
    }

    #[test]
    fn stieltjes_cases() {
        let m = empirical_stieltjes(&DMatrix::identity(4, 4), Complex64::new(-1.0, 0.0)).unwrap();
        assert!((m.re - 0.5).abs() < 1e-15);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0]));
        let m = empirical_stieltjes(&s, Complex64::new(-2.0, 0.0)).unwrap();
        assert!((m.re - 0.375).abs() < 1e-15);
    }

    #[test]
    fn stieltjes_axioms() {
        let s = random_symmetric(20, 3);
        for &(x, y) in &[(0.3, 0.5), (-2.0, 1e-3), (5.0, -2.0)] {
            let z = Complex64::new(x, y);
            let m = empirical_stieltjes(&s, z).unwrap();
            let mc = empirical_stieltjes(&s, z.conj()).unwrap();
            assert!((m.conj() - mc).norm() < 1e-14);
            assert!(y * m.im > 0.0);
        }
        let y = 1e6;
        let m = empirical_stieltjes(&s, Complex64::new(0.0, y)).unwrap();
        assert!((Complex64::new(0.0, -y) * m - 1.0).norm() < 1e-3);
    }

    #[test]
    fn density_of_point_mass() {
        let eta = 1e-3;
        let m = |z: Complex64| Ok(1.0 / (Complex64::new(1.0, 0.0) - z));
        let d = stieltjes_density(m, &[0.5, 1.0, 1.5], eta).unwrap();
        assert!((d[1] - 1.0 / (PI * eta)).abs() < 1e-9);
        assert!(d[0] < 1e-2 && d[2] < 1e-2);
        assert!(stieltjes_density(m, &[1.0], 0.5).is_err());
    }

    #[test]
    fn functional_completeness_and_diagonal() {
        let s = random_symmetric(6, 4);
        let a = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let all: Vec<usize> = (0..6).collect();
        let v = spectral_functional(&s, |_| 1.0, &a, &a, &all).unwrap();
        assert!((v - a.norm_squared() / 6.0).abs() < 1e-12);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        // 3 is the largest eigenvalue, index 2 ascending.
        let v = spectral_functional(&d, |l| l * l, &e1, &e1, &[2]).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        assert!(spectral_functional(&d, |l| l, &e1, &e1, &[]).is_err());
    }

    #[test]
    fn functional_linear_spectral_statistic() {
        let s = random_symmetric(7, 8);
        let dec = eigh(&s).unwrap();
        let f = |l: f64| l.exp();
        let lss: f64 = dec.eigenvalues.iter().map(|&l| f(l)).sum::<f64>() / 7.0;
        let summed: f64 = (0..7)
            .map(|i| {
                let u = dec.eigenvectors.column(i).into_owned();
                spectral_functional(&s, f, &u, &u, &[i]).unwrap()
            })
            .sum::<f64>()
            / 7.0;
        assert!((lss - summed).abs() < 1e-10);
    }

    #[test]
    fn contour_matches_oracle() {
        let n = 32;
        let s = random_symmetric(n, 5);
        let eigs = eigvalsh(&s).unwrap();
        let a = normal_matrix(&mut stream_rng(6, 0), n, 1, 1.0).column(0).into_owned();
        let b = normal_matrix(&mut stream_rng(7, 0), n, 1, 1.0).column(0).into_owned();
        let contour = ContourSpec::around(eigs[0], eigs[n - 1], 0.5, 512).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let got = contour_functional(&s, |z| z * z, &a, &b, &contour).unwrap();
        let want = spectral_functional(&s, |l| l * l, &a, &b, &all).unwrap();
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }

    #[test]
    fn contour_unit_and_top_eigenvalue() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 5.0]));
        let e = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let all = ContourSpec::around(1.0, 5.0, 0.5, 64).unwrap();
        let v = contour_functional(&s, |_| Complex64::new(1.0, 0.0), &e, &e, &all).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);

        let a = DVector::from_vec(vec![0.3, 0.4, 0.5]);
        let b = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let top = ContourSpec::new(Complex64::new(5.0, 0.0), 1.0, 64).unwrap();
        let v = contour_functional(&s, |_| Complex64::new(1.0, 0.0), &a, &b, &top).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contour_errors() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let e = DVector::from_vec(vec![1.0, 0.0]);
        let one = |_| Complex64::new(1.0, 0.0);
        let empty = ContourSpec::new(Complex64::new(10.0, 0.0), 1.0, 32).unwrap();
        assert!(matches!(contour_functional(&s, one, &e, &e, &empty), Err(Error::EmptyContour)));
        let touching = ContourSpec::new(Complex64::new(0.0, 0.0), 1.0, 32).unwrap();
        assert!(matches!(contour_functional(&s, one, &e, &e, &touching), Err(Error::Singularity(_))));
        assert!(ContourSpec::new(Complex64::new(0.0, 0.0), 1.0, 8).is_err());
    }

    #[test]
    fn contour_quadrature_converges() {
        let n = 12;
        let s = random_symmetric(n, 9);
        let eigs = eigvalsh(&s).unwrap();
        let a = DVector::from_fn(n, |i, _| (i as f64).sin());
        let all: Vec<usize> = (0..n).collect();
        let want = spectral_functional(&s, |l| l.exp(), &a, &a, &all).unwrap();
        let mut last = f64::INFINITY;
        for nodes in [32, 64, 128, 256, 512, 1024] {
            let c = ContourSpec::around(eigs[0], eigs[n - 1], 0.5, nodes).unwrap();
            let err = (contour_functional(&s, |z| z.exp(), &a, &a, &c).unwrap() - want).abs();
            assert!(err <= last.max(1e-12), "nodes {nodes}: {err} after {last}");
            last = err;
        }
        assert!(last < 1e-10);
    }
}
