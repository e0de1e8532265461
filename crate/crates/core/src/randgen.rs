//! Seeded generators for random matrices, datasets and regression targets,
//! plus ingestion of label-first CSV datasets.
//!
//! Every generator is a pure function of its arguments. Randomness comes from
//! ChaCha8 streams so results are identical across platforms; parallel trials
//! use [`trial_seed`] so the outcome never depends on scheduling order.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, mismatch, Error, Result};

/// How a data matrix was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian { variance: f64 },
    Rademacher,
    Sphere,
    Dataset { path: String },
}

/// Post-processing applied to a data matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Every column scaled to unit Euclidean norm.
    UnitSphere,
    /// All entries divided by the spectral norm, so that `‖X‖₂ ≤ 1`.
    GlobalSpectral,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "unit-sphere" | "sphere" => Ok(Self::UnitSphere),
            "global-spectral" | "spectral" => Ok(Self::GlobalSpectral),
            other => Err(invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMeta {
    pub distribution: Distribution,
    pub seed: Option<u64>,
    pub normalization: Normalization,
}

/// A `p × n` real matrix whose columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub entries: DMatrix<f64>,
    pub meta: DataMeta,
}

impl DataMatrix {
    /// Wraps an existing matrix; rejects non-finite entries.
    pub fn from_matrix(entries: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data matrix contains non-finite entries"));
        }
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(invalid("data matrix must be nonempty"));
        }
        let mut out = Self {
            entries,
            meta: DataMeta {
                distribution: Distribution::Dataset { path: String::new() },
                seed: None,
                normalization: Normalization::None,
            },
        };
        out.normalize(normalization);
        Ok(out)
    }

    /// Dimension `p`.
    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    /// Sample count `n`.
    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    fn normalize(&mut self, normalization: Normalization) {
        match normalization {
            Normalization::None => {}
            Normalization::UnitSphere => {
                for mut col in self.entries.column_iter_mut() {
                    let norm = col.norm();
                    if norm > 0.0 {
                        col /= norm;
                    }
                }
            }
            Normalization::GlobalSpectral => {
                let norm = spectral_norm(&self.entries);
                if norm > 0.0 {
                    // A hair of headroom keeps ‖X‖₂ ≤ 1 under rounding.
                    self.entries /= norm * (1.0 + 4.0 * f64::EPSILON);
                }
            }
        }
        self.meta.normalization = normalization;
    }
}

/// Largest singular value, via the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    let gram = if x.nrows() <= x.ncols() {
        x * x.transpose()
    } else {
        x.transpose() * x
    };
    let top = gram.symmetric_eigenvalues().max();
    top.max(0.0).sqrt()
}

/// Ground truth of the noisy linear model `y = β*ᵀx + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta_star: DVector<f64>,
    pub sigma2: f64,
}

impl GroundTruth {
    pub fn new(beta_star: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(invalid("noise variance must be finite and nonnegative"));
        }
        if beta_star.iter().any(|v| !v.is_finite()) {
            return Err(invalid("ground-truth vector must be finite"));
        }
        Ok(Self { beta_star, sigma2 })
    }

    /// A uniformly random direction scaled to squared norm `beta_norm2`.
    pub fn random_direction(p: usize, beta_norm2: f64, sigma2: f64, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(beta_norm2 >= 0.0) {
            return Err(invalid("squared norm must be nonnegative"));
        }
        let mut rng = stream_rng(seed, STREAM_TRUTH);
        let mut b = normal_vector(&mut rng, p);
        let norm = b.norm();
        b *= beta_norm2.sqrt() / norm;
        Self::new(b, sigma2)
    }
}

// Independent sub-streams of one seed, so that e.g. the targets of trial `t`
// never share random numbers with its design matrix.
pub const STREAM_DESIGN: u64 = 0;
pub const STREAM_NOISE: u64 = 1;
pub const STREAM_TRUTH: u64 = 2;
pub const STREAM_WEIGHTS: u64 = 3;
pub const STREAM_TEST: u64 = 4;

/// Seed of trial `index` in a sweep seeded with `seed`.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index)
}

/// A ChaCha8 generator on sub-stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn normal_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("dimensions must be positive, got {rows}×{cols}")));
    }
    Ok(())
}

/// I.i.d. zero-mean Gaussian entries with the given variance.
pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, seed: u64) -> Result<DataMatrix> {
    check_dims(rows, cols)?;
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(invalid("variance must be positive and finite"));
    }
    let mut rng = stream_rng(seed, STREAM_DESIGN);
    Ok(DataMatrix {
        entries: normal_matrix(&mut rng, rows, cols, variance.sqrt()),
        meta: DataMeta {
            distribution: Distribution::Gaussian { variance },
            seed: Some(seed),
            normalization: Normalization::None,
        },
    })
}

/// I.i.d. symmetric ±1 entries.
pub fn rademacher_matrix(rows: usize, cols: usize, seed: u64) -> Result<DataMatrix> {
    check_dims(rows, cols)?;
    let mut rng = stream_rng(seed, STREAM_DESIGN);
    let entries = DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    Ok(DataMatrix {
        entries,
        meta: DataMeta {
            distribution: Distribution::Rademacher,
            seed: Some(seed),
            normalization: Normalization::None,
        },
    })
}

/// Columns drawn uniformly from the unit sphere `S^{p−1}`.
pub fn sphere_dataset(p: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    if p < 2 {
        return Err(invalid("sphere data needs p ≥ 2"));
    }
    check_dims(p, n)?;
    let mut rng = stream_rng(seed, STREAM_DESIGN);
    let mut out = DataMatrix {
        entries: normal_matrix(&mut rng, p, n, 1.0),
        meta: DataMeta {
            distribution: Distribution::Sphere,
            seed: Some(seed),
            normalization: Normalization::None,
        },
    };
    out.normalize(Normalization::UnitSphere);
    Ok(out)
}

/// `yᵢ = β*ᵀxᵢ + εᵢ` with Gaussian noise of variance `truth.sigma2`.
pub fn linear_targets(x: &DataMatrix, truth: &GroundTruth, seed: u64) -> Result<DVector<f64>> {
    if truth.beta_star.len() != x.p() {
        return Err(mismatch(format!(
            "β* has length {} but data dimension is {}",
            truth.beta_star.len(),
            x.p()
        )));
    }
    let mut y = x.entries.tr_mul(&truth.beta_star);
    if truth.sigma2 > 0.0 {
        let mut rng = stream_rng(seed, STREAM_NOISE);
        let sd = truth.sigma2.sqrt();
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// Reads a label-first CSV (`label,f1,...,fp`), keeps rows whose label is in
/// `label_filter` (all rows if empty), and returns samples as columns with ±1
/// targets.
///
/// The smaller of the two retained labels maps to +1 and the larger to −1.
/// Labels compare numerically when both parse as numbers. More than two
/// distinct retained labels is rejected.
pub fn ingest_dataset(
    path: &Path,
    label_filter: &[String],
    normalization: Normalization,
    has_header: bool,
) -> Result<(DataMatrix, DVector<f64>)> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let keep: BTreeSet<&str> = label_filter.iter().map(String::as_str).collect();
    let mut labels = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut p = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1 + usize::from(has_header);
        let record = record.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let label = record.get(0).unwrap_or_default().to_string();
        let width = record.len() - 1;
        if width == 0 {
            return Err(Error::Parse { row, msg: "row has no features".into() });
        }
        match p {
            None => p = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {w} features, found {width}"),
                })
            }
            _ => {}
        }
        if !keep.is_empty() && !keep.contains(label.as_str()) {
            continue;
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric feature `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, msg: "non-finite feature".into() });
            }
            features.push(v);
        }
        labels.push(label);
    }
    let (Some(p), false) = (p, labels.is_empty()) else {
        return Err(Error::EmptyDataset);
    };

    let mut distinct: Vec<&String> = labels.iter().collect::<BTreeSet<_>>().into_iter().collect();
    distinct.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
    if distinct.len() > 2 {
        return Err(Error::Unsupported(format!(
            "{} distinct labels retained; only two-class targets are supported",
            distinct.len()
        )));
    }
    let positive = distinct[0].clone();
    let y = DVector::from_iterator(
        labels.len(),
        labels.iter().map(|l| if *l == positive { 1.0 } else { -1.0 }),
    );

    let n = labels.len();
    let entries = DMatrix::from_vec(p, n, features);
    let mut data = DataMatrix {
        entries,
        meta: DataMeta {
            distribution: Distribution::Dataset { path: path.display().to_string() },
            seed: None,
            normalization: Normalization::None,
        },
    };
    data.normalize(normalization);
    Ok((data, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_matrix(2, 2, 1.0, 7).unwrap();
        let b = gaussian_matrix(2, 2, 1.0, 7).unwrap();
        assert_eq!(a.entries, b.entries);
        let c = gaussian_matrix(2, 2, 1.0, 8).unwrap();
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn gaussian_moments() {
        let x = gaussian_matrix(1000, 1000, 1.0, 1).unwrap();
        let n = 1e6;
        let mean = x.entries.sum() / n;
        let var = x.entries.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 4e-3 * 2.0_f64.sqrt(), "var {var}");
    }

    #[test]
    fn gaussian_column_norms_concentrate() {
        let x = gaussian_matrix(512, 512, 1.0 / 512.0, 3).unwrap();
        let worst = x
            .entries
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.2, "max deviation {worst}");
    }

    #[test]
    fn bad_arguments_rejected() {
        assert!(matches!(gaussian_matrix(0, 3, 1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gaussian_matrix(3, 3, 0.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(rademacher_matrix(3, 0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(sphere_dataset(1, 3, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rademacher_support_and_variance() {
        let x = rademacher_matrix(50, 40, 11).unwrap();
        assert!(x.entries.iter().all(|&v| v == 1.0 || v == -1.0));
        let var = x.entries.iter().map(|v| v * v).sum::<f64>() / 2000.0;
        assert_eq!(var, 1.0);
    }

    #[test]
    fn sphere_columns_unit_and_nearly_orthogonal() {
        let (p, n) = (512, 256);
        let x = sphere_dataset(p, n, 5).unwrap();
        for c in x.entries.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        let g = x.entries.tr_mul(&x.entries);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += g[(i, j)];
                    sq += g[(i, j)] * g[(i, j)];
                    count += 1.0;
                }
            }
        }
        let mean = sum / count;
        let var = sq / count - mean * mean;
        assert!(mean.abs() < 3.0 / (p as f64).sqrt());
        assert!((var * p as f64 - 1.0).abs() < 0.2, "p·var = {}", var * p as f64);
    }

    #[test]
    fn targets_noiseless_and_deterministic() {
        let x = gaussian_matrix(5, 9, 1.0, 2).unwrap();
        let truth = GroundTruth::random_direction(5, 1.0, 0.0, 4).unwrap();
        let y = linear_targets(&x, &truth, 1).unwrap();
        assert_eq!(y, x.entries.tr_mul(&truth.beta_star));

        let noisy = GroundTruth::new(truth.beta_star.clone(), 0.3).unwrap();
        assert_eq!(
            linear_targets(&x, &noisy, 9).unwrap(),
            linear_targets(&x, &noisy, 9).unwrap()
        );
        let bad = GroundTruth::new(DVector::zeros(4), 0.0).unwrap();
        assert!(matches!(linear_targets(&x, &bad, 0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn pure_noise_targets_have_unit_variance() {
        let n = 20000;
        let x = gaussian_matrix(3, n, 1.0, 0).unwrap();
        let truth = GroundTruth::new(DVector::zeros(3), 1.0).unwrap();
        let y = linear_targets(&x, &truth, 12).unwrap();
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn random_direction_has_requested_norm() {
        let t = GroundTruth::random_direction(64, 2.5, 0.1, 3).unwrap();
        assert!((t.beta_star.norm_squared() - 2.5).abs() < 1e-12);
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_filters_labels() {
        let f = write_csv("1,0.5,0.5\n2,1.0,0.0\n3,0.0,2.0\n");
        let (x, y) = ingest_dataset(f.path(), &["1".into()], Normalization::None, false).unwrap();
        assert_eq!(x.n(), 1);
        assert_eq!(x.p(), 2);
        assert_eq!(y.as_slice(), &[1.0]);
    }

    #[test]
    fn ingest_maps_two_classes() {
        let f = write_csv("label,a,b\n2,3,4\n1,0,2\n2,1,1\n");
        let (x, y) = ingest_dataset(f.path(), &[], Normalization::UnitSphere, true).unwrap();
        assert_eq!(y.as_slice(), &[-1.0, 1.0, -1.0]);
        for c in x.entries.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ingest_global_spectral_bounds_norm() {
        let f = write_csv("1,3,4,1\n2,1,1,7\n1,-2,0,5\n");
        let (x, _) = ingest_dataset(f.path(), &[], Normalization::GlobalSpectral, false).unwrap();
        assert!(spectral_norm(&x.entries) <= 1.0 + 1e-10);
    }

    #[test]
    fn ingest_errors() {
        let missing = Path::new("/nonexistent/data.csv");
        assert!(matches!(
            ingest_dataset(missing, &[], Normalization::None, false),
            Err(Error::Io { .. })
        ));
        let f = write_csv("1,0.5\n2,abc\n");
        assert!(matches!(
            ingest_dataset(f.path(), &[], Normalization::None, false),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write_csv("1,0.5\n2,0.1\n");
        assert!(matches!(
            ingest_dataset(f.path(), &["7".into()], Normalization::None, false),
            Err(Error::EmptyDataset)
        ));
        let f = write_csv("1,0.5\n2,0.1\n3,0.2\n");
        assert!(matches!(
            ingest_dataset(f.path(), &[], Normalization::None, false),
            Err(Error::Unsupported(_))
        ));
    }
}
