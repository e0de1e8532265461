//! The experiment recipes. Each returns its result rows and writes any
//! auxiliary CSV files into the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;

use rmt_core::activation::ActivationSpec;
use rmt_core::det_equiv::{mp_cdf, mp_density, mp_stieltjes};
use rmt_core::dynamics::{dynamics_contour, gradient_flow_trajectory, ntk_trajectory, write_trajectory_csv, GradientFlow};
use rmt_core::hermite::{
    ck_alphas, ck_linear_equivalent, distance_to_identity, empirical_ck, hermite_coeffs, linear_equivalent_kernel,
    network_features, normalize_activation, ntk_layer_kernels, ntk_recursion, relative_spectral_gap, write_coeffs_csv,
    DerivativeKernel, DEFAULT_ORDER,
};
use rmt_core::randgen::{
    gaussian_matrix, ingest_dataset, rademacher_matrix, sphere_dataset, stream_rng, trial_seed, DataMatrix, Normalization,
    STREAM_TEST,
};
use rmt_core::results::{fmt_sig9, mean_stderr, write_rows, ResultRow, STATUS_OK};
use rmt_core::rf_nn::{kernel_expectation, rf_sweep, KernelMethod, RfSweepSpec, SignTask};
use rmt_core::ridge::{risk_theory, sweep_double_descent, Regime, SweepSpec};
use rmt_core::spectral::{eigvalsh, esd_histogram, ks_distance};

use crate::config::{
    CkDepthSettings, DynamicsSettings, KernelChoice, KernelLinSettings, MpSettings, RfSettings, RidgeSettings, Settings,
    TanhDemoSettings, Validated,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Numerical { context: String, source: rmt_core::Error },
    #[error("{0}")]
    Input(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Run<T> = Result<T, RunError>;

trait Context<T> {
    fn at(self, context: impl FnOnce() -> String) -> Run<T>;
}

impl<T> Context<T> for rmt_core::Result<T> {
    fn at(self, context: impl FnOnce() -> String) -> Run<T> {
        self.map_err(|source| RunError::Numerical { context: context(), source })
    }
}

/// Rows plus the auxiliary files that were written.
#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub files: Vec<PathBuf>,
}

struct Out<'a> {
    dir: &'a Path,
    stem: &'a str,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn write(&mut self, suffix: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Run<()> {
        let path = self.dir.join(format!("{}{suffix}.csv", self.stem));
        let io = |source| RunError::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        body(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
        self.files.push(path);
        Ok(())
    }

    fn write_core(&mut self, suffix: &str, body: impl FnOnce(&mut dyn Write) -> rmt_core::Result<()>) -> Run<()> {
        let mut inner = None;
        self.write(suffix, |w| {
            inner = Some(body(w));
            Ok(())
        })?;
        inner.expect("body ran").at(|| format!("writing {}{suffix}.csv", self.stem))
    }
}

/// Writes the main `<stem>.csv` of result rows.
pub fn write_result_csv(dir: &Path, stem: &str, rows: &[ResultRow]) -> Run<PathBuf> {
    let path = dir.join(format!("{stem}.csv"));
    let file = File::create(&path).map_err(|source| RunError::Io { path: path.clone(), source })?;
    let mut w = BufWriter::new(file);
    write_rows(rows, &mut w).at(|| format!("writing {}", path.display()))?;
    w.flush().map_err(|source| RunError::Io { path: path.clone(), source })?;
    Ok(path)
}

pub fn run(cfg: &Validated, dir: &Path) -> Run<Report> {
    let mut out = Out { dir, stem: &cfg.stem, files: Vec::new() };
    let rows = match &cfg.settings {
        Settings::Mp(s) => mp(s, cfg.seed, &mut out)?,
        Settings::TanhDemo(s) => tanh_demo(s, cfg.seed, &mut out)?,
        Settings::Ridge(s) => ridge(s, cfg.seed, &mut out)?,
        Settings::Rf(s) => rf(s, cfg.seed)?,
        Settings::KernelLin(s) => kernel_lin(s, cfg.seed, &mut out)?,
        Settings::CkDepth(s) => ck_depth(s, cfg.seed)?,
        Settings::Dynamics(s) => dynamics(s, cfg.seed, &mut out)?,
    };
    Ok(Report { rows, files: out.files })
}

fn row(ratio: f64, gamma: f64, metric: &str, empirical: Option<f64>, stderr: Option<f64>, theory: Option<f64>, trials: usize) -> ResultRow {
    ResultRow {
        ratio,
        gamma,
        metric: metric.to_string(),
        empirical_mean: empirical,
        empirical_stderr: stderr,
        theory,
        trials,
        status: STATUS_OK.to_string(),
    }
}

fn activation(name: &str) -> Run<ActivationSpec> {
    ActivationSpec::from_name(name).at(|| "activation".into())
}

fn mp(s: &MpSettings, seed: u64, out: &mut Out) -> Run<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, &ratio) in s.ratios.iter().enumerate() {
        let n = ((s.p as f64 / ratio).round() as usize).max(1);
        let c = s.p as f64 / n as f64;
        let at = || format!("mp at c = {ratio}");
        let draw_seed = trial_seed(seed, i as u64);
        let x = if s.rademacher { rademacher_matrix(s.p, n, draw_seed) } else { gaussian_matrix(s.p, n, 1.0, draw_seed) }.at(at)?;
        // For p > n the nonzero spectrum is that of the n × n Gram matrix.
        let mut eigs: Vec<f64> = if n >= s.p {
            eigvalsh(&(&x.entries * x.entries.transpose() / n as f64)).at(at)?.iter().copied().collect()
        } else {
            let mut e = vec![0.0; s.p - n];
            e.extend(eigvalsh(&(x.entries.tr_mul(&x.entries) / n as f64)).at(at)?.iter().map(|v| v.max(0.0)));
            e
        };
        eigs.sort_by(f64::total_cmp);
        let cdf = |v: f64| mp_cdf(c, v).unwrap_or(if v <= 0.0 { 0.0 } else { 1.0 });
        let ks = ks_distance(&eigs, cdf);
        let trace = eigs.iter().map(|l| 1.0 / (l + 1.0)).sum::<f64>() / s.p as f64;
        let m = mp_stieltjes(c, Complex64::new(-1.0, 0.0)).at(at)?.re;
        rows.push(row(ratio, 0.0, "ks_distance", Some(ks), None, Some(0.0), 1));
        rows.push(row(ratio, 0.0, "stieltjes_at_minus_one", Some(trace), None, Some(m), 1));

        let hi = (1.0 + c.sqrt()).powi(2) * 1.05;
        let hist = esd_histogram(&eigs, s.bins, (0.0, hi)).at(at)?;
        out.write(&format!("_c{ratio}"), |w| {
            writeln!(w, "lo,hi,empirical_mass,theory_mass,empirical_density,theory_density")?;
            for (k, &mass) in hist.masses.iter().enumerate() {
                let (lo, hi) = (hist.edges[k], hist.edges[k + 1]);
                let width = hi - lo;
                let theory_mass = cdf(hi) - if k == 0 { 0.0 } else { cdf(lo) };
                let density = mp_density(c, 0.5 * (lo + hi)).unwrap_or(0.0);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt_sig9(lo),
                    fmt_sig9(hi),
                    fmt_sig9(mass),
                    fmt_sig9(theory_mass),
                    fmt_sig9(mass / width),
                    fmt_sig9(density)
                )?;
            }
            Ok(())
        })?;
    }
    Ok(rows)
}

fn histogram_lines(w: &mut dyn Write, variable: &str, values: &[f64], bins: usize, range: (f64, f64)) -> Run<()> {
    let h = esd_histogram(values, bins, range).at(|| format!("{variable} histogram"))?;
    for (k, m) in h.masses.iter().enumerate() {
        writeln!(w, "{variable},{},{},{}", fmt_sig9(h.edges[k]), fmt_sig9(h.edges[k + 1]), fmt_sig9(*m))
            .map_err(|source| RunError::Io { path: PathBuf::from("<histogram>"), source })?;
    }
    Ok(())
}

fn tanh_demo(s: &TanhDemoSettings, seed: u64, out: &mut Out) -> Run<Vec<ResultRow>> {
    let at = || "tanh-demo".to_string();
    let x = sphere_dataset(s.n, s.samples, seed).at(at)?;
    let y = sphere_dataset(s.n, s.samples, trial_seed(seed, 1)).at(at)?;
    let inner: Vec<f64> = (0..s.samples).map(|k| x.entries.column(k).dot(&y.entries.column(k))).collect();
    let root_n = (s.n as f64).sqrt();
    let scaled: Vec<f64> = inner.iter().map(|t| t * root_n).collect();
    let tanh = ActivationSpec::tanh();
    let c = hermite_coeffs(&tanh, DEFAULT_ORDER).at(at)?;

    let taylor: Vec<f64> = inner.iter().map(|&t| (t.tanh() - t).powi(2)).collect();
    let hermite: Vec<f64> = scaled.iter().map(|&t| (t.tanh() - c.a0 - c.a1 * t).powi(2)).collect();
    let (tm, ts) = mean_stderr(&taylor);
    let (hm, hs) = mean_stderr(&hermite);
    let nf = s.n as f64;
    let rows = vec![
        row(nf, 0.0, "taylor_mse", Some(tm), Some(ts), None, s.samples),
        row(nf, 0.0, "hermite_mse", Some(hm), Some(hs), Some(c.nu - c.a0 * c.a0 - c.a1 * c.a1), s.samples),
    ];

    let mut failure = None;
    out.write("_hist", |w| {
        writeln!(w, "variable,lo,hi,mass")?;
        let r = histogram_lines(w, "inner", &inner, s.bins, (-4.0 / root_n, 4.0 / root_n))
            .and_then(|_| histogram_lines(w, "scaled_inner", &scaled, s.bins, (-4.0, 4.0)));
        failure = r.err();
        Ok(())
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    out.write("_curves", |w| {
        writeln!(w, "x,tanh,taylor,hermite")?;
        for k in 0..=200 {
            let t = -4.0 + 0.04 * k as f64;
            writeln!(w, "{},{},{},{}", fmt_sig9(t), fmt_sig9(t.tanh()), fmt_sig9(t), fmt_sig9(c.a0 + c.a1 * t))?;
        }
        Ok(())
    })?;
    Ok(rows)
}

fn ridge(s: &RidgeSettings, seed: u64, out: &mut Out) -> Run<Vec<ResultRow>> {
    let spec = SweepSpec {
        ratios: s.ratios.clone(),
        gammas: s.gammas.clone(),
        trials: s.trials,
        p: s.p,
        sigma2: s.sigma2,
        beta_norm2: s.beta_norm2,
        seed,
        realized_in_sample: s.realized_in_sample,
        test_size: s.test_size,
    };
    let rows = sweep_double_descent(&spec).at(|| "ridge sweep".into())?;
    if s.theory_grid >= 2 {
        let lo = s.ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.ratios.iter().copied().fold(0.0, f64::max);
        let mut gammas = s.gammas.clone();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let mut dense = Vec::new();
        for &gamma in &gammas {
            for k in 0..s.theory_grid {
                let ratio = lo + (hi - lo) * k as f64 / (s.theory_grid - 1) as f64;
                let theory = risk_theory(gamma, 1.0 / ratio, s.beta_norm2, s.sigma2, Regime::Proportional);
                let status = match &theory {
                    Ok(_) => STATUS_OK.to_string(),
                    Err(e) => format!("theory_missing: {e}"),
                };
                for (metric, r_in) in [("r_in", true), ("r_out", false)] {
                    let mut r = row(ratio, gamma, metric, None, None, theory.as_ref().ok().map(|t| if r_in { t.r_in } else { t.r_out }), 0);
                    r.status = status.clone();
                    dense.push(r);
                }
            }
        }
        out.write_core("_theory", |w| write_rows(&dense, w))?;
    }
    Ok(rows)
}

fn kernel_method(choice: KernelChoice, samples: usize, seed: u64) -> KernelMethod {
    match choice {
        KernelChoice::Analytic => KernelMethod::Analytic,
        // Kept off the per-trial weight seeds, which share the weight stream.
        KernelChoice::MonteCarlo => KernelMethod::MonteCarlo { samples, seed: seed.rotate_left(32) ^ 0xa5a5_a5a5 },
    }
}

fn columns(x: &DataMatrix, idx: &[usize]) -> Run<DataMatrix> {
    let m = DMatrix::from_fn(x.p(), idx.len(), |i, j| x.entries[(i, idx[j])]);
    DataMatrix::from_matrix(m, Normalization::None).at(|| "dataset split".into())
}

fn rf(s: &RfSettings, seed: u64) -> Run<Vec<ResultRow>> {
    let (x, y, x_test, y_test) = match &s.dataset {
        None => {
            let t = SignTask::generate(s.p, s.n, s.n_test, seed).at(|| "synthetic task".into())?;
            (t.x, t.y, t.x_test, t.y_test)
        }
        Some(path) => {
            let (data, labels) = ingest_dataset(path, &s.labels, s.normalization, s.has_header)
                .map_err(|e| RunError::Input(format!("dataset {}: {e}", path.display())))?;
            if data.n() < s.n + s.n_test {
                return Err(RunError::Input(format!(
                    "dataset {} has {} samples, fewer than n + n_test = {}",
                    path.display(),
                    data.n(),
                    s.n + s.n_test
                )));
            }
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut stream_rng(seed, STREAM_TEST));
            let (train, test) = (&order[..s.n], &order[s.n..s.n + s.n_test]);
            let pick = |idx: &[usize]| DVector::from_fn(idx.len(), |i, _| labels[idx[i]]);
            (columns(&data, train)?, pick(train), columns(&data, test)?, pick(test))
        }
    };
    let spec = RfSweepSpec {
        d_ratios: s.d_ratios.clone(),
        gammas: s.gammas.clone(),
        trials: s.trials,
        activation: activation(&s.activation)?,
        kernel: kernel_method(s.kernel, s.kernel_samples, seed),
        seed,
        tol: s.tol,
    };
    rf_sweep(&x, &y, &x_test, &y_test, &spec).at(|| "random-feature sweep".into())
}

fn kernel_lin(s: &KernelLinSettings, seed: u64, out: &mut Out) -> Run<Vec<ResultRow>> {
    let act = activation(&s.activation)?;
    let c = hermite_coeffs(&act, DEFAULT_ORDER).at(|| "Hermite coefficients".into())?;
    let mut table = vec![(act.name().to_string(), c)];
    if let Ok(norm) = normalize_activation(&act, DEFAULT_ORDER) {
        table.push((norm.name().to_string(), hermite_coeffs(&norm, DEFAULT_ORDER).at(|| "Hermite coefficients".into())?));
    }
    out.write_core("_coeffs", |w| write_coeffs_csv(&table, w))?;
    let mut rows = Vec::new();
    for (i, &dim) in s.dims.iter().enumerate() {
        let at = || format!("kernel-lin at p = n = {dim}");
        let x = sphere_dataset(dim, dim, trial_seed(seed, i as u64)).at(at)?;
        let k = kernel_expectation(&x, &x, &act, kernel_method(s.kernel, s.kernel_samples, trial_seed(seed, i as u64))).at(at)?;
        let k = (&k + k.transpose()) * 0.5;
        let gap = relative_spectral_gap(&k, &linear_equivalent_kernel(&x, &c)).at(at)?;
        rows.push(row(dim as f64, 0.0, "relative_gap", Some(gap), None, Some(0.0), 1));
    }
    Ok(rows)
}

fn ck_depth(s: &CkDepthSettings, seed: u64) -> Run<Vec<ResultRow>> {
    let at = || "ck-depth".to_string();
    let act = normalize_activation(&activation(&s.activation)?, DEFAULT_ORDER).at(at)?;
    let acts = vec![act; s.layers];
    let params = ck_alphas(&acts, DEFAULT_ORDER).at(at)?;
    let x = sphere_dataset(s.p, s.n, seed).at(at)?;
    let feats = if s.empirical_layers > 0 {
        network_features(&x, &acts[..s.empirical_layers], s.width, trial_seed(seed, 1)).at(at)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for l in 0..=s.layers {
        let (a1, a2) = params.alphas[l];
        let lf = l as f64;
        rows.push(row(lf, 0.0, "alpha1", None, None, Some(a1), 0));
        rows.push(row(lf, 0.0, "alpha2", None, None, Some(a2), 0));
        let k = ck_linear_equivalent(&x, &params, l).at(at)?;
        let theory = distance_to_identity(&k).at(at)?;
        let (emp, gap) = match l.checked_sub(1).and_then(|i| feats.get(i)) {
            Some(f) => {
                let ck = empirical_ck(f);
                (Some(distance_to_identity(&ck).at(at)?), Some(relative_spectral_gap(&ck, &k).at(at)?))
            }
            None => (None, None),
        };
        let trials = usize::from(emp.is_some());
        rows.push(row(lf, 0.0, "distance_to_identity", emp, None, Some(theory), trials));
        if let Some(g) = gap {
            rows.push(row(lf, 0.0, "ck_relative_gap", Some(g), None, Some(0.0), 1));
        }
    }
    Ok(rows)
}

fn dynamics(s: &DynamicsSettings, seed: u64, out: &mut Out) -> Run<Vec<ResultRow>> {
    let at = || "dynamics".to_string();
    let column = |m: DataMatrix| m.entries.column(0).into_owned();
    let phi = gaussian_matrix(s.d, s.n, 1.0, seed).at(at)?.entries;
    let y = column(gaussian_matrix(s.n, 1, 1.0, trial_seed(seed, 1)).at(at)?);
    let beta0 = column(gaussian_matrix(s.d, 1, 0.01, trial_seed(seed, 2)).at(at)?);
    let v = column(gaussian_matrix(s.d, 1, 1.0 / s.d as f64, trial_seed(seed, 3)).at(at)?);
    let flow = GradientFlow::new(&phi, &y).at(at)?;
    let unit = if s.relative_times { 1.0 / (s.eta * flow.lambda_max()) } else { 1.0 };
    let times: Vec<f64> = s.times.iter().map(|m| m * unit).collect();
    let traj = gradient_flow_trajectory(&phi, &y, &beta0, s.eta, &times, Some(&v)).at(at)?;
    let contour = dynamics_contour(flow.lambda_max(), s.nodes).at(at)?;

    let mut rows = Vec::new();
    for sample in &traj {
        let mut r = row(sample.t, 0.0, "projection", None, None, sample.projection, 1);
        match flow.contour_projection(&v, &beta0, s.eta, sample.t, &contour) {
            Ok(value) => r.empirical_mean = Some(value),
            Err(e) => {
                r.trials = 0;
                r.status = format!("contour_unavailable: {e}");
            }
        }
        rows.push(r);
        rows.push(row(sample.t, 0.0, "loss", Some(sample.loss), None, None, 1));
    }
    out.write_core("_trajectory", |w| write_trajectory_csv(&traj, w))?;

    if s.ntk_layers > 0 {
        let act = normalize_activation(&activation(&s.activation)?, DEFAULT_ORDER).at(at)?;
        let x = sphere_dataset(s.d.max(2), s.n, trial_seed(seed, 4)).at(at)?;
        let acts = vec![act; s.ntk_layers];
        let (ck, kp) = ntk_layer_kernels(&x, &acts, DEFAULT_ORDER, DerivativeKernel::Linearized).at(at)?;
        let k = ntk_recursion(&ck, &kp, &x.entries.tr_mul(&x.entries)).at(at)?;
        let lmax = eigvalsh(&k).at(at)?.max();
        let unit = if s.relative_times { 1.0 / (s.eta * lmax) } else { 1.0 };
        let times: Vec<f64> = s.times.iter().map(|m| m * unit).collect();
        let ntk = ntk_trajectory(&k, &y, &DVector::zeros(s.n), s.eta, &times).at(at)?;
        for sample in &ntk {
            rows.push(row(sample.t, 0.0, "ntk_loss", Some(sample.loss), None, None, 1));
        }
        out.write_core("_ntk", |w| write_trajectory_csv(&ntk, w))?;
    }
    Ok(rows)
}
