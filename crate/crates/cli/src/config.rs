//! Flat TOML experiment configs: typed lookup with defaults, validation that
//! reports every problem at once, and an echo of the resolved settings.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rmt_core::activation::ActivationSpec;
use rmt_core::randgen::Normalization;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Mp,
    TanhDemo,
    RidgeSweep,
    RfSweep,
    KernelLin,
    CkDepth,
    Dynamics,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::Mp,
        Self::TanhDemo,
        Self::RidgeSweep,
        Self::RfSweep,
        Self::KernelLin,
        Self::CkDepth,
        Self::Dynamics,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Mp => "mp",
            Self::TanhDemo => "tanh-demo",
            Self::RidgeSweep => "ridge-sweep",
            Self::RfSweep => "rf-sweep",
            Self::KernelLin => "kernel-lin",
            Self::CkDepth => "ck-depth",
            Self::Dynamics => "dynamics",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|e| e.tag() == s).ok_or_else(|| {
            let tags: Vec<&str> = Self::ALL.iter().map(|e| e.tag()).collect();
            format!("unknown experiment `{s}` (expected one of {})", tags.join(", "))
        })
    }
}

/// Kernel evaluation choice for the random-feature experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpSettings {
    pub ratios: Vec<f64>,
    pub p: usize,
    pub rademacher: bool,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhDemoSettings {
    pub n: usize,
    pub samples: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSettings {
    pub ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub p: usize,
    pub sigma2: f64,
    pub beta_norm2: f64,
    pub realized_in_sample: bool,
    pub test_size: Option<usize>,
    pub theory_grid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfSettings {
    pub n: usize,
    pub p: usize,
    pub n_test: usize,
    pub d_ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub activation: String,
    pub kernel: KernelChoice,
    pub kernel_samples: usize,
    pub tol: f64,
    pub dataset: Option<PathBuf>,
    pub labels: Vec<String>,
    pub normalization: Normalization,
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelLinSettings {
    pub activation: String,
    pub dims: Vec<usize>,
    pub kernel: KernelChoice,
    pub kernel_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkDepthSettings {
    pub activation: String,
    pub layers: usize,
    pub p: usize,
    pub n: usize,
    pub width: usize,
    pub empirical_layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSettings {
    pub d: usize,
    pub n: usize,
    pub eta: f64,
    pub times: Vec<f64>,
    /// Times are multiples of `1/(ηλ_max)` rather than absolute.
    pub relative_times: bool,
    pub nodes: usize,
    pub ntk_layers: usize,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Settings {
    Mp(MpSettings),
    TanhDemo(TanhDemoSettings),
    Ridge(RidgeSettings),
    Rf(RfSettings),
    KernelLin(KernelLinSettings),
    CkDepth(CkDepthSettings),
    Dynamics(DynamicsSettings),
}

/// A config that passed validation, with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub experiment: Experiment,
    pub seed: u64,
    /// File stem of the outputs.
    pub stem: String,
    pub settings: Settings,
    pub warnings: Vec<String>,
    /// The resolved key-value map, suitable for echoing.
    pub resolved: Table,
}

/// Command-line inputs that feed into validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed_env: Option<String>,
    pub dataset: Option<PathBuf>,
    pub header: bool,
}

struct Params<'a> {
    table: &'a Table,
    used: BTreeSet<String>,
    errors: Vec<String>,
    resolved: Table,
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl<'a> Params<'a> {
    fn new(table: &'a Table) -> Self {
        Self { table, used: BTreeSet::new(), errors: Vec::new(), resolved: Table::new() }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.table.get(key)
    }

    fn error(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        let v = match self.raw(key) {
            None => default,
            Some(v) => as_f64(v).unwrap_or_else(|| {
                self.error(format!("`{key}` must be a number"));
                default
            }),
        };
        self.resolved.insert(key.into(), Value::Float(v));
        v
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let v = self.f64(key, default);
        if !(v > 0.0) || !v.is_finite() {
            self.error(format!("`{key}` must be positive, got {v}"));
        }
        v
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> usize {
        let v = match self.raw(key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(_) => {
                self.error(format!("`{key}` must be a nonnegative integer"));
                default
            }
        };
        if v < min {
            self.error(format!("`{key}` must be at least {min}, got {v}"));
        }
        self.resolved.insert(key.into(), Value::Integer(v as i64));
        v
    }

    fn optional_count(&mut self, key: &str) -> Option<usize> {
        let v = match self.raw(key) {
            None => None,
            Some(Value::Integer(i)) if *i > 0 => Some(*i as usize),
            Some(_) => {
                self.error(format!("`{key}` must be a positive integer"));
                None
            }
        };
        if let Some(v) = v {
            self.resolved.insert(key.into(), Value::Integer(v as i64));
        }
        v
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        let v = match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.error(format!("`{key}` must be true or false"));
                default
            }
        };
        self.resolved.insert(key.into(), Value::Boolean(v));
        v
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        let v = match self.raw(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.error(format!("`{key}` must be a string"));
                default.to_string()
            }
        };
        self.resolved.insert(key.into(), Value::String(v.clone()));
        v
    }

    fn optional_string(&mut self, key: &str) -> Option<String> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => {
                self.resolved.insert(key.into(), Value::String(s.clone()));
                Some(s.clone())
            }
            Some(_) => {
                self.error(format!("`{key}` must be a string"));
                None
            }
        }
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let v = match self.raw(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let parsed: Option<Vec<f64>> = items.iter().map(as_f64).collect();
                parsed.unwrap_or_else(|| {
                    self.error(format!("`{key}` must be a list of numbers"));
                    default.to_vec()
                })
            }
            Some(v) => match as_f64(v) {
                Some(x) => vec![x],
                None => {
                    self.error(format!("`{key}` must be a list of numbers"));
                    default.to_vec()
                }
            },
        };
        if v.is_empty() {
            self.error(format!("`{key}` must not be empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            self.error(format!("`{key}` must contain finite numbers"));
        }
        self.resolved.insert(key.into(), Value::Array(v.iter().map(|&x| Value::Float(x)).collect()));
        v
    }

    fn positive_list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let v = self.list(key, default);
        if v.iter().any(|&x| !(x > 0.0)) {
            self.error(format!("`{key}` entries must be positive"));
        }
        v
    }

    fn strings(&mut self, key: &str) -> Vec<String> {
        let v = match self.raw(key) {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => Some(s.clone()),
                    Value::Integer(n) => Some(n.to_string()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .unwrap_or_else(|| {
                    self.error(format!("`{key}` must be a list of strings"));
                    Vec::new()
                }),
            Some(_) => {
                self.error(format!("`{key}` must be a list of strings"));
                Vec::new()
            }
        };
        if !v.is_empty() {
            self.resolved.insert(key.into(), Value::Array(v.iter().map(|s| Value::String(s.clone())).collect()));
        }
        v
    }

    fn activation(&mut self, key: &str, default: &str) -> String {
        let name = self.string(key, default);
        if let Err(e) = ActivationSpec::from_name(&name) {
            self.error(format!("`{key}`: {e}"));
        }
        name
    }

    fn kernel(&mut self, activation: &str) -> (KernelChoice, usize) {
        let default = if matches!(activation, "relu" | "identity" | "linear") { "analytic" } else { "monte-carlo" };
        let tag = self.string("kernel", default);
        let samples = self.count("kernel_samples", rmt_core::rf_nn::KernelMethod::DEFAULT_SAMPLES, 1);
        let choice = match tag.as_str() {
            "analytic" => {
                if !matches!(activation, "relu" | "identity" | "linear") {
                    self.error(format!("`kernel = \"analytic\"` is available only for relu and identity, not `{activation}`"));
                }
                KernelChoice::Analytic
            }
            "monte-carlo" => KernelChoice::MonteCarlo,
            other => {
                self.error(format!("`kernel` must be \"analytic\" or \"monte-carlo\", got `{other}`"));
                KernelChoice::Analytic
            }
        };
        (choice, samples)
    }
}

pub const DEFAULT_RIDGE_RATIOS: [f64; 10] = [0.25, 0.5, 0.75, 0.85, 0.95, 1.0, 1.05, 1.2, 1.5, 2.0];

/// Checks `table` for `experiment`; on failure returns every violation.
pub fn validate(experiment_tag: &str, table: &Table, overrides: &Overrides) -> Result<Validated, Vec<String>> {
    let mut errors = Vec::new();
    let experiment = match experiment_tag.parse::<Experiment>() {
        Ok(e) => Some(e),
        Err(e) => {
            errors.push(e);
            None
        }
    };
    let mut p = Params::new(table);
    if let (Some(Value::String(tag)), Some(e)) = (p.raw("experiment"), experiment) {
        if tag != e.tag() {
            p.error(format!("config is for `{tag}` but `{e}` was requested"));
        }
    }

    let seed = match p.raw("seed") {
        None => {
            p.error("missing required key `seed`".into());
            0
        }
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => {
            p.error("`seed` must be a nonnegative integer".into());
            0
        }
    };
    let seed = match &overrides.seed_env {
        Some(raw) => raw.trim().parse::<u64>().unwrap_or_else(|_| {
            p.error(format!("RMT_EQUIV_SEED must be a nonnegative integer, got `{raw}`"));
            seed
        }),
        None => seed,
    };
    p.resolved.insert("seed".into(), Value::Integer(seed as i64));
    let stem = p.optional_string("output").unwrap_or_else(|| experiment.map(|e| e.tag().to_string()).unwrap_or_default());
    if stem.contains(['/', '\\']) || stem.is_empty() && experiment.is_some() {
        p.error("`output` must be a plain file stem".into());
    }

    let mut warnings = Vec::new();
    let settings = experiment.map(|e| match e {
        Experiment::Mp => {
            let ratios = p.positive_list("ratios", &[0.1, 0.5, 1.0, 2.0]);
            let pdim = p.count("p", 1024, 2);
            let dist = p.string("distribution", "gaussian");
            if dist != "gaussian" && dist != "rademacher" {
                p.error(format!("`distribution` must be \"gaussian\" or \"rademacher\", got `{dist}`"));
            }
            let bins = p.count("bins", 80, 1);
            for &c in &ratios {
                if ((pdim as f64 / c).round() as usize) < 1 {
                    p.error(format!("ratio {c} leaves no samples at p = {pdim}"));
                }
            }
            Settings::Mp(MpSettings { ratios, p: pdim, rademacher: dist == "rademacher", bins })
        }
        Experiment::TanhDemo => Settings::TanhDemo(TanhDemoSettings {
            n: p.count("n", 500, 2),
            samples: p.count("samples", 20_000, 2),
            bins: p.count("bins", 50, 1),
        }),
        Experiment::RidgeSweep => {
            let ratios = p.positive_list("ratios", &DEFAULT_RIDGE_RATIOS);
            let gammas = p.list("gammas", &[1e-5, 0.1]);
            if gammas.iter().any(|&g| g < 0.0) {
                p.error("`gammas` entries must be nonnegative".into());
            }
            let s = RidgeSettings {
                ratios,
                gammas,
                trials: p.count("trials", 30, 1),
                p: p.count("p", 512, 1),
                sigma2: p.f64("sigma2", 0.1),
                beta_norm2: p.f64("beta_norm2", 1.0),
                realized_in_sample: p.boolean("realized_in_sample", false),
                test_size: p.optional_count("test_size"),
                theory_grid: p.count("theory_grid", 0, 0),
            };
            if s.sigma2 < 0.0 || s.beta_norm2 < 0.0 {
                p.error("`sigma2` and `beta_norm2` must be nonnegative".into());
            }
            if s.gammas.contains(&0.0) {
                for &r in s.ratios.iter().filter(|&&r| ((r * s.p as f64).round() as usize) == s.p) {
                    warnings.push(format!("ratio {r} with γ = 0 sits on the interpolation peak; theory is singular there"));
                }
            }
            Settings::Ridge(s)
        }
        Experiment::RfSweep => {
            let activation = p.activation("activation", "relu");
            let (kernel, kernel_samples) = p.kernel(&activation);
            let dataset = overrides.dataset.clone().or_else(|| p.optional_string("dataset").map(PathBuf::from));
            if let Some(d) = &dataset {
                p.resolved.insert("dataset".into(), Value::String(d.display().to_string()));
            }
            let norm = p.string("normalization", "unit-sphere");
            let normalization = norm.parse::<Normalization>().unwrap_or_else(|e| {
                p.error(format!("`normalization`: {e}"));
                Normalization::UnitSphere
            });
            let header = p.boolean("header", false) || overrides.header;
            p.resolved.insert("header".into(), Value::Boolean(header));
            let gammas = p.positive_list("gammas", &[0.1]);
            Settings::Rf(RfSettings {
                n: p.count("n", 512, 2),
                p: p.count("p", 256, 2),
                n_test: p.count("n_test", 512, 1),
                d_ratios: p.positive_list("d_ratios", &[0.25, 0.5, 1.0, 2.0]),
                gammas,
                trials: p.count("trials", 30, 1),
                activation,
                kernel,
                kernel_samples,
                tol: p.positive("tol", 1e-12),
                dataset,
                labels: p.strings("labels"),
                normalization,
                has_header: header,
            })
        }
        Experiment::KernelLin => {
            let activation = p.activation("activation", "relu");
            let (kernel, kernel_samples) = p.kernel(&activation);
            let dims = p.positive_list("dims", &[128.0, 256.0, 512.0, 1024.0]);
            if dims.iter().any(|&d| d.fract() != 0.0 || d < 2.0) {
                p.error("`dims` must be integers ≥ 2".into());
            }
            Settings::KernelLin(KernelLinSettings {
                activation,
                dims: dims.iter().map(|&d| d as usize).collect(),
                kernel,
                kernel_samples,
            })
        }
        Experiment::CkDepth => {
            let s = CkDepthSettings {
                activation: p.activation("activation", "tanh"),
                layers: p.count("layers", 10, 1),
                p: p.count("p", 256, 2),
                n: p.count("n", 256, 1),
                width: p.count("width", 8192, 0),
                empirical_layers: p.count("empirical_layers", 2, 0),
            };
            if s.empirical_layers > s.layers {
                p.error(format!("`empirical_layers` ({}) exceeds `layers` ({})", s.empirical_layers, s.layers));
            }
            if s.empirical_layers > 0 && s.width == 0 {
                p.error("`width` must be positive when `empirical_layers` > 0".into());
            }
            Settings::CkDepth(s)
        }
        Experiment::Dynamics => {
            let unit = p.string("time_unit", "lambda-max");
            if unit != "lambda-max" && unit != "absolute" {
                p.error(format!("`time_unit` must be \"lambda-max\" or \"absolute\", got `{unit}`"));
            }
            let times = p.list("times", &[0.0, 0.1, 1.0, 10.0]);
            if times.iter().any(|&t| t < 0.0) {
                p.error("`times` must be nonnegative".into());
            }
            let s = DynamicsSettings {
                d: p.count("d", 24, 1),
                n: p.count("n", 40, 1),
                eta: p.positive("eta", 1.0),
                times,
                relative_times: unit == "lambda-max",
                nodes: p.count("nodes", 512, 16),
                ntk_layers: p.count("ntk_layers", 2, 0),
                activation: p.activation("activation", "tanh"),
            };
            if s.d > s.n {
                p.error(format!("gradient flow needs d ≤ n, got d = {} and n = {}", s.d, s.n));
            }
            Settings::Dynamics(s)
        }
    });

    if experiment.is_some() {
        for key in table.keys().filter(|k| !p.used.contains(k.as_str())) {
            p.errors.push(format!("unknown key `{key}`"));
        }
    }
    errors.extend(p.errors);
    match (experiment, settings, errors.is_empty()) {
        (Some(experiment), Some(settings), true) => {
            let mut resolved = p.resolved;
            resolved.insert("experiment".into(), Value::String(experiment.tag().into()));
            resolved.insert("output".into(), Value::String(stem.clone()));
            Ok(Validated { experiment, seed, stem, settings, warnings, resolved })
        }
        _ => Err(errors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(src: &str) -> Table {
        src.parse().unwrap()
    }

    #[test]
    fn missing_seed_is_one_error() {
        let errs = validate("ridge-sweep", &table("p = 64"), &Overrides::default()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("seed"));
    }

    #[test]
    fn all_errors_reported_together() {
        let errs = validate("ridge-sweep", &table("p = -3\ntrials = 0\nratios = []\ncolour = 1"), &Overrides::default()).unwrap_err();
        assert!(errs.len() >= 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("colour")));
    }

    #[test]
    fn peak_warning_not_fatal() {
        let v = validate("ridge-sweep", &table("seed = 1\np = 100\nratios = [0.5, 1.0]\ngammas = [0.0]"), &Overrides::default()).unwrap();
        assert_eq!(v.warnings.len(), 1);
    }

    #[test]
    fn defaults_filled() {
        let v = validate("ridge-sweep", &table("seed = 3"), &Overrides::default()).unwrap();
        let Settings::Ridge(s) = &v.settings else { panic!() };
        assert_eq!((s.p, s.trials, s.sigma2, s.beta_norm2), (512, 30, 0.1, 1.0));
        assert_eq!(s.gammas, vec![1e-5, 0.1]);
        assert_eq!(v.resolved["p"].as_integer(), Some(512));
        assert_eq!(v.stem, "ridge-sweep");
    }

    #[test]
    fn env_seed_overrides() {
        let o = Overrides { seed_env: Some("99".into()), ..Overrides::default() };
        assert_eq!(validate("mp", &table("seed = 1"), &o).unwrap().seed, 99);
        let bad = Overrides { seed_env: Some("x".into()), ..Overrides::default() };
        assert!(validate("mp", &table("seed = 1"), &bad).is_err());
    }

    #[test]
    fn unknown_experiment() {
        let errs = validate("nope", &table("seed = 1"), &Overrides::default()).unwrap_err();
        assert!(errs[0].contains("unknown experiment"));
    }

    #[test]
    fn analytic_kernel_needs_closed_form() {
        let errs = validate("rf-sweep", &table("seed = 1\nactivation = \"tanh\"\nkernel = \"analytic\""), &Overrides::default()).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("analytic")));
        let ok = validate("rf-sweep", &table("seed = 1\nactivation = \"tanh\""), &Overrides::default()).unwrap();
        let Settings::Rf(s) = ok.settings else { panic!() };
        assert_eq!(s.kernel, KernelChoice::MonteCarlo);
    }

    #[test]
    fn experiment_key_must_match() {
        assert!(validate("mp", &table("seed = 1\nexperiment = \"dynamics\""), &Overrides::default()).is_err());
        assert!(validate("mp", &table("seed = 1\nexperiment = \"mp\""), &Overrides::default()).is_ok());
    }
}
