//! Pointwise activation functions with their (almost-everywhere) derivatives.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Activations with a known closed-form random-feature kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Identity,
    Relu,
    Tanh,
    Sign,
    Custom,
}

#[derive(Clone)]
pub struct ActivationSpec {
    name: String,
    kind: ActivationKind,
    f: Scalar,
    df: Scalar,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec").field("name", &self.name).field("kind", &self.kind).finish()
    }
}

impl ActivationSpec {
    pub fn identity() -> Self {
        Self::builtin("identity", ActivationKind::Identity, |t| t, |_| 1.0)
    }

    /// `max(t, 0)` with the step function as derivative.
    pub fn relu() -> Self {
        Self::builtin("relu", ActivationKind::Relu, |t| t.max(0.0), |t| if t > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh() -> Self {
        Self::builtin("tanh", ActivationKind::Tanh, f64::tanh, |t| 1.0 - t.tanh().powi(2))
    }

    /// `sign(t)`, with `sign(0) = 0`. Not Lipschitz; its a.e. derivative is 0.
    pub fn sign() -> Self {
        Self::builtin("sign", ActivationKind::Sign, |t| if t > 0.0 { 1.0 } else if t < 0.0 { -1.0 } else { 0.0 }, |_| 0.0)
    }

    fn builtin(
        name: &str,
        kind: ActivationKind,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.to_string(), kind, f: Arc::new(f), df: Arc::new(df) }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), kind: ActivationKind::Custom, f: Arc::new(f), df: Arc::new(df) }
    }

    /// Looks up a built-in activation by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "linear" => Ok(Self::identity()),
            "relu" => Ok(Self::relu()),
            "tanh" => Ok(Self::tanh()),
            "sign" => Ok(Self::sign()),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        (self.df)(t)
    }

    /// The derivative as an activation in its own right. Its derivative is
    /// not tracked and reported as NaN.
    pub fn derivative_activation(&self) -> Self {
        let df = self.df.clone();
        Self {
            name: format!("d_{}", self.name),
            kind: ActivationKind::Custom,
            f: df,
            df: Arc::new(|_| f64::NAN),
        }
    }

    /// `t ↦ (φ(t) − shift)/scale`, derivative scaled accordingly.
    pub fn affine(&self, name: impl Into<String>, shift: f64, scale: f64) -> Self {
        let (f, df) = (self.f.clone(), self.df.clone());
        Self {
            name: name.into(),
            kind: if shift == 0.0 && scale == 1.0 { self.kind } else { ActivationKind::Custom },
            f: Arc::new(move |t| (f(t) - shift) / scale),
            df: Arc::new(move |t| df(t) / scale),
        }
    }

    /// Largest difference quotient over a grid of spacing 1e-3 on `[−20, 20]`.
    /// Infinite Lipschitz constants show up as values of order 1e3 or more.
    pub fn lipschitz_estimate(&self) -> f64 {
        let h = 1e-3;
        let steps = (40.0 / h) as usize;
        let mut prev = self.eval(-20.0);
        let mut worst: f64 = 0.0;
        for k in 1..=steps {
            let v = self.eval(-20.0 + k as f64 * h);
            worst = worst.max((v - prev).abs() / h);
            prev = v;
        }
        worst
    }
}
