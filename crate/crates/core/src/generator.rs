//! Convex generators and their affine standardization.
//!
//! A generator is stored as a "core" function plus an explicit affine part,
//! `B(y) = core(y) + slope * y + offset`. Standardization drops the affine
//! part and the first-order Taylor term of the core at zero, so affine shifts
//! of a generator cancel exactly instead of through floating-point
//! subtraction.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Probe points used by the derivative consistency checks.
pub const PROBE_GRID: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Step for the one-sided right derivative at zero of user generators.
const ZERO_STEP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Derivatives {
    /// Closed-form derivatives, including the right derivative at zero.
    Analytic,
    /// User-supplied; the right derivative at zero is a one-sided difference.
    User,
}

/// A twice differentiable, strictly convex function on `[0, inf)`.
#[derive(Clone)]
pub struct ConvexGenerator {
    label: String,
    core: ScalarFn,
    core_d1: ScalarFn,
    core_d2: Option<ScalarFn>,
    slope: f64,
    offset: f64,
    derivatives: Derivatives,
}

impl fmt::Debug for ConvexGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexGenerator")
            .field("label", &self.label)
            .field("slope", &self.slope)
            .field("offset", &self.offset)
            .field("derivatives", &self.derivatives)
            .finish()
    }
}

impl ConvexGenerator {
    fn analytic(label: String, core: ScalarFn, core_d1: ScalarFn, core_d2: ScalarFn) -> Self {
        ConvexGenerator {
            label,
            core,
            core_d1,
            core_d2: Some(core_d2),
            slope: 0.0,
            offset: 0.0,
            derivatives: Derivatives::Analytic,
        }
    }

    /// A user generator given only by its values. Both derivatives are
    /// central differences.
    pub fn custom<F>(label: impl Into<String>, value: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let value: ScalarFn = Arc::new(value);
        let v = value.clone();
        let d1: ScalarFn = Arc::new(move |y| first_difference(&*v, y));
        ConvexGenerator {
            label: label.into(),
            core: value,
            core_d1: d1,
            core_d2: None,
            slope: 0.0,
            offset: 0.0,
            derivatives: Derivatives::User,
        }
    }

    /// A user generator with an exact first derivative. `B''` is a central
    /// difference of `B'` with step `1e-5 * max(1, y)`.
    pub fn custom_with_derivative<F, D>(label: impl Into<String>, value: F, deriv1: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ConvexGenerator {
            label: label.into(),
            core: Arc::new(value),
            core_d1: Arc::new(deriv1),
            core_d2: None,
            slope: 0.0,
            offset: 0.0,
            derivatives: Derivatives::User,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.core)(y) + self.slope * y + self.offset
    }

    /// `B'(y)`; at `y = 0` this is the right derivative.
    pub fn deriv1(&self, y: f64) -> f64 {
        if y == 0.0 {
            return self.core_right_deriv_at_zero() + self.slope;
        }
        (self.core_d1)(y) + self.slope
    }

    pub fn deriv2(&self, y: f64) -> f64 {
        match &self.core_d2 {
            Some(d2) => d2(y),
            None => {
                let h = 1e-5 * y.abs().max(1.0);
                let d1 = |t: f64| (self.core_d1)(t);
                if y >= h {
                    (d1(y + h) - d1(y - h)) / (2.0 * h)
                } else {
                    (-3.0 * d1(y) + 4.0 * d1(y + h) - d1(y + 2.0 * h)) / (2.0 * h)
                }
            }
        }
    }

    /// Adds `slope * y + offset`. The divergences generated are unchanged.
    pub fn shifted(mut self, slope: f64, offset: f64) -> Self {
        self.slope += slope;
        self.offset += offset;
        self.label = format!("{} + ({slope})y + ({offset})", self.label);
        self
    }

    /// Multiplies the whole generator by `k`.
    pub fn scaled(self, k: f64) -> Self {
        let core = self.core.clone();
        let d1 = self.core_d1.clone();
        let d2 = self.core_d2.clone();
        ConvexGenerator {
            label: format!("{k}*[{}]", self.label),
            core: Arc::new(move |y| k * core(y)),
            core_d1: Arc::new(move |y| k * d1(y)),
            core_d2: d2.map(|d2| Arc::new(move |y| k * d2(y)) as ScalarFn),
            slope: k * self.slope,
            offset: k * self.offset,
            derivatives: self.derivatives,
        }
    }

    fn core_right_deriv_at_zero(&self) -> f64 {
        match self.derivatives {
            Derivatives::Analytic => (self.core_d1)(0.0),
            Derivatives::User => {
                let b0 = (self.core)(0.0);
                (((self.core)(ZERO_STEP)) - b0) / ZERO_STEP
            }
        }
    }

    /// For user generators, checks whether the one-sided difference quotient
    /// at zero settles as the step shrinks. Differences of a smooth function
    /// shrink tenfold per decade of step; a logarithmic blow-up changes by a
    /// constant amount instead.
    fn zero_derivative_diverges(&self) -> bool {
        if self.derivatives == Derivatives::Analytic {
            return false;
        }
        if (self.core_d1)(0.0).is_infinite() {
            return true;
        }
        let b0 = (self.core)(0.0);
        let q = |h: f64| ((self.core)(h) - b0) / h;
        let (q8, q7, q6) = (q(1e-8), q(1e-7), q(1e-6));
        let fine = (q7 - q8).abs();
        let coarse = (q6 - q7).abs();
        fine > 1e-6 * q8.abs().max(1.0) && coarse < 3.0 * fine
    }
}

/// `B*(y) = B(y) - B(0) - B'(0) y`, with `B*(0) = 0 = B*'(0)` exactly.
#[derive(Clone, Debug)]
pub struct StandardizedGenerator {
    inner: ConvexGenerator,
    b0: f64,
    bp0: f64,
    core0: f64,
    core_bp0: f64,
}

impl StandardizedGenerator {
    pub fn label(&self) -> &str {
        &self.inner.label
    }

    pub fn inner(&self) -> &ConvexGenerator {
        &self.inner
    }

    /// `B(0)` of the generator before standardization.
    pub fn b0(&self) -> f64 {
        self.b0
    }

    /// `B'(0)` of the generator before standardization.
    pub fn bp0(&self) -> f64 {
        self.bp0
    }

    pub fn eval(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        (self.inner.core)(y) - self.core0 - self.core_bp0 * y
    }

    pub fn deriv1(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        (self.inner.core_d1)(y) - self.core_bp0
    }

    pub fn deriv2(&self, y: f64) -> f64 {
        self.inner.deriv2(y)
    }

    /// `K * B*`, still standardized.
    pub fn scaled(&self, k: f64) -> Result<StandardizedGenerator> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {k}")));
        }
        standardize(&self.as_generator().scaled(k))
    }

    /// View `B*` as a plain generator (with zero affine part).
    pub fn as_generator(&self) -> ConvexGenerator {
        let s = self.clone();
        let s1 = self.clone();
        let s2 = self.clone();
        ConvexGenerator {
            label: self.inner.label.clone(),
            core: Arc::new(move |y| s.eval(y)),
            core_d1: Arc::new(move |y| s1.deriv1(y)),
            core_d2: Some(Arc::new(move |y| s2.deriv2(y))),
            slope: 0.0,
            offset: 0.0,
            derivatives: Derivatives::Analytic,
        }
    }
}

pub fn standardize(b: &ConvexGenerator) -> Result<StandardizedGenerator> {
    let core0 = (b.core)(0.0);
    if !core0.is_finite() || !b.offset.is_finite() {
        return Err(Error::NotStandardizable {
            label: b.label.clone(),
            what: "B",
            value: core0 + b.offset,
        });
    }
    let core_bp0 = b.core_right_deriv_at_zero();
    let diverges = b.zero_derivative_diverges();
    if diverges || !core_bp0.is_finite() || !b.slope.is_finite() {
        return Err(Error::NotStandardizable {
            label: b.label.clone(),
            what: "B'",
            value: if diverges { f64::NEG_INFINITY } else { core_bp0 + b.slope },
        });
    }
    Ok(StandardizedGenerator {
        inner: b.clone(),
        b0: core0 + b.offset,
        bp0: core_bp0 + b.slope,
        core0,
        core_bp0,
    })
}

fn first_difference(f: &(dyn Fn(f64) -> f64 + Send + Sync), y: f64) -> f64 {
    let h = 6e-6 * y.abs().max(1.0);
    if y >= h {
        (f(y + h) - f(y - h)) / (2.0 * h)
    } else {
        (-3.0 * f(y) + 4.0 * f(y + h) - f(y + 2.0 * h)) / (2.0 * h)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("alpha must be positive, got {alpha}")))
    }
}

/// The density power divergence generator `(y^(1+a) - y) / a`.
pub fn dpd_generator(alpha: f64) -> Result<ConvexGenerator> {
    check_alpha(alpha)?;
    let g = ConvexGenerator::analytic(
        format!("dpd(alpha={alpha})"),
        Arc::new(move |y: f64| y.powf(1.0 + alpha) / alpha),
        Arc::new(move |y: f64| (1.0 + alpha) / alpha * y.powf(alpha)),
        Arc::new(move |y: f64| (1.0 + alpha) * y.powf(alpha - 1.0)),
    );
    Ok(ConvexGenerator {
        slope: -1.0 / alpha,
        ..g
    })
}

/// `K y^(1+alpha) + K2 y + K3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGenerator {
    pub k: f64,
    pub alpha: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
}

impl PowerGenerator {
    pub fn new(k: f64, alpha: f64) -> Result<Self> {
        Self::with_affine(k, alpha, 0.0, 0.0)
    }

    pub fn with_affine(k: f64, alpha: f64, k2: f64, k3: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::param(format!("K must be positive, got {k}")));
        }
        if !(k2.is_finite() && k3.is_finite()) {
            return Err(Error::param("affine coefficients must be finite"));
        }
        Ok(PowerGenerator { k, alpha, k2, k3 })
    }

    /// Exponent `1 + alpha`.
    pub fn exponent(&self) -> f64 {
        1.0 + self.alpha
    }

    pub fn generator(&self) -> ConvexGenerator {
        let PowerGenerator { k, alpha, k2, k3 } = *self;
        let g = ConvexGenerator::analytic(
            format!("power(K={k}, alpha={alpha})"),
            Arc::new(move |y: f64| k * y.powf(1.0 + alpha)),
            Arc::new(move |y: f64| k * (1.0 + alpha) * y.powf(alpha)),
            Arc::new(move |y: f64| k * (1.0 + alpha) * alpha * y.powf(alpha - 1.0)),
        );
        if k2 == 0.0 && k3 == 0.0 {
            g
        } else {
            g.shifted(k2, k3)
        }
    }
}

/// `e^y - y - 1`.
pub fn exp_generator() -> ConvexGenerator {
    ConvexGenerator::analytic(
        "exp".into(),
        Arc::new(exp_minus_linear),
        Arc::new(f64::exp_m1),
        Arc::new(f64::exp),
    )
}

/// `cosh(y) - 1`.
pub fn cosh_generator() -> ConvexGenerator {
    ConvexGenerator::analytic(
        "cosh".into(),
        Arc::new(|y: f64| {
            let s = (0.5 * y).sinh();
            2.0 * s * s
        }),
        Arc::new(f64::sinh),
        Arc::new(f64::cosh),
    )
}

/// `(1 + y) log(1 + y) - y`.
pub fn shifted_log_generator() -> ConvexGenerator {
    ConvexGenerator::analytic(
        "shiftedlog".into(),
        Arc::new(shifted_log),
        Arc::new(f64::ln_1p),
        Arc::new(|y: f64| 1.0 / (1.0 + y)),
    )
}

// e^y - 1 - y without cancellation for small y.
fn exp_minus_linear(y: f64) -> f64 {
    if y.abs() < 0.5 {
        let mut term = 0.5 * y * y;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > f64::EPSILON * sum.abs() * 0.25 {
            k += 1.0;
            term *= y / k;
            sum += term;
        }
        sum
    } else {
        y.exp_m1() - y
    }
}

// (1+y) ln(1+y) - y = sum_{k>=2} (-1)^k y^k / (k (k-1)) for |y| < 1.
fn shifted_log(y: f64) -> f64 {
    if y.abs() < 0.25 {
        let mut power = y * y;
        let mut sum = 0.0;
        let mut k = 2.0_f64;
        loop {
            let term = power / (k * (k - 1.0));
            sum += term;
            if term.abs() <= f64::EPSILON * sum.abs() * 0.25 {
                break;
            }
            power *= -y;
            k += 1.0;
        }
        sum
    } else {
        (1.0 + y) * y.ln_1p() - y
    }
}

/// Limit behaviour of `B*'(y)` as `y -> inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "c", rename_all = "lowercase")]
pub enum TailSlope {
    Finite(f64),
    Divergent,
}

/// Estimates `lim B*(y) / y = lim B*'(y)` from the slope at `probe_max`.
/// The limit is reported divergent when the slope is non-finite or grows by
/// more than 1.5x between `probe_max / 2` and `probe_max`.
pub fn tail_slope(b: &StandardizedGenerator, probe_max: f64) -> TailSlope {
    let hi = b.deriv1(probe_max);
    let mid = b.deriv1(0.5 * probe_max);
    if !hi.is_finite() || !mid.is_finite() {
        return TailSlope::Divergent;
    }
    if mid > 0.0 && hi / mid > 1.5 {
        TailSlope::Divergent
    } else {
        TailSlope::Finite(hi)
    }
}

/// JSON generator description: `{"kind": "...", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: String,
    #[serde(default)]
    pub params: GeneratorParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, alias = "K", alias = "K1", alias = "k1", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, alias = "K2", skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, alias = "K3", skip_serializing_if = "Option::is_none")]
    pub k3: Option<f64>,
}

impl GeneratorSpec {
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::param(format!("generator spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn build(&self) -> Result<ConvexGenerator> {
        let p = &self.params;
        let no_params = |kind: &str| -> Result<()> {
            if p != &GeneratorParams::default() {
                return Err(Error::param(format!("generator '{kind}' takes no params")));
            }
            Ok(())
        };
        match self.kind.as_str() {
            "dpd" => {
                let alpha = p
                    .alpha
                    .ok_or_else(|| Error::param("dpd generator requires params.alpha"))?;
                dpd_generator(alpha)
            }
            "power" => {
                let alpha = p
                    .alpha
                    .ok_or_else(|| Error::param("power generator requires params.alpha"))?;
                let pg = PowerGenerator::with_affine(
                    p.k.unwrap_or(1.0),
                    alpha,
                    p.k2.unwrap_or(0.0),
                    p.k3.unwrap_or(0.0),
                )?;
                Ok(pg.generator())
            }
            "exp" => no_params("exp").map(|_| exp_generator()),
            "cosh" => no_params("cosh").map(|_| cosh_generator()),
            "shiftedlog" => no_params("shiftedlog").map(|_| shifted_log_generator()),
            other => Err(Error::param(format!("unknown generator kind '{other}'"))),
        }
    }
}
