//! Divergences between two densities on a shared grid.
//!
//! Argument order follows the usual `D(g, f)` convention: `g` is the "data"
//! density and `f` the "model" density.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::generator::StandardizedGenerator;
use crate::grid::GridDensity;

/// Quadrature tolerance for the "nonnegative" and "zero iff equal" claims.
pub const EPS_QUAD: f64 = 1e-9;

/// Smallest tuning parameter accepted by [`dpd`] and [`ldpd`]; below it the
/// `1/alpha` terms cancel catastrophically. Use [`kl`] for the limit.
pub const MIN_ALPHA: f64 = 1e-6;

/// Positive weights `(a0, a1, a2)` of the three logarithmic terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IndexTriple {
    a0: f64,
    a1: f64,
    a2: f64,
}

impl IndexTriple {
    pub fn new(a0: f64, a1: f64, a2: f64) -> Result<Self> {
        for (name, v) in [("a0", a0), ("a1", a1), ("a2", a2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(IndexTriple { a0, a1, a2 })
    }

    /// The triple `(a0, a0 + a2, a2)`, which has `beta = 0`.
    pub fn balanced(a0: f64, a2: f64) -> Result<Self> {
        Self::new(a0, a0 + a2, a2)
    }

    /// The LDPD weights `(1, (1 + alpha) / alpha, 1 / alpha)`.
    pub fn ldpd(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be positive, got {alpha}")));
        }
        Self::new(1.0, (1.0 + alpha) / alpha, 1.0 / alpha)
    }

    /// Parses `"a0,a1,a2"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::param(format!("index triple '{s}': {e}")))?;
        match parts[..] {
            [a0, a1, a2] => Self::new(a0, a1, a2),
            _ => Err(Error::param(format!(
                "index triple '{s}' needs three comma-separated values"
            ))),
        }
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    /// `a0 + a2 - a1`.
    pub fn beta(&self) -> f64 {
        self.a0 + self.a2 - self.a1
    }

    /// `beta` is zero up to rounding of the sum `a0 + a2`.
    pub fn is_balanced(&self) -> bool {
        self.beta().abs() <= 4.0 * f64::EPSILON * (self.a0 + self.a2)
    }

    /// `a0^a0 a2^a2 / a1^a1`.
    pub fn c(&self) -> f64 {
        (xlnx(self.a0) + xlnx(self.a2) - xlnx(self.a1)).exp()
    }
}

fn xlnx(x: f64) -> f64 {
    x * x.ln()
}

/// A named constituent integral of a divergence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub name: &'static str,
    #[serde(serialize_with = "serialize_extended")]
    pub value: f64,
}

/// A divergence value (possibly `+inf`) with the integrals it was built from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceValue {
    #[serde(serialize_with = "serialize_extended")]
    pub value: f64,
    pub terms: Vec<Term>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DivergenceValue {
    fn new(value: f64, terms: Vec<Term>) -> Self {
        DivergenceValue {
            value,
            terms,
            note: None,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// JSON has no infinities; they are written as `"+inf"` / `"-inf"`.
pub fn serialize_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "+inf" } else { "-inf" })
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else {
        s.serialize_f64(*v)
    }
}

pub fn format_extended(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "+inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

fn shared_grid(g: &GridDensity, f: &GridDensity) -> Result<()> {
    g.grid().ensure_compatible(f.grid())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > MIN_ALPHA {
        Ok(())
    } else {
        Err(Error::param(format!(
            "alpha must exceed {MIN_ALPHA}, got {alpha} (use kl for the limit)"
        )))
    }
}

fn pow0(y: f64, p: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y.powf(p)
    }
}

/// `D_B(g, f) = ∫ [B(g) - B(f) - B'(f)(g - f)]`.
pub fn bregman(b: &StandardizedGenerator, g: &GridDensity, f: &GridDensity) -> Result<DivergenceValue> {
    shared_grid(g, f)?;
    let (gv, fv) = (g.values(), f.values());
    let value = g.grid().integrate_with(|i| {
        let (gi, fi) = (gv[i], fv[i]);
        if gi == fi {
            0.0
        } else {
            b.eval(gi) - b.eval(fi) - b.deriv1(fi) * (gi - fi)
        }
    });
    Ok(DivergenceValue::new(value, vec![Term { name: "bregman_integral", value }]))
}

/// The three power integrals `∫f^(1+a)`, `∫f^a g`, `∫g^(1+a)`.
fn power_integrals(g: &GridDensity, f: &GridDensity, alpha: f64) -> (f64, f64, f64) {
    let grid = g.grid();
    let (gv, fv) = (g.values(), f.values());
    let ff = grid.integrate_with(|i| pow0(fv[i], 1.0 + alpha));
    let fg = grid.integrate_with(|i| pow0(fv[i], alpha) * gv[i]);
    let gg = grid.integrate_with(|i| pow0(gv[i], 1.0 + alpha));
    (ff, fg, gg)
}

fn power_terms(ff: f64, fg: f64, gg: f64) -> Vec<Term> {
    vec![
        Term { name: "int_f_pow_1p_alpha", value: ff },
        Term { name: "int_f_pow_alpha_g", value: fg },
        Term { name: "int_g_pow_1p_alpha", value: gg },
    ]
}

/// Density power divergence
/// `∫ [f^(1+a) - (1 + 1/a) f^a g + (1/a) g^(1+a)]`.
pub fn dpd(g: &GridDensity, f: &GridDensity, alpha: f64) -> Result<DivergenceValue> {
    shared_grid(g, f)?;
    check_alpha(alpha)?;
    let (gv, fv) = (g.values(), f.values());
    // Per node: f^a [f - g + g (e^{a ln(g/f)} - 1) / a], which avoids
    // cancelling the two O(1/a) terms when a is small.
    let value = g.grid().integrate_with(|i| {
        let (gi, fi) = (gv[i], fv[i]);
        if gi == 0.0 {
            pow0(fi, 1.0 + alpha)
        } else if fi == 0.0 {
            gi.powf(1.0 + alpha) / alpha
        } else {
            fi.powf(alpha) * (fi - gi + gi * (alpha * (gi / fi).ln()).exp_m1() / alpha)
        }
    });
    let (ff, fg, gg) = power_integrals(g, f, alpha);
    Ok(DivergenceValue::new(value, power_terms(ff, fg, gg)))
}

/// Kullback-Leibler divergence `∫ g log(g/f)`, with `0 log(0/f) = 0` and
/// `+inf` when `g > 0` at a node where `f = 0`.
pub fn kl(g: &GridDensity, f: &GridDensity) -> Result<DivergenceValue> {
    shared_grid(g, f)?;
    let (gv, fv) = (g.values(), f.values());
    let uncovered = gv.iter().zip(fv).any(|(&gi, &fi)| gi > 0.0 && fi == 0.0);
    if uncovered {
        let mut d = DivergenceValue::new(f64::INFINITY, vec![Term {
            name: "kl_integral",
            value: f64::INFINITY,
        }]);
        d.note = Some("g has mass where f vanishes".into());
        return Ok(d);
    }
    let value = g.grid().integrate_with(|i| {
        let (gi, fi) = (gv[i], fv[i]);
        if gi == 0.0 {
            0.0
        } else {
            gi * (gi / fi).ln()
        }
    });
    Ok(DivergenceValue::new(value, vec![Term { name: "kl_integral", value }]))
}

/// Logarithmic density power divergence
/// `log ∫f^(1+a) - ((1+a)/a) log ∫f^a g + (1/a) log ∫g^(1+a)`.
pub fn ldpd(g: &GridDensity, f: &GridDensity, alpha: f64) -> Result<DivergenceValue> {
    shared_grid(g, f)?;
    check_alpha(alpha)?;
    let (ff, fg, gg) = power_integrals(g, f, alpha);
    for (term, value) in [("int_f_pow_1p_alpha", ff), ("int_g_pow_1p_alpha", gg)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::DegenerateIntegral { term, value });
        }
    }
    if !fg.is_finite() {
        return Err(Error::DegenerateIntegral {
            term: "int_f_pow_alpha_g",
            value: fg,
        });
    }
    let terms = power_terms(ff, fg, gg);
    if fg == 0.0 {
        let mut d = DivergenceValue::new(f64::INFINITY, terms);
        d.note = Some("supports disjoint".into());
        return Ok(d);
    }
    let (lff, lfg, lgg) = (ff.ln(), fg.ln(), gg.ln());
    let value = (lff - lfg) + (lgg - lfg) / alpha;
    Ok(DivergenceValue::new(value, terms))
}

/// `(∫f^(1+a))^(a/(1+a)) (∫g^(1+a))^(1/(1+a)) - ∫f^a g`; nonnegative by
/// Hölder's inequality, zero iff `f = g`.
pub fn holder_gap(g: &GridDensity, f: &GridDensity, alpha: f64) -> Result<f64> {
    shared_grid(g, f)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    let (ff, fg, gg) = power_integrals(g, f, alpha);
    Ok(ff.powf(alpha / (1.0 + alpha)) * gg.powf(1.0 / (1.0 + alpha)) - fg)
}

/// The three integrals of the logarithmic Bregman functional for a
/// standardized generator: `∫[B'(f) f - B(f)]`, `∫B'(f) g`, `∫B(g)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogBregmanIntegrals {
    pub i0: f64,
    pub i1: f64,
    pub i2: f64,
}

pub fn log_bregman_integrals(
    b: &StandardizedGenerator,
    g: &GridDensity,
    f: &GridDensity,
) -> Result<LogBregmanIntegrals> {
    shared_grid(g, f)?;
    let grid = g.grid();
    let (gv, fv) = (g.values(), f.values());
    let i0 = grid.integrate_with(|i| {
        let fi = fv[i];
        b.deriv1(fi) * fi - b.eval(fi)
    });
    let i1 = grid.integrate_with(|i| b.deriv1(fv[i]) * gv[i]);
    let i2 = grid.integrate_with(|i| b.eval(gv[i]));
    Ok(LogBregmanIntegrals { i0, i1, i2 })
}

/// `a0 log(I0/a0) + a2 log(I2/a2) - a1 log(I1/a1)` for a standardized
/// generator and any positive triple (balanced or not).
pub fn log_bregman(
    b: &StandardizedGenerator,
    g: &GridDensity,
    f: &GridDensity,
    idx: &IndexTriple,
) -> Result<DivergenceValue> {
    let LogBregmanIntegrals { i0, i1, i2 } = log_bregman_integrals(b, g, f)?;
    for (term, value) in [("I0", i0), ("I1", i1), ("I2", i2)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::DegenerateIntegral { term, value });
        }
    }
    let value = idx.a0 * (i0 / idx.a0).ln() + idx.a2 * (i2 / idx.a2).ln()
        - idx.a1 * (i1 / idx.a1).ln();
    Ok(DivergenceValue::new(
        value,
        vec![
            Term { name: "I0", value: i0 },
            Term { name: "I1", value: i1 },
            Term { name: "I2", value: i2 },
        ],
    ))
}
