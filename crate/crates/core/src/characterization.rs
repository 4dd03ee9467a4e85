//! Numerical characterization of logarithmic Bregman generators.
//!
//! A standardized generator `B` with weights `(a0, a1, a2)` yields a valid
//! logarithmic Bregman divergence only if, for every uniform density
//! `U(0, 1/theta)` used as both arguments, the three log terms cancel:
//!
//! ```text
//! (B'(t) - B(t)/t)^a0 (B(t)/t)^a2 = C B'(t)^a1,   C = a0^a0 a2^a2 / a1^a1
//! ```
//!
//! Writing `r(t) = B(t) / (t B'(t))` and `u(x) = (1-x)^a0 x^a2`, this is
//! `u(r(t)) = C B'(t)^(-beta)` with `beta = a0 + a2 - a1`. Since
//! `u <= C0 = max u`, the identity forces `beta = 0` and `r(t) = gamma`, the
//! maximizer of `u`, for all `t`; the only solutions are power generators.
//! This module evaluates these residuals on finite probe sets and searches
//! for explicit counterexamples. A clean scan or an exhausted search is
//! evidence, not a proof.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::divergence::{log_bregman, serialize_extended, IndexTriple, EPS_QUAD};
use crate::error::{Error, Result};
use crate::generator::{PowerGenerator, StandardizedGenerator};
use crate::grid::{DensitySpec, Grid, DEFAULT_NODES};

/// Tolerance for closed-form (quadrature-free) residuals.
pub const EPS_CHAR: f64 = 1e-8;

/// Tolerance for residuals computed by quadrature.
pub const EPS_CHAR_QUAD: f64 = 1e-6;

/// A logarithmic Bregman value below this is a negativity witness.
pub const NEGATIVITY_THRESHOLD: f64 = -10.0 * EPS_QUAD;

/// Consecutive increases of the residual that count as divergence evidence
/// when a finite probe range never crosses the threshold.
pub const TREND_RUN: usize = 5;

pub const SCHEMA: &str = "divkit/1";

/// Label attached to every non-refuting outcome.
pub const CONSISTENT_NOTE: &str = "consistent-with-LBF (search not a proof)";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UFunctionParams {
    a0: f64,
    a2: f64,
}

impl UFunctionParams {
    pub fn new(a0: f64, a2: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite() && a2 > 0.0 && a2.is_finite()) {
            return Err(Error::param(format!(
                "u-function exponents must be positive, got ({a0}, {a2})"
            )));
        }
        Ok(UFunctionParams { a0, a2 })
    }

    pub fn from_triple(idx: &IndexTriple) -> Self {
        UFunctionParams {
            a0: idx.a0(),
            a2: idx.a2(),
        }
    }

    /// Maximizer `a2 / (a0 + a2)`.
    pub fn gamma(&self) -> f64 {
        self.a2 / (self.a0 + self.a2)
    }

    /// Maximum value `a0^a0 a2^a2 / (a0 + a2)^(a0 + a2)`.
    pub fn c0(&self) -> f64 {
        let s = self.a0 + self.a2;
        (self.a0 / s).powf(self.a0) * (self.a2 / s).powf(self.a2)
    }

    fn eval(&self, x: f64) -> f64 {
        (1.0 - x).powf(self.a0) * x.powf(self.a2)
    }
}

/// `u(x) = (1 - x)^a0 x^a2` on `[0, 1]`.
pub fn u(x: f64, p: &UFunctionParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain(format!("u argument {x} (expected [0, 1])")));
    }
    Ok(p.eval(x))
}

/// `B(t) / (t B'(t))`, computed without forming `t B'(t)`.
pub fn ratio(b: &StandardizedGenerator, theta: f64) -> f64 {
    b.eval(theta) / b.deriv1(theta) / theta
}

/// Residual of the uniform-density identity, using closed-form integrals:
/// `(B'(t) - B(t)/t)^a0 (B(t)/t)^a2 - C B'(t)^a1`.
pub fn uniform_identity_defect(b: &StandardizedGenerator, theta: f64, idx: &IndexTriple) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::param(format!("theta must be positive, got {theta}")));
    }
    let bp = b.deriv1(theta);
    if bp.is_nan() || bp <= 0.0 {
        return Err(Error::Precondition(format!("B'({theta}) = {bp} is not positive")));
    }
    let mean_b = b.eval(theta) / theta;
    // B(t) = t B'(t) can only happen through rounding; 0^a0 = 0.
    let first = (bp - mean_b).max(0.0);
    let lhs = first.powf(idx.a0()) * mean_b.powf(idx.a2());
    Ok(lhs - idx.c() * bp.powf(idx.a1()))
}

/// Log-spaced probe points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for ThetaGrid {
    fn default() -> Self {
        ThetaGrid {
            lo: 1e-3,
            hi: 1e3,
            n: 200,
        }
    }
}

impl ThetaGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
            return Err(Error::param(format!(
                "theta range needs 0 < lo < hi and n >= 2, got ({lo}, {hi}, {n})"
            )));
        }
        Ok(ThetaGrid { lo, hi, n })
    }

    /// Parses `"lo,hi,n"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::param(format!("theta range '{s}' must be lo,hi,n"));
        match parts[..] {
            [lo, hi, n] => Self::new(
                lo.parse().map_err(|_| bad())?,
                hi.parse().map_err(|_| bad())?,
                n.parse().map_err(|_| bad())?,
            ),
            _ => Err(bad()),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.n)
            .map(|i| {
                if i == 0 {
                    self.lo
                } else if i + 1 == self.n {
                    self.hi
                } else {
                    (a + (b - a) * i as f64 / (self.n - 1) as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessKind {
    /// A probe point where a closed-form residual exceeds its tolerance.
    ThetaDefect,
    /// A density pair with a clearly negative logarithmic Bregman value.
    Negativity,
    /// Equal densities whose logarithmic Bregman value is not zero.
    ZeroWithoutEquality,
}

/// A concrete certificate that a generator/weights pair is not a valid
/// logarithmic Bregman divergence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub kind: WitnessKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_spec: Option<DensitySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_spec: Option<DensitySpec>,
    #[serde(serialize_with = "serialize_extended")]
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    #[serde(rename = "consistent-with-LBF")]
    Consistent { note: String },
    Refuted {
        theta: f64,
        #[serde(serialize_with = "serialize_extended")]
        defect: f64,
    },
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent { .. })
    }
}

fn serialize_extended_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_finite() {
            seq.serialize_element(x)?;
        } else {
            seq.serialize_element(&crate::divergence::format_extended(*x))?;
        }
    }
    seq.end()
}

/// Per-probe residuals of the uniform-density identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub schema: &'static str,
    pub generator: String,
    pub idx: IndexTriple,
    pub beta: f64,
    pub c: f64,
    pub c0: f64,
    pub gamma: f64,
    /// Which residual `defects` holds.
    pub residual: &'static str,
    pub thetas: Vec<f64>,
    pub ratios: Vec<f64>,
    #[serde(serialize_with = "serialize_extended_vec")]
    pub defects: Vec<f64>,
    #[serde(serialize_with = "serialize_extended_vec")]
    pub identity_defects: Vec<f64>,
    #[serde(serialize_with = "serialize_extended")]
    pub max_abs_defect: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_witness: Option<Witness>,
    pub warnings: Vec<String>,
}

impl DiagnosticReport {
    pub fn to_csv(&self) -> String {
        use crate::divergence::format_extended as fx;
        let mut out = String::from("theta,ratio,defect,identity_defect\n");
        for i in 0..self.thetas.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fx(self.thetas[i]),
                fx(self.ratios[i]),
                fx(self.defects[i]),
                fx(self.identity_defects[i])
            ));
        }
        out
    }
}

/// Evaluates the uniform-density residuals over `thetas`.
///
/// With `beta = 0` the residual is `u(r) - C0`; otherwise it is
/// `C B'^(-beta) - u(r)`. The verdict is refuted when any residual exceeds
/// [`EPS_CHAR`] in magnitude. Probes where `B` or `B'` is not finite and
/// positive are dropped with a warning.
pub fn theta_scan(b: &StandardizedGenerator, idx: &IndexTriple, thetas: &[f64]) -> Result<DiagnosticReport> {
    let p = UFunctionParams::from_triple(idx);
    let (c, c0, beta) = (idx.c(), p.c0(), idx.beta());
    let balanced = idx.is_balanced();
    let mut warnings = Vec::new();

    let usable: Vec<f64> = thetas
        .iter()
        .copied()
        .filter(|&t| {
            let (v, d) = (b.eval(t), b.deriv1(t));
            t > 0.0 && v.is_finite() && d.is_finite() && v > 0.0 && d > 0.0
        })
        .collect();
    if usable.len() < thetas.len() {
        let kept = usable
            .first()
            .zip(usable.last())
            .map(|(a, z)| format!("[{a:e}, {z:e}]"))
            .unwrap_or_else(|| "nothing".into());
        warnings.push(format!(
            "dropped {} probe(s) where B or B' is not finite and positive; range shrunk to {kept}",
            thetas.len() - usable.len()
        ));
    }
    if usable.is_empty() {
        return Err(Error::Precondition(format!(
            "no usable theta probes for {}",
            b.label()
        )));
    }

    let mut ratios = Vec::with_capacity(usable.len());
    let mut defects = Vec::with_capacity(usable.len());
    let mut identity_defects = Vec::with_capacity(usable.len());
    for &t in &usable {
        let r = ratio(b, t);
        if !(-1e-12..=1.0 + 1e-12).contains(&r) {
            warnings.push(format!("ratio {r} at theta={t:e} outside [0, 1]"));
        }
        let ur = p.eval(r.clamp(0.0, 1.0));
        let defect = if balanced {
            ur - c0
        } else {
            c * b.deriv1(t).powf(-beta) - ur
        };
        ratios.push(r);
        defects.push(defect);
        identity_defects.push(uniform_identity_defect(b, t, idx)?);
    }

    let (worst_theta, worst) = worst_defect(&usable, &defects);
    let verdict = if worst.abs() > EPS_CHAR || worst.is_nan() {
        Verdict::Refuted {
            theta: worst_theta,
            defect: worst,
        }
    } else {
        Verdict::Consistent {
            note: CONSISTENT_NOTE.into(),
        }
    };

    Ok(DiagnosticReport {
        schema: SCHEMA,
        generator: b.label().to_string(),
        idx: *idx,
        beta,
        c,
        c0,
        gamma: p.gamma(),
        residual: if balanced {
            "u(ratio) - C0"
        } else {
            "C * B'(theta)^(-beta) - u(ratio)"
        },
        thetas: usable,
        ratios,
        defects,
        identity_defects,
        max_abs_defect: worst.abs(),
        verdict,
        beta_witness: None,
        warnings,
    })
}

/// Largest residual by `(|defect|, theta)`; NaN ranks above everything.
fn worst_defect(thetas: &[f64], defects: &[f64]) -> (f64, f64) {
    let key = |d: f64| if d.is_nan() { f64::INFINITY } else { d.abs() };
    thetas
        .iter()
        .zip(defects)
        .max_by(|(ta, da), (tb, db)| key(**da).total_cmp(&key(**db)).then(ta.total_cmp(tb)))
        .map(|(t, d)| (*t, *d))
        .expect("non-empty probe set")
}

/// Outcome of a bounded probe that may fail to find a witness.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum ProbeOutcome {
    Witness(Witness),
    Exhausted { probes: usize, note: String },
}

impl ProbeOutcome {
    pub fn witness(&self) -> Option<&Witness> {
        match self {
            ProbeOutcome::Witness(w) => Some(w),
            ProbeOutcome::Exhausted { .. } => None,
        }
    }
}

/// Decades scanned by [`beta_necessity_probe`] on either side of `theta = 1`.
pub const BETA_PROBE_DECADES: i32 = 8;
const BETA_PROBE_PER_DECADE: i32 = 10;

/// Looks for `theta` with `C B'(theta)^(-beta) > C0 + EPS_CHAR`, walking from
/// `theta = 1` toward 0 when `beta > 0` and toward infinity when `beta < 0`.
/// If the threshold is never crossed but the residual rose over the last
/// [`TREND_RUN`] steps, that trend is reported as the witness.
pub fn beta_necessity_probe(b: &StandardizedGenerator, idx: &IndexTriple) -> Result<ProbeOutcome> {
    if idx.is_balanced() {
        return Err(Error::Precondition(
            "beta necessity probe requires a0 + a2 != a1".into(),
        ));
    }
    let beta = idx.beta();
    let (c, c0) = (idx.c(), UFunctionParams::from_triple(idx).c0());
    let direction = if beta > 0.0 { -1.0 } else { 1.0 };
    let steps = BETA_PROBE_DECADES * BETA_PROBE_PER_DECADE;

    let mut history: Vec<(f64, f64)> = Vec::new();
    for k in 0..=steps {
        let theta = 10f64.powf(direction * k as f64 / BETA_PROBE_PER_DECADE as f64);
        let bp = b.deriv1(theta);
        if !(bp.is_finite() && bp > 0.0) {
            break;
        }
        let excess = c * bp.powf(-beta) - c0;
        if excess > EPS_CHAR {
            return Ok(ProbeOutcome::Witness(Witness {
                kind: WitnessKind::ThetaDefect,
                theta: Some(theta),
                f_spec: None,
                g_spec: None,
                value: excess,
                detail: format!(
                    "C*B'(theta)^(-beta) exceeds C0 by {excess:e} (beta = {beta})"
                ),
            }));
        }
        history.push((theta, excess));
    }

    let rising = history.len() > TREND_RUN
        && history[history.len() - TREND_RUN - 1..]
            .windows(2)
            .all(|w| w[1].1 > w[0].1);
    if rising {
        let (theta, excess) = *history.last().expect("non-empty history");
        return Ok(ProbeOutcome::Witness(Witness {
            kind: WitnessKind::ThetaDefect,
            theta: Some(theta),
            f_spec: None,
            g_spec: None,
            value: excess,
            detail: format!(
                "C*B'(theta)^(-beta) - C0 increased over the last {TREND_RUN} probes toward the boundary (beta = {beta})"
            ),
        }));
    }
    Ok(ProbeOutcome::Exhausted {
        probes: history.len(),
        note: "probe range exhausted without a witness; not a proof".into(),
    })
}

/// Knobs of [`counterexample_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub seed: u64,
    /// Probe points for equal uniform densities.
    pub thetas: Vec<f64>,
    /// Probe points for pairs of distinct uniform densities.
    pub pair_thetas: Vec<f64>,
    pub random_pairs: usize,
    pub uniform_nodes: usize,
    pub smooth_grid: Grid,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 42,
            thetas: ThetaGrid::default().values(),
            pair_thetas: ThetaGrid {
                lo: 0.1,
                hi: 10.0,
                n: 30,
            }
            .values(),
            random_pairs: 100,
            uniform_nodes: DEFAULT_NODES,
            smooth_grid: Grid::new(0.0, 10.0, 2001).expect("static grid"),
        }
    }
}

impl SearchConfig {
    pub fn with_seed(seed: u64) -> Self {
        SearchConfig {
            seed,
            ..Self::default()
        }
    }
}

/// Seeded search for densities that break the divergence axioms of the
/// logarithmic Bregman functional, tried in this order:
///
/// 1. equal uniform densities over `thetas` (the value must be zero),
/// 2. distinct uniform pairs over `pair_thetas` x `pair_thetas`,
/// 3. `random_pairs` smooth two-bump mixtures.
///
/// Probes whose integrals are degenerate (overflow, for instance) are
/// skipped. Returns the first witness, or `Exhausted`.
pub fn counterexample_search(
    b: &StandardizedGenerator,
    idx: &IndexTriple,
    cfg: &SearchConfig,
) -> Result<ProbeOutcome> {
    let mut probes = 0usize;
    let mut skipped = 0usize;

    for &theta in &cfg.thetas {
        let spec = DensitySpec::uniform_on(theta, cfg.uniform_nodes)?;
        let f = spec.build()?;
        probes += 1;
        match log_bregman(b, &f, &f, idx) {
            Ok(d) if d.value.abs() > EPS_CHAR_QUAD || d.value.is_nan() => {
                return Ok(ProbeOutcome::Witness(Witness {
                    kind: WitnessKind::ZeroWithoutEquality,
                    theta: Some(theta),
                    f_spec: Some(spec.clone()),
                    g_spec: Some(spec),
                    value: d.value,
                    detail: format!("f = g = U(0, 1/{theta}) but the divergence is {:e}", d.value),
                }));
            }
            Ok(_) => {}
            Err(Error::DegenerateIntegral { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }

    for (i, &t1) in cfg.pair_thetas.iter().enumerate() {
        for (j, &t2) in cfg.pair_thetas.iter().enumerate() {
            if i == j {
                continue;
            }
            let grid = Grid::padded(0.0, (1.0 / t1).max(1.0 / t2), cfg.uniform_nodes)?;
            let f_spec = DensitySpec::Uniform { theta: t1, grid };
            let g_spec = DensitySpec::Uniform { theta: t2, grid };
            let (f, g) = (f_spec.build()?, g_spec.build()?);
            probes += 1;
            match log_bregman(b, &g, &f, idx) {
                Ok(d) if d.value < NEGATIVITY_THRESHOLD => {
                    return Ok(ProbeOutcome::Witness(Witness {
                        kind: WitnessKind::Negativity,
                        theta: None,
                        f_spec: Some(f_spec),
                        g_spec: Some(g_spec),
                        value: d.value,
                        detail: format!("f = U(0, 1/{t1}), g = U(0, 1/{t2})"),
                    }));
                }
                Ok(_) => {}
                Err(Error::DegenerateIntegral { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..cfg.random_pairs {
        let f_spec = DensitySpec::random_bumps(&mut rng, cfg.smooth_grid);
        let g_spec = DensitySpec::random_bumps(&mut rng, cfg.smooth_grid);
        let (f, g) = (f_spec.build()?, g_spec.build()?);
        probes += 1;
        match log_bregman(b, &g, &f, idx) {
            Ok(d) if d.value < NEGATIVITY_THRESHOLD => {
                return Ok(ProbeOutcome::Witness(Witness {
                    kind: WitnessKind::Negativity,
                    theta: None,
                    f_spec: Some(f_spec),
                    g_spec: Some(g_spec),
                    value: d.value,
                    detail: format!("random smooth pair #{k} (seed {})", cfg.seed),
                }));
            }
            Ok(_) => {}
            Err(Error::DegenerateIntegral { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }

    let mut note = CONSISTENT_NOTE.to_string();
    if skipped > 0 {
        note.push_str(&format!("; {skipped} degenerate probe(s) skipped"));
    }
    Ok(ProbeOutcome::Exhausted { probes, note })
}

/// Solution of `B(t) = gamma t B'(t)` with scale `k`: `k t^(1/gamma)`.
pub fn solve_lbf_family(gamma: f64, k: f64) -> Result<PowerGenerator> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param(format!(
            "gamma must lie in (0, 1) so that the exponent 1/gamma exceeds 1, got {gamma}"
        )));
    }
    PowerGenerator::new(k, 1.0 / gamma - 1.0)
}

/// Balanced weights `(1 - gamma, 1, gamma)` whose u-function peaks at `gamma`.
pub fn triple_for_gamma(gamma: f64) -> Result<IndexTriple> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    IndexTriple::new(1.0 - gamma, 1.0, gamma)
}
