//! Uniform grids, trapezoidal quadrature and densities tabulated on a grid.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes used by [`Grid::padded`] when the caller has no preference.
pub const DEFAULT_NODES: usize = 4001;

/// Absolute tolerance on the trapezoidal mass of a density.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Raw mass deviation above which the CSV loader warns before normalizing.
pub const LOAD_WARN_DEVIATION: f64 = 1e-3;

/// Relative tolerance on spacing uniformity when loading tabulated x values.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// `n` equispaced nodes on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidGrid(format!(
                "need finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {n}")));
        }
        Ok(Grid { lo, hi, n })
    }

    /// Grid whose nodes include `lo` and `hi` (up to rounding) with one extra
    /// node of padding on each side.
    pub fn padded(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!(
                "padded grid needs at least 4 nodes, got {n}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidGrid(format!(
                "need finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (n - 3) as f64;
        Grid::new(lo - step, hi + step, n)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.lo) / self.step()).round();
        t.clamp(0.0, (self.n - 1) as f64) as usize
    }

    pub fn is_compatible(&self, other: &Grid) -> bool {
        let scale = self.hi.abs().max(self.lo.abs()).max(self.hi - self.lo);
        self.n == other.n
            && (self.lo - other.lo).abs() <= 1e-12 * scale
            && (self.hi - other.hi).abs() <= 1e-12 * scale
    }

    pub fn ensure_compatible(&self, other: &Grid) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{}, {}] x {} vs [{}, {}] x {}",
                self.lo, self.hi, self.n, other.lo, other.hi, other.n
            )))
        }
    }

    /// Trapezoidal rule for a function tabulated at the grid nodes.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                self.n
            )));
        }
        Ok(trapezoid(self.step(), values))
    }

    /// Trapezoidal rule for `h(i)` evaluated at each node index.
    pub fn integrate_with(&self, h: impl Fn(usize) -> f64) -> f64 {
        let mut acc = NeumaierSum::default();
        let last = self.n - 1;
        for i in 0..self.n {
            let w = if i == 0 || i == last { 0.5 } else { 1.0 };
            acc.add(w * h(i));
        }
        acc.value() * self.step()
    }
}

fn trapezoid(step: f64, values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::default();
    let last = values.len() - 1;
    for (i, &v) in values.iter().enumerate() {
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        acc.add(w * v);
    }
    acc.value() * step
}

/// Compensated summation; keeps quadrature linear to near machine precision.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A nonnegative function on a grid with unit trapezoidal mass.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wraps values that are already a density; rejects anything that is
    /// negative, non-finite or off unit mass by more than [`MASS_TOLERANCE`].
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        let mass = grid.integrate(&values)?;
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "trapezoidal mass is {mass}, expected 1"
            )));
        }
        Ok(GridDensity { grid, values })
    }

    /// Scales nonnegative raw values to unit trapezoidal mass.
    pub fn normalize(grid: Grid, raw: Vec<f64>) -> Result<Self> {
        check_values(&grid, &raw)?;
        let mass = grid.integrate(&raw)?;
        if mass <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        let values = raw.into_iter().map(|v| v / mass).collect();
        Ok(GridDensity { grid, values })
    }

    /// Tabulates `f` at the nodes and normalizes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw = grid.nodes().map(f).collect();
        Self::normalize(grid, raw)
    }

    /// The `U(0, 1/theta)` density: `theta` on the support, zero elsewhere.
    /// The support ends are moved to the nearest nodes and the plateau is
    /// rescaled so the trapezoidal mass is exactly one.
    pub fn uniform(theta: f64, grid: Grid) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::param(format!("theta must be positive, got {theta}")));
        }
        let right = 1.0 / theta;
        let slack = 0.5 * grid.step();
        if grid.lo() > slack || grid.hi() < right - slack {
            return Err(Error::InvalidGrid(format!(
                "grid [{}, {}] does not cover [0, {right}]",
                grid.lo(),
                grid.hi()
            )));
        }
        let (start, end) = (grid.nearest(0.0), grid.nearest(right));
        if end <= start {
            return Err(Error::InvalidGrid(format!(
                "grid step {} too coarse for support [0, {right}]",
                grid.step()
            )));
        }
        let raw = (0..grid.len())
            .map(|i| if (start..=end).contains(&i) { theta } else { 0.0 })
            .collect();
        Self::normalize(grid, raw)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_difference(&self, other: &GridDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation onto `target` (zero outside this density's
    /// range), then renormalization. Also returns the mass deviation of the
    /// interpolated values before renormalizing.
    pub fn resample(&self, target: Grid) -> Result<(GridDensity, f64)> {
        let src = &self.grid;
        let raw: Vec<f64> = target
            .nodes()
            .map(|x| {
                if x < src.lo() || x > src.hi() {
                    return 0.0;
                }
                let t = (x - src.lo()) / src.step();
                let i = (t.floor() as usize).min(src.len() - 2);
                let w = (t - i as f64).clamp(0.0, 1.0);
                self.values[i] * (1.0 - w) + self.values[i + 1] * w
            })
            .collect();
        let mass = target.integrate(&raw)?;
        let density = GridDensity::normalize(target, raw)?;
        Ok((density, (mass - 1.0).abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.nodes().zip(&self.values) {
            let _ = writeln!(out, "{x:?},{v:?}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads a density CSV (header `x,value`, equispaced increasing x).
    pub fn load_csv(path: &Path) -> Result<LoadedDensity> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            Error::DegenerateDensity => Error::DegenerateDensity,
            other => Error::Format {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<LoadedDensity> {
        let bad = |message: String| Error::Format {
            path: "<csv>".into(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "value" {
            return Err(bad(format!("expected header 'x,value', got {headers:?}")));
        }
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (line, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
            let (x, v) = rec.map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
            if !x.is_finite() || !v.is_finite() {
                return Err(bad(format!("row {}: non-finite entry", line + 1)));
            }
            if v < 0.0 {
                return Err(bad(format!("row {}: negative value {v}", line + 1)));
            }
            xs.push(x);
            vs.push(v);
        }
        if xs.len() < 2 {
            return Err(bad(format!("need at least 2 rows, got {}", xs.len())));
        }
        let n = xs.len();
        let (lo, hi) = (xs[0], xs[n - 1]);
        if hi <= lo {
            return Err(bad("x must be strictly increasing".into()));
        }
        let grid = Grid::new(lo, hi, n)?;
        let step = grid.step();
        for i in 1..n {
            let d = xs[i] - xs[i - 1];
            if d <= 0.0 {
                return Err(bad(format!("x not strictly increasing at row {}", i + 1)));
            }
            if (d - step).abs() > SPACING_TOLERANCE * step {
                return Err(bad(format!(
                    "x spacing {d} at row {} deviates from uniform step {step}",
                    i + 1
                )));
            }
        }
        let mass = grid.integrate(&vs)?;
        let mut warnings = Vec::new();
        if (mass - 1.0).abs() > LOAD_WARN_DEVIATION {
            warnings.push(format!("raw integral {mass} differs from 1; normalized"));
        }
        let density = GridDensity::normalize(grid, vs)?;
        Ok(LoadedDensity { density, warnings })
    }
}

fn check_values(grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} values for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidDensity(format!("value {v} at node {i}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LoadedDensity {
    pub density: GridDensity,
    pub warnings: Vec<String>,
}

/// One Gaussian component of a [`DensitySpec::Bumps`] mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Bump {
    fn eval(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        self.weight * (-0.5 * z * z).exp() / self.sd
    }
}

/// Reproducible description of a gridded density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DensitySpec {
    Uniform { theta: f64, grid: Grid },
    Bumps { components: Vec<Bump>, grid: Grid },
}

impl DensitySpec {
    /// `U(0, 1/theta)` on the default padded grid over its support.
    pub fn uniform(theta: f64) -> Result<Self> {
        Self::uniform_on(theta, DEFAULT_NODES)
    }

    pub fn uniform_on(theta: f64, n: usize) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::param(format!("theta must be positive, got {theta}")));
        }
        Ok(DensitySpec::Uniform {
            theta,
            grid: Grid::padded(0.0, 1.0 / theta, n)?,
        })
    }

    /// Two-bump mixture with seeded parameters, supported well inside `grid`.
    pub fn random_bumps(rng: &mut impl Rng, grid: Grid) -> Self {
        let (lo, hi) = (grid.lo(), grid.hi());
        let width = hi - lo;
        let components = (0..2)
            .map(|_| Bump {
                weight: rng.random_range(0.2..1.0),
                mean: lo + width * rng.random_range(0.25..0.75),
                sd: width * rng.random_range(0.04..0.12),
            })
            .collect();
        DensitySpec::Bumps { components, grid }
    }

    pub fn grid(&self) -> Grid {
        match self {
            DensitySpec::Uniform { grid, .. } | DensitySpec::Bumps { grid, .. } => *grid,
        }
    }

    /// Same description on a different grid.
    pub fn on_grid(&self, grid: Grid) -> Self {
        match self {
            DensitySpec::Uniform { theta, .. } => DensitySpec::Uniform { theta: *theta, grid },
            DensitySpec::Bumps { components, .. } => DensitySpec::Bumps {
                components: components.clone(),
                grid,
            },
        }
    }

    pub fn build(&self) -> Result<GridDensity> {
        match self {
            DensitySpec::Uniform { theta, grid } => GridDensity::uniform(*theta, *grid),
            DensitySpec::Bumps { components, grid } => {
                GridDensity::from_fn(*grid, |x| components.iter().map(|b| b.eval(x)).sum())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn integrates_constants_and_lines_exactly() {
        let g = unit(101);
        assert!((g.integrate(&vec![1.0; 101]).unwrap() - 1.0).abs() < 1e-15);
        let line: Vec<f64> = g.nodes().collect();
        assert!((g.integrate(&line).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_within_trapezoid_bound() {
        // error bound (hi-lo) * step^2 * max|h''| / 12 = 1e-6 / 6
        let g = unit(1001);
        let sq: Vec<f64> = g.nodes().map(|x| x * x).collect();
        let err = (g.integrate(&sq).unwrap() - 1.0 / 3.0).abs();
        assert!(err <= 1e-6 / 6.0 + 1e-15, "err={err}");
        assert!(err < 1e-6);
    }

    #[test]
    fn integrate_rejects_wrong_length() {
        assert!(matches!(
            unit(11).integrate(&[1.0; 10]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(0.0, f64::NAN, 10).is_err());
        let p = Grid::padded(0.0, 2.0, 11).unwrap();
        assert!((p.x(1) - 0.0).abs() < 1e-15);
        assert!((p.x(9) - 2.0).abs() < 1e-14);
        assert_eq!(p.x(10), p.hi());
    }

    #[test]
    fn normalize_examples() {
        let d = GridDensity::normalize(Grid::new(0.0, 1.0, 3).unwrap(), vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.values(), &[1.0, 1.0, 1.0]);
        let d = GridDensity::normalize(Grid::new(0.0, 1.0, 3).unwrap(), vec![0.0, 2.0, 0.0]).unwrap();
        assert!((d.grid().integrate(d.values()).unwrap() - 1.0).abs() < 1e-15);
        assert!((d.values()[1] - 2.0).abs() < 1e-15);
        assert!(matches!(
            GridDensity::normalize(unit(3), vec![0.0; 3]),
            Err(Error::DegenerateDensity)
        ));
        assert!(GridDensity::normalize(unit(3), vec![1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn gaussian_bump_normalizes() {
        let g = Grid::new(-6.0, 6.0, 2001).unwrap();
        let d = GridDensity::from_fn(g, |x| 3.0 * (-x * x).exp()).unwrap();
        assert!((g.integrate(d.values()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn new_requires_unit_mass() {
        assert!(GridDensity::new(unit(3), vec![2.0, 2.0, 2.0]).is_err());
        assert!(GridDensity::new(unit(3), vec![1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn uniform_on_zero_two() {
        let g = Grid::new(0.0, 2.0, 2001).unwrap();
        let d = GridDensity::uniform(1.0, g).unwrap();
        assert!((g.integrate(d.values()).unwrap() - 1.0).abs() < 1e-14);
        for (x, v) in g.nodes().zip(d.values()) {
            if x <= 1.0 - 1e-9 {
                assert!((v - 1.0).abs() < 1e-3, "x={x} v={v}");
            } else if x > 1.0 + 1e-9 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn uniform_plateau_tracks_theta() {
        let d = DensitySpec::uniform(2.0).unwrap().build().unwrap();
        let plateau = d.values().iter().cloned().fold(0.0, f64::max);
        assert!((plateau - 2.0).abs() < 2.0 * 1e-3);
        let support = d.values().iter().filter(|v| **v > 0.0).count() as f64 * d.grid().step();
        assert!((support - 0.5).abs() < 2.0 * d.grid().step());
    }

    #[test]
    fn uniform_errors() {
        let g = unit(11);
        assert!(matches!(GridDensity::uniform(0.0, g), Err(Error::Parameter(_))));
        assert!(GridDensity::uniform(0.5, g).is_err());
        assert!(GridDensity::uniform(1000.0, g).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DensitySpec::random_bumps(&mut rng, Grid::new(-1.5, 7.25, 513).unwrap())
            .build()
            .unwrap();
        let loaded = GridDensity::read_csv(d.to_csv().as_bytes()).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.density.grid(), d.grid());
        assert!(loaded.density.max_abs_difference(&d) < 1e-15);
    }

    #[test]
    fn csv_validation() {
        let bad_header = "a,b\n0,1\n1,1\n";
        assert!(GridDensity::read_csv(bad_header.as_bytes()).is_err());
        let uneven = "x,value\n0,1\n0.5,1\n1.2,1\n";
        assert!(GridDensity::read_csv(uneven.as_bytes()).is_err());
        let negative = "x,value\n0,1\n0.5,-1\n1,1\n";
        assert!(GridDensity::read_csv(negative.as_bytes()).is_err());
        let unnormalized = "x,value\n0,2\n0.5,2\n1,2\n";
        let loaded = GridDensity::read_csv(unnormalized.as_bytes()).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert!((loaded.density.values()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn resample_identity_and_mass() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let d = GridDensity::from_fn(g, |x| 1.0 + x).unwrap();
        let (same, residual) = d.resample(g).unwrap();
        assert!(same.max_abs_difference(&d) < 1e-14);
        assert!(residual < 1e-14);
        let (fine, _) = d.resample(Grid::new(0.0, 1.0, 1001).unwrap()).unwrap();
        assert!((fine.grid().integrate(fine.values()).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            h1 in proptest::collection::vec(-10.0f64..10.0, 50),
            h2 in proptest::collection::vec(-10.0f64..10.0, 50),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let g = Grid::new(-1.0, 3.0, 50).unwrap();
            let combo: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
            let lhs = g.integrate(&combo).unwrap();
            let rhs = a * g.integrate(&h1).unwrap() + b * g.integrate(&h2).unwrap();
            let scale = h1.iter().chain(&h2).map(|v| v.abs()).sum::<f64>() * (a.abs() + b.abs()) * g.step();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-300));
        }

        #[test]
        fn integrate_is_monotone(h in proptest::collection::vec(0.0f64..10.0, 2..200)) {
            let g = Grid::new(0.0, 1.0, h.len()).unwrap();
            prop_assert!(g.integrate(&h).unwrap() >= 0.0);
        }
    }
}
