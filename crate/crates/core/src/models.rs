//! Built-in test models and dataset ingestion.
//!
//! Two classic analytic functions with known variance decompositions
//! (Ishigami and Sobol' g-function) serve as oracles for the sensitivity
//! estimators, and a synthetic restenosis-like generator produces smooth
//! lumen-area trajectories on a daily grid for exercising the full
//! surrogate pipeline without an expensive simulator. External simulation
//! data enters through [`load_dataset`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::{DesignMatrix, Param, ParameterSpace};
use crate::error::{Error, Result};

/// A deterministic map from a parameter vector to a response vector, the
/// interface batch evaluation and sensitivity analysis work against.
pub trait EvaluatableModel: Sync {
    /// Input dimension d.
    fn dimension(&self) -> usize;

    /// Response length (1 for scalar models).
    fn response_len(&self) -> usize;

    /// Evaluates the model at one point given in physical units.
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Evaluates every row of `points` (physical units), in parallel.
pub fn evaluate_batch(model: &dyn EvaluatableModel, points: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    if points.ncols() != model.dimension() {
        return Err(Error::Shape(format!(
            "points have dimension {}, model expects {}",
            points.ncols(),
            model.dimension()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..points.nrows())
        .map(|i| points.row(i).iter().copied().collect())
        .collect();
    rows.par_iter().map(|x| model.evaluate(x)).collect()
}

/// sin x1 + a sin^2 x2 + b x3^4 sin x1, the standard three-input benchmark
/// whose variance splits into known shares.
pub fn ishigami(x: [f64; 3], a: f64, b: f64) -> f64 {
    x[0].sin() + a * x[1].sin() * x[1].sin() + b * x[2].powi(4) * x[0].sin()
}

/// prod_i (|4 x_i - 2| + a_i) / (1 + a_i) on the unit box. Larger a_i makes
/// input i less influential.
pub fn g_function(x: &[f64], a: &[f64]) -> f64 {
    x.iter()
        .zip(a)
        .map(|(xi, ai)| ((4.0 * xi - 2.0).abs() + ai) / (1.0 + ai))
        .product()
}

/// The Ishigami function as a model over [-pi, pi]^3.
#[derive(Debug, Clone)]
pub struct Ishigami {
    pub a: f64,
    pub b: f64,
}

impl Ishigami {
    /// The common parameterization a = 7, b = 0.1.
    pub fn standard() -> Self {
        Self { a: 7.0, b: 0.1 }
    }

    pub fn space(&self) -> ParameterSpace {
        let pi = std::f64::consts::PI;
        ParameterSpace::new(
            (1..=3)
                .map(|i| Param {
                    name: format!("x{i}"),
                    min: -pi,
                    max: pi,
                    unit: String::new(),
                })
                .collect(),
        )
        .expect("static space is valid")
    }
}

impl EvaluatableModel for Ishigami {
    fn dimension(&self) -> usize {
        3
    }

    fn response_len(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != 3 {
            return Err(Error::Shape(format!("expected 3 inputs, got {}", x.len())));
        }
        Ok(vec![ishigami([x[0], x[1], x[2]], self.a, self.b)])
    }
}

/// The g-function as a model over the unit box.
#[derive(Debug, Clone)]
pub struct GFunction {
    a: Vec<f64>,
}

impl GFunction {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::Config("g-function needs at least one coefficient".into()));
        }
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("g-function coefficients must be finite and nonnegative".into()));
        }
        Ok(Self { a })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }

    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::new(
            (1..=self.a.len())
                .map(|i| Param {
                    name: format!("x{i}"),
                    min: 0.0,
                    max: 1.0,
                    unit: String::new(),
                })
                .collect(),
        )
        .expect("static space is valid")
    }
}

impl EvaluatableModel for GFunction {
    fn dimension(&self) -> usize {
        self.a.len()
    }

    fn response_len(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.a.len() {
            return Err(Error::Shape(format!(
                "expected {} inputs, got {}",
                self.a.len(),
                x.len()
            )));
        }
        Ok(vec![g_function(x, &self.a)])
    }
}

/// Post-stenting lumen area in mm^2 shared by every trajectory at t = 0.
pub const INITIAL_LUMEN_AREA: f64 = 3.17;

/// Smoothing width (days) of the growth stop; also the softplus scale.
const STOP_SMOOTHING: f64 = 1.5;

/// Days of effective growth needed to traverse the full smoothstep ramp.
const RAMP_SPAN: f64 = 26.0;

/// Closed-form surrogate for a restenosis simulation: lumen area over time
/// for a four-parameter input, in the units of [`ParameterSpace::isr3d`].
///
/// With normalized coordinates Tn = (T - 10)/10, vn = (v - 0.133)/0.266,
/// en = (e - 0.446)/0.339, Fn = (F - 2)/8, the trajectory is
///
/// ```text
/// A(t) = 3.17 - 1.45 * rho * gamma * s3(u(t))
/// rho   = 1.35 - 0.70 * vn              (depth, driven by flow velocity)
/// gamma = 1 + 0.010 * (en - 0.5)        (deliberately weak strain effect)
/// tau   = 0.5 + 3.5 * (1 - Fn)          (onset delay from fenestration)
/// stop  = 14 + 10 * Tn                  (regeneration ends the growth)
/// m(t)  = stop - 1.5 * softplus((stop - t) / 1.5)   (smooth min(t, stop))
/// u(t)  = clamp01((m(t) - tau) / 26)
/// s3(u) = u^3 (10 - 15 u + 6 u^2)       (monotone C^2 smoothstep)
/// ```
///
/// Growth is slow at first, accelerates mid-course, and levels off near the
/// stop time; the velocity-like and regeneration-like inputs dominate the
/// final-time variance while the fenestration-like delay dominates early
/// times and the strain-like input never matters by construction. The
/// constants are frozen; tests pin exact trajectory values.
pub fn synthetic_restenosis(x: &[f64], time_grid: &[f64]) -> Result<Vec<f64>> {
    let space = ParameterSpace::isr3d();
    if x.len() != 4 {
        return Err(Error::Shape(format!("expected 4 inputs, got {}", x.len())));
    }
    if !space.contains(x) {
        let detail: Vec<String> = space
            .params()
            .iter()
            .zip(x)
            .filter(|(p, v)| **v < p.min || **v > p.max)
            .map(|(p, v)| format!("{} = {v} outside [{}, {}]", p.name, p.min, p.max))
            .collect();
        return Err(Error::Domain(detail.join("; ")));
    }
    validate_time_grid(time_grid)?;

    let tn = (x[0] - 10.0) / 10.0;
    let vn = (x[1] - 0.133) / 0.266;
    let en = (x[2] - 0.446) / 0.339;
    let fn_ = (x[3] - 2.0) / 8.0;

    let rho = 1.35 - 0.70 * vn;
    let gamma = 1.0 + 0.010 * (en - 0.5);
    let tau = 0.5 + 3.5 * (1.0 - fn_);
    let stop = 14.0 + 10.0 * tn;
    let amplitude = 1.45 * rho * gamma;

    Ok(time_grid
        .iter()
        .map(|&t| {
            let m = stop - scaled_softplus(stop - t);
            let u = ((m - tau) / RAMP_SPAN).clamp(0.0, 1.0);
            let s3 = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            INITIAL_LUMEN_AREA - amplitude * s3
        })
        .collect())
}

/// 1.5 * softplus(z / 1.5) in the overflow-safe arrangement.
fn scaled_softplus(z: f64) -> f64 {
    z.max(0.0) + STOP_SMOOTHING * (-(z.abs()) / STOP_SMOOTHING).exp().ln_1p()
}

fn validate_time_grid(time_grid: &[f64]) -> Result<()> {
    if time_grid.is_empty() {
        return Err(Error::Config("time grid is empty".into()));
    }
    if time_grid[0] != 0.0 {
        return Err(Error::Config(format!(
            "time grid must start at 0, got {}",
            time_grid[0]
        )));
    }
    if time_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("time grid contains non-finite values".into()));
    }
    if time_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// [`synthetic_restenosis`] bound to a fixed time grid.
#[derive(Debug, Clone)]
pub struct SyntheticRestenosis {
    time_grid: Vec<f64>,
}

impl SyntheticRestenosis {
    pub fn new(time_grid: Vec<f64>) -> Result<Self> {
        validate_time_grid(&time_grid)?;
        Ok(Self { time_grid })
    }

    /// Daily grid over a 30-day horizon: t = 0, 1, ..., 30.
    pub fn daily() -> Self {
        Self {
            time_grid: (0..=30).map(|t| t as f64).collect(),
        }
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::isr3d()
    }
}

impl EvaluatableModel for SyntheticRestenosis {
    fn dimension(&self) -> usize {
        4
    }

    fn response_len(&self) -> usize {
        self.time_grid.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        synthetic_restenosis(x, &self.time_grid)
    }
}

/// Inputs, responses, and a time grid that belong together.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub design: DesignMatrix,
    pub responses: Vec<Vec<f64>>,
    pub time_grid: Vec<f64>,
    /// Where the data came from, for reports.
    pub provenance: String,
    /// True when the inputs file listed columns in a different order than
    /// the parameter space and they were rearranged by name.
    pub columns_reordered: bool,
}

impl Dataset {
    pub fn n_runs(&self) -> usize {
        self.responses.len()
    }

    /// Writes the three-file CSV representation that [`load_dataset`] reads.
    pub fn save(
        &self,
        inputs_path: impl AsRef<Path>,
        responses_path: impl AsRef<Path>,
        timegrid_path: impl AsRef<Path>,
    ) -> Result<()> {
        self.design.to_csv(&inputs_path)?;
        let mut body = String::new();
        for row in &self.responses {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(body, "{}", line.join(",")).expect("writing to a string cannot fail");
        }
        std::fs::write(&responses_path, body)?;
        let mut grid = String::new();
        for t in &self.time_grid {
            writeln!(grid, "{t:?}").expect("writing to a string cannot fail");
        }
        std::fs::write(&timegrid_path, grid)?;
        Ok(())
    }
}

/// Reads an inputs CSV (header row of parameter names), a headerless
/// responses CSV (row i holds the response for input row i), and a
/// single-column time-grid file, and cross-checks them against the space.
pub fn load_dataset(
    inputs_path: impl AsRef<Path>,
    responses_path: impl AsRef<Path>,
    timegrid_path: impl AsRef<Path>,
    space: &ParameterSpace,
) -> Result<Dataset> {
    let (design, reordered) = DesignMatrix::from_csv(&inputs_path, space)?;
    let time_grid = read_time_grid(&timegrid_path)?;
    let responses = read_responses(&responses_path, time_grid.len())?;
    if responses.len() != design.n_points() {
        return Err(Error::Data(format!(
            "inputs file has {} rows but responses file has {}",
            design.n_points(),
            responses.len()
        )));
    }
    let provenance = format!(
        "inputs: {}; responses: {}; time grid: {}{}",
        inputs_path.as_ref().display(),
        responses_path.as_ref().display(),
        timegrid_path.as_ref().display(),
        if reordered { "; input columns reordered to match the space" } else { "" }
    );
    Ok(Dataset {
        design,
        responses,
        time_grid,
        provenance,
        columns_reordered: reordered,
    })
}

/// Reads a single-column file of time values (no header).
pub fn read_time_grid(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    let mut grid = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::Parse(format!(
                "{}: line {} is not a number: '{line}'",
                path.as_ref().display(),
                i + 1
            ))
        })?;
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(Error::Data(format!("{}: no time values", path.as_ref().display())));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Data(format!(
            "{}: non-finite time value",
            path.as_ref().display()
        )));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data(format!(
            "{}: time values must be strictly increasing",
            path.as_ref().display()
        )));
    }
    Ok(grid)
}

/// Reads a headerless CSV of response rows without a time grid to check
/// against; all rows must have the same number of values as the first.
pub fn read_responses_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    read_responses_expecting(path, None)
}

fn read_responses(path: impl AsRef<Path>, n_time: usize) -> Result<Vec<Vec<f64>>> {
    read_responses_expecting(path, Some(n_time))
}

fn read_responses_expecting(
    path: impl AsRef<Path>,
    expected: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    let mut expected = expected;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Parse(format!("{}: row {}: {e}", path.as_ref().display(), i + 1))
        })?;
        let n_time = *expected.get_or_insert(record.len());
        if record.len() != n_time {
            return Err(Error::Data(format!(
                "{}: row {} has {} values, expected {}",
                path.as_ref().display(),
                i + 1,
                record.len(),
                n_time
            )));
        }
        let mut row = Vec::with_capacity(n_time);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column {}: not a number: '{field}'",
                    path.as_ref().display(),
                    i + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: row {}, column {}: non-finite value",
                    path.as_ref().display(),
                    i + 1,
                    j + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no response rows", path.as_ref().display())));
    }
    Ok(rows)
}
