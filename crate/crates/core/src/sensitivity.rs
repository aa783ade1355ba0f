//! Variance-based global sensitivity analysis on time-resolved outputs.
//!
//! Implements the pick-freeze Sobol estimators on Saltelli designs: the
//! first-order index of each input from the Saltelli (2010) correlation form
//! and the total-order index from the Jansen form. Both are computed
//! independently at every time step, so a single analysis yields full
//! sensitivity trajectories. Replicated designs give empirical confidence
//! intervals without any distributional assumptions.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::{saltelli_design, ParameterSpace};
use crate::error::{Error, Result};
use crate::models::{evaluate_batch, EvaluatableModel};
use crate::uqstats::quantile_sorted;

/// Sobol indices for every input at every time step, with confidence bounds.
///
/// Matrices are d x n_t: row i holds the trajectory of input i's index over
/// the time grid. When the output variance at a step is not strictly
/// positive the indices are undefined there: `defined` is false and the
/// corresponding matrix entries are NaN.
#[derive(Debug, Clone)]
pub struct SobolIndices {
    pub parameter_names: Vec<String>,
    pub time_grid: Vec<f64>,
    pub first_order: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub first_ci_low: DMatrix<f64>,
    pub first_ci_high: DMatrix<f64>,
    pub total_ci_low: DMatrix<f64>,
    pub total_ci_high: DMatrix<f64>,
    pub defined: Vec<bool>,
    pub n_base: usize,
    pub replications: usize,
}

struct RawEstimate {
    first: DMatrix<f64>,
    total: DMatrix<f64>,
    defined: Vec<bool>,
}

fn check_output_matrix(name: &str, m: &DMatrix<f64>, n: usize, n_t: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n_t {
        return Err(Error::Shape(format!(
            "{name} must be {n} x {n_t} to match the A-sample outputs, got {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    for v in m.iter() {
        if !v.is_finite() {
            return Err(Error::Data(format!("{name} contains a non-finite output value")));
        }
    }
    Ok(())
}

/// Pick-freeze estimation at every time step. All three inputs come from the
/// same Saltelli design: `f_a` and `f_b` are the outputs on the independent
/// A and B samples (n x n_t), `f_ab[i]` the outputs on A with column i taken
/// from B. Outputs are centered by the pooled A+B mean per step before any
/// estimator is formed, which makes the results invariant to shifting the
/// model output by a constant.
fn raw_estimate(f_a: &DMatrix<f64>, f_b: &DMatrix<f64>, f_ab: &[DMatrix<f64>]) -> Result<RawEstimate> {
    let n = f_a.nrows();
    let n_t = f_a.ncols();
    if n < 2 {
        return Err(Error::Config(format!(
            "Sobol estimation needs at least 2 sample rows, got {n}"
        )));
    }
    let d = f_ab.len();
    if d == 0 {
        return Err(Error::Config("no pick-freeze output blocks were supplied".into()));
    }
    check_output_matrix("A-sample outputs", f_a, n, n_t)?;
    check_output_matrix("B-sample outputs", f_b, n, n_t)?;
    for (i, m) in f_ab.iter().enumerate() {
        check_output_matrix(&format!("AB-sample outputs for input {}", i + 1), m, n, n_t)?;
    }

    let mut first = DMatrix::zeros(d, n_t);
    let mut total = DMatrix::zeros(d, n_t);
    let mut defined = vec![false; n_t];

    let nf = n as f64;
    for t in 0..n_t {
        let mut mean = 0.0;
        for j in 0..n {
            mean += f_a[(j, t)] + f_b[(j, t)];
        }
        mean /= 2.0 * nf;

        let mut ss = 0.0;
        for j in 0..n {
            let ac = f_a[(j, t)] - mean;
            let bc = f_b[(j, t)] - mean;
            ss += ac * ac + bc * bc;
        }
        let variance = ss / (2.0 * nf - 1.0);

        if !(variance > 0.0) {
            for i in 0..d {
                first[(i, t)] = f64::NAN;
                total[(i, t)] = f64::NAN;
            }
            continue;
        }
        defined[t] = true;

        for i in 0..d {
            let fab = &f_ab[i];
            let mut corr = 0.0;
            let mut jansen = 0.0;
            for j in 0..n {
                let ac = f_a[(j, t)] - mean;
                let bc = f_b[(j, t)] - mean;
                let abc = fab[(j, t)] - mean;
                corr += bc * (abc - ac);
                let diff = ac - abc;
                jansen += diff * diff;
            }
            first[(i, t)] = corr / nf / variance;
            total[(i, t)] = jansen / (2.0 * nf) / variance;
        }
    }

    Ok(RawEstimate { first, total, defined })
}

fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

fn default_grid(n_t: usize) -> Vec<f64> {
    (0..n_t).map(|t| t as f64).collect()
}

/// Estimates first-order and total-order Sobol indices from precomputed
/// pick-freeze outputs. `f_a` and `f_b` are n x n_t output matrices on the
/// independent A and B samples; `f_ab[i]` is the output on A with input i
/// resampled from B. A single evaluation set carries no replication
/// information, so the confidence bounds collapse onto the estimates.
///
/// Estimates are left as computed: small negative values are legitimate
/// Monte Carlo noise around zero and clipping them would bias averages.
pub fn estimate_sobol(
    f_a: &DMatrix<f64>,
    f_b: &DMatrix<f64>,
    f_ab: &[DMatrix<f64>],
) -> Result<SobolIndices> {
    let raw = raw_estimate(f_a, f_b, f_ab)?;
    let d = f_ab.len();
    let n_t = f_a.ncols();
    Ok(SobolIndices {
        parameter_names: default_names(d),
        time_grid: default_grid(n_t),
        first_ci_low: raw.first.clone(),
        first_ci_high: raw.first.clone(),
        total_ci_low: raw.total.clone(),
        total_ci_high: raw.total.clone(),
        first_order: raw.first,
        total: raw.total,
        defined: raw.defined,
        n_base: f_a.nrows(),
        replications: 1,
    })
}

/// An empirical central 95% interval over replication values, widened if
/// necessary so the replication mean always lies inside it.
fn percentile_interval(values: &mut [f64], mean: f64) -> (f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let low = quantile_sorted(values, 0.025).min(mean);
    let high = quantile_sorted(values, 0.975).max(mean);
    (low, high)
}

/// Runs a full replicated Sobol analysis of `model` over `space`.
///
/// Each replication draws a fresh Saltelli design of `n_base` base points
/// from a disjoint stretch of the scrambling-free Sobol stream (replication
/// r starts at index 1 + (seed + r) * n_base * 2d), evaluates the model on
/// all n_base * (d + 2) points, and forms one index estimate per input and
/// time step. The reported estimate is the mean over replications and the
/// bounds are empirical 2.5/97.5 percentiles of the replication values. With
/// a single replication the bounds collapse onto the estimate. A time step
/// counts as defined only when every replication saw positive variance.
pub fn replicated_sobol(
    model: &dyn EvaluatableModel,
    space: &ParameterSpace,
    n_base: usize,
    replications: usize,
    seed: u64,
) -> Result<SobolIndices> {
    let d = space.dimension();
    if d != model.dimension() {
        return Err(Error::Shape(format!(
            "parameter space has {d} dimensions but the model expects {}",
            model.dimension()
        )));
    }
    if replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    let n_t = model.response_len();
    if n_t == 0 {
        return Err(Error::Config("model reports an empty response".into()));
    }

    let block = (n_base as u64)
        .checked_mul(2 * d as u64)
        .ok_or_else(|| Error::Config("n_base * 2d overflows the sample index range".into()))?;
    let mut raws = Vec::with_capacity(replications);
    for r in 0..replications {
        let offset = seed
            .checked_add(r as u64)
            .and_then(|s| s.checked_mul(block))
            .ok_or_else(|| {
                Error::Config(format!(
                    "seed {seed} with {replications} replications of {n_base} base points exceeds the sample index range"
                ))
            })?;
        let skip = 1u64
            .checked_add(offset)
            .ok_or_else(|| Error::Config("replication stream offset overflows".into()))?;
        let design = saltelli_design(space, n_base, skip)?;

        let f_a = rows_to_matrix(evaluate_batch(model, design.a.points())?, n_t)?;
        let f_b = rows_to_matrix(evaluate_batch(model, design.b.points())?, n_t)?;
        let f_ab = design
            .ab
            .iter()
            .map(|m| rows_to_matrix(evaluate_batch(model, m.points())?, n_t))
            .collect::<Result<Vec<_>>>()?;

        raws.push(raw_estimate(&f_a, &f_b, &f_ab)?);
    }

    let reps = replications as f64;
    let mut first_order = DMatrix::zeros(d, n_t);
    let mut total = DMatrix::zeros(d, n_t);
    let mut first_ci_low = DMatrix::zeros(d, n_t);
    let mut first_ci_high = DMatrix::zeros(d, n_t);
    let mut total_ci_low = DMatrix::zeros(d, n_t);
    let mut total_ci_high = DMatrix::zeros(d, n_t);
    let mut defined = vec![true; n_t];
    for t in 0..n_t {
        defined[t] = raws.iter().all(|r| r.defined[t]);
        for i in 0..d {
            if !defined[t] {
                first_order[(i, t)] = f64::NAN;
                total[(i, t)] = f64::NAN;
                first_ci_low[(i, t)] = f64::NAN;
                first_ci_high[(i, t)] = f64::NAN;
                total_ci_low[(i, t)] = f64::NAN;
                total_ci_high[(i, t)] = f64::NAN;
                continue;
            }
            let mut fo: Vec<f64> = raws.iter().map(|r| r.first[(i, t)]).collect();
            let mut to: Vec<f64> = raws.iter().map(|r| r.total[(i, t)]).collect();
            let fo_mean = fo.iter().sum::<f64>() / reps;
            let to_mean = to.iter().sum::<f64>() / reps;
            let (fl, fh) = percentile_interval(&mut fo, fo_mean);
            let (tl, th) = percentile_interval(&mut to, to_mean);
            first_order[(i, t)] = fo_mean;
            total[(i, t)] = to_mean;
            first_ci_low[(i, t)] = fl;
            first_ci_high[(i, t)] = fh;
            total_ci_low[(i, t)] = tl;
            total_ci_high[(i, t)] = th;
        }
    }

    Ok(SobolIndices {
        parameter_names: space.names().iter().map(|s| s.to_string()).collect(),
        time_grid: default_grid(n_t),
        first_order,
        total,
        first_ci_low,
        first_ci_high,
        total_ci_low,
        total_ci_high,
        defined,
        n_base,
        replications,
    })
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, n_t: usize) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for (j, row) in rows.iter().enumerate() {
        if row.len() != n_t {
            return Err(Error::Shape(format!(
                "model returned {} values for sample {} but reports a response of length {n_t}",
                row.len(),
                j + 1
            )));
        }
    }
    Ok(DMatrix::from_fn(n, n_t, |j, t| rows[j][t]))
}

/// The gap `total - first_order` per input and time step. A gap near zero
/// means the input acts additively; a large gap means its influence comes
/// through interactions with other inputs. NaN where the indices are
/// undefined.
pub fn interaction_gap(indices: &SobolIndices) -> DMatrix<f64> {
    &indices.total - &indices.first_order
}

impl SobolIndices {
    /// Attaches real parameter names and time stamps for reporting. The
    /// estimation routines label inputs x1..xd and time steps 0..n_t-1 by
    /// default; this replaces both after checking the lengths match.
    pub fn with_labels(mut self, parameter_names: Vec<String>, time_grid: Vec<f64>) -> Result<Self> {
        if parameter_names.len() != self.first_order.nrows() {
            return Err(Error::Shape(format!(
                "{} parameter names supplied for {} inputs",
                parameter_names.len(),
                self.first_order.nrows()
            )));
        }
        if time_grid.len() != self.first_order.ncols() {
            return Err(Error::Shape(format!(
                "{} time stamps supplied for {} time steps",
                time_grid.len(),
                self.first_order.ncols()
            )));
        }
        self.parameter_names = parameter_names;
        self.time_grid = time_grid;
        Ok(self)
    }

    /// Writes the indices in long form, one row per (time, parameter, index
    /// type), with columns time, parameter, index_type (first or total),
    /// estimate, ci_low, ci_high, interaction_gap. At undefined time steps
    /// the numeric cells are left empty rather than written as NaN.
    pub fn write_long_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "time",
            "parameter",
            "index_type",
            "estimate",
            "ci_low",
            "ci_high",
            "interaction_gap",
        ])?;
        let gap = interaction_gap(self);
        let fmt = |v: f64| format!("{v:?}");
        for (t, time) in self.time_grid.iter().enumerate() {
            for (i, name) in self.parameter_names.iter().enumerate() {
                if self.defined[t] {
                    let g = fmt(gap[(i, t)]);
                    w.write_record([
                        fmt(*time),
                        name.clone(),
                        "first".into(),
                        fmt(self.first_order[(i, t)]),
                        fmt(self.first_ci_low[(i, t)]),
                        fmt(self.first_ci_high[(i, t)]),
                        g.clone(),
                    ])?;
                    w.write_record([
                        fmt(*time),
                        name.clone(),
                        "total".into(),
                        fmt(self.total[(i, t)]),
                        fmt(self.total_ci_low[(i, t)]),
                        fmt(self.total_ci_high[(i, t)]),
                        g,
                    ])?;
                } else {
                    for kind in ["first", "total"] {
                        w.write_record([
                            fmt(*time),
                            name.clone(),
                            kind.into(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the long-form CSV to a file path.
    pub fn to_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_long_csv(std::io::BufWriter::new(file))
    }
}

/// Evaluates all pick-freeze blocks of a Saltelli design against a model and
/// estimates indices in one call, without replication.
pub fn sobol_from_design(
    model: &dyn EvaluatableModel,
    design: &crate::design::SaltelliDesign,
) -> Result<SobolIndices> {
    let n_t = model.response_len();
    let f_a = rows_to_matrix(evaluate_batch(model, design.a.points())?, n_t)?;
    let f_b = rows_to_matrix(evaluate_batch(model, design.b.points())?, n_t)?;
    let f_ab = design
        .ab
        .par_iter()
        .map(|m| rows_to_matrix(evaluate_batch(model, m.points())?, n_t))
        .collect::<Result<Vec<_>>>()?;
    estimate_sobol(&f_a, &f_b, &f_ab)
}
