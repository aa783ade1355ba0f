//! Forward-UQ summaries of response ensembles: moments, percentile bands,
//! empirical PDFs, and threshold exceedance.
//!
//! An ensemble is an N-by-N_t matrix, one sampled response per row. Every
//! statistic here is computed per time step from the sorted column values,
//! which makes the results exactly invariant under reordering the samples.

use std::fmt;
use std::io::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Central percentile band: the `level`% band spans the
/// (100-level)/2 .. (100+level)/2 empirical quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileBand {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Per-time-step ensemble statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct UqSummary {
    pub time_grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation (divisor N-1).
    pub sd: Vec<f64>,
    /// Coefficient of variation sd/|mean|; NaN where undefined (see
    /// `cv_defined`).
    pub cv: Vec<f64>,
    /// False where |mean| is too close to zero for the CV to mean anything.
    pub cv_defined: Vec<bool>,
    /// Central bands at the 50, 75, and 95 percent levels.
    pub bands: Vec<PercentileBand>,
    pub sample_count: usize,
}

const BAND_LEVELS: [f64; 3] = [50.0, 75.0, 95.0];

/// Summarizes an N-by-N_t ensemble (one response per row).
pub fn summarize(ensemble: &DMatrix<f64>, time_grid: &[f64]) -> Result<UqSummary> {
    let n = ensemble.nrows();
    let n_t = ensemble.ncols();
    if n < 2 {
        return Err(Error::Data(format!(
            "ensemble statistics need at least two samples, got {n}"
        )));
    }
    if n_t != time_grid.len() {
        return Err(Error::Shape(format!(
            "ensemble has {n_t} time steps but the grid has {}",
            time_grid.len()
        )));
    }
    if ensemble.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("ensemble contains non-finite values".into()));
    }
    let max_abs = ensemble.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut mean = Vec::with_capacity(n_t);
    let mut sd = Vec::with_capacity(n_t);
    let mut cv = Vec::with_capacity(n_t);
    let mut cv_defined = Vec::with_capacity(n_t);
    let mut bands: Vec<PercentileBand> = BAND_LEVELS
        .iter()
        .map(|&level| PercentileBand {
            level,
            lower: Vec::with_capacity(n_t),
            upper: Vec::with_capacity(n_t),
        })
        .collect();

    let mut column = vec![0.0; n];
    for t in 0..n_t {
        for i in 0..n {
            column[i] = ensemble[(i, t)];
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("values checked finite"));
        let m = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        let s = var.sqrt();
        mean.push(m);
        sd.push(s);
        if m.abs() < 1e-12 * max_abs.max(1e-300) {
            cv.push(f64::NAN);
            cv_defined.push(false);
        } else {
            cv.push(s / m.abs());
            cv_defined.push(true);
        }
        for band in bands.iter_mut() {
            let tail = (100.0 - band.level) / 200.0;
            band.lower.push(quantile_sorted(&column, tail));
            band.upper.push(quantile_sorted(&column, 1.0 - tail));
        }
    }
    Ok(UqSummary {
        time_grid: time_grid.to_vec(),
        mean,
        sd,
        cv,
        cv_defined,
        bands,
        sample_count: n,
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0 && (0.0..=1.0).contains(&p));
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Histogram normalized to unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// bins + 1 ascending edges.
    pub edges: Vec<f64>,
    /// Density per bin; sums to 1 when multiplied by bin widths.
    pub densities: Vec<f64>,
}

/// Gaussian-kernel density estimate evaluated on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    pub grid: Vec<f64>,
    pub densities: Vec<f64>,
    pub bandwidth: f64,
}

/// Controls for [`empirical_pdf`].
#[derive(Debug, Clone)]
pub struct PdfConfig {
    pub bins: usize,
    /// Kernel bandwidth; `None` applies Silverman's rule.
    pub bandwidth: Option<f64>,
}

impl Default for PdfConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            bandwidth: None,
        }
    }
}

/// Histogram plus kernel density estimate of the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfEstimate {
    pub histogram: Histogram,
    pub kde: KernelDensity,
}

/// Unit-area histogram of `samples` with equal-width bins. Zero-width data
/// collapses to a single bin of width 1 centered on the value.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    check_samples(samples)?;
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(Histogram {
            edges: vec![min - 0.5, min + 0.5],
            densities: vec![1.0],
        });
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in samples {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let norm = 1.0 / (samples.len() as f64 * width);
    Ok(Histogram {
        edges: (0..=bins).map(|i| min + i as f64 * width).collect(),
        densities: counts.iter().map(|c| *c as f64 * norm).collect(),
    })
}

/// Gaussian-kernel density estimate on a 512-point grid spanning the data
/// range plus four bandwidths on each side.
pub fn kernel_density(samples: &[f64], bandwidth: Option<f64>) -> Result<KernelDensity> {
    check_samples(samples)?;
    let n = samples.len();
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::Degenerate(
            "all samples are identical; a kernel density estimate is undefined".into(),
        ));
    }
    let h = match bandwidth {
        Some(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
            h
        }
        None => silverman_bandwidth(samples),
    };
    const GRID: usize = 512;
    let lo = min - 4.0 * h;
    let hi = max + 4.0 * h;
    let step = (hi - lo) / (GRID - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut grid = Vec::with_capacity(GRID);
    let mut densities = Vec::with_capacity(GRID);
    for g in 0..GRID {
        let x = lo + g as f64 * step;
        let mut acc = 0.0;
        for v in samples {
            let z = (x - v) / h;
            acc += (-0.5 * z * z).exp();
        }
        grid.push(x);
        densities.push(acc * norm);
    }
    Ok(KernelDensity {
        grid,
        densities,
        bandwidth: h,
    })
}

/// Silverman's rule of thumb: 0.9 min(sd, IQR/1.34) n^(-1/5), falling back
/// to the SD when the interquartile range vanishes.
fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values checked finite"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Histogram and KDE of one sample set.
pub fn empirical_pdf(samples: &[f64], config: &PdfConfig) -> Result<PdfEstimate> {
    Ok(PdfEstimate {
        histogram: histogram(samples, config.bins)?,
        kde: kernel_density(samples, config.bandwidth)?,
    })
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "density estimation needs at least two samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("samples contain non-finite values".into()));
    }
    Ok(())
}

/// Which side of the threshold counts as exceeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Above,
    Below,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "above" => Ok(Direction::Above),
            "below" => Ok(Direction::Below),
            other => Err(Error::Config(format!(
                "direction must be 'above' or 'below', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Above => "above",
            Direction::Below => "below",
        })
    }
}

/// Threshold-crossing statistics plus the inputs that crossed.
#[derive(Debug, Clone)]
pub struct ExceedanceReport {
    pub threshold: f64,
    pub direction: Direction,
    pub time_grid: Vec<f64>,
    /// Fraction of samples strictly beyond the threshold at each time step.
    pub fraction_per_time: Vec<f64>,
    /// Input rows whose trajectory ever crosses, with the first grid time at
    /// which they do.
    pub exceeding_inputs: Vec<(Vec<f64>, f64)>,
}

/// Counts threshold crossings per time step and collects the inputs of every
/// sample that ever crosses.
pub fn exceedance(
    ensemble: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    time_grid: &[f64],
    threshold: f64,
    direction: Direction,
) -> Result<ExceedanceReport> {
    let n = ensemble.nrows();
    let n_t = ensemble.ncols();
    if inputs.nrows() != n {
        return Err(Error::Shape(format!(
            "{n} ensemble rows but {} input rows",
            inputs.nrows()
        )));
    }
    if n_t != time_grid.len() {
        return Err(Error::Shape(format!(
            "ensemble has {n_t} time steps but the grid has {}",
            time_grid.len()
        )));
    }
    if !threshold.is_finite() {
        return Err(Error::Config("threshold must be finite".into()));
    }
    let beyond = |v: f64| match direction {
        Direction::Above => v > threshold,
        Direction::Below => v < threshold,
    };
    let mut counts = vec![0usize; n_t];
    let mut exceeding_inputs = Vec::new();
    for i in 0..n {
        let mut first: Option<usize> = None;
        for t in 0..n_t {
            if beyond(ensemble[(i, t)]) {
                counts[t] += 1;
                if first.is_none() {
                    first = Some(t);
                }
            }
        }
        if let Some(t) = first {
            let row: Vec<f64> = inputs.row(i).iter().copied().collect();
            exceeding_inputs.push((row, time_grid[t]));
        }
    }
    Ok(ExceedanceReport {
        threshold,
        direction,
        time_grid: time_grid.to_vec(),
        fraction_per_time: counts.iter().map(|c| *c as f64 / n as f64).collect(),
        exceeding_inputs,
    })
}

impl UqSummary {
    /// Long-format CSV: one `(time, statistic, value)` row per statistic and
    /// time step. The CV value is left empty where it is undefined.
    pub fn write_long_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "statistic", "value"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut put = |time: f64, statistic: &str, value: Option<f64>| {
            let v = value.map(|v| format!("{v:?}")).unwrap_or_default();
            wtr.write_record([format!("{time:?}"), statistic.to_string(), v])
                .map_err(|e| Error::Parse(e.to_string()))
        };
        for (t, &time) in self.time_grid.iter().enumerate() {
            put(time, "mean", Some(self.mean[t]))?;
            put(time, "sd", Some(self.sd[t]))?;
            put(time, "cv", self.cv_defined[t].then(|| self.cv[t]))?;
            for band in &self.bands {
                let tail = (100.0 - band.level) / 2.0;
                put(time, &percentile_label(tail), Some(band.lower[t]))?;
                put(time, &percentile_label(100.0 - tail), Some(band.upper[t]))?;
            }
        }
        Ok(())
    }
}

fn percentile_label(p: f64) -> String {
    if p == p.trunc() {
        format!("p{}", p as i64)
    } else {
        format!("p{p}")
    }
}

impl ExceedanceReport {
    /// Long-format CSV of the per-time exceedance fraction.
    pub fn write_long_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "statistic", "value"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (t, &time) in self.time_grid.iter().enumerate() {
            wtr.write_record([
                format!("{time:?}"),
                format!("fraction_{}_{:?}", self.direction, self.threshold),
                format!("{:?}", self.fraction_per_time[t]),
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(())
    }

    /// CSV of the inputs whose trajectories crossed the threshold, one row
    /// per sample, with the first crossing time in the last column.
    pub fn write_exceeding_inputs_csv<W: std::io::Write>(
        &self,
        parameter_names: &[String],
        w: W,
    ) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = parameter_names.to_vec();
        header.push("first_crossing_time".into());
        wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for (x, t) in &self.exceeding_inputs {
            if x.len() != parameter_names.len() {
                return Err(Error::Shape(format!(
                    "input row has {} entries, {} names given",
                    x.len(),
                    parameter_names.len()
                )));
            }
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{t:?}"));
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(())
    }
}

/// Plain-text statistics table: one column per requested report day, one row
/// per estimate (mean, SD, CV in percent, and optionally the exceedance
/// fraction in percent). Days must lie on the summary's time grid.
pub fn text_table(
    summary: &UqSummary,
    exceedance: Option<&ExceedanceReport>,
    days: &[f64],
) -> Result<String> {
    if days.is_empty() {
        return Err(Error::Config("no report days given".into()));
    }
    let grid = &summary.time_grid;
    let indices: Vec<usize> = days
        .iter()
        .map(|&day| {
            grid.iter().position(|&t| (t - day).abs() <= 1e-9).ok_or_else(|| {
                Error::Config(format!(
                    "day {day} is not on the time grid [{}, {}]",
                    grid.first().expect("grid is nonempty"),
                    grid.last().expect("grid is nonempty")
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut out = String::new();
    let cell = |s: &str| format!("{s:>12}");
    out.push_str(&format!("{:<12}", "estimate"));
    for &day in days {
        out.push_str(&cell(&format!("day {day}")));
    }
    out.push('\n');

    let mut row = |label: &str, values: Vec<String>| {
        out.push_str(&format!("{label:<12}"));
        for v in values {
            out.push_str(&cell(&v));
        }
        out.push('\n');
    };
    row(
        "mean",
        indices.iter().map(|&i| format!("{:.3}", summary.mean[i])).collect(),
    );
    row(
        "sd",
        indices.iter().map(|&i| format!("{:.3}", summary.sd[i])).collect(),
    );
    row(
        "cv",
        indices
            .iter()
            .map(|&i| {
                if summary.cv_defined[i] {
                    format!("{:.3}%", 100.0 * summary.cv[i])
                } else {
                    "/".to_string()
                }
            })
            .collect(),
    );
    if let Some(report) = exceedance {
        if report.time_grid != summary.time_grid {
            return Err(Error::Shape(
                "exceedance report and summary use different time grids".into(),
            ));
        }
        row(
            &format!("{} {:?}", report.direction, report.threshold),
            indices
                .iter()
                .map(|&i| format!("{:.3}%", 100.0 * report.fraction_per_time[i]))
                .collect(),
        );
    }
    Ok(out)
}

/// Convenience: long CSV to a file path.
pub fn write_summary_csv(summary: &UqSummary, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut buf = Vec::new();
    summary.write_long_csv(&mut buf)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::sobol_points;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_ensemble(a: f64, b: f64, n: usize) -> DMatrix<f64> {
        let u = sobol_points(1, n, 1).unwrap();
        DMatrix::from_fn(n, 1, |i, _| a + u[(i, 0)] * (b - a))
    }

    #[test]
    fn published_range_cvs_are_reproduced() {
        // Uniform CV = (b-a) / (sqrt(12) * midpoint).
        let cases = [
            (10.0, 20.0, 0.19245008972987526),
            (0.133, 0.399, 0.28867513459481287),
            (0.446, 0.785, 0.15899933992186397),
            (2.0, 10.0, 0.3849001794597505),
        ];
        for (a, b, want) in cases {
            let ens = uniform_ensemble(a, b, 100_000);
            let s = summarize(&ens, &[0.0]).unwrap();
            assert!(s.cv_defined[0]);
            assert!(
                (s.cv[0] - want).abs() < 0.005,
                "range [{a}, {b}]: cv {} vs {want}",
                s.cv[0]
            );
        }
    }

    #[test]
    fn constant_ensemble_collapses() {
        let ens = DMatrix::from_element(50, 3, 4.2);
        let s = summarize(&ens, &[0.0, 1.0, 2.0]).unwrap();
        for t in 0..3 {
            assert!((s.mean[t] - 4.2).abs() < 1e-12);
            assert!(s.sd[t] >= 0.0 && s.sd[t] < 1e-12);
            assert!(s.cv_defined[t]);
            assert!(s.cv[t] < 1e-12);
            for band in &s.bands {
                assert_eq!(band.lower[t], 4.2);
                assert_eq!(band.upper[t], 4.2);
            }
        }
    }

    #[test]
    fn gaussian_band_matches_normal_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let ens = DMatrix::from_fn(n, 1, |_, _| {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let s = summarize(&ens, &[0.0]).unwrap();
        let band95 = s.bands.iter().find(|b| b.level == 95.0).unwrap();
        assert!((band95.lower[0] + 1.959964).abs() < 0.03, "{}", band95.lower[0]);
        assert!((band95.upper[0] - 1.959964).abs() < 0.03, "{}", band95.upper[0]);
    }

    #[test]
    fn bands_are_nested_at_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ens = DMatrix::from_fn(200, 5, |_, t| rng.gen::<f64>() * (t + 1) as f64);
        let s = summarize(&ens, &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        for t in 0..5 {
            assert!(s.bands[0].lower[t] >= s.bands[1].lower[t]);
            assert!(s.bands[1].lower[t] >= s.bands[2].lower[t]);
            assert!(s.bands[0].upper[t] <= s.bands[1].upper[t]);
            assert!(s.bands[1].upper[t] <= s.bands[2].upper[t]);
        }
    }

    #[test]
    fn summary_is_exactly_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 64;
        let ens = DMatrix::from_fn(n, 4, |_, _| rng.gen::<f64>() * 10.0 - 5.0);
        // Reverse the rows.
        let rev = DMatrix::from_fn(n, 4, |i, j| ens[(n - 1 - i, j)]);
        let grid = [0.0, 1.0, 2.0, 3.0];
        let a = summarize(&ens, &grid).unwrap();
        let b = summarize(&rev, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_histogram_is_flat_and_normalized() {
        let u = sobol_points(1, 100_000, 1).unwrap();
        let samples: Vec<f64> = (0..100_000).map(|i| u[(i, 0)]).collect();
        let h = histogram(&samples, 10).unwrap();
        let area: f64 = h
            .densities
            .iter()
            .enumerate()
            .map(|(i, d)| d * (h.edges[i + 1] - h.edges[i]))
            .sum();
        assert!((area - 1.0).abs() < 1e-8);
        for d in &h.densities {
            assert!((d - 1.0).abs() < 0.05, "{d}");
        }
    }

    #[test]
    fn kde_integrates_to_one_and_finds_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gauss = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let samples: Vec<f64> = (0..2000)
            .map(|i| {
                let center = if i % 2 == 0 { -2.0 } else { 2.0 };
                center + 0.3 * gauss(&mut rng)
            })
            .collect();
        let kde = kernel_density(&samples, None).unwrap();
        let mut area = 0.0;
        for w in kde.grid.windows(2).zip(kde.densities.windows(2)) {
            area += 0.5 * (w.1[0] + w.1[1]) * (w.0[1] - w.0[0]);
        }
        assert!((area - 1.0).abs() < 1e-3, "area {area}");
        let peak = |side: f64| {
            kde.grid
                .iter()
                .zip(&kde.densities)
                .filter(|(x, _)| x.signum() == side)
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(x, d)| (*x, *d))
                .unwrap()
        };
        let (left_x, left_d) = peak(-1.0);
        let (right_x, right_d) = peak(1.0);
        assert!((left_x + 2.0).abs() < 0.3, "left mode at {left_x}");
        assert!((right_x - 2.0).abs() < 0.3, "right mode at {right_x}");
        // A genuine dip between the modes.
        let mid = kde
            .grid
            .iter()
            .zip(&kde.densities)
            .filter(|(x, _)| x.abs() < 0.5)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        assert!(mid < 0.5 * left_d.min(right_d));
    }

    #[test]
    fn zero_width_data_is_histogrammable_but_not_kde_able() {
        let samples = [3.0; 10];
        let h = histogram(&samples, 7).unwrap();
        assert_eq!(h.densities, vec![1.0]);
        assert_eq!(h.edges, vec![2.5, 3.5]);
        assert!(matches!(kernel_density(&samples, None), Err(Error::Degenerate(_))));
        assert!(matches!(
            empirical_pdf(&samples, &PdfConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn exceedance_trivial_cases() {
        let ens = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let inputs = DMatrix::from_row_slice(2, 1, &[0.1, 0.2]);
        let grid = [0.0, 1.0, 2.0];
        let all = exceedance(&ens, &inputs, &grid, 0.5, Direction::Above).unwrap();
        assert_eq!(all.fraction_per_time, vec![1.0, 1.0, 1.0]);
        assert_eq!(all.exceeding_inputs.len(), 2);
        assert_eq!(all.exceeding_inputs[0].1, 0.0);

        let none = exceedance(&ens, &inputs, &grid, 0.5, Direction::Below).unwrap();
        assert_eq!(none.fraction_per_time, vec![0.0, 0.0, 0.0]);
        assert!(none.exceeding_inputs.is_empty());
    }

    #[test]
    fn monotone_trajectories_give_monotone_fractions() {
        // Decreasing trajectories crossing a "below" threshold cross once
        // and stay across, so the fraction never decreases.
        let n = 40;
        let n_t = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ens = DMatrix::from_fn(n, n_t, |i, t| {
            let start = 3.0 + 0.02 * i as f64;
            start - (t as f64) * (0.05 + 0.1 * rng.gen::<f64>() * 0.0) - 0.08 * t as f64 * (i % 5) as f64 / 5.0
        });
        let inputs = DMatrix::from_fn(n, 2, |i, j| (i + j) as f64);
        let grid: Vec<f64> = (0..n_t).map(|t| t as f64).collect();
        let report = exceedance(&ens, &inputs, &grid, 2.0, Direction::Below).unwrap();
        for w in report.fraction_per_time.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn exceedance_matches_a_direct_recount() {
        use crate::design::qmc_design;
        use crate::models::{evaluate_batch, SyntheticRestenosis};
        let model = SyntheticRestenosis::daily();
        let design = qmc_design(&model.space(), 128, 1).unwrap();
        let rows = evaluate_batch(&model, design.points()).unwrap();
        let ens = DMatrix::from_fn(128, 31, |i, t| rows[i][t]);
        let grid: Vec<f64> = (0..=30).map(|t| t as f64).collect();
        let threshold = 0.5 * 3.17;
        let report =
            exceedance(&ens, design.points(), &grid, threshold, Direction::Below).unwrap();
        for t in 0..31 {
            let count = (0..128).filter(|&i| rows[i][t] < threshold).count();
            assert_eq!(report.fraction_per_time[t], count as f64 / 128.0);
        }
        let ever = (0..128).filter(|&i| rows[i].iter().any(|v| *v < threshold)).count();
        assert_eq!(report.exceeding_inputs.len(), ever);
    }

    #[test]
    fn long_csv_leaves_undefined_cv_empty() {
        let ens = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 1.0, 7.0]);
        let s = summarize(&ens, &[0.0, 1.0]).unwrap();
        assert!(!s.cv_defined[0]);
        assert!(s.cv_defined[1]);
        let mut buf = Vec::new();
        s.write_long_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("0.0,cv,\n"), "{text}");
        assert!(text.contains("1.0,mean,6.0"), "{text}");
        assert!(text.contains("p2.5"), "{text}");
    }

    #[test]
    fn text_table_reports_requested_days() {
        let n = 10;
        let grid: Vec<f64> = (0..=30).map(|t| t as f64).collect();
        let ens = DMatrix::from_fn(n, 31, |i, t| 3.0 - 0.01 * (i * t) as f64);
        let s = summarize(&ens, &grid).unwrap();
        let inputs = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let rep = exceedance(&ens, &inputs, &grid, 2.0, Direction::Below).unwrap();
        let table = text_table(&s, Some(&rep), &[5.0, 15.0, 30.0]).unwrap();
        assert!(table.contains("day 5"));
        assert!(table.contains("day 30"));
        assert!(table.contains("mean"));
        assert!(table.contains("below 2.0"));
        let err = text_table(&s, None, &[7.5]).unwrap_err().to_string();
        assert!(err.contains("7.5") && err.contains("[0, 30]"), "{err}");
    }

    #[test]
    fn single_sample_is_rejected() {
        let ens = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(summarize(&ens, &[0.0, 1.0]).is_err());
    }
}
