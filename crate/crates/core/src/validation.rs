//! Cross-validation of the POD-GP surrogate and basis convergence sweeps.
//!
//! Errors are measured in the relative L2 norm per held-out run,
//! ||y - y_hat|| / ||y||, separately for the basis truncation alone (project
//! the held-out response onto the basis and reconstruct) and for the full
//! surrogate (predict the response from the inputs). Each fold reports both
//! the plain sum of these errors over its held-out runs and their mean; the
//! mean is the headline number and the summary statistics aggregate the
//! fold-level means across folds and repetitions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::pod::{build_snapshot_matrix, compute_pod};
use crate::surrogate::{train_surrogate, TrainConfig};

/// Errors measured on one held-out fold of one repetition.
#[derive(Debug, Clone)]
pub struct FoldRecord {
    pub repetition: usize,
    pub fold: usize,
    pub n_heldout: usize,
    /// Sum over held-out runs of the relative L2 projection error.
    pub e_pod_sum: f64,
    /// Sum over held-out runs of the relative L2 prediction error.
    pub e_gp_sum: f64,
    pub e_pod_mean: f64,
    pub e_gp_mean: f64,
}

/// Aggregate cross-validation result. The means and standard deviations are
/// taken over the fold-level mean errors, folds x repetitions values in all.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: usize,
    pub repetitions: usize,
    pub e_pod_mean: f64,
    pub e_pod_sd: f64,
    pub e_gp_mean: f64,
    pub e_gp_sd: f64,
    pub per_fold: Vec<FoldRecord>,
}

/// One point of a snapshot-count sweep: the mean and standard deviation over
/// repetitions of the per-run relative L2 projection error.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Splits `0..n` into `folds` disjoint near-equal parts after a seeded
/// shuffle. The first `n % folds` parts receive one extra row.
fn fold_assignment(n: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parts = Vec::with_capacity(folds);
    let mut pos = 0;
    for f in 0..folds {
        let size = n / folds + usize::from(f < n % folds);
        parts.push(order[pos..pos + size].to_vec());
        pos += size;
    }
    parts
}

fn relative_l2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, p) in actual.iter().zip(predicted) {
        num += (a - p) * (a - p);
        den += a * a;
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "a held-out response is identically zero; relative error is undefined".into(),
        ));
    }
    Ok((num / den).sqrt())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Repeated k-fold cross-validation of the surrogate pipeline.
///
/// Each repetition shuffles the runs with its own seeded generator
/// (`seed + repetition`), splits them into `folds` held-out parts, trains a
/// fresh surrogate on the remainder under `config` (with a per-fold training
/// seed derived as `seed + repetition * folds + fold`), and measures both
/// error metrics on the held-out runs.
pub fn cross_validate(
    design: &DesignMatrix,
    responses: &[Vec<f64>],
    time_grid: &[f64],
    folds: usize,
    repetitions: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<CvReport> {
    let n = responses.len();
    if design.n_points() != n {
        return Err(Error::Shape(format!(
            "{} design points but {} responses",
            design.n_points(),
            n
        )));
    }
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!(
            "cannot split {n} runs into {folds} folds"
        )));
    }
    if repetitions == 0 {
        return Err(Error::Config("at least one repetition is required".into()));
    }

    let points = design.points();
    let mut per_fold = Vec::with_capacity(folds * repetitions);
    for rep in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64));
        let assignment = fold_assignment(n, folds, &mut rng);
        for (f, held) in assignment.iter().enumerate() {
            let train_idx: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, part)| part.iter().copied())
                .collect();

            let train_points = DMatrix::from_fn(train_idx.len(), points.ncols(), |r, c| {
                points[(train_idx[r], c)]
            });
            let train_design = DesignMatrix::new(train_points, design.space().clone())?;
            let train_responses: Vec<Vec<f64>> =
                train_idx.iter().map(|&i| responses[i].clone()).collect();

            let mut fold_config = config.clone();
            let derived = seed
                .wrapping_add((rep * folds + f) as u64);
            fold_config.seed = derived;
            fold_config.gp.seed = derived;
            let surrogate = train_surrogate(&train_design, &train_responses, time_grid, &fold_config)?;

            let held_points =
                DMatrix::from_fn(held.len(), points.ncols(), |r, c| points[(held[r], c)]);
            let (predicted, _) = surrogate.predict_batch(&held_points)?;

            let mut e_pod_sum = 0.0;
            let mut e_gp_sum = 0.0;
            for (r, &i) in held.iter().enumerate() {
                let y = &responses[i];
                let alpha = surrogate.basis().project(y)?;
                let projected = surrogate.basis().reconstruct(&alpha)?;
                e_pod_sum += relative_l2(y, &projected)?;
                let row: Vec<f64> = predicted.row(r).iter().copied().collect();
                e_gp_sum += relative_l2(y, &row)?;
            }
            let nh = held.len() as f64;
            per_fold.push(FoldRecord {
                repetition: rep,
                fold: f,
                n_heldout: held.len(),
                e_pod_sum,
                e_gp_sum,
                e_pod_mean: e_pod_sum / nh,
                e_gp_mean: e_gp_sum / nh,
            });
        }
    }

    let pod_means: Vec<f64> = per_fold.iter().map(|r| r.e_pod_mean).collect();
    let gp_means: Vec<f64> = per_fold.iter().map(|r| r.e_gp_mean).collect();
    let (e_pod_mean, e_pod_sd) = mean_sd(&pod_means);
    let (e_gp_mean, e_gp_sd) = mean_sd(&gp_means);
    Ok(CvReport {
        folds,
        repetitions,
        e_pod_mean,
        e_pod_sd,
        e_gp_mean,
        e_gp_sd,
        per_fold,
    })
}

impl CvReport {
    /// Per-fold detail as CSV with one row per (repetition, fold).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "repetition",
            "fold",
            "n_heldout",
            "e_pod_sum",
            "e_pod_mean",
            "e_gp_sum",
            "e_gp_mean",
        ])?;
        for r in &self.per_fold {
            w.write_record([
                r.repetition.to_string(),
                r.fold.to_string(),
                r.n_heldout.to_string(),
                format!("{:?}", r.e_pod_sum),
                format!("{:?}", r.e_pod_mean),
                format!("{:?}", r.e_gp_sum),
                format!("{:?}", r.e_gp_mean),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary of the aggregate error statistics.
    pub fn to_text(&self) -> String {
        let pct = |v: f64| format!("{:.4}%", 100.0 * v);
        format!(
            "cross-validation: {} folds, {} repetitions ({} held-out folds)\n\
             basis projection error (relative L2): mean {} sd {}\n\
             surrogate prediction error (relative L2): mean {} sd {}\n",
            self.folds,
            self.repetitions,
            self.per_fold.len(),
            pct(self.e_pod_mean),
            pct(self.e_pod_sd),
            pct(self.e_gp_mean),
            pct(self.e_gp_sd),
        )
    }
}

/// Measures how the basis projection error decays with the number of
/// snapshots used to build the basis.
///
/// For each entry of `counts`, `repetitions` independent subsets of that
/// size are drawn (each from its own deterministic stream of `seed`), a
/// basis is built from the subset at `threshold` energy, and the relative
/// L2 projection error is averaged over the runs left out of the subset.
/// When the count equals the total number of runs there is nothing left
/// out, so the error is measured in-sample over all runs.
pub fn pod_snapshot_sweep(
    responses: &[Vec<f64>],
    counts: &[usize],
    threshold: f64,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let n = responses.len();
    if n == 0 {
        return Err(Error::Config("no responses were supplied".into()));
    }
    if counts.is_empty() {
        return Err(Error::Config("no snapshot counts were supplied".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("at least one repetition is required".into()));
    }
    for &c in counts {
        if c == 0 || c > n {
            return Err(Error::Config(format!(
                "snapshot count {c} is outside the available 1..={n} runs"
            )));
        }
    }

    let mut points = Vec::with_capacity(counts.len());
    for (ci, &count) in counts.iter().enumerate() {
        let mut values = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((ci * repetitions + rep) as u64);
            let mut subset = rand::seq::index::sample(&mut rng, n, count).into_vec();
            subset.sort_unstable();

            let chosen: Vec<Vec<f64>> = subset.iter().map(|&i| responses[i].clone()).collect();
            let basis = compute_pod(&build_snapshot_matrix(&chosen)?, threshold)?;

            let in_subset = {
                let mut mask = vec![false; n];
                for &i in &subset {
                    mask[i] = true;
                }
                mask
            };
            let eval: Vec<usize> = if count == n {
                (0..n).collect()
            } else {
                (0..n).filter(|&i| !in_subset[i]).collect()
            };

            let mut total = 0.0;
            for &i in &eval {
                let y = &responses[i];
                let alpha = basis.project(y)?;
                let projected = basis.reconstruct(&alpha)?;
                total += relative_l2(y, &projected)?;
            }
            values.push(total / eval.len() as f64);
        }
        let (mean, sd) = mean_sd(&values);
        points.push(SweepPoint { count, mean, sd });
    }
    Ok(points)
}

/// Writes a snapshot sweep as CSV with columns count, mean, sd.
pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["count", "mean", "sd"])?;
    for p in points {
        w.write_record([
            p.count.to_string(),
            format!("{:?}", p.mean),
            format!("{:?}", p.sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{qmc_design, Param, ParameterSpace};
    use crate::gp::GpConfig;
    use crate::models::{synthetic_restenosis, SyntheticRestenosis};
    use proptest::prelude::*;

    fn light_config() -> TrainConfig {
        TrainConfig {
            gp: GpConfig {
                restarts: 1,
                max_iters: 40,
                ..GpConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn synthetic_data(n: usize) -> (DesignMatrix, Vec<Vec<f64>>, Vec<f64>) {
        let model = SyntheticRestenosis::daily();
        let grid = model.time_grid().to_vec();
        let design = qmc_design(&model.space(), n, 1).unwrap();
        let responses: Vec<Vec<f64>> = (0..n)
            .map(|i| synthetic_restenosis(&design.row(i), &grid).unwrap())
            .collect();
        (design, responses, grid)
    }

    #[test]
    fn constant_responses_validate_exactly() {
        let space = ParameterSpace::new(vec![
            Param { name: "a".into(), min: 0.0, max: 1.0, unit: String::new() },
            Param { name: "b".into(), min: 0.0, max: 1.0, unit: String::new() },
        ])
        .unwrap();
        let design = qmc_design(&space, 12, 1).unwrap();
        let profile: Vec<f64> = (0..9).map(|t| 3.0 - 0.1 * t as f64).collect();
        let responses = vec![profile; 12];
        let grid: Vec<f64> = (0..9).map(|t| t as f64).collect();
        let report =
            cross_validate(&design, &responses, &grid, 3, 1, &light_config(), 0).unwrap();
        assert!(report.e_pod_mean <= 1e-8, "e_pod {}", report.e_pod_mean);
        assert!(report.e_gp_mean <= 1e-8, "e_gp {}", report.e_gp_mean);
    }

    #[test]
    fn low_rank_responses_project_exactly() {
        let space = ParameterSpace::new(vec![Param {
            name: "x".into(),
            min: 0.0,
            max: 1.0,
            unit: String::new(),
        }])
        .unwrap();
        let n = 20;
        let n_t = 12;
        let design = qmc_design(&space, n, 1).unwrap();
        let modes: Vec<Vec<f64>> = vec![
            (0..n_t).map(|t| 1.0 + (t as f64 / 3.0).sin()).collect(),
            (0..n_t).map(|t| (t as f64 / 2.0).cos()).collect(),
            (0..n_t).map(|t| 0.1 * t as f64).collect(),
        ];
        let responses: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = design.row(i)[0];
                let c = [2.0 + x, (3.0 * x).sin(), x * x];
                (0..n_t)
                    .map(|t| (0..3).map(|m| c[m] * modes[m][t]).sum())
                    .collect()
            })
            .collect();
        let grid: Vec<f64> = (0..n_t).map(|t| t as f64).collect();
        let mut config = light_config();
        config.energy_threshold = 1.0;
        let report = cross_validate(&design, &responses, &grid, 4, 2, &config, 3).unwrap();
        assert!(report.e_pod_mean <= 1e-8, "rank-3 data should project exactly, got {}", report.e_pod_mean);
        assert_eq!(report.per_fold.len(), 8);
    }

    #[test]
    fn synthetic_model_cross_validates_tightly() {
        let (design, responses, grid) = synthetic_data(48);
        let mut config = light_config();
        config.energy_threshold = 1.0 - 1e-6;
        let report = cross_validate(&design, &responses, &grid, 3, 1, &config, 0).unwrap();
        assert!(report.e_pod_mean < 0.01, "e_pod {}", report.e_pod_mean);
        assert!(report.e_gp_mean < 0.05, "e_gp {}", report.e_gp_mean);
        assert!(report.e_pod_mean >= 0.0 && report.e_gp_mean >= 0.0);
        for r in &report.per_fold {
            assert_eq!(r.n_heldout, 16);
            assert!((r.e_pod_mean - r.e_pod_sum / 16.0).abs() < 1e-15);
            assert!((r.e_gp_mean - r.e_gp_sum / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn errors_do_not_depend_on_column_order() {
        let (design, responses, grid) = synthetic_data(24);
        let report = cross_validate(&design, &responses, &grid, 3, 1, &light_config(), 5).unwrap();

        let space = design.space();
        let perm = [2usize, 0, 3, 1];
        let params: Vec<Param> = perm.iter().map(|&j| space.params()[j].clone()).collect();
        let swapped_space = ParameterSpace::new(params).unwrap();
        let pts = design.points();
        let swapped_pts =
            DMatrix::from_fn(pts.nrows(), pts.ncols(), |r, c| pts[(r, perm[c])]);
        let swapped = DesignMatrix::new(swapped_pts, swapped_space).unwrap();
        let swapped_report =
            cross_validate(&swapped, &responses, &grid, 3, 1, &light_config(), 5).unwrap();

        assert_eq!(report.e_pod_mean, swapped_report.e_pod_mean);
        assert!(
            (report.e_gp_mean - swapped_report.e_gp_mean).abs() < 1e-6,
            "gp error moved from {} to {} under column permutation",
            report.e_gp_mean,
            swapped_report.e_gp_mean
        );
    }

    #[test]
    fn sweep_errors_shrink_with_more_snapshots() {
        let (_design, responses, _grid) = synthetic_data(60);
        let points = pod_snapshot_sweep(&responses, &[8, 20, 40], 0.9999, 3, 0).unwrap();
        assert_eq!(points.len(), 3);
        for w in points.windows(2) {
            assert!(
                w[1].mean <= w[0].mean + 2.0 * w[0].sd,
                "error grew from {} (sd {}) to {}",
                w[0].mean,
                w[0].sd,
                w[1].mean
            );
        }
    }

    #[test]
    fn full_basis_reconstructs_in_sample() {
        let (_design, responses, _grid) = synthetic_data(16);
        let points = pod_snapshot_sweep(&responses, &[16], 1.0, 2, 9).unwrap();
        assert!(points[0].mean <= 1e-8, "full-basis error {}", points[0].mean);
    }

    #[test]
    fn single_repetition_reports_zero_spread() {
        let (_design, responses, _grid) = synthetic_data(12);
        let points = pod_snapshot_sweep(&responses, &[4, 8], 0.999, 1, 2).unwrap();
        for p in &points {
            assert_eq!(p.sd, 0.0);
        }
    }

    #[test]
    fn emitters_round_trip_shape() {
        let (design, responses, grid) = synthetic_data(12);
        let report = cross_validate(&design, &responses, &grid, 3, 2, &light_config(), 0).unwrap();

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "repetition,fold,n_heldout,e_pod_sum,e_pod_mean,e_gp_sum,e_gp_mean"
        );
        assert_eq!(text.lines().count(), 1 + 6);

        let summary = report.to_text();
        assert!(summary.contains("3 folds"));
        assert!(summary.contains("2 repetitions"));
        assert!(summary.contains("%"));

        let sweep = pod_snapshot_sweep(&responses, &[4, 12], 0.999, 2, 0).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&sweep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "count,mean,sd");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn bad_configurations_are_rejected() {
        let (design, responses, grid) = synthetic_data(8);
        let cfg = light_config();
        assert!(matches!(
            cross_validate(&design, &responses, &grid, 1, 1, &cfg, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            cross_validate(&design, &responses, &grid, 9, 1, &cfg, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            cross_validate(&design, &responses, &grid, 2, 0, &cfg, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            pod_snapshot_sweep(&responses, &[9], 0.999, 1, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            pod_snapshot_sweep(&responses, &[], 0.999, 1, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            pod_snapshot_sweep(&responses, &[2], 0.999, 0, 0),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn folds_partition_every_row(n in 4usize..40, folds in 2usize..5, seed in 0u64..1000) {
            prop_assume!(n >= folds);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parts = fold_assignment(n, folds, &mut rng);
            prop_assert_eq!(parts.len(), folds);
            let mut seen = vec![0usize; n];
            for part in &parts {
                for &i in part {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
