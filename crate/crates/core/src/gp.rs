//! Gaussian-process regression with an anisotropic squared-exponential
//! kernel.
//!
//! The kernel is k(x, x') = sigma_f^2 exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2)
//! with one length scale per input dimension plus an additive noise variance
//! on the diagonal. Hyperparameters are chosen by maximizing the log marginal
//! likelihood with a small L-BFGS optimizer over log-transformed parameters,
//! restarted from several initial points. Targets are standardized
//! internally; reported hyperparameters and predictions are mapped back to
//! the original target scale.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Kernel and noise parameters on the original target scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Marginal variance sigma_f^2 of the latent function.
    pub signal_variance: f64,
    /// One positive length scale per input dimension.
    pub length_scales: Vec<f64>,
    /// Observation noise variance sigma_n^2.
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(Error::Shape(format!(
                "{} length scales for {dim}-dimensional inputs",
                self.length_scales.len()
            )));
        }
        let ok = self.signal_variance.is_finite()
            && self.signal_variance > 0.0
            && self.noise_variance.is_finite()
            && self.noise_variance >= 0.0
            && self.length_scales.iter().all(|l| l.is_finite() && *l > 0.0);
        if !ok {
            return Err(Error::Config(
                "hyperparameters must be finite and positive (noise may be zero)".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient of the log marginal likelihood with respect to the natural
/// logarithm of each hyperparameter.
#[derive(Debug, Clone)]
pub struct MllGradient {
    pub log_signal_variance: f64,
    pub log_length_scales: Vec<f64>,
    pub log_noise_variance: f64,
}

/// Fitting controls.
#[derive(Debug, Clone)]
pub struct GpConfig {
    /// Number of optimizer starts. The first uses a fixed default
    /// initialization, the rest draw random initial hyperparameters.
    pub restarts: usize,
    /// Seed for the random restarts.
    pub seed: u64,
    /// Lower bound for the noise variance on the standardized target scale.
    pub noise_floor: f64,
    /// Iteration cap per optimizer start.
    pub max_iters: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            noise_floor: 1e-8,
            max_iters: 200,
        }
    }
}

const GRAD_TOL: f64 = 1e-6;
const LOG_PARAM_BOUND: f64 = 30.0;
const LBFGS_MEMORY: usize = 8;

/// Evaluates the kernel matrix between the rows of `x1` and the rows of
/// `x2`. No noise term is added.
pub fn kernel(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hyper: &Hyperparameters) -> Result<DMatrix<f64>> {
    if x1.ncols() != x2.ncols() {
        return Err(Error::Shape(format!(
            "input dimensions differ: {} vs {}",
            x1.ncols(),
            x2.ncols()
        )));
    }
    hyper.validate(x1.ncols())?;
    let inv2: Vec<f64> = hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut k = DMatrix::zeros(x1.nrows(), x2.nrows());
    for j in 0..x2.nrows() {
        for i in 0..x1.nrows() {
            let mut q = 0.0;
            for (d, w) in inv2.iter().enumerate() {
                let diff = x1[(i, d)] - x2[(j, d)];
                q += diff * diff * w;
            }
            k[(i, j)] = hyper.signal_variance * (-0.5 * q).exp();
        }
    }
    Ok(k)
}

/// Per-dimension squared-difference matrices, reused across optimizer
/// iterations because they do not depend on the hyperparameters.
struct SquaredDistances {
    n: usize,
    dim: usize,
    per_dim: Vec<DMatrix<f64>>,
}

impl SquaredDistances {
    fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let dim = x.ncols();
        let per_dim = (0..dim)
            .map(|d| {
                DMatrix::from_fn(n, n, |i, j| {
                    let diff = x[(i, d)] - x[(j, d)];
                    diff * diff
                })
            })
            .collect();
        Self { n, dim, per_dim }
    }

    /// Noiseless kernel matrix for the stored training inputs.
    fn kernel(&self, signal_variance: f64, length_scales: &[f64]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        for (d, dist) in self.per_dim.iter().enumerate() {
            let w = 1.0 / (length_scales[d] * length_scales[d]);
            q.as_mut_slice()
                .iter_mut()
                .zip(dist.as_slice())
                .for_each(|(acc, v)| *acc += v * w);
        }
        q.apply(|v: &mut f64| *v = signal_variance * (-0.5 * *v).exp());
        q
    }
}

/// Everything the likelihood evaluation produces that the gradient and the
/// final model reuse.
struct Likelihood {
    kf: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    mll: f64,
    jitter: f64,
}

/// Factorizes K = Kf + (noise + jitter) I, escalating jitter from zero only
/// when the factorization fails outright.
fn factorize(
    dists: &SquaredDistances,
    y: &DVector<f64>,
    signal_variance: f64,
    length_scales: &[f64],
    noise_variance: f64,
) -> Option<Likelihood> {
    let kf = dists.kernel(signal_variance, length_scales);
    let mut jitter = 0.0;
    loop {
        let mut k = kf.clone();
        let bump = noise_variance + jitter;
        for i in 0..dists.n {
            k[(i, i)] += bump;
        }
        if let Some(chol) = Cholesky::new(k) {
            let alpha = chol.solve(y);
            let log_det_half: f64 = (0..dists.n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
            let n = dists.n as f64;
            let mll = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
            if !mll.is_finite() {
                return None;
            }
            return Some(Likelihood {
                kf,
                chol,
                alpha,
                mll,
                jitter,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 * signal_variance } else { jitter * 10.0 };
        if jitter > 1e-4 * signal_variance {
            return None;
        }
    }
}

/// Gradient of the log marginal likelihood in log-parameter space, given a
/// completed factorization.
fn gradient_from_likelihood(
    dists: &SquaredDistances,
    like: &Likelihood,
    length_scales: &[f64],
    noise_variance: f64,
) -> (f64, Vec<f64>, f64) {
    // d mll / d theta = 1/2 tr((alpha alpha' - K^-1) dK/dtheta)
    let kinv = like.chol.inverse();
    let n = dists.n;
    let mut trace_a = 0.0;
    // b = (alpha alpha' - K^-1) .* Kf, accumulated entry by entry.
    let mut sum_b = 0.0;
    let mut sum_b_dist = vec![0.0; dists.dim];
    let alpha = &like.alpha;
    for j in 0..n {
        for i in 0..n {
            let a_ij = alpha[i] * alpha[j] - kinv[(i, j)];
            if i == j {
                trace_a += a_ij;
            }
            let b_ij = a_ij * like.kf[(i, j)];
            sum_b += b_ij;
            for (d, dist) in dists.per_dim.iter().enumerate() {
                sum_b_dist[d] += b_ij * dist[(i, j)];
            }
        }
    }
    let g_signal = 0.5 * sum_b;
    let g_ell: Vec<f64> = (0..dists.dim)
        .map(|d| 0.5 * sum_b_dist[d] / (length_scales[d] * length_scales[d]))
        .collect();
    let g_noise = 0.5 * noise_variance * trace_a;
    (g_signal, g_ell, g_noise)
}

/// Log marginal likelihood of targets `y` at inputs `x` (rows are points)
/// under the given hyperparameters. This evaluates the expression exactly as
/// written; no target standardization is applied.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &[f64], hyper: &Hyperparameters) -> Result<f64> {
    check_training_data(x, y)?;
    hyper.validate(x.ncols())?;
    let dists = SquaredDistances::new(x);
    let yv = DVector::from_column_slice(y);
    let like = factorize(
        &dists,
        &yv,
        hyper.signal_variance,
        &hyper.length_scales,
        hyper.noise_variance,
    )
    .ok_or_else(|| Error::Conditioning("kernel matrix is not positive definite".into()))?;
    Ok(like.mll)
}

/// Gradient of [`log_marginal_likelihood`] with respect to the natural
/// logarithms of the hyperparameters.
pub fn mll_gradient(x: &DMatrix<f64>, y: &[f64], hyper: &Hyperparameters) -> Result<MllGradient> {
    check_training_data(x, y)?;
    hyper.validate(x.ncols())?;
    let dists = SquaredDistances::new(x);
    let yv = DVector::from_column_slice(y);
    let like = factorize(
        &dists,
        &yv,
        hyper.signal_variance,
        &hyper.length_scales,
        hyper.noise_variance,
    )
    .ok_or_else(|| Error::Conditioning("kernel matrix is not positive definite".into()))?;
    let (g_signal, g_ell, g_noise) =
        gradient_from_likelihood(&dists, &like, &hyper.length_scales, hyper.noise_variance);
    Ok(MllGradient {
        log_signal_variance: g_signal,
        log_length_scales: g_ell,
        log_noise_variance: g_noise,
    })
}

fn check_training_data(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Shape("need at least one training point and one input dimension".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} input rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("training data contains non-finite values".into()));
    }
    Ok(())
}

/// Optimizer state in the vector it works on: [log sf2, log l_1.., w] with
/// noise = floor + exp(w). The floor keeps the noise strictly positive while
/// letting the gradient of w vanish smoothly as the noise approaches it, so
/// the convergence test stays meaningful for noise-free data.
struct Objective<'a> {
    dists: &'a SquaredDistances,
    y: &'a DVector<f64>,
    noise_floor: f64,
}

impl Objective<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, Vec<f64>, f64) {
        let sf2 = p[0].exp();
        let ell: Vec<f64> = p[1..=self.dists.dim].iter().map(|v| v.exp()).collect();
        let noise = self.noise_floor + p[self.dists.dim + 1].exp();
        (sf2, ell, noise)
    }

    fn value(&self, p: &[f64]) -> (f64, Option<Likelihood>) {
        let (sf2, ell, noise) = self.unpack(p);
        match factorize(self.dists, self.y, sf2, &ell, noise) {
            Some(like) => (-like.mll, Some(like)),
            None => (f64::INFINITY, None),
        }
    }

    fn gradient(&self, p: &[f64], like: &Likelihood) -> Vec<f64> {
        let (_, ell, noise) = self.unpack(p);
        let (g_signal, g_ell, g_noise) = gradient_from_likelihood(self.dists, like, &ell, noise);
        let mut g = Vec::with_capacity(self.dists.dim + 2);
        // Objective is the negative likelihood.
        g.push(-g_signal);
        g.extend(g_ell.iter().map(|v| -v));
        // d noise / d w = exp(w) = noise - floor.
        g.push(-g_noise * (noise - self.noise_floor) / noise);
        g
    }
}

struct OptimResult {
    params: Vec<f64>,
    neg_mll: f64,
    grad_norm: f64,
    likelihood: Likelihood,
}

fn lbfgs(obj: &Objective, init: Vec<f64>, max_iters: usize) -> Option<OptimResult> {
    let mut p = init;
    clamp(&mut p);
    let (mut f, mut state) = obj.value(&p);
    let mut like = state.take()?;
    let mut g = obj.gradient(&p, &like);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for iter in 0..max_iters {
        let gnorm = norm(&g);
        if gnorm <= GRAD_TOL {
            break;
        }
        let mut dir = two_loop_direction(&g, &s_hist, &y_hist);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut step = if iter == 0 { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let mut p_new: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            clamp(&mut p_new);
            let (f_new, st) = obj.value(&p_new);
            if f_new <= f + 1e-4 * step * slope {
                accepted = Some((p_new, f_new, st));
                break;
            }
            step *= 0.5;
        }
        let Some((p_new, f_new, st)) = accepted else {
            break;
        };
        let like_new = st.expect("finite objective has a factorization");
        let g_new = obj.gradient(&p_new, &like_new);
        let s: Vec<f64> = p_new.iter().zip(&p).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * norm(&s) * norm(&yv) {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        p = p_new;
        f = f_new;
        g = g_new;
        like = like_new;
    }
    Some(OptimResult {
        grad_norm: norm(&g),
        params: p,
        neg_mll: f,
        likelihood: like,
    })
}

fn clamp(p: &mut [f64]) {
    for v in p {
        *v = v.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn two_loop_direction(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rho * dot(&s_hist[i], &q);
        for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
            *qv -= alphas[i] * yv;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        for qv in q.iter_mut() {
            *qv *= gamma;
        }
    }
    for i in 0..m {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s_hist[i]) {
            *qv += (alphas[i] - beta) * sv;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// A fitted Gaussian-process regressor.
#[derive(Clone)]
pub struct GpModel {
    x: DMatrix<f64>,
    y_std: DVector<f64>,
    hyper_std: Hyperparameters,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    target_shift: f64,
    target_scale: f64,
    jitter: f64,
    fit_mll: f64,
    fit_grad_norm: f64,
}

/// Convenience wrapper around [`GpModel::fit`].
pub fn fit_gp(x: &DMatrix<f64>, y: &[f64], config: &GpConfig) -> Result<GpModel> {
    GpModel::fit(x, y, config)
}

impl GpModel {
    /// Fits hyperparameters by restarted maximum likelihood.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], config: &GpConfig) -> Result<GpModel> {
        check_training_data(x, y)?;
        if config.noise_floor <= 0.0 || !config.noise_floor.is_finite() {
            return Err(Error::Config("noise floor must be positive".into()));
        }
        let n = y.len();
        let dim = x.ncols();
        let shift = y.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (y.iter().map(|v| (v - shift) * (v - shift)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        if sd < 1e-12 * shift.abs().max(1.0) {
            // Constant targets: no likelihood surface to explore. Freeze unit
            // hyperparameters; zero residuals make every prediction the
            // constant itself.
            let hyper_std = Hyperparameters {
                signal_variance: 1.0,
                length_scales: vec![1.0; dim],
                noise_variance: config.noise_floor,
            };
            let dists = SquaredDistances::new(x);
            let y_std = DVector::zeros(n);
            let like = factorize(&dists, &y_std, 1.0, &hyper_std.length_scales, config.noise_floor)
                .ok_or_else(|| Error::Conditioning("kernel matrix is not positive definite".into()))?;
            return Ok(GpModel {
                x: x.clone(),
                y_std,
                hyper_std,
                chol: like.chol,
                alpha: like.alpha,
                target_shift: shift,
                target_scale: 1.0,
                jitter: like.jitter,
                fit_mll: like.mll,
                fit_grad_norm: 0.0,
            });
        }

        let y_std = DVector::from_iterator(n, y.iter().map(|v| (v - shift) / sd));
        let dists = SquaredDistances::new(x);
        let obj = Objective {
            dists: &dists,
            y: &y_std,
            noise_floor: config.noise_floor,
        };

        let starts = config.restarts.max(1);
        let mut best: Option<OptimResult> = None;
        for start in 0..starts {
            let init = if start == 0 {
                let mut p = vec![0.0; dim + 2];
                p[0] = 1.0f64.ln();
                for v in p.iter_mut().take(dim + 1).skip(1) {
                    *v = 0.3f64.ln();
                }
                p[dim + 1] = (1e-4f64 - config.noise_floor).max(config.noise_floor).ln();
                p
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    config.seed ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let mut p = Vec::with_capacity(dim + 2);
                p.push(log_uniform(&mut rng, 0.1, 10.0).ln());
                for _ in 0..dim {
                    p.push(log_uniform(&mut rng, 0.05, 2.0).ln());
                }
                let noise = log_uniform(&mut rng, 1e-6, 1e-2);
                p.push((noise - config.noise_floor).max(config.noise_floor * 0.5).ln());
                p
            };
            if let Some(res) = lbfgs(&obj, init, config.max_iters) {
                let better = match &best {
                    None => true,
                    Some(b) => res.neg_mll < b.neg_mll,
                };
                if better {
                    best = Some(res);
                }
            }
        }
        let best = best.ok_or_else(|| {
            Error::Fit("likelihood could not be evaluated from any starting point".into())
        })?;
        let (sf2, ell, noise) = obj.unpack(&best.params);
        Ok(GpModel {
            x: x.clone(),
            y_std,
            hyper_std: Hyperparameters {
                signal_variance: sf2,
                length_scales: ell,
                noise_variance: noise,
            },
            chol: best.likelihood.chol,
            alpha: best.likelihood.alpha,
            target_shift: shift,
            target_scale: sd,
            jitter: best.likelihood.jitter,
            fit_mll: -best.neg_mll,
            fit_grad_norm: best.grad_norm,
        })
    }

    /// Builds a model with fixed hyperparameters (given on the original
    /// target scale) instead of optimizing them.
    pub fn with_hyperparameters(
        x: &DMatrix<f64>,
        y: &[f64],
        hyper: &Hyperparameters,
    ) -> Result<GpModel> {
        check_training_data(x, y)?;
        hyper.validate(x.ncols())?;
        let n = y.len();
        let shift = y.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (y.iter().map(|v| (v - shift) * (v - shift)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let scale = if sd < 1e-12 * shift.abs().max(1.0) { 1.0 } else { sd };
        let y_std = DVector::from_iterator(n, y.iter().map(|v| (v - shift) / scale));
        let hyper_std = Hyperparameters {
            signal_variance: hyper.signal_variance / (scale * scale),
            length_scales: hyper.length_scales.clone(),
            noise_variance: hyper.noise_variance / (scale * scale),
        };
        let dists = SquaredDistances::new(x);
        let like = factorize(
            &dists,
            &y_std,
            hyper_std.signal_variance,
            &hyper_std.length_scales,
            hyper_std.noise_variance,
        )
        .ok_or_else(|| Error::Conditioning("kernel matrix is not positive definite".into()))?;
        let (g_signal, g_ell, g_noise) =
            gradient_from_likelihood(&dists, &like, &hyper_std.length_scales, hyper_std.noise_variance);
        let grad_norm = {
            let mut g = vec![g_signal];
            g.extend(g_ell);
            g.push(g_noise);
            norm(&g)
        };
        Ok(GpModel {
            x: x.clone(),
            y_std,
            hyper_std,
            chol: like.chol,
            alpha: like.alpha,
            target_shift: shift,
            target_scale: scale,
            jitter: like.jitter,
            fit_mll: like.mll,
            fit_grad_norm: grad_norm,
        })
    }

    /// Reassembles a model from stored state. The Cholesky factorization is
    /// recomputed, which is deterministic, so predictions from a reassembled
    /// model match the original bit for bit.
    pub(crate) fn from_raw_parts(
        x: DMatrix<f64>,
        y_std: DVector<f64>,
        hyper_std: Hyperparameters,
        target_shift: f64,
        target_scale: f64,
        jitter: f64,
    ) -> Result<GpModel> {
        hyper_std.validate(x.ncols())?;
        if x.nrows() != y_std.len() {
            return Err(Error::Corrupt(format!(
                "{} stored inputs but {} stored targets",
                x.nrows(),
                y_std.len()
            )));
        }
        let dists = SquaredDistances::new(&x);
        let kf = dists.kernel(hyper_std.signal_variance, &hyper_std.length_scales);
        let mut k = kf;
        let bump = hyper_std.noise_variance + jitter;
        for i in 0..x.nrows() {
            k[(i, i)] += bump;
        }
        let chol = Cholesky::new(k)
            .ok_or_else(|| Error::Corrupt("stored kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&y_std);
        let log_det_half: f64 = (0..x.nrows()).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
        let n = x.nrows() as f64;
        let mll =
            -0.5 * y_std.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel {
            x,
            y_std,
            hyper_std,
            chol,
            alpha,
            target_shift,
            target_scale,
            jitter,
            fit_mll: mll,
            fit_grad_norm: f64::NAN,
        })
    }

    /// Predictive mean and latent variance (no noise term) at a single
    /// point.
    pub fn predict(&self, x_star: &[f64]) -> Result<(f64, f64)> {
        if x_star.len() != self.x.ncols() {
            return Err(Error::Shape(format!(
                "query has dimension {}, model expects {}",
                x_star.len(),
                self.x.ncols()
            )));
        }
        let k_star = self.cross_column(x_star);
        let mean_std = k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let var_std = (self.hyper_std.signal_variance - k_star.dot(&v)).max(0.0);
        Ok((
            self.target_shift + self.target_scale * mean_std,
            self.target_scale * self.target_scale * var_std,
        ))
    }

    /// Predictive means and variances for every row of `queries`.
    pub fn predict_batch(&self, queries: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if queries.ncols() != self.x.ncols() {
            return Err(Error::Shape(format!(
                "queries have dimension {}, model expects {}",
                queries.ncols(),
                self.x.ncols()
            )));
        }
        let mut means = Vec::with_capacity(queries.nrows());
        let mut vars = Vec::with_capacity(queries.nrows());
        let mut row = vec![0.0; queries.ncols()];
        for i in 0..queries.nrows() {
            for d in 0..queries.ncols() {
                row[d] = queries[(i, d)];
            }
            let (m, v) = self.predict(&row)?;
            means.push(m);
            vars.push(v);
        }
        Ok((means, vars))
    }

    /// Predictive means only. Skips the linear solve per query, which makes
    /// large propagation runs cheap.
    pub fn predict_means(&self, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        if queries.ncols() != self.x.ncols() {
            return Err(Error::Shape(format!(
                "queries have dimension {}, model expects {}",
                queries.ncols(),
                self.x.ncols()
            )));
        }
        let inv2: Vec<f64> = self
            .hyper_std
            .length_scales
            .iter()
            .map(|l| 1.0 / (l * l))
            .collect();
        let n = self.x.nrows();
        let dim = self.x.ncols();
        let mut out = Vec::with_capacity(queries.nrows());
        for q in 0..queries.nrows() {
            let mut acc = 0.0;
            for i in 0..n {
                let mut dist = 0.0;
                for (d, w) in inv2.iter().enumerate().take(dim) {
                    let diff = queries[(q, d)] - self.x[(i, d)];
                    dist += diff * diff * w;
                }
                acc += self.alpha[i] * self.hyper_std.signal_variance * (-0.5 * dist).exp();
            }
            out.push(self.target_shift + self.target_scale * acc);
        }
        Ok(out)
    }

    fn cross_column(&self, x_star: &[f64]) -> DVector<f64> {
        let n = self.x.nrows();
        let mut k = DVector::zeros(n);
        for i in 0..n {
            let mut q = 0.0;
            for (d, l) in self.hyper_std.length_scales.iter().enumerate() {
                let diff = x_star[d] - self.x[(i, d)];
                q += diff * diff / (l * l);
            }
            k[i] = self.hyper_std.signal_variance * (-0.5 * q).exp();
        }
        k
    }

    /// Fitted hyperparameters on the original target scale.
    pub fn hyperparameters(&self) -> Hyperparameters {
        let s2 = self.target_scale * self.target_scale;
        Hyperparameters {
            signal_variance: self.hyper_std.signal_variance * s2,
            length_scales: self.hyper_std.length_scales.clone(),
            noise_variance: self.hyper_std.noise_variance * s2,
        }
    }

    /// Log marginal likelihood of the standardized targets at the fitted
    /// hyperparameters.
    pub fn log_marginal(&self) -> f64 {
        self.fit_mll
    }

    /// Euclidean norm of the log-space likelihood gradient where the
    /// optimizer stopped. Values near zero certify convergence to a
    /// stationary point.
    pub fn final_grad_norm(&self) -> f64 {
        self.fit_grad_norm
    }

    pub fn n_training(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub(crate) fn raw_parts(&self) -> (&DMatrix<f64>, &DVector<f64>, &Hyperparameters, f64, f64, f64) {
        (
            &self.x,
            &self.y_std,
            &self.hyper_std,
            self.target_shift,
            self.target_scale,
            self.jitter,
        )
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(sf2: f64, ell: &[f64], sn2: f64) -> Hyperparameters {
        Hyperparameters {
            signal_variance: sf2,
            length_scales: ell.to_vec(),
            noise_variance: sn2,
        }
    }

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller from two uniforms.
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn kernel_at_zero_distance_is_the_signal_variance() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let k = kernel(&x, &x, &hyper(2.5, &[1.0, 1.0], 0.0)).unwrap();
        assert!((k[(0, 0)] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn kernel_one_length_scale_apart() {
        let x1 = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(1, 1, &[0.4]);
        let k = kernel(&x1, &x2, &hyper(1.0, &[0.4], 0.0)).unwrap();
        assert!((k[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn huge_length_scale_makes_a_dimension_inactive() {
        let x1 = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let x2 = DMatrix::from_row_slice(1, 2, &[0.0, 123.0]);
        let k = kernel(&x1, &x2, &hyper(1.0, &[1.0, 1e8], 0.0)).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn likelihood_of_zero_targets_matches_the_closed_form() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let h = hyper(1.3, &[0.25], 0.01);
        let got = log_marginal_likelihood(&x, &[0.0, 0.0], &h).unwrap();
        let k12 = 1.3 * (-0.5f64 * (0.5f64 / 0.25).powi(2)).exp();
        let det = (1.31f64 * 1.31) - k12 * k12;
        let want = -0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn likelihood_is_invariant_under_permuting_the_data() {
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.9, 0.4, 0.5, 0.5, 0.3, 0.8]);
        let y = [1.0, -0.5, 0.25, 2.0];
        let xp = DMatrix::from_row_slice(4, 2, &[0.5, 0.5, 0.1, 0.2, 0.3, 0.8, 0.9, 0.4]);
        let yp = [0.25, 1.0, 2.0, -0.5];
        let h = hyper(0.8, &[0.5, 0.7], 1e-3);
        let a = log_marginal_likelihood(&x, &y, &h).unwrap();
        let b = log_marginal_likelihood(&xp, &yp, &h).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.gen::<f64>());
        let y: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        for _ in 0..20 {
            let h = hyper(
                (rng.gen::<f64>() * 2.0 - 1.0).exp(),
                &[
                    (rng.gen::<f64>() * 1.9 - 1.2).exp(),
                    (rng.gen::<f64>() * 1.9 - 1.2).exp(),
                ],
                log_uniform(&mut rng, 1e-4, 1e-1),
            );
            let g = mll_gradient(&x, &y, &h).unwrap();
            let fd = |bump: &dyn Fn(&mut Hyperparameters, f64)| {
                let eps = 1e-5;
                let mut hp = h.clone();
                bump(&mut hp, eps);
                let up = log_marginal_likelihood(&x, &y, &hp).unwrap();
                let mut hm = h.clone();
                bump(&mut hm, -eps);
                let down = log_marginal_likelihood(&x, &y, &hm).unwrap();
                (up - down) / (2.0 * eps)
            };
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * (1.0 + b.abs());
            let fd_sf = fd(&|hp, e| hp.signal_variance *= e.exp());
            assert!(close(g.log_signal_variance, fd_sf), "{} vs {fd_sf}", g.log_signal_variance);
            for d in 0..2 {
                let fd_l = fd(&|hp, e| hp.length_scales[d] *= e.exp());
                assert!(close(g.log_length_scales[d], fd_l));
            }
            let fd_n = fd(&|hp, e| hp.noise_variance *= e.exp());
            assert!(close(g.log_noise_variance, fd_n));
        }
    }

    #[test]
    fn constant_input_dimension_has_zero_length_scale_gradient() {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.5, 0.4, 0.5, 0.9, 0.5]);
        let g = mll_gradient(&x, &[1.0, 2.0, 0.5], &hyper(1.0, &[0.3, 0.3], 1e-2)).unwrap();
        assert_eq!(g.log_length_scales[1], 0.0);
    }

    #[test]
    fn smooth_function_is_recovered_from_twelve_points() {
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * x[(i, 0)]).sin())
            .collect();
        let config = GpConfig {
            restarts: 4,
            ..GpConfig::default()
        };
        let model = fit_gp(&x, &y, &config).unwrap();
        let mut worst = 0.0f64;
        for j in 0..50 {
            let q = (j as f64 + 0.5) / 50.0;
            let (mean, var) = model.predict(&[q]).unwrap();
            let truth = (2.0 * std::f64::consts::PI * q).sin();
            worst = worst.max((mean - truth).abs());
            assert!(var >= 0.0);
        }
        assert!(worst < 1e-3, "worst prediction error {worst}");
    }

    #[test]
    fn constant_targets_predict_the_constant_exactly() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 0.2, 0.4, 0.7, 1.0]);
        let y = [4.25; 5];
        let model = fit_gp(&x, &y, &GpConfig::default()).unwrap();
        for q in [0.0, 0.33, 0.5, 2.0] {
            let (mean, var) = model.predict(&[q]).unwrap();
            assert_eq!(mean, 4.25);
            assert!(var.is_finite() && var >= 0.0);
        }
        assert_eq!(model.final_grad_norm(), 0.0);
    }

    #[test]
    fn noise_level_is_recovered_from_noisy_observations() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * x[(i, 0)]).sin() + 0.01 * gaussian(&mut rng))
            .collect();
        let config = GpConfig {
            restarts: 4,
            ..GpConfig::default()
        };
        let model = fit_gp(&x, &y, &config).unwrap();
        let fitted = model.hyperparameters().noise_variance;
        assert!(
            (0.5e-4..=2.0e-4).contains(&fitted),
            "fitted noise variance {fitted}"
        );
    }

    #[test]
    fn tiny_fixed_noise_interpolates_the_training_data() {
        let x = DMatrix::from_row_slice(8, 1, &[0.0, 0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0]);
        let y: Vec<f64> = (0..8usize)
            .map(|i| {
                let xi: f64 = x[(i, 0)];
                (3.0 * xi).cos() + 2.0
            })
            .collect();
        let model =
            GpModel::with_hyperparameters(&x, &y, &hyper(1.0, &[0.3], 1e-12)).unwrap();
        for i in 0..8 {
            let (mean, _) = model.predict(&[x[(i, 0)]]).unwrap();
            assert!((mean - y[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn predictions_revert_to_the_prior_far_from_the_data() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.3, 0.6, 1.0]);
        let y = [3.0, 5.0, 2.0, 6.0];
        let model = GpModel::with_hyperparameters(&x, &y, &hyper(2.0, &[0.2], 1e-4)).unwrap();
        let (mean, var) = model.predict(&[500.0]).unwrap();
        let shift = y.iter().sum::<f64>() / 4.0;
        assert!((mean - shift).abs() < 1e-6);
        assert!((var - 2.0).abs() < 1e-6);
    }

    #[test]
    fn duplicated_inputs_with_conflicting_targets_average_out() {
        let x = DMatrix::from_row_slice(4, 1, &[0.5, 0.5, 0.1, 0.9]);
        let y = [0.0, 1.0, 0.4, 0.6];
        let model = GpModel::with_hyperparameters(&x, &y, &hyper(1.0, &[0.3], 1e-6)).unwrap();
        let (mean, var) = model.predict(&[0.5]).unwrap();
        assert!(mean.is_finite() && var.is_finite());
        assert!((mean - 0.5).abs() < 1e-3, "prediction at the duplicate {mean}");
    }

    #[test]
    fn optimizer_reports_a_stationary_point() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y: Vec<f64> = (0..n)
            .map(|i| (4.0 * x[(i, 0)]).sin() + 0.05 * gaussian(&mut rng))
            .collect();
        let config = GpConfig {
            restarts: 3,
            max_iters: 400,
            ..GpConfig::default()
        };
        let model = fit_gp(&x, &y, &config).unwrap();
        assert!(
            model.final_grad_norm() <= 1e-5,
            "gradient norm {} at the returned optimum",
            model.final_grad_norm()
        );
    }

    #[test]
    fn batch_means_match_single_point_predictions() {
        let x = DMatrix::from_row_slice(6, 2, &[0.1, 0.9, 0.4, 0.2, 0.8, 0.8, 0.2, 0.5, 0.6, 0.1, 0.95, 0.45]);
        let y = [1.0, 2.0, 0.5, 1.5, 2.5, 0.75];
        let model = GpModel::with_hyperparameters(&x, &y, &hyper(1.0, &[0.4, 0.4], 1e-4)).unwrap();
        let queries = DMatrix::from_row_slice(3, 2, &[0.3, 0.3, 0.5, 0.9, 0.0, 1.0]);
        let (means, vars) = model.predict_batch(&queries).unwrap();
        let fast = model.predict_means(&queries).unwrap();
        for i in 0..3 {
            let (m, v) = model
                .predict(&[queries[(i, 0)], queries[(i, 1)]])
                .unwrap();
            assert_eq!(means[i], m);
            assert_eq!(vars[i], v);
            assert!((fast[i] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        let y = [0.0, 1.0, 2.0];
        assert!(log_marginal_likelihood(&x, &y, &hyper(1.0, &[0.3], 1e-4)).is_err());
        assert!(log_marginal_likelihood(&x, &y[..2], &hyper(1.0, &[0.3, 0.3], 1e-4)).is_err());
        let model = GpModel::with_hyperparameters(&x, &y, &hyper(1.0, &[0.3, 0.3], 1e-4)).unwrap();
        assert!(model.predict(&[0.5]).is_err());
    }
}
