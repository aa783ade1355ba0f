//! The POD-GP surrogate: a truncated orthonormal basis for the response
//! space plus one Gaussian process per retained coefficient.
//!
//! Training projects every available response onto the basis (which may be
//! built from a random subset of them) and fits the coefficient regressions
//! on inputs normalized to the unit box. Prediction runs the GPs and
//! reconstructs the full time series. Models persist to a single binary
//! file with a human-readable metadata header, so the interesting facts
//! about a model are visible without parsing any matrices.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::design::{DesignMatrix, Param, ParameterSpace};
use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpModel, Hyperparameters};
use crate::pod::{build_snapshot_matrix, compute_pod, PodBasis};

const MAGIC: &[u8; 8] = b"SRUQMODL";
const FORMAT_VERSION: u32 = 1;

/// Controls for [`train_surrogate`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Relative energy the truncated basis must capture, in (0, 1].
    pub energy_threshold: f64,
    /// How many responses feed the basis; `None` uses all of them. The
    /// coefficient regressions always train on every response.
    pub n_snapshots: Option<usize>,
    /// Seed for the snapshot subset draw.
    pub seed: u64,
    /// Settings forwarded to every coefficient regression; the per-mode seed
    /// is derived from `gp.seed`.
    pub gp: GpConfig,
    /// Label for the quantity the responses measure, carried into reports.
    pub qoi_name: String,
    /// Creation time (Unix seconds) recorded in the model file; `None`
    /// stamps the current time. Fixing it makes saved files reproducible
    /// byte for byte.
    pub timestamp: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            energy_threshold: 0.999,
            n_snapshots: None,
            seed: 0,
            gp: GpConfig::default(),
            qoi_name: "response".into(),
            timestamp: None,
        }
    }
}

/// Facts about a trained model, stored as the readable file header.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateMetadata {
    pub qoi_name: String,
    pub training_size: usize,
    pub snapshot_count: usize,
    pub modes: usize,
    pub energy_threshold: f64,
    pub achieved_energy: f64,
    pub seed: u64,
    pub created_unix: u64,
    pub parameter_names: Vec<String>,
    pub time_grid: Vec<f64>,
}

impl SurrogateMetadata {
    /// The `key = value` text block written into the model file.
    pub fn to_text(&self) -> String {
        let grid: Vec<String> = self.time_grid.iter().map(|v| format!("{v:?}")).collect();
        format!(
            "qoi = {}\ntraining_size = {}\nsnapshot_count = {}\nmodes = {}\n\
             energy_threshold = {:?}\nachieved_energy = {:?}\nseed = {}\ncreated_unix = {}\n\
             parameters = {}\ntime_grid = {}\n",
            self.qoi_name,
            self.training_size,
            self.snapshot_count,
            self.modes,
            self.energy_threshold,
            self.achieved_energy,
            self.seed,
            self.created_unix,
            self.parameter_names.join(","),
            grid.join(",")
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut qoi_name = None;
        let mut training_size = None;
        let mut snapshot_count = None;
        let mut modes = None;
        let mut energy_threshold = None;
        let mut achieved_energy = None;
        let mut seed = None;
        let mut created_unix = None;
        let mut parameter_names = None;
        let mut time_grid = None;
        for line in text.lines() {
            let Some((key, value)) = line.split_once(" = ") else {
                continue;
            };
            match key {
                "qoi" => qoi_name = Some(value.to_string()),
                "training_size" => training_size = value.parse().ok(),
                "snapshot_count" => snapshot_count = value.parse().ok(),
                "modes" => modes = value.parse().ok(),
                "energy_threshold" => energy_threshold = value.parse().ok(),
                "achieved_energy" => achieved_energy = value.parse().ok(),
                "seed" => seed = value.parse().ok(),
                "created_unix" => created_unix = value.parse().ok(),
                "parameters" => {
                    parameter_names = Some(value.split(',').map(str::to_string).collect())
                }
                "time_grid" => {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(str::parse).collect();
                    time_grid = parsed.ok();
                }
                _ => {}
            }
        }
        let missing = |what: &str| Error::Corrupt(format!("model header is missing '{what}'"));
        Ok(Self {
            qoi_name: qoi_name.ok_or_else(|| missing("qoi"))?,
            training_size: training_size.ok_or_else(|| missing("training_size"))?,
            snapshot_count: snapshot_count.ok_or_else(|| missing("snapshot_count"))?,
            modes: modes.ok_or_else(|| missing("modes"))?,
            energy_threshold: energy_threshold.ok_or_else(|| missing("energy_threshold"))?,
            achieved_energy: achieved_energy.ok_or_else(|| missing("achieved_energy"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            created_unix: created_unix.ok_or_else(|| missing("created_unix"))?,
            parameter_names: parameter_names.ok_or_else(|| missing("parameters"))?,
            time_grid: time_grid.ok_or_else(|| missing("time_grid"))?,
        })
    }
}

/// Prediction of one full response plus its uncertainty.
#[derive(Debug, Clone)]
pub struct ResponsePrediction {
    /// Reconstructed response mean, one value per time step.
    pub mean: Vec<f64>,
    /// Predicted basis coefficients.
    pub coefficient_means: Vec<f64>,
    /// Predictive variance of each coefficient.
    pub coefficient_variances: Vec<f64>,
    /// Pointwise response variance: sum of coefficient variances weighted by
    /// the squared basis functions.
    pub response_variance: Vec<f64>,
    /// True when the query lies outside the training parameter box.
    pub extrapolated: bool,
}

/// A trained POD-GP surrogate.
pub struct SurrogateModel {
    space: ParameterSpace,
    basis: PodBasis,
    coefficient_gps: Vec<GpModel>,
    metadata: SurrogateMetadata,
}

/// Trains a surrogate from a design and its evaluated responses.
///
/// `responses[i]` must be the response for `design` row i, sampled on
/// `time_grid`.
pub fn train_surrogate(
    design: &DesignMatrix,
    responses: &[Vec<f64>],
    time_grid: &[f64],
    config: &TrainConfig,
) -> Result<SurrogateModel> {
    if responses.len() != design.n_points() {
        return Err(Error::Shape(format!(
            "{} design points but {} responses",
            design.n_points(),
            responses.len()
        )));
    }
    if responses.len() < 2 {
        return Err(Error::Config("training needs at least two runs".into()));
    }
    if time_grid.is_empty() || time_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("time grid must be nonempty and finite".into()));
    }
    if time_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    for (i, r) in responses.iter().enumerate() {
        if r.len() != time_grid.len() {
            return Err(Error::Shape(format!(
                "response {i} has {} values, time grid has {}",
                r.len(),
                time_grid.len()
            )));
        }
    }
    if config.qoi_name.contains('\n') || config.qoi_name.contains(',') {
        return Err(Error::Config("quantity name must not contain commas or newlines".into()));
    }
    if design.space().names().iter().any(|n| n.contains(',')) {
        return Err(Error::Config("parameter names must not contain commas".into()));
    }

    let n = responses.len();
    let n_snapshots = match config.n_snapshots {
        None => n,
        Some(m) => {
            if m < 1 || m > n {
                return Err(Error::Config(format!(
                    "snapshot count {m} outside 1..={n}"
                )));
            }
            m
        }
    };

    let basis = {
        let subset: Vec<Vec<f64>> = if n_snapshots == n {
            responses.to_vec()
        } else {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
            let mut picks = rand::seq::index::sample(&mut rng, n, n_snapshots).into_vec();
            picks.sort_unstable();
            picks.iter().map(|&i| responses[i].clone()).collect()
        };
        let snap = build_snapshot_matrix(&subset)?;
        compute_pod(&snap, config.energy_threshold)?
    };

    let all = build_snapshot_matrix(responses)?;
    let coeffs = basis.project_columns(all.matrix())?;
    let x_unit = crate::design::normalize_to_unit(design);

    let coefficient_gps: Vec<GpModel> = (0..basis.k())
        .into_par_iter()
        .map(|j| {
            let targets: Vec<f64> = coeffs.row(j).iter().copied().collect();
            let gp_config = GpConfig {
                seed: config.gp.seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..config.gp.clone()
            };
            GpModel::fit(&x_unit, &targets, &gp_config)
        })
        .collect::<Result<_>>()?;

    let created_unix = config.timestamp.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let metadata = SurrogateMetadata {
        qoi_name: config.qoi_name.clone(),
        training_size: n,
        snapshot_count: n_snapshots,
        modes: basis.k(),
        energy_threshold: config.energy_threshold,
        achieved_energy: basis.energy(),
        seed: config.seed,
        created_unix,
        parameter_names: design.space().names().iter().map(|s| s.to_string()).collect(),
        time_grid: time_grid.to_vec(),
    };
    Ok(SurrogateModel {
        space: design.space().clone(),
        basis,
        coefficient_gps,
        metadata,
    })
}

use rand::SeedableRng;

impl SurrogateModel {
    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    pub fn metadata(&self) -> &SurrogateMetadata {
        &self.metadata
    }

    pub fn n_modes(&self) -> usize {
        self.coefficient_gps.len()
    }

    /// Fitted hyperparameters of each coefficient regression.
    pub fn gp_hyperparameters(&self) -> Vec<Hyperparameters> {
        self.coefficient_gps.iter().map(|g| g.hyperparameters()).collect()
    }

    /// Predicts the response at one point given in physical units.
    pub fn predict_response(&self, x: &[f64]) -> Result<ResponsePrediction> {
        let extrapolated = !self.space.contains(x);
        let u = self.space.normalize_point(x)?;
        let mut coefficient_means = Vec::with_capacity(self.coefficient_gps.len());
        let mut coefficient_variances = Vec::with_capacity(self.coefficient_gps.len());
        for gp in &self.coefficient_gps {
            let (m, v) = gp.predict(&u)?;
            coefficient_means.push(m);
            coefficient_variances.push(v);
        }
        let mean = self.basis.reconstruct(&coefficient_means)?;
        let phi = self.basis.phi();
        let response_variance: Vec<f64> = (0..phi.nrows())
            .map(|t| {
                coefficient_variances
                    .iter()
                    .enumerate()
                    .map(|(j, var)| var * phi[(t, j)] * phi[(t, j)])
                    .sum()
            })
            .collect();
        Ok(ResponsePrediction {
            mean,
            coefficient_means,
            coefficient_variances,
            response_variance,
            extrapolated,
        })
    }

    /// Predicts response means for every row of `points` (physical units).
    /// Returns an N-by-N_t matrix (row per point) and per-point
    /// extrapolation flags. Variances are skipped, which keeps large
    /// propagation sweeps linear in the training size.
    pub fn predict_batch(&self, points: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<bool>)> {
        let (unit, flags) = self.normalize_rows(points)?;
        let k = self.coefficient_gps.len();
        let coeff_rows: Vec<Vec<f64>> = self
            .coefficient_gps
            .par_iter()
            .map(|gp| gp.predict_means(&unit))
            .collect::<Result<_>>()?;
        let mut coeffs = DMatrix::zeros(k, points.nrows());
        for (j, row) in coeff_rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                coeffs[(j, i)] = *v;
            }
        }
        let responses = self.basis.phi() * coeffs;
        Ok((responses.transpose(), flags))
    }

    /// Like [`Self::predict_batch`] but also returns pointwise response
    /// variances. Costs one linear solve per point and mode.
    pub fn predict_batch_with_variance(
        &self,
        points: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<bool>)> {
        let (unit, flags) = self.normalize_rows(points)?;
        let per_gp: Vec<(Vec<f64>, Vec<f64>)> = self
            .coefficient_gps
            .par_iter()
            .map(|gp| gp.predict_batch(&unit))
            .collect::<Result<_>>()?;
        let n = points.nrows();
        let n_t = self.basis.n_time();
        let phi = self.basis.phi();
        let mut means = DMatrix::zeros(n, n_t);
        let mut vars = DMatrix::zeros(n, n_t);
        for i in 0..n {
            for t in 0..n_t {
                let mut m = 0.0;
                let mut v = 0.0;
                for (j, (gm, gv)) in per_gp.iter().enumerate() {
                    m += gm[i] * phi[(t, j)];
                    v += gv[i] * phi[(t, j)] * phi[(t, j)];
                }
                means[(i, t)] = m;
                vars[(i, t)] = v;
            }
        }
        Ok((means, vars, flags))
    }

    fn normalize_rows(&self, points: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<bool>)> {
        if points.ncols() != self.space.dimension() {
            return Err(Error::Shape(format!(
                "points have dimension {}, model expects {}",
                points.ncols(),
                self.space.dimension()
            )));
        }
        let mut unit = DMatrix::zeros(points.nrows(), points.ncols());
        let mut flags = Vec::with_capacity(points.nrows());
        let mut buf = vec![0.0; points.ncols()];
        for i in 0..points.nrows() {
            for d in 0..points.ncols() {
                buf[d] = points[(i, d)];
            }
            flags.push(!self.space.contains(&buf));
            let u = self.space.normalize_point(&buf)?;
            for (d, v) in u.iter().enumerate() {
                unit[(i, d)] = *v;
            }
        }
        Ok((unit, flags))
    }

    /// Writes the model to a single binary file. The layout is: magic,
    /// format version, readable metadata text, binary payload, and a
    /// SHA-256 checksum of the payload.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = self.metadata.to_text().into_bytes();
        let payload = self.encode_payload();
        let digest = Sha256::digest(&payload);
        let mut file = Vec::with_capacity(meta.len() + payload.len() + 64);
        file.extend_from_slice(MAGIC);
        file.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        file.write_u64::<LittleEndian>(meta.len() as u64)?;
        file.extend_from_slice(&meta);
        file.write_u64::<LittleEndian>(payload.len() as u64)?;
        file.extend_from_slice(&payload);
        file.extend_from_slice(&digest);
        std::fs::write(path, file)?;
        Ok(())
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let put_str = |buf: &mut Vec<u8>, s: &str| {
            buf.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
            buf.extend_from_slice(s.as_bytes());
        };
        // Parameter space.
        buf.write_u32::<LittleEndian>(self.space.dimension() as u32).expect("vec write");
        for p in self.space.params() {
            put_str(&mut buf, &p.name);
            put_str(&mut buf, &p.unit);
            buf.write_f64::<LittleEndian>(p.min).expect("vec write");
            buf.write_f64::<LittleEndian>(p.max).expect("vec write");
        }
        // Basis: dimensions, matrix (row-major), spectrum, energy.
        let phi = self.basis.phi();
        buf.write_u32::<LittleEndian>(phi.nrows() as u32).expect("vec write");
        buf.write_u32::<LittleEndian>(phi.ncols() as u32).expect("vec write");
        for i in 0..phi.nrows() {
            for j in 0..phi.ncols() {
                buf.write_f64::<LittleEndian>(phi[(i, j)]).expect("vec write");
            }
        }
        let sv = self.basis.singular_values();
        buf.write_u32::<LittleEndian>(sv.len() as u32).expect("vec write");
        for v in sv {
            buf.write_f64::<LittleEndian>(*v).expect("vec write");
        }
        buf.write_f64::<LittleEndian>(self.basis.energy()).expect("vec write");
        // Coefficient regressions.
        buf.write_u32::<LittleEndian>(self.coefficient_gps.len() as u32).expect("vec write");
        for gp in &self.coefficient_gps {
            let (x, y_std, hyper, shift, scale, jitter) = gp.raw_parts();
            buf.write_u32::<LittleEndian>(x.nrows() as u32).expect("vec write");
            buf.write_u32::<LittleEndian>(x.ncols() as u32).expect("vec write");
            for i in 0..x.nrows() {
                for d in 0..x.ncols() {
                    buf.write_f64::<LittleEndian>(x[(i, d)]).expect("vec write");
                }
            }
            for v in y_std.iter() {
                buf.write_f64::<LittleEndian>(*v).expect("vec write");
            }
            buf.write_f64::<LittleEndian>(shift).expect("vec write");
            buf.write_f64::<LittleEndian>(scale).expect("vec write");
            buf.write_f64::<LittleEndian>(jitter).expect("vec write");
            buf.write_f64::<LittleEndian>(hyper.signal_variance).expect("vec write");
            buf.write_f64::<LittleEndian>(hyper.noise_variance).expect("vec write");
            for l in &hyper.length_scales {
                buf.write_f64::<LittleEndian>(*l).expect("vec write");
            }
        }
        buf
    }

    /// Reads a model written by [`Self::save`]. The Cholesky factors are
    /// recomputed from the stored matrices, which is deterministic, so a
    /// loaded model predicts bit-identically to the one that was saved.
    pub fn load(path: impl AsRef<Path>) -> Result<SurrogateModel> {
        let bytes = std::fs::read(&path)?;
        let (meta_text, payload) = split_container(&bytes)?;
        let metadata = SurrogateMetadata::from_text(&meta_text)?;
        let mut c = std::io::Cursor::new(payload);
        let corrupt = |what: &str| Error::Corrupt(format!("model payload ended inside {what}"));

        let dim = c.read_u32::<LittleEndian>().map_err(|_| corrupt("the space"))? as usize;
        let mut params = Vec::with_capacity(dim);
        for _ in 0..dim {
            let name = read_string(&mut c).map_err(|_| corrupt("the space"))?;
            let unit = read_string(&mut c).map_err(|_| corrupt("the space"))?;
            let min = c.read_f64::<LittleEndian>().map_err(|_| corrupt("the space"))?;
            let max = c.read_f64::<LittleEndian>().map_err(|_| corrupt("the space"))?;
            params.push(Param { name, unit, min, max });
        }
        let space = ParameterSpace::new(params)
            .map_err(|e| Error::Corrupt(format!("stored parameter space is invalid: {e}")))?;

        let n_t = c.read_u32::<LittleEndian>().map_err(|_| corrupt("the basis"))? as usize;
        let k = c.read_u32::<LittleEndian>().map_err(|_| corrupt("the basis"))? as usize;
        let mut phi = DMatrix::zeros(n_t, k);
        for i in 0..n_t {
            for j in 0..k {
                phi[(i, j)] = c.read_f64::<LittleEndian>().map_err(|_| corrupt("the basis"))?;
            }
        }
        let n_sv = c.read_u32::<LittleEndian>().map_err(|_| corrupt("the spectrum"))? as usize;
        let mut sv = Vec::with_capacity(n_sv);
        for _ in 0..n_sv {
            sv.push(c.read_f64::<LittleEndian>().map_err(|_| corrupt("the spectrum"))?);
        }
        let energy = c.read_f64::<LittleEndian>().map_err(|_| corrupt("the spectrum"))?;
        let basis = PodBasis::from_parts(phi, sv, energy);

        let n_gps = c.read_u32::<LittleEndian>().map_err(|_| corrupt("the regressions"))? as usize;
        if n_gps != k {
            return Err(Error::Corrupt(format!(
                "{n_gps} regressions stored for a rank-{k} basis"
            )));
        }
        let mut gps = Vec::with_capacity(n_gps);
        for _ in 0..n_gps {
            let bad = |_| corrupt("a regression");
            let n = c.read_u32::<LittleEndian>().map_err(bad)? as usize;
            let d = c.read_u32::<LittleEndian>().map_err(bad)? as usize;
            let mut x = DMatrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    x[(i, j)] = c.read_f64::<LittleEndian>().map_err(bad)?;
                }
            }
            let mut y_std = DVector::zeros(n);
            for i in 0..n {
                y_std[i] = c.read_f64::<LittleEndian>().map_err(bad)?;
            }
            let shift = c.read_f64::<LittleEndian>().map_err(bad)?;
            let scale = c.read_f64::<LittleEndian>().map_err(bad)?;
            let jitter = c.read_f64::<LittleEndian>().map_err(bad)?;
            let signal_variance = c.read_f64::<LittleEndian>().map_err(bad)?;
            let noise_variance = c.read_f64::<LittleEndian>().map_err(bad)?;
            let mut length_scales = Vec::with_capacity(d);
            for _ in 0..d {
                length_scales.push(c.read_f64::<LittleEndian>().map_err(bad)?);
            }
            let hyper = Hyperparameters {
                signal_variance,
                length_scales,
                noise_variance,
            };
            gps.push(GpModel::from_raw_parts(x, y_std, hyper, shift, scale, jitter)?);
        }
        if c.position() != c.get_ref().len() as u64 {
            return Err(Error::Corrupt("trailing bytes after the model payload".into()));
        }
        Ok(SurrogateModel {
            space,
            basis,
            coefficient_gps: gps,
            metadata,
        })
    }
}

/// Lets a trained surrogate stand in anywhere an expensive simulation would,
/// e.g. as the model under sensitivity analysis. Evaluation returns the
/// predictive mean; points outside the training box are still evaluated.
impl crate::models::EvaluatableModel for SurrogateModel {
    fn dimension(&self) -> usize {
        self.space.dimension()
    }

    fn response_len(&self) -> usize {
        self.basis.n_time()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let point = DMatrix::from_row_slice(1, x.len(), x);
        let (means, _) = self.predict_batch(&point)?;
        Ok(means.row(0).iter().copied().collect())
    }
}

/// Reads only the metadata header of a model file, skipping the matrices.
pub fn read_metadata(path: impl AsRef<Path>) -> Result<SurrogateMetadata> {
    let mut file = std::fs::File::open(&path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Corrupt("file too short for a model header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("not a surrogate model file (bad magic)".into()));
    }
    let version = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Corrupt("file too short for a model header".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let meta_len = file
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::Corrupt("file too short for a model header".into()))?;
    if meta_len > 1 << 24 {
        return Err(Error::Corrupt("implausible metadata length".into()));
    }
    let mut meta = vec![0u8; meta_len as usize];
    file.read_exact(&mut meta)
        .map_err(|_| Error::Corrupt("file ends inside the metadata header".into()))?;
    let text = String::from_utf8(meta)
        .map_err(|_| Error::Corrupt("metadata header is not valid text".into()))?;
    SurrogateMetadata::from_text(&text)
}

fn split_container(bytes: &[u8]) -> Result<(String, &[u8])> {
    let too_short = || Error::Corrupt("model file is truncated".into());
    if bytes.len() < 8 + 4 + 8 {
        return Err(too_short());
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("not a surrogate model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("sized slice"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("sized slice")) as usize;
    let meta_end = 20usize.checked_add(meta_len).ok_or_else(too_short)?;
    if bytes.len() < meta_end + 8 {
        return Err(too_short());
    }
    let meta_text = String::from_utf8(bytes[20..meta_end].to_vec())
        .map_err(|_| Error::Corrupt("metadata header is not valid text".into()))?;
    let payload_len =
        u64::from_le_bytes(bytes[meta_end..meta_end + 8].try_into().expect("sized slice")) as usize;
    let payload_start = meta_end + 8;
    let payload_end = payload_start.checked_add(payload_len).ok_or_else(too_short)?;
    if bytes.len() < payload_end + 32 {
        return Err(too_short());
    }
    if bytes.len() > payload_end + 32 {
        return Err(Error::Corrupt("trailing bytes after the checksum".into()));
    }
    let payload = &bytes[payload_start..payload_end];
    let digest = Sha256::digest(payload);
    if digest.as_slice() != &bytes[payload_end..payload_end + 32] {
        return Err(Error::Corrupt("payload checksum mismatch; the file is damaged".into()));
    }
    Ok((meta_text, payload))
}

fn read_string(c: &mut std::io::Cursor<&[u8]>) -> std::io::Result<String> {
    let len = c.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "string too long"));
    }
    let mut buf = vec![0u8; len];
    c.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::qmc_design;
    use crate::models::{evaluate_batch, SyntheticRestenosis};

    fn toy_training_data(n: usize) -> (DesignMatrix, Vec<Vec<f64>>, Vec<f64>) {
        let model = SyntheticRestenosis::daily();
        let design = qmc_design(&model.space(), n, 1).unwrap();
        let responses = evaluate_batch(&model, design.points()).unwrap();
        (design, responses, model.time_grid().to_vec())
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            gp: GpConfig {
                restarts: 2,
                max_iters: 60,
                ..GpConfig::default()
            },
            timestamp: Some(0),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_responses_predict_the_constant() {
        let (design, _, grid) = toy_training_data(8);
        let responses: Vec<Vec<f64>> = (0..8).map(|_| vec![2.5; grid.len()]).collect();
        let model = train_surrogate(&design, &responses, &grid, &quick_config()).unwrap();
        assert_eq!(model.n_modes(), 1);
        let pred = model.predict_response(&[14.0, 0.2, 0.6, 5.0]).unwrap();
        for v in &pred.mean {
            assert!((v - 2.5).abs() < 1e-8);
        }
        assert!(!pred.extrapolated);
    }

    #[test]
    fn reconstruction_composes_the_coefficient_predictions() {
        let (design, responses, grid) = toy_training_data(24);
        let model = train_surrogate(&design, &responses, &grid, &quick_config()).unwrap();
        let x = [13.0, 0.31, 0.52, 7.5];
        let pred = model.predict_response(&x).unwrap();
        let phi = model.basis().phi();
        for t in 0..grid.len() {
            let manual: f64 = pred
                .coefficient_means
                .iter()
                .enumerate()
                .map(|(j, c)| c * phi[(t, j)])
                .sum();
            assert!((pred.mean[t] - manual).abs() < 1e-12);
        }
        assert!(pred.response_variance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn interpolating_gps_reproduce_projected_training_responses() {
        // Fixed near-zero noise makes each coefficient regression pass
        // through its training values, so the surrogate must return the
        // POD projection of each training response almost exactly.
        let (design, responses, grid) = toy_training_data(16);
        let snap = build_snapshot_matrix(&responses).unwrap();
        let basis = compute_pod(&snap, 1.0 - 1e-9).unwrap();
        let coeffs = basis.project_columns(snap.matrix()).unwrap();
        let x_unit = crate::design::normalize_to_unit(&design);
        let gps: Vec<GpModel> = (0..basis.k())
            .map(|j| {
                let targets: Vec<f64> = coeffs.row(j).iter().copied().collect();
                let hyper = Hyperparameters {
                    signal_variance: 1.0,
                    length_scales: vec![0.5; 4],
                    noise_variance: 1e-10,
                };
                GpModel::with_hyperparameters(&x_unit, &targets, &hyper).unwrap()
            })
            .collect();
        let metadata = SurrogateMetadata {
            qoi_name: "response".into(),
            training_size: 16,
            snapshot_count: 16,
            modes: basis.k(),
            energy_threshold: 1.0 - 1e-9,
            achieved_energy: basis.energy(),
            seed: 0,
            created_unix: 0,
            parameter_names: design.space().names().iter().map(|s| s.to_string()).collect(),
            time_grid: grid.clone(),
        };
        let model = SurrogateModel {
            space: design.space().clone(),
            basis,
            coefficient_gps: gps,
            metadata,
        };
        for i in 0..16 {
            let pred = model.predict_response(&design.row(i)).unwrap();
            let projected = model
                .basis()
                .reconstruct(&model.basis().project(&responses[i]).unwrap())
                .unwrap();
            let scale = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in pred.mean.iter().zip(&projected) {
                assert!((a - b).abs() < 1e-6 * scale, "run {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn trained_surrogate_tracks_the_generator() {
        let (design, responses, grid) = toy_training_data(48);
        let config = TrainConfig {
            energy_threshold: 1.0 - 1e-6,
            ..quick_config()
        };
        let model = train_surrogate(&design, &responses, &grid, &config).unwrap();
        // Held-out points: later entries of the same low-discrepancy stream.
        let probe = qmc_design(model.space(), 16, 1 + 48).unwrap();
        let truth = evaluate_batch(&SyntheticRestenosis::daily(), probe.points()).unwrap();
        let (pred, flags) = model.predict_batch(probe.points()).unwrap();
        assert!(flags.iter().all(|f| !f));
        let mut worst = 0.0f64;
        for i in 0..16 {
            let num: f64 = (0..grid.len())
                .map(|t| (pred[(i, t)] - truth[i][t]).powi(2))
                .sum();
            let den: f64 = truth[i].iter().map(|v| v * v).sum();
            worst = worst.max((num / den).sqrt());
        }
        assert!(worst < 5e-3, "worst held-out relative error {worst}");
    }

    #[test]
    fn snapshot_subset_is_recorded_and_reproducible() {
        let (design, responses, grid) = toy_training_data(24);
        let config = TrainConfig {
            n_snapshots: Some(10),
            seed: 7,
            ..quick_config()
        };
        let a = train_surrogate(&design, &responses, &grid, &config).unwrap();
        let b = train_surrogate(&design, &responses, &grid, &config).unwrap();
        assert_eq!(a.metadata().snapshot_count, 10);
        assert_eq!(a.basis().singular_values(), b.basis().singular_values());
        let bad = TrainConfig {
            n_snapshots: Some(25),
            ..quick_config()
        };
        assert!(train_surrogate(&design, &responses, &grid, &bad).is_err());
    }

    #[test]
    fn extrapolation_is_flagged() {
        let (design, responses, grid) = toy_training_data(12);
        let model = train_surrogate(&design, &responses, &grid, &quick_config()).unwrap();
        let inside = model.predict_response(&[15.0, 0.2, 0.6, 5.0]).unwrap();
        let outside = model.predict_response(&[25.0, 0.2, 0.6, 5.0]).unwrap();
        assert!(!inside.extrapolated);
        assert!(outside.extrapolated);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let (design, responses, grid) = toy_training_data(16);
        let model = train_surrogate(&design, &responses, &grid, &quick_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = SurrogateModel::load(&path).unwrap();
        assert_eq!(loaded.metadata(), model.metadata());
        let probe = qmc_design(model.space(), 20, 99).unwrap();
        let (a, _) = model.predict_batch(probe.points()).unwrap();
        let (b, _) = loaded.predict_batch(probe.points()).unwrap();
        assert_eq!(a, b);
        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.bin");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn metadata_is_readable_without_the_payload() {
        let (design, responses, grid) = toy_training_data(12);
        let config = TrainConfig {
            qoi_name: "lumen_area".into(),
            ..quick_config()
        };
        let model = train_surrogate(&design, &responses, &grid, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let meta = read_metadata(&path).unwrap();
        assert_eq!(&meta, model.metadata());
        assert_eq!(meta.qoi_name, "lumen_area");
        assert_eq!(meta.training_size, 12);
        assert_eq!(meta.time_grid, grid);
    }

    #[test]
    fn damaged_files_are_refused() {
        let (design, responses, grid) = toy_training_data(8);
        let model = train_surrogate(&design, &responses, &grid, &quick_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Truncation.
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() - 40]).unwrap();
        assert!(matches!(SurrogateModel::load(&cut), Err(Error::Corrupt(_))));

        // A flipped payload byte breaks the checksum.
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 100;
        flipped[mid] ^= 0xff;
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, &flipped).unwrap();
        assert!(matches!(SurrogateModel::load(&bad), Err(Error::Corrupt(_))));

        // Future format version.
        let mut versioned = bytes.clone();
        versioned[8] = 99;
        let future = dir.path().join("future.bin");
        std::fs::write(&future, &versioned).unwrap();
        assert!(matches!(
            SurrogateModel::load(&future),
            Err(Error::UnsupportedVersion { found: 99, .. })
        ));
        assert!(matches!(
            read_metadata(&future),
            Err(Error::UnsupportedVersion { .. })
        ));

        // Not a model file at all.
        let text = dir.path().join("nope.bin");
        std::fs::write(&text, b"just some text, definitely not a model").unwrap();
        assert!(matches!(SurrogateModel::load(&text), Err(Error::Corrupt(_))));
    }

    #[test]
    fn mismatched_training_inputs_are_rejected() {
        let (design, mut responses, grid) = toy_training_data(8);
        assert!(train_surrogate(&design, &responses[..7], &grid, &quick_config()).is_err());
        responses[3].pop();
        assert!(train_surrogate(&design, &responses, &grid, &quick_config()).is_err());
    }
}
