//! Proper orthogonal decomposition of response snapshots.
//!
//! Responses are collected column-wise into a snapshot matrix S (no mean
//! centering), decomposed by a thin SVD (or the method-of-snapshots
//! eigendecomposition of SᵀS when the responses are much longer than the
//! snapshot count), and truncated at the smallest rank whose relative energy
//! sum of retained squared singular values over the total reaches the
//! configured threshold.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values smaller than this fraction of the largest are treated as
/// numerical noise and never retained, whatever the energy threshold asks.
const RANK_CUTOFF: f64 = 1e-12;

/// Column-wise collection of sampled model responses: an N_t-by-N_s matrix
/// whose column i is response vector y_i.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    matrix: DMatrix<f64>,
}

impl SnapshotMatrix {
    /// Wraps an existing N_t-by-N_s matrix, rejecting non-finite entries.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape("snapshot matrix needs at least one row and column".into()));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % matrix.nrows(), pos / matrix.nrows());
            return Err(Error::Data(format!(
                "non-finite snapshot entry at time index {i}, snapshot {j}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Response length N_t.
    pub fn n_time(&self) -> usize {
        self.matrix.nrows()
    }

    /// Snapshot count N_s.
    pub fn n_snapshots(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Stacks responses as columns: `responses[i]` becomes column i.
pub fn build_snapshot_matrix(responses: &[Vec<f64>]) -> Result<SnapshotMatrix> {
    if responses.is_empty() {
        return Err(Error::Shape("no responses given".into()));
    }
    let n_t = responses[0].len();
    for (i, r) in responses.iter().enumerate() {
        if r.len() != n_t {
            return Err(Error::Shape(format!(
                "response {i} has length {}, expected {n_t}",
                r.len()
            )));
        }
    }
    let mut m = DMatrix::zeros(n_t, responses.len());
    for (j, r) in responses.iter().enumerate() {
        for (i, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    SnapshotMatrix::from_matrix(m)
}

/// How to compute the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PodMethod {
    /// Pick by shape: method of snapshots for strongly tall matrices,
    /// direct SVD otherwise.
    Auto,
    /// Thin SVD of S itself.
    DirectSvd,
    /// Eigendecomposition of the N_s-by-N_s Gram matrix SᵀS; left singular
    /// vectors recovered as S v_i / sigma_i and re-orthonormalized.
    MethodOfSnapshots,
}

/// Truncated orthonormal basis with its spectrum.
#[derive(Debug, Clone)]
pub struct PodBasis {
    phi: DMatrix<f64>,
    singular_values: Vec<f64>,
    k: usize,
    energy: f64,
}

impl PodBasis {
    /// The N_t-by-k orthonormal basis matrix.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// All N_s singular values, sorted nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Retained rank.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Relative energy captured by the retained rank.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn n_time(&self) -> usize {
        self.phi.nrows()
    }

    /// Projection coefficients alpha = Phiᵀ y.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.phi.nrows() {
            return Err(Error::Shape(format!(
                "response length {} does not match basis length {}",
                y.len(),
                self.phi.nrows()
            )));
        }
        let yv = DVector::from_column_slice(y);
        Ok((self.phi.transpose() * yv).iter().copied().collect())
    }

    /// Reconstruction Phi alpha.
    pub fn reconstruct(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.k {
            return Err(Error::Shape(format!(
                "coefficient length {} does not match rank {}",
                alpha.len(),
                self.k
            )));
        }
        let av = DVector::from_column_slice(alpha);
        Ok((&self.phi * av).iter().copied().collect())
    }

    /// Projects every column of an N_t-by-N matrix at once, returning k-by-N
    /// coefficients.
    pub fn project_columns(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.phi.nrows() {
            return Err(Error::Shape(format!(
                "response length {} does not match basis length {}",
                y.nrows(),
                self.phi.nrows()
            )));
        }
        Ok(self.phi.transpose() * y)
    }

    /// Writes the spectrum as CSV (`index,singular_value`).
    pub fn write_singular_values_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        wtr.write_record(["index", "singular_value"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (i, s) in self.singular_values.iter().enumerate() {
            wtr.write_record([format!("{}", i + 1), format!("{s:?}")])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the basis matrix as CSV, one row per time index, one column per
    /// retained mode.
    pub fn write_basis_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let header: Vec<String> = (1..=self.k).map(|j| format!("mode{j}")).collect();
        wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for i in 0..self.phi.nrows() {
            let row: Vec<String> = (0..self.k).map(|j| format!("{:?}", self.phi[(i, j)])).collect();
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub(crate) fn from_parts(
        phi: DMatrix<f64>,
        singular_values: Vec<f64>,
        energy: f64,
    ) -> Self {
        let k = phi.ncols();
        Self {
            phi,
            singular_values,
            k,
            energy,
        }
    }
}

/// Relative energy of the first k singular values: sum of their squares over
/// the total sum of squares.
pub fn relative_energy(singular_values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > singular_values.len() {
        return Err(Error::Config(format!(
            "k = {k} outside 1..={}",
            singular_values.len()
        )));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let head: f64 = singular_values[..k].iter().map(|s| s * s).sum();
    Ok(head / total)
}

/// Computes the POD basis with automatic algorithm choice.
pub fn compute_pod(snapshots: &SnapshotMatrix, energy_threshold: f64) -> Result<PodBasis> {
    compute_pod_with_method(snapshots, energy_threshold, PodMethod::Auto)
}

/// Computes the POD basis with an explicit algorithm choice. Both routes
/// agree on the spanned subspace to numerical accuracy; signs of individual
/// basis columns are arbitrary.
pub fn compute_pod_with_method(
    snapshots: &SnapshotMatrix,
    energy_threshold: f64,
    method: PodMethod,
) -> Result<PodBasis> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    let s = snapshots.matrix();
    if s.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate(
            "snapshot matrix is identically zero; relative energy is undefined".into(),
        ));
    }
    let method = match method {
        PodMethod::Auto => {
            if s.nrows() >= 4 * s.ncols() {
                PodMethod::MethodOfSnapshots
            } else {
                PodMethod::DirectSvd
            }
        }
        m => m,
    };

    let (u_full, mut sigma) = match method {
        PodMethod::DirectSvd => {
            let svd = s.clone().svd(true, false);
            let u = svd.u.expect("svd requested u");
            let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            // nalgebra sorts descending; keep a defensive sort in case of ties.
            sorted_by_sigma(u, sv)
        }
        PodMethod::MethodOfSnapshots => {
            let gram = s.transpose() * s;
            let eig = nalgebra::SymmetricEigen::new(gram);
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b]
                    .partial_cmp(&eig.eigenvalues[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let sv: Vec<f64> = order
                .iter()
                .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
                .collect();
            let sigma1 = sv[0];
            // Left singular vectors u_i = S v_i / sigma_i for directions above
            // the numerical-rank cutoff.
            let keep = sv
                .iter()
                .take_while(|&&x| x >= RANK_CUTOFF * sigma1 && x > 0.0)
                .count()
                .max(1);
            let mut u = DMatrix::zeros(s.nrows(), keep);
            for (col, &i) in order.iter().take(keep).enumerate() {
                let v_i = eig.eigenvectors.column(i);
                let u_i = s * v_i / sv[col];
                u.set_column(col, &u_i);
            }
            // Squaring the data in SᵀS costs orthogonality in the smallest
            // retained directions; a thin QR restores it without moving the
            // spanned subspace.
            let qr = u.qr();
            (qr.q(), sv)
        }
        PodMethod::Auto => unreachable!(),
    };
    for v in &mut sigma {
        if !v.is_finite() {
            return Err(Error::Data("non-finite singular value".into()));
        }
    }

    let sigma1 = sigma[0];
    let numerical_rank = sigma
        .iter()
        .take(u_full.ncols())
        .take_while(|&&x| x >= RANK_CUTOFF * sigma1 && x > 0.0)
        .count()
        .max(1);
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut k = numerical_rank;
    let mut running = 0.0;
    for (i, s_i) in sigma.iter().take(numerical_rank).enumerate() {
        running += s_i * s_i;
        if running / total >= energy_threshold {
            k = i + 1;
            break;
        }
    }
    let energy = relative_energy(&sigma, k)?;
    let phi = u_full.columns(0, k).into_owned();
    Ok(PodBasis::from_parts(phi, sigma, energy))
}

fn sorted_by_sigma(u: DMatrix<f64>, sv: Vec<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return (u, sv);
    }
    let mut u2 = DMatrix::zeros(u.nrows(), u.ncols());
    let mut sv2 = Vec::with_capacity(sv.len());
    for (col, &i) in order.iter().enumerate() {
        if col < u.ncols() && i < u.ncols() {
            u2.set_column(col, &u.column(i));
        }
        sv2.push(sv[i]);
    }
    (u2, sv2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn orthonormality_defect(phi: &DMatrix<f64>) -> f64 {
        let g = phi.transpose() * phi;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - want).abs());
            }
        }
        worst
    }

    #[test]
    fn columns_are_placed_in_order() {
        let snap = build_snapshot_matrix(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(snap.n_time(), 3);
        assert_eq!(snap.n_snapshots(), 2);
        assert_eq!(snap.matrix()[(0, 0)], 1.0);
        assert_eq!(snap.matrix()[(2, 1)], 6.0);
    }

    #[test]
    fn ragged_and_nonfinite_responses_are_rejected() {
        assert!(build_snapshot_matrix(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(build_snapshot_matrix(&[vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn rank_one_data_keeps_one_mode() {
        let base = vec![1.0, -2.0, 0.5, 3.0];
        let cols: Vec<Vec<f64>> = (1..=5).map(|c| base.iter().map(|v| v * c as f64).collect()).collect();
        let snap = build_snapshot_matrix(&cols).unwrap();
        let basis = compute_pod(&snap, 0.999).unwrap();
        assert_eq!(basis.k(), 1);
        assert!((basis.energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_columns_force_full_rank() {
        let snap = build_snapshot_matrix(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let basis = compute_pod(&snap, 0.999).unwrap();
        assert_eq!(basis.k(), 3);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let snap = SnapshotMatrix::from_matrix(DMatrix::zeros(4, 3)).unwrap();
        assert!(matches!(compute_pod(&snap, 0.999), Err(Error::Degenerate(_))));
    }

    #[test]
    fn relative_energy_examples() {
        assert!((relative_energy(&[2.0, 1.0], 1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(relative_energy(&[3.0, 0.0, 0.0], 1).unwrap(), 1.0);
        assert_eq!(relative_energy(&[1.0, 1.0, 1.0, 1.0], 2).unwrap(), 0.5);
        assert!(relative_energy(&[0.0, 0.0], 1).is_err());
        assert!(relative_energy(&[1.0], 0).is_err());
    }

    #[test]
    fn projection_of_basis_columns_gives_unit_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(12, 5, |_, _| rng.gen::<f64>() - 0.5);
        let snap = SnapshotMatrix::from_matrix(m).unwrap();
        let basis = compute_pod(&snap, 0.999).unwrap();
        let phi1: Vec<f64> = basis.phi().column(0).iter().copied().collect();
        let alpha = basis.project(&phi1).unwrap();
        assert!((alpha[0] - 1.0).abs() < 1e-10);
        for a in &alpha[1..] {
            assert!(a.abs() < 1e-10);
        }
        // Linear combination comes back as its coefficients.
        let phi2: Vec<f64> = basis.phi().column(1).iter().copied().collect();
        let y: Vec<f64> = phi1.iter().zip(&phi2).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        let alpha = basis.project(&y).unwrap();
        assert!((alpha[0] - 2.0).abs() < 1e-10);
        assert!((alpha[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn reconstruct_inverts_project_on_the_basis_span() {
        let snap = build_snapshot_matrix(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let basis = compute_pod(&snap, 1.0 - 1e-12).unwrap();
        assert_eq!(basis.reconstruct(&vec![0.0; basis.k()]).unwrap(), vec![0.0; 3]);
        let e1: Vec<f64> = {
            let mut v = vec![0.0; basis.k()];
            v[0] = 1.0;
            v
        };
        let back = basis.reconstruct(&e1).unwrap();
        for (a, b) in back.iter().zip(basis.phi().column(0).iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn both_routes_agree_on_the_projector() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let n_t = 24;
            let n_s = 6;
            let m = DMatrix::from_fn(n_t, n_s, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let snap = SnapshotMatrix::from_matrix(m.clone()).unwrap();
            let b1 = compute_pod_with_method(&snap, 0.95, PodMethod::DirectSvd).unwrap();
            let b2 = compute_pod_with_method(&snap, 0.95, PodMethod::MethodOfSnapshots).unwrap();
            assert_eq!(b1.k(), b2.k(), "trial {trial}");
            for (s1, s2) in b1.singular_values().iter().zip(b2.singular_values()) {
                assert!((s1 - s2).abs() <= 1e-8 * b1.singular_values()[0]);
            }
            // Compare the orthogonal projectors through their action.
            for col in 0..n_s {
                let y: Vec<f64> = m.column(col).iter().copied().collect();
                let p1 = b1.reconstruct(&b1.project(&y).unwrap()).unwrap();
                let p2 = b2.reconstruct(&b2.project(&y).unwrap()).unwrap();
                let scale = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (a, b) in p1.iter().zip(&p2) {
                    assert!((a - b).abs() <= 1e-8 * scale.max(1.0), "trial {trial}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn eckart_young_residual_identity(seed in 0u64..10_000, n_t in 2usize..21, n_s in 1usize..9, thr in 0.3f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n_t, n_s, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let snap = SnapshotMatrix::from_matrix(m.clone()).unwrap();
            let basis = compute_pod(&snap, thr).unwrap();

            prop_assert!(orthonormality_defect(basis.phi()) < 1e-10);

            let mut direct = 0.0;
            for col in 0..n_s {
                let y: Vec<f64> = m.column(col).iter().copied().collect();
                let yh = basis.reconstruct(&basis.project(&y).unwrap()).unwrap();
                direct += y.iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            let spectral: f64 = basis.singular_values()[basis.k()..].iter().map(|s| s * s).sum();
            let scale = basis.singular_values().iter().map(|s| s * s).sum::<f64>();
            prop_assert!((direct - spectral).abs() <= 1e-8 * scale.max(1e-300));
        }

        #[test]
        fn energy_is_monotone_in_k(seed in 0u64..10_000, n in 1usize..10) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut sv: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sv.iter().any(|v| *v > 0.0));
            let mut prev = 0.0;
            for k in 1..=n {
                let e = relative_energy(&sv, k).unwrap();
                prop_assert!(e >= prev - 1e-15);
                prev = e;
            }
            prop_assert!((prev - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_is_idempotent(seed in 0u64..10_000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(15, 6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let snap = SnapshotMatrix::from_matrix(m).unwrap();
            let basis = compute_pod(&snap, 0.9).unwrap();
            let alpha: Vec<f64> = (0..basis.k()).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let alpha2 = basis.project(&basis.reconstruct(&alpha).unwrap()).unwrap();
            for (a, b) in alpha.iter().zip(&alpha2) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
