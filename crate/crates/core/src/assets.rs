//! Deterministic regeneration of the bundled example data.
//!
//! The repository ships a small tutorial dataset so the documentation can be
//! followed without running an expensive simulation. Everything under the
//! asset directory is a pure function of fixed seeds, so the committed files
//! can be regenerated at any time and byte-compared against this module's
//! output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::design::{qmc_design, ParameterSpace};
use crate::error::Result;
use crate::models::{synthetic_restenosis, Dataset, SyntheticRestenosis};

/// Number of runs in the tutorial dataset.
pub const TUTORIAL_RUNS: usize = 64;

/// Stream offset of the tutorial design (the generator's usual starting
/// index, skipping the origin point).
pub const TUTORIAL_SKIP: u64 = 1;

/// Builds the tutorial dataset in memory: a 64-run quasi-random design over
/// the bundled vessel-lesion parameter space, evaluated through the
/// synthetic restenosis model on the daily 0..=30 grid.
pub fn tutorial_dataset() -> Result<Dataset> {
    let model = SyntheticRestenosis::daily();
    let design = qmc_design(&model.space(), TUTORIAL_RUNS, TUTORIAL_SKIP)?;
    let time_grid = model.time_grid().to_vec();
    let responses = (0..TUTORIAL_RUNS)
        .map(|i| synthetic_restenosis(&design.row(i), &time_grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        design,
        responses,
        time_grid,
        provenance: format!(
            "synthetic restenosis model, {TUTORIAL_RUNS} quasi-random runs (stream offset {TUTORIAL_SKIP})"
        ),
        columns_reordered: false,
    })
}

/// Writes the bundled example data into `out_dir` and returns the paths
/// written, manifest last.
///
/// Layout:
/// - `isr3d_params.toml`: the vessel-lesion parameter space
/// - `tutorial/inputs.csv`, `tutorial/responses.csv`, `tutorial/timegrid.csv`
/// - `MANIFEST.txt`: one `sha256  path` line per file above
///
/// The output is byte-for-byte reproducible; CI regenerates it and compares
/// against the committed copy.
pub fn generate_tutorial_assets(out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("tutorial"))?;

    fs::write(
        out.join("isr3d_params.toml"),
        ParameterSpace::isr3d().to_toml_string(),
    )?;

    let dataset = tutorial_dataset()?;
    dataset.save(
        out.join("tutorial/inputs.csv"),
        out.join("tutorial/responses.csv"),
        out.join("tutorial/timegrid.csv"),
    )?;

    let listed = [
        "isr3d_params.toml",
        "tutorial/inputs.csv",
        "tutorial/responses.csv",
        "tutorial/timegrid.csv",
    ];
    let mut manifest = String::new();
    for rel in listed {
        let digest = Sha256::digest(fs::read(out.join(rel))?);
        writeln!(manifest, "{digest:x}  {rel}").expect("writing to a string cannot fail");
    }
    fs::write(out.join("MANIFEST.txt"), manifest)?;

    let mut paths: Vec<PathBuf> = listed.iter().map(|rel| out.join(rel)).collect();
    paths.push(out.join("MANIFEST.txt"));
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::load_dataset;

    #[test]
    fn regeneration_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let paths_a = generate_tutorial_assets(a.path()).unwrap();
        let paths_b = generate_tutorial_assets(b.path()).unwrap();
        assert_eq!(paths_a.len(), 5);
        for (pa, pb) in paths_a.iter().zip(&paths_b) {
            let ba = fs::read(pa).unwrap();
            let bb = fs::read(pb).unwrap();
            assert!(!ba.is_empty());
            assert_eq!(ba, bb, "{} differs between regenerations", pa.display());
        }
    }

    #[test]
    fn manifest_hashes_match_the_files() {
        let dir = tempfile::tempdir().unwrap();
        generate_tutorial_assets(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("MANIFEST.txt")).unwrap();
        let mut entries = 0;
        for line in manifest.lines() {
            let (hash, rel) = line.split_once("  ").unwrap();
            let digest = Sha256::digest(fs::read(dir.path().join(rel)).unwrap());
            assert_eq!(hash, format!("{digest:x}"), "stale manifest entry for {rel}");
            entries += 1;
        }
        assert_eq!(entries, 4);
    }

    #[test]
    fn generated_files_load_back_as_the_same_dataset() {
        let dir = tempfile::tempdir().unwrap();
        generate_tutorial_assets(dir.path()).unwrap();
        let space = ParameterSpace::isr3d();
        let loaded = load_dataset(
            dir.path().join("tutorial/inputs.csv"),
            dir.path().join("tutorial/responses.csv"),
            dir.path().join("tutorial/timegrid.csv"),
            &space,
        )
        .unwrap();
        assert_eq!(loaded.n_runs(), TUTORIAL_RUNS);
        assert_eq!(loaded.time_grid.len(), 31);
        assert!(!loaded.columns_reordered);

        let fresh = tutorial_dataset().unwrap();
        assert_eq!(loaded.design.points(), fresh.design.points());
        assert_eq!(loaded.responses, fresh.responses);
        assert_eq!(loaded.time_grid, fresh.time_grid);
    }

    #[test]
    fn parameter_file_round_trips_the_bundled_space() {
        let dir = tempfile::tempdir().unwrap();
        generate_tutorial_assets(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("isr3d_params.toml")).unwrap();
        let space = ParameterSpace::from_toml_str(&text).unwrap();
        assert_eq!(space.names(), ParameterSpace::isr3d().names());
    }
}
