//! End-to-end tests of the command-line interface. The quickstart test runs
//! the exact command sequence the README and docs show, so the documented
//! workflow cannot rot.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_suruq"))
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn suruq")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines_of(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_owned)
        .collect()
}

/// A surrogate trained once on the committed tutorial data and shared by the
/// tests that only need some model file to poke at.
fn fixture_model() -> &'static Path {
    static MODEL: OnceLock<PathBuf> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let config = dir.join("train.toml");
        fs::write(
            &config,
            "[train]\ngp_restarts = 2\ngp_max_iters = 40\ntimestamp = 0\n",
        )
        .unwrap();
        let model = dir.join("tutorial.suruq");
        run_ok(&[
            "train",
            "--quiet",
            "--config",
            config.to_str().unwrap(),
            "--data-inputs",
            repo_path("data/tutorial/inputs.csv").to_str().unwrap(),
            "--data-responses",
            repo_path("data/tutorial/responses.csv").to_str().unwrap(),
            "--time-grid",
            repo_path("data/tutorial/timegrid.csv").to_str().unwrap(),
            "--energy-threshold",
            "0.9999",
            "--out",
            model.to_str().unwrap(),
        ]);
        model
    })
}

#[test]
fn assets_regenerate_the_committed_dataset() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["assets", "--quiet", "--out", dir.path().to_str().unwrap()]);
    for rel in [
        "isr3d_params.toml",
        "tutorial/inputs.csv",
        "tutorial/responses.csv",
        "tutorial/timegrid.csv",
        "MANIFEST.txt",
    ] {
        let fresh = fs::read(dir.path().join(rel)).unwrap();
        let committed = fs::read(repo_path("data").join(rel)).unwrap();
        assert_eq!(fresh, committed, "{rel} drifted from the generator");
    }
}

#[test]
fn sample_is_deterministic_and_supports_empty_designs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    run_ok(&["sample", "--quiet", "--n", "512", "--out", first.to_str().unwrap()]);
    run_ok(&["sample", "--quiet", "--n", "512", "--out", second.to_str().unwrap()]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());

    let lines = lines_of(&first);
    assert_eq!(lines.len(), 513);
    assert_eq!(
        lines[0],
        "endothelium_regeneration_time,blood_flow_velocity,relative_threshold_strain,fenestration_percentage"
    );
    for line in &lines[1..] {
        let values: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 4);
        assert!(values.iter().all(|v| v.is_finite()));
    }

    let empty = dir.path().join("empty.csv");
    run_ok(&["sample", "--quiet", "--n", "0", "--out", empty.to_str().unwrap()]);
    assert_eq!(lines_of(&empty).len(), 1, "empty design should still carry the header");
}

#[test]
fn documented_quickstart_sequence_runs() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let data = work.join("data");
    let model = work.join("tutorial.suruq");

    run_ok(&["assets", "--quiet", "--out", data.to_str().unwrap()]);
    run_ok(&[
        "train",
        "--quiet",
        "--data-inputs",
        data.join("tutorial/inputs.csv").to_str().unwrap(),
        "--data-responses",
        data.join("tutorial/responses.csv").to_str().unwrap(),
        "--time-grid",
        data.join("tutorial/timegrid.csv").to_str().unwrap(),
        "--energy-threshold",
        "0.9999",
        "--out",
        model.to_str().unwrap(),
    ]);

    let report = run_ok(&["report", "--model", model.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&report.stdout).into_owned();
    assert!(text.contains("modes = "), "report should mention the basis size:\n{text}");
    assert!(text.contains("training_size = "), "report should mention the data size:\n{text}");

    let predictions = work.join("predictions.csv");
    run_ok(&[
        "predict",
        "--quiet",
        "--model",
        model.to_str().unwrap(),
        "--data-inputs",
        data.join("tutorial/inputs.csv").to_str().unwrap(),
        "--out",
        predictions.to_str().unwrap(),
    ]);
    let pred_lines = lines_of(&predictions);
    assert_eq!(pred_lines.len(), 65);
    assert!(pred_lines[0].starts_with("t=0.0,"));
    assert!(pred_lines[0].ends_with(",extrapolated"));
    for line in &pred_lines[1..] {
        assert!(line.ends_with(",false"), "tutorial inputs lie inside the box: {line}");
    }
    // At the training points the surrogate should reproduce the final-day
    // response closely; compare column means rather than single values.
    let final_column_mean = |path: &Path, column: usize| {
        let lines = lines_of(path);
        let mut sum = 0.0;
        for line in &lines[1..] {
            let fields: Vec<&str> = line.split(',').collect();
            sum += fields[column].parse::<f64>().unwrap();
        }
        sum / (lines.len() - 1) as f64
    };
    let predicted = final_column_mean(&predictions, 30);
    let observed = {
        let lines = lines_of(&data.join("tutorial/responses.csv"));
        let mut sum = 0.0;
        for line in &lines {
            let fields: Vec<&str> = line.split(',').collect();
            sum += fields[30].parse::<f64>().unwrap();
        }
        sum / lines.len() as f64
    };
    assert!(
        (predicted - observed).abs() <= 0.05 * observed.abs(),
        "mean final-day prediction {predicted} far from the data {observed}"
    );

    let uq_dir = work.join("uq_out");
    let uq = run_ok(&[
        "uq",
        "--quiet",
        "--model",
        model.to_str().unwrap(),
        "--n",
        "20000",
        "--seed",
        "1",
        "--threshold",
        "2.2,1.8",
        "--direction",
        "below",
        "--report-days",
        "10,20,30",
        "--out",
        uq_dir.to_str().unwrap(),
    ]);
    for file in [
        "summary.csv",
        "exceedance_1.csv",
        "exceeding_inputs_1.csv",
        "exceedance_2.csv",
        "exceeding_inputs_2.csv",
        "table.txt",
        "run_manifest.txt",
    ] {
        assert!(uq_dir.join(file).exists(), "uq did not write {file}");
    }
    let table = String::from_utf8_lossy(&uq.stdout).into_owned();
    assert!(table.contains("day 30"), "table should cover day 30:\n{table}");
    assert!(table.contains("mean"), "table should have a mean row:\n{table}");

    let sobol = work.join("sobol_indices.csv");
    run_ok(&[
        "sa",
        "--quiet",
        "--model",
        model.to_str().unwrap(),
        "--n-base",
        "128",
        "--reps",
        "2",
        "--seed",
        "0",
        "--out",
        sobol.to_str().unwrap(),
    ]);
    let sobol_lines = lines_of(&sobol);
    assert_eq!(
        sobol_lines.len(),
        1 + 31 * 4 * 2,
        "one first and one total row per parameter and day"
    );
    assert_eq!(
        sobol_lines[0],
        "time,parameter,index_type,estimate,ci_low,ci_high,interaction_gap"
    );

    let cv_csv = work.join("cv_report.csv");
    let cv = run_ok(&[
        "cv",
        "--quiet",
        "--data-inputs",
        data.join("tutorial/inputs.csv").to_str().unwrap(),
        "--data-responses",
        data.join("tutorial/responses.csv").to_str().unwrap(),
        "--time-grid",
        data.join("tutorial/timegrid.csv").to_str().unwrap(),
        "--folds",
        "4",
        "--reps",
        "2",
        "--out",
        cv_csv.to_str().unwrap(),
    ]);
    let cv_text = String::from_utf8_lossy(&cv.stdout).into_owned();
    assert!(cv_text.contains("cross-validation"), "{cv_text}");
    assert_eq!(lines_of(&cv_csv).len(), 1 + 4 * 2);

    let sweep_csv = work.join("pod_sweep.csv");
    run_ok(&[
        "pod-sweep",
        "--quiet",
        "--data-responses",
        data.join("tutorial/responses.csv").to_str().unwrap(),
        "--counts",
        "8,16,32,64",
        "--reps",
        "3",
        "--out",
        sweep_csv.to_str().unwrap(),
    ]);
    let sweep_lines = lines_of(&sweep_csv);
    assert_eq!(sweep_lines[0], "count,mean,sd");
    assert_eq!(sweep_lines.len(), 5);
}

/// Runs every `sh` code block of a markdown file verbatim, in order, inside
/// `work`. Lines are joined across backslash continuations; comment and
/// blank lines are skipped; `cargo ...` lines are accepted but not rerun
/// (the binary under test is already built); everything else must be a
/// `suruq` invocation and must succeed. A ```toml block directly preceded
/// by prose ending in ``as `<name>`:`` is written to that file first, so
/// documented config files exist when later commands reference them.
fn run_documented_commands(markdown: &Path, work: &Path) {
    let text = fs::read_to_string(markdown).unwrap();
    let mut pending_file: Option<String> = None;
    let mut block_lang: Option<String> = None;
    let mut block = String::new();
    for line in text.lines() {
        if let Some(fence) = line.strip_prefix("```") {
            match block_lang.take() {
                None => block_lang = Some(fence.trim().to_string()),
                Some(lang) => {
                    match lang.as_str() {
                        "sh" => run_shell_block(&block, markdown, work),
                        "toml" => {
                            if let Some(name) = pending_file.take() {
                                fs::write(work.join(name), &block).unwrap();
                            }
                        }
                        _ => {}
                    }
                    block.clear();
                }
            }
            continue;
        }
        if block_lang.is_some() {
            block.push_str(line);
            block.push('\n');
        } else if let Some(start) = line.find("as `") {
            if let Some(len) = line[start + 4..].find("`:") {
                pending_file = Some(line[start + 4..start + 4 + len].to_string());
            }
        }
    }
    assert!(block_lang.is_none(), "unterminated code fence in {}", markdown.display());
}

fn run_shell_block(block: &str, markdown: &Path, work: &Path) {
    let mut joined = String::new();
    for line in block.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(head) = line.strip_suffix('\\') {
            joined.push_str(head);
            joined.push(' ');
            continue;
        }
        joined.push_str(line);
        let command = std::mem::take(&mut joined);
        if command.starts_with("cargo ") {
            continue;
        }
        let args: Vec<&str> = command.split_whitespace().collect();
        assert_eq!(
            args[0],
            "suruq",
            "{}: documented command is not runnable here: {command}",
            markdown.display()
        );
        let out = bin()
            .args(&args[1..])
            .current_dir(work)
            .output()
            .expect("failed to spawn suruq");
        assert!(
            out.status.success(),
            "{}: documented command failed: {command}\n{}",
            markdown.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(joined.is_empty(), "dangling line continuation in {}", markdown.display());
}

#[test]
fn walkthrough_documentation_commands_run_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    run_documented_commands(&repo_path("docs/reproduction.md"), dir.path());
}

#[test]
fn readme_commands_run_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    run_documented_commands(&repo_path("README.md"), dir.path());
}

#[test]
fn trained_models_are_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        "[train]\ngp_restarts = 1\ngp_max_iters = 30\ntimestamp = 0\n",
    )
    .unwrap();
    let mut models = Vec::new();
    for name in ["one.suruq", "two.suruq"] {
        let path = dir.path().join(name);
        run_ok(&[
            "train",
            "--quiet",
            "--config",
            config.to_str().unwrap(),
            "--data-inputs",
            repo_path("data/tutorial/inputs.csv").to_str().unwrap(),
            "--data-responses",
            repo_path("data/tutorial/responses.csv").to_str().unwrap(),
            "--time-grid",
            repo_path("data/tutorial/timegrid.csv").to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
        ]);
        models.push(fs::read(&path).unwrap());
    }
    assert_eq!(models[0], models[1]);

    let manifest = dir.path().join("one.suruq.manifest.txt");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("command = train"), "{text}");
    assert!(text.contains("input.responses.sha256 = "), "{text}");
    assert!(text.contains("output.model = "), "{text}");
}

#[test]
fn single_replication_collapses_confidence_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ishigami.csv");
    run_ok(&[
        "sa",
        "--quiet",
        "--builtin",
        "ishigami",
        "--n-base",
        "256",
        "--reps",
        "1",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines = lines_of(&out);
    assert_eq!(lines.len(), 1 + 3 * 2);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3], fields[4], "ci_low differs from the estimate: {line}");
        assert_eq!(fields[3], fields[5], "ci_high differs from the estimate: {line}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("design.csv");
    let config = dir.path().join("suruq.toml");
    fs::write(
        &config,
        format!("[sample]\nn = 4\nout = \"{}\"\n", out.display()),
    )
    .unwrap();
    run_ok(&["sample", "--quiet", "--config", config.to_str().unwrap()]);
    assert_eq!(lines_of(&out).len(), 5);

    run_ok(&[
        "sample",
        "--quiet",
        "--config",
        config.to_str().unwrap(),
        "--n",
        "6",
    ]);
    assert_eq!(lines_of(&out).len(), 7, "the --n flag should override the config value");
}

#[test]
fn helpful_errors_on_misuse() {
    let missing = run(&["train", "--quiet"]);
    assert!(!missing.status.success());
    assert!(
        stderr_of(&missing)
            .contains("missing required setting: pass --data-inputs or set it in the config file"),
        "{}",
        stderr_of(&missing)
    );

    let model = fixture_model();
    let bad_day = run(&[
        "uq",
        "--quiet",
        "--model",
        model.to_str().unwrap(),
        "--n",
        "64",
        "--report-days",
        "4.5",
        "--out",
        model.parent().unwrap().join("bad_day").to_str().unwrap(),
    ]);
    assert!(!bad_day.status.success());
    assert!(
        stderr_of(&bad_day).contains("not on the time grid"),
        "{}",
        stderr_of(&bad_day)
    );

    let zero_workers = run(&["sample", "--workers", "0", "--n", "4", "--out", "/tmp/x.csv"]);
    assert!(!zero_workers.status.success());
    assert!(stderr_of(&zero_workers).contains("workers"), "{}", stderr_of(&zero_workers));

    let both = run(&[
        "sa",
        "--quiet",
        "--builtin",
        "ishigami",
        "--model",
        model.to_str().unwrap(),
        "--n-base",
        "8",
        "--out",
        "/tmp/y.csv",
    ]);
    assert!(!both.status.success(), "--model plus --builtin should be rejected");
}
