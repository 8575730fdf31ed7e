use std::path::Path;

use pairwhiten::config::RunConfig;
use pairwhiten::results::{execute, load_results, render_summary, write_results};
use pairwhiten::synth::{generate, CohortSpec};
use pairwhiten::Error;

fn small_cohort(dir: &Path) {
    let spec = CohortSpec {
        n_subjects: 160,
        region_names: ["Amygdala", "Hippocampus", "Putamen", "Pallidum"]
            .map(String::from)
            .to_vec(),
        effect_table: vec![
            ("L_Hippocampus_GM".into(), -0.8),
            ("R_Pallidum_CSF".into(), 0.6),
        ],
        site_count: 3,
        seed: 4,
        ..CohortSpec::default()
    };
    generate(&spec)
        .unwrap()
        .write(&dir.join("cohort.csv"))
        .unwrap();
}

const CONFIG: &str = r#"
input = "cohort.csv"
out = "results"
seed = 3
folds = 4
inner_folds = 3
grid = [0.01, 0.1, 1.0]
top_k = 5

[confounds]
continuous = ["age"]
categorical = ["sex", "site"]

[alpha]
"left-right" = 0.5
"#;

fn config(dir: &Path) -> RunConfig {
    let path = dir.join("run.toml");
    std::fs::write(&path, CONFIG).unwrap();
    RunConfig::load(&path).unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn results_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    small_cohort(tmp.path());
    let cfg = config(tmp.path());
    let outcome = execute(&cfg).unwrap();
    write_results(&cfg.out, &outcome).unwrap();

    for file in [
        "run.json",
        "manifest.toml",
        "summary.txt",
        "paired_tests.json",
        "paired_tests.csv",
        "pair_correlations.csv",
        "correlations_before.csv",
        "correlations_after.csv",
        "whitened/report.json",
        "whitened/pipelines.json",
        "whitened/folds.csv",
        "whitened/weights.csv",
        "whitened/top5.csv",
        "baseline/report.json",
        "baseline/top5.csv",
    ] {
        assert!(cfg.out.join(file).is_file(), "{file} missing");
    }

    let loaded = load_results(&cfg.out).unwrap();
    assert_eq!(loaded.whitened, outcome.whitened);
    assert_eq!(loaded.baseline, outcome.baseline);
    assert_eq!(loaded.tests, outcome.tests);
    let summary = render_summary(&loaded);
    assert_eq!(summary, read(&cfg.out, "summary.txt"));
    assert_eq!(summary, render_summary(&load_results(&cfg.out).unwrap()));
    assert!(summary.contains("left-right: 8 pairs, alpha 0.5"));
    assert!(summary.contains("gm-csf: 8 pairs, alpha 1"));

    let folds = read(&cfg.out, "whitened/folds.csv");
    assert_eq!(folds.lines().count(), 5);
    // Pallidum is not a default correlation region: 12 columns remain.
    assert_eq!(read(&cfg.out, "correlations_after.csv").lines().count(), 13);

    // The last stage decorrelates its pairs fully on the training rows.
    let diag = read(&cfg.out, "pair_correlations.csv");
    let mut gm_csf = 0;
    for line in diag.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "gm-csf" {
            gm_csf += 1;
            let r_final: f64 = f[9].parse().unwrap();
            assert!(r_final.abs() < 1e-8, "{line}");
        }
    }
    assert_eq!(gm_csf, 4 * 8);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    small_cohort(tmp.path());
    let cfg = config(tmp.path());
    write_results(&cfg.out, &execute(&cfg).unwrap()).unwrap();
    let first: Vec<String> = [
        "whitened/report.json",
        "paired_tests.csv",
        "summary.txt",
        "whitened/weights.csv",
    ]
    .iter()
    .map(|f| read(&cfg.out, f))
    .collect();
    // Replacing an existing results directory is allowed.
    write_results(&cfg.out, &execute(&cfg).unwrap()).unwrap();
    let second: Vec<String> = [
        "whitened/report.json",
        "paired_tests.csv",
        "summary.txt",
        "whitened/weights.csv",
    ]
    .iter()
    .map(|f| read(&cfg.out, f))
    .collect();
    assert_eq!(first, second);
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("results."))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn foreign_and_locked_directories_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    small_cohort(tmp.path());
    let mut cfg = config(tmp.path());
    cfg.baseline = false;
    let outcome = execute(&cfg).unwrap();

    let foreign = tmp.path().join("photos");
    std::fs::create_dir(&foreign).unwrap();
    std::fs::write(foreign.join("cat.jpg"), b"meow").unwrap();
    assert!(write_results(&foreign, &outcome)
        .unwrap_err()
        .is_config_error());
    assert!(foreign.join("cat.jpg").is_file());

    std::fs::write(tmp.path().join("results.lock"), b"").unwrap();
    let e = write_results(&cfg.out, &outcome).unwrap_err();
    assert!(e.to_string().contains("locked"), "{e}");
    std::fs::remove_file(tmp.path().join("results.lock")).unwrap();

    write_results(&cfg.out, &outcome).unwrap();
    let loaded = load_results(&cfg.out).unwrap();
    assert!(loaded.baseline.is_none() && loaded.tests.is_empty());
    assert!(!cfg.out.join("baseline").exists());
}

#[test]
fn missing_files_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    match load_results(tmp.path()) {
        Err(Error::MissingResults { missing, .. }) => {
            assert_eq!(
                missing,
                ["run.json", "whitened/report.json", "paired_tests.json"]
            )
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn configuration_errors() {
    let tmp = tempfile::tempdir().unwrap();
    small_cohort(tmp.path());
    let base = tmp.path();
    let bad = |text: &str| RunConfig::parse(text, base).and_then(|c| execute(&c).map(|_| ()));
    for text in [
        "input = \"cohort.csv\"\nfolds = 1\n",
        "input = \"missing.csv\"\n",
        "input = \"cohort.csv\"\ngrid = [0.1, 0.0]\n",
        "input = \"cohort.csv\"\nbogus = 3\n",
        "input = \"cohort.csv\"\n[alpha]\n\"left-right\" = 1.5\n",
        "input = \"cohort.csv\"\n[alpha]\n\"nonexistent\" = 0.5\n",
        "input = \"cohort.csv\"\n[confounds]\ncontinuous = [\"height\"]\n",
    ] {
        let e = bad(text).unwrap_err();
        assert!(e.is_config_error(), "{text}: {e}");
    }
}
