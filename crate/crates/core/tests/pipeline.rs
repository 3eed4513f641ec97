use std::fs;
use std::path::Path;

use mtl_affinity::affinity::{AffinityMatrix, ScoreKind};
use mtl_affinity::commands::{cmd_generate, cmd_group, cmd_reproduce_tables, cmd_run};
use mtl_affinity::eval::{read_cost_csv, EvaluationReport, GainMatrix};
use mtl_affinity::experiment::{DatasetSource, ExperimentConfig};
use mtl_affinity::grouping::{is_valid_grouping, CandidateFamily};
use mtl_affinity::stats::KendallVariant;
use mtl_affinity::tasks::{generate_latent_factor_suite, LabelMap, SuiteConfig};
use mtl_affinity::train::TrainConfig;
use mtl_affinity::Error;

fn small_suite() -> SuiteConfig {
    SuiteConfig {
        n_tasks: 3,
        n_examples: 300,
        ..Default::default()
    }
}

fn small_run(out: &Path, scores: Vec<ScoreKind>) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Generate(small_suite()),
        hidden_widths: vec![16],
        latent_dim: 8,
        train: TrainConfig { epochs: 3, ..Default::default() },
        scores,
        out_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_inputs_and_labels() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_generate(&SuiteConfig::default(), &tmp.path().join("d")).unwrap();
    let files = listing(&tmp.path().join("d"));
    assert!(files.contains(&"inputs.csv".to_string()));
    assert_eq!(files.iter().filter(|f| f.starts_with("labels_")).count(), 3);
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig { seed: 5, ..small_suite() };
    for d in ["a", "b"] {
        cmd_generate(&cfg, &tmp.path().join(d)).unwrap();
    }
    for f in listing(&tmp.path().join("a")) {
        let a = fs::read(tmp.path().join("a").join(&f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(&f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn generate_rejects_bad_overlap_and_non_empty_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cmd_generate(&SuiteConfig { overlap: 1.5, ..small_suite() }, tmp.path()).unwrap_err();
    assert!(err.to_string().contains("overlap"), "{err}");
    fs::write(tmp.path().join("x"), "x").unwrap();
    assert!(matches!(
        cmd_generate(&small_suite(), tmp.path()),
        Err(Error::OutputExists(_))
    ));
}

#[test]
fn run_file_inventory_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run(&tmp.path().join("out"), vec![ScoreKind::Gs, ScoreKind::Li]);
    let results = cmd_run(&cfg).unwrap();
    let dir = tmp.path().join("out/seed_0");
    let files = listing(&dir);
    for f in ["gain.csv", "gs.csv", "li.csv", "level1.csv", "level2.csv", "level3.csv", "costs.csv", "manifest.json"] {
        assert!(files.contains(&f.to_string()), "{f} missing from {files:?}");
    }
    let r = &results[0];
    assert_eq!(GainMatrix::load_csv(dir.join("gain.csv")).unwrap(), r.gain);
    for s in &r.scores {
        let back = AffinityMatrix::load_csv(s.kind, dir.join(format!("{}.csv", s.kind.file_stem())), 0).unwrap();
        assert_eq!(&back, s);
    }
    let report = EvaluationReport::from_csvs(
        fs::File::open(dir.join("level1.csv")).unwrap(),
        fs::File::open(dir.join("level2.csv")).unwrap(),
        fs::File::open(dir.join("level3.csv")).unwrap(),
        r.report.kendall,
    )
    .unwrap();
    assert_eq!(report, r.report);
    assert_eq!(read_cost_csv(fs::File::open(dir.join("costs.csv")).unwrap()).unwrap(), r.costs);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], cfg.hash().unwrap());
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn duplicated_task_gs_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ds = generate_latent_factor_suite(&SuiteConfig { n_tasks: 1, n_examples: 300, ..Default::default() }).unwrap();
    ds.derive_task("task0", LabelMap::Identity, "copy").unwrap();
    ds.save(tmp.path().join("data")).unwrap();
    let mut cfg = small_run(&tmp.path().join("out"), vec![ScoreKind::Gs]);
    cfg.dataset = DatasetSource::Path(tmp.path().join("data"));
    cfg.display_gs_x100 = true;
    let r = cmd_run(&cfg).unwrap();
    let gs = r[0].scores[0].get("task0", "copy").unwrap().unwrap();
    assert!((gs - 1.0).abs() < 1e-9, "{gs}");
    let shown = AffinityMatrix::load_csv(ScoreKind::Gs, tmp.path().join("out/seed_0/gs.csv"), 0).unwrap();
    let x100 = shown.get("task0", "copy").unwrap().unwrap();
    assert!((x100 - 100.0).abs() < 1e-7, "{x100}");
}

#[test]
fn five_task_cost_table_uses_measured_c_s() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_run(&tmp.path().join("out"), vec![ScoreKind::Ias, ScoreKind::Gs, ScoreKind::Li]);
    cfg.dataset = DatasetSource::Generate(SuiteConfig { n_tasks: 5, d_latent: 15, n_examples: 200, ..Default::default() });
    cfg.train.epochs = 1;
    let r = &cmd_run(&cfg).unwrap()[0];
    assert!(r.c_s > 0);
    let rows: Vec<(String, u64)> = r.costs.iter().map(|c| (c.expression.clone(), c.multiply_adds)).collect();
    assert_eq!(
        rows,
        vec![
            ("n*c_s".to_string(), 5 * r.c_s),
            ("C(n,2)*2*c_s".to_string(), 20 * r.c_s),
            ("n*c_s + 2*C(n,2)*c_s".to_string(), 25 * r.c_s),
        ]
    );
}

#[test]
fn run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = vec![ScoreKind::Ias, ScoreKind::Rsa, ScoreKind::Gt];
    for d in ["a", "b"] {
        cmd_run(&small_run(&tmp.path().join(d), scores.clone())).unwrap();
    }
    for f in listing(&tmp.path().join("a/seed_0")) {
        if f == "manifest.json" {
            continue;
        }
        let a = fs::read(tmp.path().join("a/seed_0").join(&f)).unwrap();
        let b = fs::read(tmp.path().join("b/seed_0").join(&f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn config_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_run(tmp.path(), vec![]);
    assert!(matches!(cmd_run(&cfg), Err(Error::Configuration(_))));
    cfg.scores = vec![ScoreKind::Gs];
    cfg.seeds.clear();
    assert!(matches!(cmd_run(&cfg), Err(Error::Configuration(_))));
    cfg.seeds = vec![0];
    cfg.scores = vec![ScoreKind::Td];
    assert!(matches!(cmd_run(&cfg), Err(Error::Configuration(_))));
}

#[test]
fn config_json_round_trip_and_defaults() {
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"seeds": [1, 2], "scores": ["GS", "LI"]}"#).unwrap();
    assert_eq!(cfg.seeds, vec![1, 2]);
    assert_eq!(cfg.train.epochs, 50);
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn reproduce_tables_spot_cells() {
    let rep = cmd_reproduce_tables(KendallVariant::TauB, None).unwrap();
    let li = rep.report.scores.iter().find(|s| s.kind == ScoreKind::Li).unwrap();
    assert!((li.level1.per_target[3].unwrap() - 0.64).abs() <= 0.005);
    let edges = &li.level3[2];
    assert_eq!((edges.selected.as_str(), edges.delta), ("Normal", 0.0));
    let td_semseg = rep
        .checks
        .iter()
        .find(|c| c.level == 2 && c.kind == ScoreKind::Td && c.row == "SemSeg")
        .unwrap();
    assert!(td_semseg.tie_flagged && !td_semseg.is_failure());
}

#[test]
fn reproduce_tables_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_reproduce_tables(KendallVariant::TauB, Some(&tmp.path().join("t"))).unwrap();
    let files = listing(&tmp.path().join("t"));
    for f in ["checks.csv", "level1.csv", "level2.csv", "level3.csv", "report.json"] {
        assert!(files.contains(&f.to_string()), "{f}");
    }
}

fn bundled_gain(dir: &Path) -> std::path::PathBuf {
    let data = mtl_affinity::reference::BundledReferenceData::load().unwrap();
    let p = dir.join("gain.csv");
    data.gain.write_csv(&p).unwrap();
    p
}

#[test]
fn group_bundled_gains_at_five_units() {
    let tmp = tempfile::tempdir().unwrap();
    let family = CandidateFamily { stl_cost: 1.0, allow_mtl: true };
    let sol = cmd_group(&bundled_gain(tmp.path()), 5.0, family).unwrap();
    let tasks: Vec<String> = mtl_affinity::reference::TASKS.iter().map(|s| s.to_string()).collect();
    assert!(is_valid_grouping(&tasks, &sol.grouping).is_ok());
    assert!(sol.total >= 0.0);
    let json = serde_json::to_value(&sol).unwrap();
    assert!(json["grouping"]["models"][0]["training_tasks"].is_array());
    assert_eq!(json["grouping"]["budget"], 5.0);
}

#[test]
fn group_below_stl_floor_is_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let family = CandidateFamily { stl_cost: 1.0, allow_mtl: false };
    assert!(matches!(
        cmd_group(&bundled_gain(tmp.path()), 4.0, family),
        Err(Error::Infeasible { .. })
    ));
}

#[test]
fn td_reads_taxonomy_file() {
    let tmp = tempfile::tempdir().unwrap();
    let tax = tmp.path().join("tax.csv");
    fs::write(&tax, "with,task0,task1,task2\ntask0,,-2,-4\ntask1,-2,,-3\ntask2,-4,-3,\n").unwrap();
    let mut cfg = small_run(&tmp.path().join("out"), vec![ScoreKind::Td]);
    cfg.taxonomy = Some(tax);
    let r = &cmd_run(&cfg).unwrap()[0];
    assert_eq!(r.scores[0].get("task2", "task1").unwrap(), Some(-3.0));
    assert_eq!(r.costs[0].multiply_adds, 0);
}
