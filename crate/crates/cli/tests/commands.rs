//! End-to-end runs of each subcommand on small synthetic workspaces.

mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::process::Command as Process;

use common::{config, manifest, read_csv, workspace, ModelSpec};
use latent_cli::config::{JobConfig, MnlogitConfig};
use latent_cli::{execute, Command, EXIT_CONFIG, EXIT_JOB_FAILED, EXIT_OK};
use latent_core::align::Method;
use latent_core::pairing::Condition;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn three_models() -> Vec<ModelSpec> {
    vec![ModelSpec::new("a", 8, 1, 0.1), ModelSpec::new("b", 10, 2, 0.1), ModelSpec::new("c", 8, 3, 0.1)]
}

#[test]
fn align_sweep_emits_one_row_per_pair_method_and_k() {
    let dir = tempfile::tempdir().unwrap();
    let tables = workspace(dir.path(), &three_models(), &["toy"], 400, 200, 6);
    let mut cfg = config(dir.path().join("out"), tables);
    cfg.align.pairs = vec![["a".into(), "b".into()], ["b".into(), "c".into()]];
    cfg.align.k_grid = vec![1, 2, 3, 4, 5];
    let s = execute(Command::AlignSweep, &cfg).unwrap();
    assert_eq!((s.jobs_total, s.jobs_failed, s.exit_code()), (30, 0, EXIT_OK));

    let (header, rows) = read_csv(&cfg.out.join("align_sweep.csv"));
    assert_eq!(header, ["dataset", "source", "target", "method", "k", "mse", "accuracy", "precision", "recall", "f1", "n_test"]);
    assert_eq!(rows.len(), 30);
    // sorted by (dataset, source, target, method, k) with numeric k
    let keys: Vec<_> = rows.iter().map(|r| (r[1].clone(), r[2].clone(), r[3].clone(), r[4].parse::<usize>().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for r in &rows {
        let mse: f64 = r[5].parse().unwrap();
        let acc: f64 = r[6].parse().unwrap();
        assert!(mse.is_finite() && mse >= 0.0 && (0.0..=1.0).contains(&acc), "{r:?}");
        assert_eq!(r[10], "200");
    }
    let m = manifest(&s.manifest);
    assert_eq!(m["command"], "align-sweep");
    assert_eq!(m["config_hash"], cfg.hash());
    assert_eq!(m["outputs"][0], "align_sweep.csv");
}

#[test]
fn identity_pair_reconstructs_exactly_and_matches_native_probe() {
    let dir = tempfile::tempdir().unwrap();
    // same read-out and same noise stream: bit-identical embeddings
    let models = [ModelSpec::new("a", 6, 9, 0.2), ModelSpec::new("a_copy", 6, 9, 0.2)];
    let tables = workspace(dir.path(), &models, &["toy"], 300, 150, 6);
    let mut cfg = config(dir.path().join("out"), tables);
    cfg.align.pairs = vec![["a".into(), "a_copy".into()]];
    cfg.align.methods = vec![Method::Linear];
    cfg.align.k_grid = vec![6];
    assert_eq!(execute(Command::AlignSweep, &cfg).unwrap().jobs_failed, 0);
    assert_eq!(execute(Command::Eval, &cfg).unwrap().jobs_failed, 0);

    let (_, sweep) = read_csv(&cfg.out.join("align_sweep.csv"));
    let (eval_header, eval) = read_csv(&cfg.out.join("eval.csv"));
    assert_eq!(eval_header, ["dataset", "model_name", "accuracy", "precision", "recall", "f1", "n_test"]);
    let upper = eval.iter().find(|r| r[1] == "a_copy").unwrap();
    let mse: f64 = sweep[0][5].parse().unwrap();
    assert!(mse < 1e-12, "mse {mse}");
    assert_eq!(sweep[0][6], upper[2], "accuracy equals the native upper bound");
    assert_eq!(sweep[0][9], upper[5]);
}

#[test]
fn metrics_give_ten_rows_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = three_models();
    models.push(ModelSpec::new("d", 5, 4, 0.3));
    let tables = workspace(dir.path(), &models, &["toy"], 120, 10, 6);
    let cfg = config(dir.path().join("out"), tables);
    let s = execute(Command::Metrics, &cfg).unwrap();
    assert_eq!((s.jobs_total, s.jobs_failed), (4, 0));
    let (header, rows) = read_csv(&cfg.out.join("metrics.csv"));
    assert_eq!(header, ["model_name", "dataset", "metric", "value"]);
    assert_eq!(rows.len(), 40);
    for m in ["a", "b", "c", "d"] {
        assert_eq!(rows.iter().filter(|r| r[0] == m).count(), 10);
    }
    let k90 = rows.iter().find(|r| r[0] == "d" && r[2] == "k90").unwrap();
    assert!((1.0..=5.0).contains(&k90[3].parse::<f64>().unwrap()));
}

#[test]
fn graph_signatures_are_tagged_with_k() {
    let dir = tempfile::tempdir().unwrap();
    let tables = workspace(dir.path(), &three_models()[..2], &["toy"], 150, 10, 6);
    let cfg = config(dir.path().join("out"), tables);
    assert_eq!(cfg.graph.k, 10);
    let s = execute(Command::GraphSig, &cfg).unwrap();
    assert_eq!(s.jobs_failed, 0);
    let (header, rows) = read_csv(&cfg.out.join("graph_signatures.csv"));
    assert_eq!(header, ["model_name", "dataset", "signature", "value", "built_with_k"]);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[4] == "10"));
}

#[test]
fn match_reports_each_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let tables = workspace(dir.path(), &three_models()[..2], &["toy"], 200, 10, 6);
    let mut cfg = config(dir.path().join("out"), tables);
    cfg.matching.pairs = vec![["a".into(), "b".into()]];
    cfg.matching.kappa = 4;
    let s = execute(Command::Match, &cfg).unwrap();
    assert_eq!(s.jobs_failed, 0, "{:?}", manifest(&s.manifest));
    let (_, rows) = read_csv(&cfg.out.join("match.csv"));
    let by_scheme: BTreeMap<_, _> = rows.iter().map(|r| (r[3].clone(), r.clone())).collect();
    assert_eq!(by_scheme.keys().collect::<Vec<_>>(), ["hungarian", "injected", "spectral"]);
    assert_eq!(by_scheme["injected"][5], "1");
    assert_eq!(by_scheme["hungarian"][7], "4");
    let mean: f64 = by_scheme["hungarian"][5].parse().unwrap();
    assert!((0.0..=1.0).contains(&mean));
    assert!(!by_scheme["spectral"][9].is_empty());
}

#[test]
fn missing_table_fails_only_its_job() {
    let dir = tempfile::tempdir().unwrap();
    let tables = workspace(dir.path(), &three_models()[..2], &["toy"], 100, 10, 6);
    let mut cfg = config(dir.path().join("out"), tables);
    cfg.models = vec!["a".into(), "b".into(), "ghost".into()];
    let s = execute(Command::Metrics, &cfg).unwrap();
    assert_eq!((s.jobs_total, s.jobs_failed, s.exit_code()), (3, 1, EXIT_JOB_FAILED));
    let (_, rows) = read_csv(&cfg.out.join("metrics.csv"));
    assert_eq!(rows.len(), 20);
    let m = manifest(&s.manifest);
    assert_eq!(m["failures"][0]["job"], "toy/ghost");
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = JobConfig::default();
    cfg.align.k_grid = vec![3, 2];
    let e = execute(Command::AlignSweep, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_CONFIG);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_latent");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"x\"\n").unwrap();
    let st = Process::new(bin).args(["metrics", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_CONFIG));

    let tables = workspace(dir.path(), &three_models()[..1], &["toy"], 60, 10, 4);
    let table = &tables[0];
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        format!("tables = [{{ model = \"a\", dataset = \"toy\", split = \"train\", path = {:?} }}]\n", table.path.file_name().unwrap()),
    )
    .unwrap();
    let out = dir.path().join("cli_out");
    let st = Process::new(bin).args(["metrics", "--format", "json", "--jobs", "2", "--config"]).arg(&good).arg("--out").arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&st.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 10);
    assert!(out.join("metrics_manifest.json").exists());
}

/// Registry of `families` model pairs `f<i>.small`/`f<i>.base` that differ
/// only in size, with a macro family, parameter count and latent width.
fn scale_registry(families: usize) -> String {
    let mut s = String::from("model_name,family,macro_family,size,pretrain_dataset,num_parameters,latent_dim\n");
    for f in 0..families {
        let macro_family = if f % 2 == 0 { "conv" } else { "vit" };
        writeln!(s, "f{f}.small,f{f},{macro_family},small,imagenet1k,{},64", 1000 + f).unwrap();
        writeln!(s, "f{f}.base,f{f},{macro_family},base,imagenet1k,{},128", 5000 + f).unwrap();
    }
    s
}

#[test]
fn pairs_lists_matched_models() {
    let dir = tempfile::tempdir().unwrap();
    let reg = dir.path().join("registry.csv");
    std::fs::write(&reg, scale_registry(3)).unwrap();
    let mut cfg = config(dir.path().join("out"), vec![]);
    cfg.registry = Some(reg);
    cfg.regress.conditions = vec![Condition::ModelScale, Condition::Augmentation];
    let s = execute(Command::Pairs, &cfg).unwrap();
    // no augmentation contrast exists in this registry
    assert_eq!((s.jobs_total, s.jobs_failed), (2, 1));
    let (_, rows) = read_csv(&cfg.out.join("pairs.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], ["model_scale", "f0.small", "f0.base", "f0"]);
}

#[test]
fn regress_recovers_planted_effect() {
    let dir = tempfile::tempdir().unwrap();
    let families = 250;
    let reg = dir.path().join("registry.csv");
    std::fs::write(&reg, scale_registry(families)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let datasets = ["d1", "d2"];
    let family_effect: Vec<f64> = (0..families).map(|_| 0.3 * normal()).collect();
    let mut controls = Vec::new();
    let mut treated_noise = Vec::new();
    for f in 0..families {
        for (di, _) in datasets.iter().enumerate() {
            controls.push(family_effect[f] + 0.5 * di as f64 + normal());
            treated_noise.push(family_effect[f] + 0.5 * di as f64 + normal());
        }
    }
    // the planted shift is one pooled control sd
    let sigma = latent_core::stats::sample_sd(&controls).unwrap();
    let mut csv = String::from("model_name,dataset,metric,value\n");
    for f in 0..families {
        for (di, d) in datasets.iter().enumerate() {
            let i = f * datasets.len() + di;
            writeln!(csv, "f{f}.small,{d},y,{}", controls[i]).unwrap();
            writeln!(csv, "f{f}.base,{d},y,{}", treated_noise[i] + sigma).unwrap();
            // only the informative predictor below tracks the macro family
            let informative = if f % 2 == 0 { 0.0 } else { 1.5 } + normal();
            writeln!(csv, "f{f}.small,{d},signal,{informative}").unwrap();
            writeln!(csv, "f{f}.small,{d},noise,{}", normal()).unwrap();
        }
    }
    let input = dir.path().join("long.csv");
    std::fs::write(&input, csv).unwrap();

    let mut cfg = config(dir.path().join("out"), vec![]);
    cfg.registry = Some(reg);
    cfg.regress.inputs = vec![input];
    cfg.regress.conditions = vec![Condition::ModelScale];
    cfg.regress.metrics = vec!["y".into()];
    cfg.regress.mnlogit = Some(MnlogitConfig {
        target: "macro_family".into(),
        predictors: vec!["signal".into(), "noise".into()],
        registry_controls: vec![],
        dataset: Some("d1".into()),
        max_iter: 100,
        tol: 1e-10,
        standardize: true,
    });
    let s = execute(Command::Regress, &cfg).unwrap();
    assert_eq!(s.jobs_failed, 0, "{:?}", manifest(&s.manifest));

    let (header, rows) = read_csv(&cfg.out.join("forest.csv"));
    assert_eq!(header, ["condition", "metric", "standardized_beta", "ci_low", "ci_high", "p", "n_obs"]);
    let beta: f64 = rows[0][2].parse().unwrap();
    let p: f64 = rows[0][5].parse().unwrap();
    assert!((0.8..=1.2).contains(&beta), "beta {beta}");
    assert!(p < 0.05);
    assert_eq!(rows[0][6], (families * 2 * datasets.len()).to_string());

    let (_, lr) = read_csv(&cfg.out.join("lr_tests.csv"));
    let p_of = |v: &str| lr.iter().find(|r| r[0] == v).unwrap()[3].parse::<f64>().unwrap();
    assert!(p_of("signal") < 0.01);
    assert_eq!(lr[0][4], families.to_string());
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("job.toml");
    std::fs::write(&p, block.replace("  # ...\n", "")).unwrap();
    let cfg = JobConfig::load(&p).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.regress.conditions.len(), 5);
    assert_eq!(cfg.regress.mnlogit.unwrap().dataset.as_deref(), Some("cifar10"));
}
