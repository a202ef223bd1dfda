mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Instant;

use common::{small_config, write_config};
use kgdial_cli::{PipelineConfig, Variant};

fn kgdl(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgdl"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("KGDL_LOG", "warn")
        .output()
        .expect("kgdl runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup(cfg: &PipelineConfig, dir: &Path) -> std::path::PathBuf {
    let config = write_config(dir, cfg);
    ok(&kgdl(&config, &["preprocess"]));
    ok(&kgdl(&config, &["cooccur"]));
    config
}

fn read_csv_column(path: &Path, column: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn preprocess_prints_statistics_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = write_config(tmp.path(), &cfg);
    let stdout = ok(&kgdl(&config, &["preprocess"]));
    let train_row = stdout.lines().find(|l| l.starts_with("train")).unwrap();
    assert_eq!(train_row.split_whitespace().nth(1), Some("10"));
    assert!(stdout.lines().any(|l| l.starts_with("dev") && l.split_whitespace().nth(1) == Some("3")));
    let first = artifact_bytes(&cfg.artifacts);
    ok(&kgdl(&config, &["preprocess"]));
    assert_eq!(first, artifact_bytes(&cfg.artifacts));
    assert!(first.iter().any(|(n, _)| n == "vocab.tsv"));
}

#[test]
fn missing_dataset_is_input_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("art"));
    cfg.data.train = tmp.path().join("nowhere/train.json");
    let config = write_config(tmp.path(), &cfg);
    let out = kgdl(&config, &["preprocess"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/train.json"));
}

#[test]
fn malformed_config_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.json");
    std::fs::write(&path, r#"{"model": {"batch_size": 0}}"#).unwrap();
    assert_eq!(kgdl(&path, &["preprocess"]).status.code(), Some(2));
    std::fs::write(&path, r#"{"windw": 3}"#).unwrap();
    assert_eq!(kgdl(&path, &["preprocess"]).status.code(), Some(2));
    let out = kgdl(&path, &["--variant", "S2S+nothing", "preprocess"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_without_inputs_report_missing_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = write_config(tmp.path(), &cfg);
    for stage in ["cooccur", "train-embeddings", "train-model", "evaluate", "chat"] {
        let out = kgdl(&config, &[stage]);
        assert_eq!(out.status.code(), Some(3), "{stage}");
    }
    ok(&kgdl(&config, &["preprocess"]));
    ok(&kgdl(&config, &["cooccur"]));
    let out = kgdl(&config, &["evaluate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_s2s-intent-je-el.kgdl"));
}

#[test]
fn default_embedding_config_echo_and_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("art"));
    cfg.embedding = PipelineConfig::default().embedding;
    let config = setup(&cfg, tmp.path());
    let start = Instant::now();
    let stdout = ok(&kgdl(&config, &["train-embeddings"]));
    assert!(start.elapsed().as_secs() < 60);
    assert!(stdout.contains("lambda=10000 dim=300 epochs=500"), "{stdout}");
}

#[test]
fn glove_variant_has_zero_kg_term() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = setup(&cfg, tmp.path());
    let stdout = ok(&kgdl(&config, &["--variant", "S2S+glove", "train-embeddings"]));
    assert!(stdout.contains("lambda=0 "), "{stdout}");
    let j_s = read_csv_column(&cfg.artifacts.join("embed_log_glove.csv"), "J_S");
    assert_eq!(j_s.len(), cfg.embedding.epochs);
    assert!(j_s.iter().all(|&v| v == 0.0));
    let joint = ok(&kgdl(&config, &["train-embeddings"]));
    assert!(joint.contains("lambda=10000 "));
    let j_s = read_csv_column(&cfg.artifacts.join("embed_log_je.csv"), "J_S");
    assert!(j_s.iter().any(|&v| v > 0.0));
}

#[test]
fn variant_masking_zeroes_inactive_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = setup(&cfg, tmp.path());
    ok(&kgdl(&config, &["train-embeddings"]));
    ok(&kgdl(&config, &["--variant", "S2S+glove", "train-embeddings"]));
    let expect = |v: Variant| (v.intent_loss(), v.entity_loss());
    for variant in Variant::ALL {
        ok(&kgdl(&config, &["--variant", variant.tag(), "train-model"]));
        let log = cfg.artifacts.join(format!("train_log_{}.csv", variant.slug()));
        let intent = read_csv_column(&log, "intent_loss");
        let entity = read_csv_column(&log, "entity_loss");
        assert_eq!(intent.len(), cfg.model.epochs);
        let (has_intent, has_entity) = expect(variant);
        assert_eq!(intent.iter().all(|&v| v == 0.0), !has_intent, "{variant} intent");
        assert_eq!(entity.iter().all(|&v| v == 0.0), !has_entity, "{variant} entity");
    }
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = setup(&cfg, tmp.path());
    ok(&kgdl(&config, &["train-embeddings"]));
    ok(&kgdl(&config, &["train-model"]));
    let model = cfg.artifacts.join("model_s2s-intent-je-el.kgdl");
    let first = std::fs::read(&model).unwrap();
    ok(&kgdl(&config, &["train-model"]));
    assert_eq!(first, std::fs::read(&model).unwrap());
    assert!(first.starts_with(b"KGDL1"));
    ok(&kgdl(&config, &["--seed", "7", "train-model"]));
    assert_ne!(first, std::fs::read(&model).unwrap());
}

#[test]
fn out_flag_redirects_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = write_config(tmp.path(), &cfg);
    let other = tmp.path().join("elsewhere");
    ok(&kgdl(&config, &["--out", other.to_str().unwrap(), "preprocess"]));
    assert!(other.join("vocab.tsv").is_file());
    assert!(!cfg.artifacts.exists());
}

#[test]
fn evaluate_writes_reports_and_ablation_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = setup(&cfg, tmp.path());
    ok(&kgdl(&config, &["train-embeddings"]));
    ok(&kgdl(&config, &["--variant", "S2S+glove", "train-embeddings"]));
    for variant in ["S2S+Intent+JE+EL", "S2S+glove"] {
        ok(&kgdl(&config, &["--variant", variant, "train-model"]));
        let stdout = ok(&kgdl(&config, &["--variant", variant, "evaluate"]));
        assert!(stdout.contains("BLEU") && stdout.contains("with KVL"), "{stdout}");
    }

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.artifacts.join("report_s2s-intent-je-el_kvl.json")).unwrap()).unwrap();
    for (key, check) in [
        ("model_tag", serde_json::Value::is_string as fn(&serde_json::Value) -> bool),
        ("use_kvl", serde_json::Value::is_boolean),
        ("bleu", serde_json::Value::is_f64),
        ("embedding_average", serde_json::Value::is_f64),
        ("vector_extrema", serde_json::Value::is_f64),
        ("greedy_matching", serde_json::Value::is_f64),
        ("examples", serde_json::Value::is_u64),
        ("all_oov_examples", serde_json::Value::is_u64),
        ("kvl_replacements", serde_json::Value::is_u64),
        ("bleu_detail", serde_json::Value::is_object),
        ("config_fingerprint", serde_json::Value::is_string),
        ("tokenizer_fingerprint", serde_json::Value::is_string),
        ("per_example", serde_json::Value::is_array),
    ] {
        assert!(check(&report[key]), "field {key}: {}", report[key]);
    }
    assert_eq!(report["use_kvl"], true);
    assert_eq!(report["model_tag"], "S2S+Intent+JE+EL");
    assert_eq!(report["examples"], 3);
    assert_eq!(report["per_example"].as_array().unwrap().len(), 3);
    let bleu = report["bleu"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&bleu));

    let rows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.artifacts.join("ablation.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["model_tag"], "S2S+glove");
    assert!(rows.iter().all(|r| r["bleu"].is_f64() && r["bleu_kvl"].is_f64()));
    let table = std::fs::read_to_string(cfg.artifacts.join("ablation.txt")).unwrap();
    assert!(table.starts_with("Model"));
    assert_eq!(table.lines().count(), 4);

    let decisions = std::fs::read_to_string(cfg.artifacts.join("kvl_decisions_s2s-intent-je-el.jsonl")).unwrap();
    for line in decisions.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["decision"]["reason"].is_string());
    }

    ok(&kgdl(&config, &["--kvl", "off", "evaluate"]));
    let rows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.artifacts.join("ablation.json")).unwrap()).unwrap();
    assert!(rows[1]["bleu_kvl"].is_null());
}

#[test]
fn sanity_mode_scores_one_hundred() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = write_config(tmp.path(), &cfg);
    ok(&kgdl(&config, &["preprocess"]));
    let stdout = ok(&kgdl(&config, &["evaluate", "--sanity"]));
    assert!(stdout.contains("BLEU 100.00"), "{stdout}");
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("art"));
    cfg.model.encoder_lr = 1e250;
    cfg.model.decoder_lr = 1e250;
    cfg.model.grad_clip_norm = 1e300;
    let config = setup(&cfg, tmp.path());
    ok(&kgdl(&config, &["train-embeddings"]));
    let out = kgdl(&config, &["train-model"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn chat_repl_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("art"));
    let config = setup(&cfg, tmp.path());
    ok(&kgdl(&config, &["train-embeddings"]));
    ok(&kgdl(&config, &["train-model"]));
    let mut child = Command::new(env!("CARGO_BIN_EXE_kgdl"))
        .arg("--config")
        .arg(&config)
        .arg("chat")
        .env("KGDL_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"/intent\nwhere is the nearest gas station ?\n/intent\n/bogus\nzzzqx blorp\n/reset\n/intent\n/scenario test 1\n/kb\n/quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let text = ok(&out);
    assert!(text.contains("scenario: train 0"));
    assert_eq!(text.matches("no context yet").count(), 2, "{text}");
    assert_eq!(text.matches("assistant: ").count(), 2);
    for intent in ["schedule\t", "weather\t", "navigate\t"] {
        assert!(text.contains(intent), "{text}");
    }
    assert!(text.contains("unknown command /bogus"));
    assert!(text.contains("note: unknown words replaced by <unk>: zzzqx blorp"));
    assert!(text.contains("context cleared"));
    assert!(text.contains("scenario: test 1"));
    assert!(text.contains("triples"));
}
