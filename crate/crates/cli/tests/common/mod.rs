#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kgdial_cli::config::DataPaths;
use kgdial_cli::PipelineConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// All three fixture splits with small, fast model settings.
pub fn small_config(artifacts: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        data: DataPaths {
            train: fixture("incar_train.json"),
            dev: Some(fixture("incar_dev.json")),
            test: Some(fixture("incar_test.json")),
        },
        artifacts: artifacts.to_path_buf(),
        ..PipelineConfig::default()
    };
    cfg.embedding.dim = 12;
    cfg.embedding.epochs = 40;
    cfg.embedding.learning_rate = 0.05;
    cfg.model.epochs = 6;
    cfg.model.batch_size = 8;
    cfg.model.encoder_lr = 0.01;
    cfg.model.decoder_lr = 0.01;
    cfg.max_response_len = 20;
    cfg
}

/// Training split only, trained long enough to memorize it.
pub fn overfit_config(artifacts: &Path) -> PipelineConfig {
    let mut cfg = small_config(artifacts);
    cfg.data.dev = None;
    cfg.data.test = None;
    cfg.embedding.dim = 32;
    cfg.embedding.epochs = 100;
    cfg.model.epochs = 500;
    cfg.model.batch_size = 4;
    cfg.model.encoder_lr = 5e-3;
    cfg.model.decoder_lr = 5e-3;
    cfg
}

pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}
