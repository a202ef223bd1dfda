use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use kgdial::cooccur::{CooccurWeighting, RelationMode};
use kgdial::{JointTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Model variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    S2sGlove,
    S2sJe,
    S2sIntentJe,
    S2sIntentGlove,
    S2sIntentJeEl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::S2sGlove,
        Variant::S2sJe,
        Variant::S2sIntentJe,
        Variant::S2sIntentGlove,
        Variant::S2sIntentJeEl,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::S2sGlove => "S2S+glove",
            Variant::S2sJe => "S2S+JE",
            Variant::S2sIntentJe => "S2S+Intent+JE",
            Variant::S2sIntentGlove => "S2S+Intent+glove",
            Variant::S2sIntentJeEl => "S2S+Intent+JE+EL",
        }
    }

    /// File-name friendly form of the tag.
    pub fn slug(self) -> String {
        self.tag().to_ascii_lowercase().replace('+', "-")
    }

    /// Joint text/KG embeddings rather than plain GloVe (`lambda = 0`).
    pub fn joint_embeddings(self) -> bool {
        !matches!(self, Variant::S2sGlove | Variant::S2sIntentGlove)
    }

    pub fn intent_loss(self) -> bool {
        !matches!(self, Variant::S2sGlove | Variant::S2sJe)
    }

    pub fn entity_loss(self) -> bool {
        self == Variant::S2sIntentJeEl
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "+");
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().to_ascii_lowercase() == norm)
            .with_context(|| {
                let tags: Vec<&str> = Variant::ALL.iter().map(|v| v.tag()).collect();
                format!("unknown variant {s:?}; expected one of {}", tags.join(", "))
            })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train: PathBuf::from("data/kvret_train_public.json"),
            dev: Some(PathBuf::from("data/kvret_dev_public.json")),
            test: Some(PathBuf::from("data/kvret_test_public.json")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurSettings {
    pub window: usize,
    pub weighting: CooccurWeighting,
    pub relation_mode: RelationMode,
}

impl Default for CooccurSettings {
    fn default() -> Self {
        CooccurSettings {
            window: 15,
            weighting: CooccurWeighting::Flat,
            relation_mode: RelationMode::ContextCount,
        }
    }
}

/// Full pipeline configuration. Every field has a default, so an empty JSON
/// object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub artifacts: PathBuf,
    /// Overrides the embedding and model seeds.
    pub seed: u64,
    pub variant: Variant,
    pub kvl: bool,
    pub min_count: usize,
    pub cooccur: CooccurSettings,
    pub embedding: JointTrainConfig,
    pub model: TrainConfig,
    pub max_response_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataPaths::default(),
            artifacts: PathBuf::from("artifacts"),
            seed: 42,
            variant: Variant::S2sIntentJeEl,
            kvl: true,
            min_count: 1,
            cooccur: CooccurSettings::default(),
            embedding: JointTrainConfig::default(),
            model: TrainConfig::default(),
            max_response_len: 60,
        }
    }
}

impl PipelineConfig {
    /// Reads a config; relative data and artifact paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        if let Some(p) = self.data.dev.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.test.as_mut() {
            fix(p);
        }
        fix(&mut self.artifacts);
    }

    /// Propagates the top-level seed and checks every section.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        self.embedding.seed = self.seed;
        self.model.seed = self.seed;
        if self.cooccur.window == 0 {
            bail!("cooccur.window must be at least 1");
        }
        if self.max_response_len == 0 {
            bail!("max_response_len must be at least 1");
        }
        self.embedding.validate()?;
        self.model.validate()?;
        Ok(self)
    }

    /// Model training config with the variant's loss masking applied.
    pub fn model_config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            intent_loss: variant.intent_loss(),
            entity_loss: variant.entity_loss(),
            ..self.model.clone()
        }
    }

    /// Embedding config for the variant: `lambda = 0` for GloVe variants.
    pub fn embedding_config(&self, joint: bool) -> JointTrainConfig {
        JointTrainConfig {
            lambda: if joint { self.embedding.lambda } else { 0.0 },
            ..self.embedding.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            assert_eq!(v.slug().parse::<Variant>().unwrap(), v);
        }
        assert!("S2S+magic".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_flags() {
        assert!(!Variant::S2sGlove.joint_embeddings() && !Variant::S2sGlove.intent_loss());
        assert!(Variant::S2sIntentGlove.intent_loss() && !Variant::S2sIntentGlove.joint_embeddings());
        assert!(Variant::S2sIntentJeEl.entity_loss());
        assert_eq!(Variant::ALL.iter().filter(|v| v.entity_loss()).count(), 1);
    }

    #[test]
    fn empty_config_has_published_defaults() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.embedding.lambda, 1e4);
        assert_eq!(cfg.embedding.dim, 300);
        assert_eq!(cfg.embedding.epochs, 500);
        assert_eq!(cfg.model.epochs, 1000);
        assert_eq!(cfg.model.batch_size, 128);
        assert_eq!(cfg.model.grad_clip_norm, 50.0);
        assert_eq!(cfg.cooccur.window, 15);
    }

    #[test]
    fn masking_follows_variant() {
        let cfg = PipelineConfig::default();
        let m = cfg.model_config(Variant::S2sJe);
        assert!(!m.intent_loss && !m.entity_loss);
        assert_eq!(cfg.embedding_config(false).lambda, 0.0);
        assert_eq!(cfg.embedding_config(true).lambda, 1e4);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"windw": 3}"#).is_err());
    }
}
