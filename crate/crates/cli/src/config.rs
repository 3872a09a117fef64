//! JSON experiment configs, one schema per command. `--seed` and `--out`
//! replace the top-level `seed` and `out` fields before parsing, and the
//! parsed config, with every default filled in, is what gets written to
//! `resolved_config.json`.

use std::path::{Path, PathBuf};

use cerberus_core::bench::LatencyConfig;
use cerberus_core::data::{GeneratorConfig, Split};
use cerberus_core::distill::{DistillConfig, DistillGrids, Strategy, TrainLoopConfig};
use cerberus_core::ensemble::CombinationSpace;
use cerberus_core::model::{CerberusConfig, EncoderConfig, PoolingSpace};
use cerberus_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub fn load<T: DeserializeOwned>(
    path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<T, Error> {
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path)?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| bad("top level must be a JSON object".into()))?;
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    }
    if let Some(o) = out {
        obj.insert("out".into(), o.to_string_lossy().into_owned().into());
    }
    serde_json::from_value(v).map_err(|e| bad(e.to_string()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    DeskBenchmark,
    ImbalanceStress,
}

/// Generator settings; absent fields come from the preset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub num_train: Option<usize>,
    #[serde(default)]
    pub num_dev: Option<usize>,
    #[serde(default)]
    pub num_test: Option<usize>,
    #[serde(default)]
    pub candidates_per_question: Option<usize>,
    #[serde(default)]
    pub positive_rate: Option<f64>,
    #[serde(default)]
    pub noise_rate: Option<f64>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub num_topics: Option<usize>,
}

impl GenerateConfig {
    pub fn generator(&self) -> GeneratorConfig {
        let base = match self.preset {
            Preset::Default => GeneratorConfig::new(self.seed),
            Preset::DeskBenchmark => GeneratorConfig::desk_benchmark(self.seed),
            Preset::ImbalanceStress => GeneratorConfig::imbalance_stress(self.seed),
        };
        GeneratorConfig {
            num_train: self.num_train.unwrap_or(base.num_train),
            num_dev: self.num_dev.unwrap_or(base.num_dev),
            num_test: self.num_test.unwrap_or(base.num_test),
            candidates_per_question: self
                .candidates_per_question
                .unwrap_or(base.candidates_per_question),
            positive_rate: self.positive_rate.unwrap_or(base.positive_rate),
            noise_rate: self.noise_rate.unwrap_or(base.noise_rate),
            vocab_size: self.vocab_size.unwrap_or(base.vocab_size),
            num_topics: self.num_topics.unwrap_or(base.num_topics),
            seed: self.seed,
        }
    }

    /// Same settings with every optional field made explicit.
    pub fn resolved(&self) -> Self {
        let g = self.generator();
        GenerateConfig {
            num_train: Some(g.num_train),
            num_dev: Some(g.num_dev),
            num_test: Some(g.num_test),
            candidates_per_question: Some(g.candidates_per_question),
            positive_rate: Some(g.positive_rate),
            noise_rate: Some(g.noise_rate),
            vocab_size: Some(g.vocab_size),
            num_topics: Some(g.num_topics),
            ..self.clone()
        }
    }
}

/// Encoder geometry; the vocabulary size comes from the dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_attention_heads: usize,
    pub feedforward_dim: usize,
    pub max_sequence_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        let d = EncoderConfig::desk(1);
        EncoderSpec {
            hidden_dim: d.hidden_dim,
            num_layers: d.num_layers,
            num_attention_heads: d.num_attention_heads,
            feedforward_dim: d.feedforward_dim,
            max_sequence_len: d.max_sequence_len,
            dropout_rate: d.dropout_rate,
        }
    }
}

impl EncoderSpec {
    pub fn build(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_attention_heads: self.num_attention_heads,
            feedforward_dim: self.feedforward_dim,
            max_sequence_len: self.max_sequence_len,
            dropout_rate: self.dropout_rate,
            ..EncoderConfig::desk(vocab_size)
        }
    }
}

/// Training-loop settings; the loop seed is the run seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSpec {
    pub max_iterations: usize,
    pub validate_every: usize,
    pub patience_validations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
}

impl Default for LoopSpec {
    fn default() -> Self {
        let d = TrainLoopConfig::desk(0);
        LoopSpec {
            max_iterations: d.max_iterations,
            validate_every: d.validate_every,
            patience_validations: d.patience_validations,
            lr: d.lr,
            batch_size: d.batch_size,
            warmup_fraction: d.warmup_fraction,
        }
    }
}

impl LoopSpec {
    pub fn build(&self, seed: u64) -> TrainLoopConfig {
        TrainLoopConfig {
            max_iterations: self.max_iterations,
            validate_every: self.validate_every,
            patience_validations: self.patience_validations,
            lr: self.lr,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            seed,
        }
    }
}

fn default_teacher_id() -> String {
    "teacher".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainTeacherConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Directory holding train/dev/test JSONL.
    pub data: PathBuf,
    #[serde(default = "default_teacher_id")]
    pub id: String,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub train: LoopSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CerberusSpec {
    pub body_depth: usize,
    pub num_heads: usize,
    pub head_depth: usize,
    #[serde(default)]
    pub pooling: PoolingSpace,
}

impl CerberusSpec {
    pub fn build(&self) -> CerberusConfig {
        CerberusConfig {
            pooling: self.pooling,
            ..CerberusConfig::new(self.body_depth, self.num_heads, self.head_depth)
        }
    }
}

/// A teacher given either as a checkpoint or as a logit cache written by
/// `train-teacher`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillCmdConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub strategy: Strategy,
    #[serde(default)]
    pub teachers: Vec<TeacherRef>,
    #[serde(default)]
    pub student: EncoderSpec,
    /// Start from this student checkpoint instead of a fresh one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// Split the student into a multi-head model before training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cerberus: Option<CerberusSpec>,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub train: LoopSpec,
    /// When present, `alpha`, `tau`, `lr` and `batch_size` are searched
    /// and the fixed values above are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<DistillGrids>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub id: String,
    pub checkpoint: PathBuf,
}

fn default_split() -> Split {
    Split::Dev
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub model: PathBuf,
    #[serde(default = "default_split")]
    pub split: Split,
    /// Teachers for the head/teacher agreement matrix.
    #[serde(default)]
    pub teachers: Vec<ModelRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleRef {
    pub id: String,
    pub members: Vec<PathBuf>,
}

fn default_question_len() -> usize {
    8
}
fn default_answer_len() -> usize {
    12
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub models: Vec<ModelRef>,
    /// Score-level ensembles timed as independent forwards of each member.
    #[serde(default)]
    pub ensembles: Vec<EnsembleRef>,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default = "default_question_len")]
    pub question_len: usize,
    #[serde(default = "default_answer_len")]
    pub answer_len: usize,
}

fn default_resolution() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub members: Vec<ModelRef>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub combination_space: CombinationSpace,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn flags_override_fields() {
        let (_d, p) = write(r#"{"seed": 1, "out": "a"}"#);
        let c: GenerateConfig = load(&p, Some(7), Some(Path::new("b"))).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.out, PathBuf::from("b"));
    }

    #[test]
    fn missing_seed_names_the_field() {
        let (_d, p) = write(r#"{"out": "a"}"#);
        let err = load::<GenerateConfig>(&p, None, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let (_d, p) = write(r#"{"seed": 1, "out": "a", "num_trian": 3}"#);
        assert!(load::<GenerateConfig>(&p, None, None).is_err());
    }

    #[test]
    fn resolved_generate_config_reparses_to_the_same_generator() {
        let (_d, p) = write(r#"{"seed": 4, "out": "a", "preset": "desk_benchmark", "num_dev": 9}"#);
        let c: GenerateConfig = load(&p, None, None).unwrap();
        let r = c.resolved();
        let again: GenerateConfig =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(again.generator(), c.generator());
        assert_eq!(c.generator().num_dev, 9);
        assert_eq!(c.generator().positive_rate, 0.1);
    }
}
