//! TOML run configuration: data paths plus every training section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::RelationVocab;
use crate::error::{Error, Result};
use crate::train::{AblationFlags, JointConfig, ModelConfig, NegativeConfig, TrainConfig};
use crate::train::config::{CotrainStage, GraphStage, TextStage};

/// Input and output files. Relative paths resolve against the directory of
/// the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kg: Option<PathBuf>,
    pub bags: Option<PathBuf>,
    pub cooc: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub valid_bags: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_bags: Option<PathBuf>,
    /// Pretrained models for `cotrain`; missing ones are trained in process.
    pub text_checkpoint: Option<PathBuf>,
    pub graph_checkpoint: Option<PathBuf>,
    /// Model read by `eval`.
    pub checkpoint: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
}

impl Paths {
    fn entries_mut(&mut self) -> [&mut Option<PathBuf>; 12] {
        [
            &mut self.kg,
            &mut self.bags,
            &mut self.cooc,
            &mut self.embeddings,
            &mut self.valid,
            &mut self.valid_bags,
            &mut self.test,
            &mut self.test_bags,
            &mut self.text_checkpoint,
            &mut self.graph_checkpoint,
            &mut self.checkpoint,
            &mut self.dictionary,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub scored: Vec<String>,
    pub na: String,
    pub reverses: Vec<(String, String)>,
    pub symmetric: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            scored: vec!["DDx".into(), "MC".into(), "MBC".into()],
            na: "NA".into(),
            reverses: vec![("MC".into(), "MBC".into())],
            symmetric: vec!["DDx".into()],
        }
    }
}

impl VocabConfig {
    pub fn build(&self) -> Result<RelationVocab> {
        let mut v = RelationVocab::new(self.scored.clone(), self.na.clone())?;
        for (a, b) in &self.reverses {
            v = v.with_reverse(a, b)?;
        }
        for s in &self.symmetric {
            v = v.with_symmetric(s)?;
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub text: TextStage,
    pub graph: GraphStage,
    pub cotrain: CotrainStage,
    pub joint: JointConfig,
    pub negatives: NegativeConfig,
    pub ablation: AblationFlags,
}

impl RunConfig {
    /// Parses TOML; unknown keys anywhere are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.train().validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            config.resolve(dir);
        }
        Ok(config)
    }

    /// Makes relative paths relative to `dir`.
    pub fn resolve(&mut self, dir: &Path) {
        for p in self.paths.entries_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            model: self.model.clone(),
            text: self.text.clone(),
            graph: self.graph.clone(),
            cotrain: self.cotrain.clone(),
            joint: self.joint.clone(),
            negatives: self.negatives.clone(),
            ablation: self.ablation.clone(),
        }
    }

    /// The configured path under `paths.<key>`, or a usage error naming the key.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "kg" => &self.paths.kg,
            "bags" => &self.paths.bags,
            "cooc" => &self.paths.cooc,
            "embeddings" => &self.paths.embeddings,
            "valid" => &self.paths.valid,
            "valid_bags" => &self.paths.valid_bags,
            "test" => &self.paths.test,
            "test_bags" => &self.paths.test_bags,
            "text_checkpoint" => &self.paths.text_checkpoint,
            "graph_checkpoint" => &self.paths.graph_checkpoint,
            "checkpoint" => &self.paths.checkpoint,
            "dictionary" => &self.paths.dictionary,
            other => return Err(Error::Config(format!("unknown path key `paths.{other}`"))),
        };
        p.as_deref().ok_or_else(|| Error::Config(format!("missing required path `paths.{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_fail_before_anything_else() {
        assert!(matches!(RunConfig::parse("[paths]\nkgg = \"x\"\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[text]\nlearning_rate = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn omitted_learning_rates_take_stage_defaults() {
        let c = RunConfig::parse("[text]\nepochs = 2\n[graph]\nbatch_size = 8\n").unwrap();
        assert_eq!(c.text.lr, 1e-5);
        assert_eq!(c.cotrain.lr, 1e-5);
        assert_eq!(c.graph.lr, 1e-3);
        assert_eq!(c.text.epochs, 2);
        assert_eq!(c.graph.batch_size, 8);
    }

    #[test]
    fn missing_path_names_its_key() {
        let c = RunConfig::default();
        let e = c.require("kg").unwrap_err();
        assert!(e.to_string().contains("paths.kg"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\nkg = \"kg.tsv\"\ncooc = \"/abs/cooc.txt\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.kg.unwrap(), dir.path().join("kg.tsv"));
        assert_eq!(c.paths.cooc.unwrap(), PathBuf::from("/abs/cooc.txt"));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.paths.kg = Some("kg.tsv".into());
        c.graph.epochs = 3;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
