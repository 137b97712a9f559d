//! Training hyper-parameters. Defaults follow the published settings where
//! those exist.

use serde::{Deserialize, Serialize};

use crate::diff::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::graph::AttentionActivation;
use crate::scoring::ScorerKind;

use super::loss::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token window per sentence.
    pub d_l: usize,
    pub d_hs: usize,
    pub d_ha: usize,
    /// Width of generated initial node features when no file supplies them.
    pub d_hi: usize,
    /// Text projection width, used when the scorer needs equal widths.
    pub d_h: usize,
    pub d_r: usize,
    pub l_max: usize,
    pub scorer: ScorerKind,
    pub transe_gamma: f64,
    pub transe_literal: bool,
    pub heads: usize,
    pub d_sem: usize,
    pub metapaths: Vec<String>,
    pub neighbor_cap: usize,
    pub attention: AttentionActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_l: 256,
            d_hs: 768,
            d_ha: 100,
            d_hi: 1000,
            d_h: 100,
            d_r: 100,
            l_max: 12,
            scorer: ScorerKind::Tucker,
            transe_gamma: 1.0,
            transe_literal: false,
            heads: 1,
            d_sem: 128,
            metapaths: vec!["DDx".into(), "MC".into(), "MBC".into(), "MC,MC".into()],
            neighbor_cap: 64,
            attention: AttentionActivation::Sigmoid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Linear,
    Step,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageConfig {
    pub batch_size: usize,
    pub test_batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_accum: usize,
    pub scheduler: SchedulerKind,
    pub warmup_rate: f64,
    /// StepLR factor, applied once per epoch.
    pub step_gamma: f64,
    pub epochs: usize,
}

impl StageConfig {
    pub fn text_default() -> Self {
        StageConfig {
            batch_size: 4,
            test_batch_size: 16,
            lr: 1e-5,
            weight_decay: 5e-5,
            grad_accum: 4,
            scheduler: SchedulerKind::Linear,
            warmup_rate: 0.1,
            step_gamma: 0.9,
            epochs: 10,
        }
    }

    pub fn graph_default() -> Self {
        StageConfig {
            batch_size: 512,
            test_batch_size: 512,
            lr: 1e-3,
            weight_decay: 1e-8,
            grad_accum: 1,
            scheduler: SchedulerKind::Step,
            warmup_rate: 0.1,
            step_gamma: 0.9,
            epochs: 10,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Schedule over optimizer steps.
    pub fn schedule(&self, total_steps: usize, steps_per_epoch: usize) -> LrSchedule {
        match self.scheduler {
            SchedulerKind::Linear => LrSchedule::Linear {
                total_steps: total_steps.max(1),
                warmup_rate: self.warmup_rate,
            },
            SchedulerKind::Step => LrSchedule::Step {
                gamma: self.step_gamma,
                period: steps_per_epoch.max(1),
            },
            SchedulerKind::Constant => LrSchedule::Constant,
        }
    }

    fn validate(&self, section: &str) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("test_batch_size", self.test_batch_size),
            ("grad_accum", self.grad_accum),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{section}.{key} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{section}.lr must be positive")));
        }
        if self.weight_decay < 0.0 || !(0.0..=1.0).contains(&self.warmup_rate) || self.step_gamma <= 0.0 {
            return Err(Error::Config(format!("{section}: weight_decay, warmup_rate or step_gamma out of range")));
        }
        Ok(())
    }
}

/// A stage section as written in a file; absent keys keep the stage's own defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StagePatch {
    batch_size: Option<usize>,
    test_batch_size: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    grad_accum: Option<usize>,
    scheduler: Option<SchedulerKind>,
    warmup_rate: Option<f64>,
    step_gamma: Option<f64>,
    epochs: Option<usize>,
}

impl StagePatch {
    fn apply(self, base: StageConfig) -> StageConfig {
        StageConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            test_batch_size: self.test_batch_size.unwrap_or(base.test_batch_size),
            lr: self.lr.unwrap_or(base.lr),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            grad_accum: self.grad_accum.unwrap_or(base.grad_accum),
            scheduler: self.scheduler.unwrap_or(base.scheduler),
            warmup_rate: self.warmup_rate.unwrap_or(base.warmup_rate),
            step_gamma: self.step_gamma.unwrap_or(base.step_gamma),
            epochs: self.epochs.unwrap_or(base.epochs),
        }
    }
}

macro_rules! stage_section {
    ($name:ident, $ctor:ident) => {
        #[derive(Clone, Debug, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub StageConfig);

        impl Default for $name {
            fn default() -> Self {
                $name(StageConfig::$ctor())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                Ok($name(StagePatch::deserialize(d)?.apply(StageConfig::$ctor())))
            }
        }

        impl std::ops::Deref for $name {
            type Target = StageConfig;
            fn deref(&self) -> &StageConfig {
                &self.0
            }
        }

        impl std::ops::DerefMut for $name {
            fn deref_mut(&mut self) -> &mut StageConfig {
                &mut self.0
            }
        }
    };
}

stage_section!(TextStage, text_default);
stage_section!(GraphStage, graph_default);
stage_section!(CotrainStage, text_default);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub variant: Variant,
    pub lambda_m: f64,
    pub lambda_b: f64,
    /// One unaligned graph-only batch after this many bag batches; 0 disables.
    pub unaligned_every: usize,
    /// Aligned bags labelled with the absence label train as all-zero rows.
    pub include_na_aligned: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            variant: Variant::RemapB,
            lambda_m: 1.0,
            lambda_b: 1.0,
            unaligned_every: 4,
            include_na_aligned: true,
        }
    }
}

impl JointConfig {
    pub fn lambda(&self) -> f64 {
        match self.variant {
            Variant::Remap => 0.0,
            Variant::RemapM => self.lambda_m,
            Variant::RemapB => self.lambda_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    /// Negatives per positive example.
    pub ratio: f64,
    /// Pairs co-occurring fewer times than this are negative candidates.
    pub cooc_threshold: u64,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig {
            ratio: 1.0,
            cooc_threshold: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Skip co-training; the joint model is the two pretrained models side by side.
    pub no_joint: bool,
    /// Random initial node features instead of the embedding file.
    pub no_ehr_init: bool,
    /// Graph side sees only triplets that have a sentence bag.
    pub no_unaligned: bool,
}

/// Everything the training stages read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub text: TextStage,
    pub graph: GraphStage,
    pub cotrain: CotrainStage,
    pub joint: JointConfig,
    pub negatives: NegativeConfig,
    pub ablation: AblationFlags,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (key, v) in [
            ("d_l", m.d_l),
            ("d_hs", m.d_hs),
            ("d_ha", m.d_ha),
            ("d_hi", m.d_hi),
            ("d_h", m.d_h),
            ("d_r", m.d_r),
            ("l_max", m.l_max),
            ("heads", m.heads),
            ("d_sem", m.d_sem),
            ("neighbor_cap", m.neighbor_cap),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{key} must be positive")));
            }
        }
        if m.d_ha % m.heads != 0 {
            return Err(Error::Config(format!("model.d_ha = {} is not divisible by model.heads = {}", m.d_ha, m.heads)));
        }
        if m.scorer == ScorerKind::Transe && (m.d_h != m.d_r || m.d_ha != m.d_r) {
            return Err(Error::Config("model.scorer = transe needs d_h = d_ha = d_r".into()));
        }
        if m.metapaths.is_empty() {
            return Err(Error::Config("model.metapaths must not be empty".into()));
        }
        self.text.validate("text")?;
        self.graph.validate("graph")?;
        self.cotrain.validate("cotrain")?;
        if self.joint.lambda_m < 0.0 || self.joint.lambda_b < 0.0 {
            return Err(Error::Config("joint.lambda_m and joint.lambda_b must be non-negative".into()));
        }
        if !(self.negatives.ratio >= 0.0 && self.negatives.ratio.is_finite()) {
            return Err(Error::Config("negatives.ratio must be non-negative".into()));
        }
        Ok(())
    }

    /// Text vectors are projected to `d_h` only when the scorer adds them to
    /// relation vectors.
    pub fn text_projection(&self) -> Option<usize> {
        (self.model.scorer == ScorerKind::Transe).then_some(self.model.d_h)
    }
}
