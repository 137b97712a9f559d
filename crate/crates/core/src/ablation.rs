//! Ablation grid: each toggle removes one component from the full joint
//! model, and every cell is trained and evaluated per seed.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metrics};
use crate::run::{evaluate, load_training_data, HeldOut, RunConfig};
use crate::scoring::ScorerKind;
use crate::train::{cotrain, pretrain_graph, pretrain_text, MetricsLog, Modality, ModelState, TrainConfig, TrainingData};

pub const BASE_LABEL: &str = "REMAP-B";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    /// The two pretrained models side by side, both using this scorer.
    NoJoint(ScorerKind),
    NoEhrInit,
    NoUnaligned,
}

impl Toggle {
    pub const ALL: [Toggle; 5] = [
        Toggle::NoJoint(ScorerKind::Linear),
        Toggle::NoJoint(ScorerKind::Transe),
        Toggle::NoJoint(ScorerKind::Tucker),
        Toggle::NoEhrInit,
        Toggle::NoUnaligned,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Toggle::NoJoint(ScorerKind::Linear) => "w/o joint learning (linear)",
            Toggle::NoJoint(ScorerKind::Transe) => "w/o joint learning (TransE)",
            Toggle::NoJoint(ScorerKind::Tucker) => "w/o joint learning (TuckER)",
            Toggle::NoEhrInit => "w/o EHR embedding",
            Toggle::NoUnaligned => "w/o unaligned triplets",
        }
    }

    /// The configuration one cell trains with.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Toggle::NoJoint(scorer) => {
                c.ablation.no_joint = true;
                with_scorer(&mut c, scorer);
            }
            Toggle::NoEhrInit => c.ablation.no_ehr_init = true,
            Toggle::NoUnaligned => c.ablation.no_unaligned = true,
        }
        c
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// TransE adds vectors to relation rows, so every width collapses to `d_r`.
fn with_scorer(c: &mut TrainConfig, scorer: ScorerKind) {
    c.model.scorer = scorer;
    if scorer == ScorerKind::Transe {
        let d = c.model.d_r;
        c.model.d_h = d;
        c.model.d_ha = d;
        if d % c.model.heads != 0 {
            c.model.heads = 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationSpec {
    /// Paths and the full-model configuration. Its seed is ignored.
    pub base: RunConfig,
    pub toggles: Vec<Toggle>,
    pub modalities: Vec<Modality>,
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    /// Every toggle, text and graph rows, three seeds from `base.seed`.
    pub fn new(base: RunConfig) -> Self {
        let s = base.seed;
        AblationSpec {
            base,
            toggles: Toggle::ALL.to_vec(),
            modalities: vec![Modality::Text, Modality::Graph],
            seeds: vec![s, s + 1, s + 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.modalities.is_empty() {
            return Err(Error::Config("an ablation needs at least one seed and one modality".into()));
        }
        self.base.train().validate()
    }
}

/// One seed of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub modality: Modality,
    /// `None` is the full model.
    pub toggle: Option<Toggle>,
    pub runs: Vec<CellRun>,
}

impl AblationRow {
    pub fn label(&self) -> &'static str {
        self.toggle.map_or(BASE_LABEL, Toggle::label)
    }

    pub fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Mean over successful seeds of `metric` in column `col` (0 is micro,
    /// then one per relation type).
    pub fn mean(&self, col: usize, metric: fn(&Metrics) -> f64) -> Option<f64> {
        let v: Vec<f64> = self
            .reports()
            .map(|r| if col == 0 { metric(&r.micro) } else { metric(&r.types[col - 1]) })
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub types: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Tab-separated, percentages to one decimal. Rows with no successful
    /// seed print `failed` in every metric column.
    pub fn to_tsv(&self) -> String {
        let mut cols = vec!["micro".to_string()];
        cols.extend(self.types.iter().cloned());
        let mut s = String::from("modality\tmodel");
        for block in ["accuracy", "f1"] {
            for c in &cols {
                let _ = write!(s, "\t{block} {c}");
            }
        }
        s.push_str("\tseeds\tfailed\n");
        let metrics: [fn(&Metrics) -> f64; 2] = [|m| m.accuracy, |m| m.f1];
        for row in &self.rows {
            let _ = write!(s, "{}\t{}", row.modality.name(), row.label());
            for metric in metrics {
                for c in 0..cols.len() {
                    match row.mean(c, metric) {
                        Some(v) => {
                            let _ = write!(s, "\t{:.1}", 100.0 * v);
                        }
                        None => s.push_str("\tfailed"),
                    }
                }
            }
            let _ = writeln!(s, "\t{}\t{}", row.runs.len(), row.failures());
        }
        s
    }

    pub fn row(&self, modality: Modality, toggle: Option<Toggle>) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modality == modality && r.toggle == toggle)
    }
}

/// Pretrained models shared between cells with the same stage inputs.
#[derive(Default)]
struct Cache {
    text: HashMap<(u64, ScorerKind), std::result::Result<ModelState<f32>, String>>,
    graph: HashMap<(u64, ScorerKind, bool, bool), std::result::Result<ModelState<f32>, String>>,
}

impl Cache {
    fn text(&mut self, data: &TrainingData, c: &TrainConfig) -> std::result::Result<ModelState<f32>, String> {
        self.text
            .entry((c.seed, c.model.scorer))
            .or_insert_with(|| pretrain_text(data, c, &mut MetricsLog::default()).map(|(s, _)| s).map_err(|e| e.to_string()))
            .clone()
    }

    fn graph(&mut self, data: &TrainingData, c: &TrainConfig) -> std::result::Result<ModelState<f32>, String> {
        let key = (c.seed, c.model.scorer, c.ablation.no_ehr_init, c.ablation.no_unaligned);
        self.graph
            .entry(key)
            .or_insert_with(|| pretrain_graph(data, c, &mut MetricsLog::default()).map(|(s, _)| s).map_err(|e| e.to_string()))
            .clone()
    }
}

fn train_cell(data: &TrainingData, c: &TrainConfig, cache: &mut Cache) -> std::result::Result<ModelState<f32>, String> {
    let text = cache.text(data, c)?;
    let graph = cache.graph(data, c)?;
    cotrain(data, &text, &graph, c, &mut MetricsLog::default()).map(|(s, _)| s).map_err(|e| e.to_string())
}

fn eval_cell(base: &RunConfig, state: &ModelState<f32>, modality: Modality) -> Result<EvalReport> {
    let valid = HeldOut::load(base, "valid", state)?;
    let test = HeldOut::load(base, "test", state)?;
    Ok(evaluate(state, &valid, &test, modality)?.report)
}

/// Trains and evaluates every (toggle, seed) cell. A cell that fails is
/// recorded and the grid continues. Rows come sorted by modality, then the
/// full model, then toggles in [`Toggle::ALL`] order.
pub fn run_ablation(spec: &AblationSpec) -> Result<AblationTable> {
    spec.validate()?;
    let data = load_training_data(&spec.base)?;
    run_ablation_with(spec, &data)
}

/// As [`run_ablation`] on already loaded data.
pub fn run_ablation_with(spec: &AblationSpec, data: &TrainingData) -> Result<AblationTable> {
    spec.validate()?;
    let mut toggles: Vec<Option<Toggle>> = vec![None];
    let mut listed = spec.toggles.clone();
    listed.sort();
    listed.dedup();
    toggles.extend(listed.into_iter().map(Some));
    let mut modalities = spec.modalities.clone();
    modalities.sort();
    modalities.dedup();

    let mut rows: Vec<AblationRow> = Vec::new();
    for &m in &modalities {
        for &t in &toggles {
            rows.push(AblationRow {
                modality: m,
                toggle: t,
                runs: Vec::new(),
            });
        }
    }
    let mut cache = Cache::default();
    for &seed in &spec.seeds {
        let mut base = spec.base.train();
        base.seed = seed;
        for &t in &toggles {
            let config = t.map_or_else(|| base.clone(), |t| t.apply(&base));
            let label = t.map_or(BASE_LABEL, Toggle::label);
            log::info!("ablation cell `{label}`, seed {seed}");
            let state = train_cell(data, &config, &mut cache);
            if let Err(e) = &state {
                log::warn!("`{label}` seed {seed} failed: {e}");
            }
            for row in rows.iter_mut().filter(|r| r.toggle == t) {
                let outcome = match &state {
                    Ok(s) => eval_cell(&spec.base, s, row.modality).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                row.runs.push(CellRun { seed, outcome });
            }
        }
    }
    Ok(AblationTable {
        types: data.vocab().scored().to_vec(),
        rows,
    })
}
