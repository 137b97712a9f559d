//! Command bodies: data loading, training stages, evaluation, checkpoints
//! and metrics files.

pub mod checkpoint;
pub mod config;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{
    link_entities, load_bags, load_kg, load_pairs, split_aligned, CooccurrenceMatrix, Dictionary, InitialEmbeddings, LabeledPair, SentenceBag,
    TokenTable,
};
use crate::diff::Real;
use crate::error::{Error, Result};
use crate::eval::{compute_report, fit_thresholds, EvalReport, ScoredPair};
use crate::synth::{write_dataset, Manifest, SynthConfig, FILES};
use crate::train::{cotrain, pretrain_graph, pretrain_text, MetricsLog, Modality, ModelState, Predictor, TrainingData};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Paths, RunConfig, VocabConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Reads the knowledge graph, training bags and optional side inputs named
/// in `config`. Validation and test pairs are registered as held out.
pub fn load_training_data(config: &RunConfig) -> Result<TrainingData> {
    let vocab = config.vocab.build()?;
    let kg = load_kg(config.require("kg")?, &vocab)?;
    let mut tokens = TokenTable::new();
    let bags = match &config.paths.bags {
        Some(p) => load_bags(p, &vocab, &mut tokens)?,
        None => Vec::new(),
    };
    tokens.freeze();
    let dataset = split_aligned(bags, kg);
    dataset.check_partition()?;
    let mut data = TrainingData::new(dataset, tokens);
    if let Some(p) = &config.paths.cooc {
        data.cooc = Some(CooccurrenceMatrix::load(p)?);
    }
    if let Some(p) = &config.paths.embeddings {
        data.embeddings = Some(InitialEmbeddings::load(p)?);
    }
    for p in [&config.paths.valid, &config.paths.test].into_iter().flatten() {
        data.held_out.extend(load_pairs(p, &vocab)?.into_iter().map(|lp| (lp.subject, lp.object)));
    }
    Ok(data)
}

/// Labelled pairs and the bags available for them.
#[derive(Clone, Debug, Default)]
pub struct HeldOut {
    pub pairs: Vec<LabeledPair>,
    pub bags: Vec<SentenceBag>,
}

impl HeldOut {
    /// Loads `paths.<split>` and, when the model reads text, `paths.<split>_bags`
    /// interned against the model's frozen token table.
    pub fn load<T: Real>(config: &RunConfig, split: &str, state: &ModelState<T>) -> Result<Self> {
        let pairs = load_pairs(config.require(split)?, &state.vocab)?;
        let bags = match (&state.tokens, config.require(&format!("{split}_bags"))) {
            (Some(tokens), Ok(p)) => {
                let mut table = tokens.clone();
                table.freeze();
                load_bags(p, &state.vocab, &mut table)?
            }
            _ => Vec::new(),
        };
        Ok(HeldOut { pairs, bags })
    }

    fn bag_map(&self) -> HashMap<(String, String), &SentenceBag> {
        self.bags.iter().map(|b| ((b.subject.clone(), b.object.clone()), b)).collect()
    }
}

/// Scores every pair the modality can reach; the rest are skipped.
pub fn score_split<T: Real>(predictor: &Predictor<'_, T>, split: &HeldOut, modality: Modality) -> Result<Vec<ScoredPair>> {
    let pairs: Vec<(String, String)> = split.pairs.iter().map(|p| (p.subject.clone(), p.object.clone())).collect();
    let scores = predictor.score_pairs(&pairs, &split.bag_map())?;
    Ok(split
        .pairs
        .iter()
        .zip(scores)
        .filter_map(|(p, s)| {
            s.get(modality).map(|probs| ScoredPair {
                probs,
                label: p.label.clone(),
            })
        })
        .collect())
}

fn require_modality<T: Real>(state: &ModelState<T>, modality: Modality) -> Result<()> {
    if matches!(modality, Modality::Text | Modality::Both) {
        state.text_model()?;
    }
    if matches!(modality, Modality::Graph | Modality::Both) {
        state.graph_model()?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub modality: Modality,
    pub thresholds: Vec<f64>,
    pub report: EvalReport,
}

/// Fits thresholds on `valid` and reports on `test`.
pub fn evaluate<T: Real>(state: &ModelState<T>, valid: &HeldOut, test: &HeldOut, modality: Modality) -> Result<Evaluation> {
    require_modality(state, modality)?;
    let predictor = Predictor::new(state)?;
    let fit = score_split(&predictor, valid, modality)?;
    let thresholds = fit_thresholds(&fit, state.vocab.k())?;
    report_with(state, &predictor, test, modality, thresholds)
}

fn report_with<T: Real>(state: &ModelState<T>, predictor: &Predictor<'_, T>, test: &HeldOut, modality: Modality, thresholds: Vec<f64>) -> Result<Evaluation> {
    let rows = score_split(predictor, test, modality)?;
    let mut report = compute_report(&rows, &thresholds, &state.vocab)?;
    report.requested = test.pairs.len();
    if rows.len() < test.pairs.len() {
        log::warn!("{}: {} of {} pairs lack {} input and were skipped", modality.name(), test.pairs.len() - rows.len(), test.pairs.len(), modality.name());
    }
    Ok(Evaluation {
        modality,
        thresholds,
        report,
    })
}

/// Stores validation-fitted thresholds for every modality the model can serve.
pub fn fit_stored_thresholds<T: Real>(state: &mut ModelState<T>, valid: &HeldOut) -> Result<()> {
    let predictor = Predictor::new(state)?;
    let mut fitted = Vec::new();
    for m in Modality::ALL {
        if require_modality(state, m).is_err() {
            continue;
        }
        let rows = score_split(&predictor, valid, m)?;
        match fit_thresholds(&rows, state.vocab.k()) {
            Ok(t) => fitted.push((m.name().to_string(), t)),
            Err(e) => log::warn!("no {} thresholds stored: {e}", m.name()),
        }
    }
    drop(predictor);
    state.thresholds.extend(fitted);
    Ok(())
}

fn prepare_out(out: &Path, files: &[&str], force: bool) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for f in files {
        let p = out.join(f);
        if p.exists() && !force {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn finish(config: &RunConfig, mut state: ModelState<f32>, log: &MetricsLog, out: &Path) -> Result<(ModelState<f32>, PathBuf)> {
    if config.paths.valid.is_some() {
        let valid = HeldOut::load(config, "valid", &state)?;
        fit_stored_thresholds(&mut state, &valid)?;
    }
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&state, &ckpt)?;
    write(&out.join(METRICS_FILE), log.to_jsonl())?;
    Ok((state, ckpt))
}

/// Trains the text model; writes the checkpoint and the metrics file.
pub fn cmd_pretrain_text(config: &RunConfig, out: &Path, force: bool) -> Result<String> {
    prepare_out(out, &[CHECKPOINT_FILE, METRICS_FILE], force)?;
    let data = load_training_data(config)?;
    let mut log = MetricsLog::default();
    let (state, stats) = pretrain_text::<f32>(&data, &config.train(), &mut log)?;
    let (_, ckpt) = finish(config, state, &log, out)?;
    Ok(format!(
        "text model: {} positive bags, {} negatives per epoch, loss {:.4} -> {:.4}\nwrote {}",
        stats.positive_bags,
        stats.negatives_per_epoch,
        stats.initial_loss,
        stats.final_loss,
        ckpt.display()
    ))
}

pub fn cmd_pretrain_graph(config: &RunConfig, out: &Path, force: bool) -> Result<String> {
    prepare_out(out, &[CHECKPOINT_FILE, METRICS_FILE], force)?;
    let data = load_training_data(config)?;
    let mut log = MetricsLog::default();
    let (state, stats) = pretrain_graph::<f32>(&data, &config.train(), &mut log)?;
    let (_, ckpt) = finish(config, state, &log, out)?;
    Ok(format!(
        "graph model: {} triplets, {} pairs, pool {}, loss {:.4} -> {:.4}\nwrote {}",
        stats.triplets,
        stats.pairs,
        stats.pool_size,
        stats.initial_loss,
        stats.final_loss,
        ckpt.display()
    ))
}

/// Co-trains from `paths.text_checkpoint` and `paths.graph_checkpoint`,
/// pretraining whichever is not given.
pub fn cmd_cotrain(config: &RunConfig, out: &Path, force: bool) -> Result<String> {
    prepare_out(out, &[CHECKPOINT_FILE, METRICS_FILE], force)?;
    let data = load_training_data(config)?;
    let train = config.train();
    let mut log = MetricsLog::default();
    let text = match &config.paths.text_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => pretrain_text::<f32>(&data, &train, &mut log)?.0,
    };
    let graph = match &config.paths.graph_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => pretrain_graph::<f32>(&data, &train, &mut log)?.0,
    };
    let (state, stats) = cotrain(&data, &text, &graph, &train, &mut log)?;
    let (_, ckpt) = finish(config, state, &log, out)?;
    Ok(format!(
        "joint model ({}): {} aligned bags, {} skipped, {} graph-only batches\nwrote {}",
        if train.ablation.no_joint { "no joint training" } else { train.joint.variant.name() },
        stats.aligned_bags,
        stats.skipped_bags,
        stats.graph_only_batches,
        ckpt.display()
    ))
}

/// Evaluates a checkpoint on `paths.test`, with thresholds fitted on
/// `paths.valid` or, when that is absent, the ones stored in the checkpoint.
/// Writes `eval_<modality>.tsv` and `.json` to `out`.
pub fn cmd_eval(config: &RunConfig, modality: Modality, out: &Path, force: bool) -> Result<(Evaluation, String)> {
    let tsv = format!("eval_{}.tsv", modality.name());
    let json = format!("eval_{}.json", modality.name());
    prepare_out(out, &[&tsv, &json], force)?;
    let state = load_checkpoint(config.require("checkpoint")?)?;
    require_modality(&state, modality)?;
    let test = HeldOut::load(config, "test", &state)?;
    let eval = if config.paths.valid.is_some() {
        let valid = HeldOut::load(config, "valid", &state)?;
        evaluate(&state, &valid, &test, modality)?
    } else {
        let stored = state.thresholds.get(modality.name()).cloned().ok_or_else(|| {
            Error::Config(format!("missing required path `paths.valid` (checkpoint stores no {} thresholds)", modality.name()))
        })?;
        report_with(&state, &Predictor::new(&state)?, &test, modality, stored)?
    };
    write(&out.join(&tsv), eval.report.to_tsv())?;
    let record = serde_json::json!({
        "modality": modality.name(),
        "thresholds": eval.thresholds,
        "report": eval.report,
    });
    write(&out.join(&json), serde_json::to_string_pretty(&record).expect("report serializes") + "\n")?;
    let mut summary = format!("modality: {}\n", modality.name());
    summary.push_str(&eval.report.to_table());
    Ok((eval, summary))
}

/// Desk-scale run configuration pointing at a generated dataset.
pub fn synth_run_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let p = &mut c.paths;
    p.kg = Some(FILES.kg.into());
    p.bags = Some(FILES.bags.into());
    p.cooc = Some(FILES.cooc.into());
    p.embeddings = Some(FILES.embeddings.into());
    p.valid = Some(FILES.valid.into());
    p.valid_bags = Some(FILES.valid_bags.into());
    p.test = Some(FILES.test.into());
    p.test_bags = Some(FILES.test_bags.into());
    let m = &mut c.model;
    m.d_l = 32;
    m.d_hs = 32;
    m.d_ha = 16;
    m.d_h = 16;
    m.d_r = 16;
    m.l_max = 4;
    m.d_hi = 16;
    m.d_sem = 16;
    m.neighbor_cap = 16;
    c.text.batch_size = 16;
    c.text.lr = 1e-3;
    c.text.grad_accum = 1;
    c.cotrain.batch_size = 16;
    c.cotrain.lr = 1e-3;
    c.cotrain.grad_accum = 1;
    c.graph.batch_size = 32;
    c.graph.lr = 1e-2;
    c
}

/// Generates a dataset and a matching `config.toml` into `out`.
pub fn cmd_synth(config: &SynthConfig, out: &Path, force: bool) -> Result<(Manifest, String)> {
    let manifest = write_dataset(out, config, force)?;
    let run = synth_run_config(config.world.seed);
    write(&out.join("config.toml"), run.to_toml())?;
    let c = &manifest.counts;
    let mut s = String::new();
    let _ = writeln!(s, "{} entities, {} planted edges, {} training triplets", c.entities, c.planted_edges, c.triplets);
    let _ = writeln!(s, "{} training bags ({} NA), {} valid pairs, {} test pairs", c.bags, c.na_bags, c.valid_pairs, c.test_pairs);
    let _ = write!(s, "wrote {}", out.display());
    Ok((manifest, s))
}

/// Links whitespace-tokenized lines of `input`; one `line start end cui` row per span.
pub fn cmd_link_entities(dictionary: &Path, input: &str, nested: bool) -> Result<String> {
    let dict = Dictionary::load(dictionary)?;
    let mut out = String::new();
    for (i, line) in input.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        for span in link_entities(&tokens, &dict, nested) {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", i + 1, span.start, span.end, span.cui);
        }
    }
    Ok(out)
}
