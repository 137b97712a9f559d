//! Bag encoding and marker-position attention pooling.

use std::rc::Rc;

use rand::Rng;

use super::backbone::{AttentionBackbone, TextBackbone};
use super::markers::fit_window;
use crate::data::tokens::MarkerRole;
use crate::data::{Sentence, SentenceBag, TokenTable};
use crate::diff::{init, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Indices of the sentences to encode: all of them up to `l_max`, otherwise
/// a uniform sample of `l_max` in training and the first `l_max` in eval.
pub fn select_sentences<R: Rng + ?Sized>(n: usize, l_max: usize, mode: Mode, rng: &mut R) -> Vec<usize> {
    if n <= l_max {
        return (0..n).collect();
    }
    match mode {
        Mode::Eval => (0..l_max).collect(),
        Mode::Train => {
            let mut idx = rand::seq::index::sample(rng, n, l_max).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// Backbone input for one sentence: `tokens <sep> title`, cut to `max_len`
/// around the markers, with subject/object open-marker positions shifted to match.
pub fn sentence_input(s: &Sentence, table: &TokenTable, max_len: usize) -> Result<(Vec<u32>, Vec<usize>, Vec<usize>)> {
    let mut ids = Vec::with_capacity(s.tokens.len() + s.title.len() + 2);
    ids.extend_from_slice(&s.tokens);
    ids.push(table.sep());
    if s.title.is_empty() {
        ids.push(table.empty_title());
    } else {
        ids.extend_from_slice(&s.title);
    }
    let markers: Vec<usize> = (0..s.tokens.len()).filter(|&i| table.marker(s.tokens[i]).is_some()).collect();
    let (start, end) = fit_window(ids.len(), &markers, max_len)?;
    if end - start < ids.len() {
        log::warn!("sentence of {} tokens truncated to {max_len}", ids.len());
    }
    let shift = |v: &[usize]| v.iter().map(|&i| i - start).collect::<Vec<_>>();
    Ok((ids[start..end].to_vec(), shift(&s.subj_markers), shift(&s.obj_markers)))
}

/// One encoded sentence: its `L × d_hs` output and open-marker rows.
#[derive(Clone, Debug)]
pub struct EncodedSentence {
    pub h: Var,
    pub subj: Vec<usize>,
    pub obj: Vec<usize>,
}

/// Attention pooling over marker columns: weights are the softmax over
/// positions of `ω·tanh(column)`, and the entity vector is the weighted sum.
/// Returns the pooled `1 × d` row and the `P` weights.
pub fn pool_entity<T: Real>(tape: &Tape<T>, columns: &[(Var, &[usize])], omega: Var) -> Result<(Var, Var)> {
    let mut parts = Vec::with_capacity(columns.len());
    for &(h, idx) in columns {
        if !idx.is_empty() {
            parts.push(tape.gather_rows(h, Rc::from(idx))?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Pooling("no marker positions in bag".into()));
    }
    let hs = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    let p = tape.shape(hs)[0];
    let d = tape.shape(omega).iter().product::<usize>();
    let omega = tape.reshape(omega, &[d, 1])?;
    let scores = tape.reshape(tape.matmul(tape.tanh(hs)?, omega)?, &[1, p])?;
    let weights = tape.softmax(scores)?;
    let h = tape.matmul(weights, hs)?;
    Ok((h, tape.reshape(weights, &[p])?))
}

/// Pooled subject and object rows for one bag.
#[derive(Clone, Debug)]
pub struct PooledBag {
    pub subject: Var,
    pub object: Var,
    pub subject_weights: Var,
    pub object_weights: Var,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TextEncoder<B: TextBackbone = AttentionBackbone> {
    pub backbone: B,
    pub omega: ParamId,
    /// Optional `d_hs → d_h` projection (weight, bias).
    pub projection: Option<(ParamId, ParamId)>,
    pub max_len: usize,
    pub l_max: usize,
}

impl TextEncoder<AttentionBackbone> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        vocab_size: usize,
        d_hs: usize,
        project_to: Option<usize>,
        max_len: usize,
        l_max: usize,
        rng: &mut R,
    ) -> Self {
        let backbone = AttentionBackbone::init(store, &format!("{prefix}.backbone"), vocab_size, d_hs, rng);
        let omega = store.add(format!("{prefix}.omega"), init::xavier_uniform(rng, &[d_hs], d_hs, 1));
        let projection = project_to.map(|d_h| {
            let w = store.add(format!("{prefix}.proj_w"), init::xavier_uniform(rng, &[d_hs, d_h], d_hs, d_h));
            let b = store.add(format!("{prefix}.proj_b"), crate::diff::Tensor::zeros(&[d_h]));
            (w, b)
        });
        TextEncoder {
            backbone,
            omega,
            projection,
            max_len,
            l_max,
        }
    }
}

impl<B: TextBackbone> TextEncoder<B> {
    /// Width of the vectors handed to a scorer.
    pub fn output_dim<T: Real>(&self, store: &ParamStore<T>) -> usize {
        match self.projection {
            Some((w, _)) => store.get(w).cols(),
            None => self.backbone.dim(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.backbone.param_ids();
        v.push(self.omega);
        if let Some((w, b)) = self.projection {
            v.extend([w, b]);
        }
        v
    }

    pub fn encode_bag<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        table: &TokenTable,
        bag: &SentenceBag,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<EncodedSentence>> {
        if bag.sentences.is_empty() {
            return Err(Error::Pooling(format!("bag ({}, {}) has no sentences", bag.subject, bag.object)));
        }
        let mut out = Vec::new();
        for i in select_sentences(bag.sentences.len(), self.l_max, mode, rng) {
            let (ids, subj, obj) = sentence_input(&bag.sentences[i], table, self.max_len)?;
            let h = self.backbone.forward(tape, store, &ids)?;
            out.push(EncodedSentence { h, subj, obj });
        }
        Ok(out)
    }

    pub fn pool<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, encoded: &[EncodedSentence]) -> Result<PooledBag> {
        let omega = tape.param(store, self.omega);
        let cols = |role: MarkerRole| -> Vec<(Var, &[usize])> {
            encoded
                .iter()
                .map(|e| {
                    let idx = match role {
                        MarkerRole::Subject => e.subj.as_slice(),
                        MarkerRole::Object => e.obj.as_slice(),
                    };
                    (e.h, idx)
                })
                .collect()
        };
        let (subject, subject_weights) = pool_entity(tape, &cols(MarkerRole::Subject), omega)?;
        let (object, object_weights) = pool_entity(tape, &cols(MarkerRole::Object), omega)?;
        Ok(PooledBag {
            subject,
            object,
            subject_weights,
            object_weights,
        })
    }

    /// Applies the projection, if any, to a `B × d_hs` matrix.
    pub fn project<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        match self.projection {
            Some((w, b)) => Ok(tape.add_row(tape.matmul(h, tape.param(store, w))?, tape.param(store, b))?),
            None => Ok(h),
        }
    }

    /// Subject and object matrices (`B × d`) for a batch of bags.
    pub fn encode_pairs<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        table: &TokenTable,
        bags: &[&SentenceBag],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let mut subj = Vec::with_capacity(bags.len());
        let mut obj = Vec::with_capacity(bags.len());
        for bag in bags {
            let enc = self.encode_bag(tape, store, table, bag, mode, rng)?;
            let pooled = self.pool(tape, store, &enc)?;
            subj.push(pooled.subject);
            obj.push(pooled.object);
        }
        let hs = if subj.len() == 1 { subj[0] } else { tape.concat_rows(&subj)? };
        let ho = if obj.len() == 1 { obj[0] } else { tape.concat_rows(&obj)? };
        Ok((self.project(tape, store, hs)?, self.project(tape, store, ho)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_bags, RelationVocab};
    use crate::diff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn selection_caps_and_is_deterministic_in_eval() {
        assert_eq!(select_sentences(1, 12, Mode::Train, &mut rng()), vec![0]);
        let s = select_sentences(20, 12, Mode::Train, &mut rng());
        assert_eq!(s.len(), 12);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let a = select_sentences(20, 12, Mode::Eval, &mut rng());
        let b = select_sentences(20, 12, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    fn pool_columns(cols: &[&[f64]], omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tape = Tape::<f64>::new();
        let h = tape.constant(Tensor::from_rows(cols)).unwrap();
        let w = tape.constant(Tensor::vector(omega.to_vec())).unwrap();
        let idx: Vec<usize> = (0..cols.len()).collect();
        let (p, wts) = pool_entity(&tape, &[(h, &idx)], w).unwrap();
        let p = tape.value(p).data().to_vec();
        let w = tape.value(wts).data().to_vec();
        (p, w)
    }

    #[test]
    fn single_column_pools_to_itself() {
        let (h, w) = pool_columns(&[&[0.3, -2.0]], &[0.5, 0.1]);
        assert_eq!(h, vec![0.3, -2.0]);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn identical_columns_pool_to_the_column() {
        let (h, _) = pool_columns(&[&[0.7], &[0.7], &[0.7]], &[2.0]);
        assert!((h[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_scalar_columns_match_hand_softmax() {
        let (h, w) = pool_columns(&[&[1.0], &[2.0]], &[1.0]);
        let (a, b) = (1f64.tanh().exp(), 2f64.tanh().exp());
        let oracle = [a / (a + b), b / (a + b)];
        assert!((w[0] - oracle[0]).abs() < 1e-12 && (w[1] - oracle[1]).abs() < 1e-12);
        assert!((w[0] - 0.449564).abs() < 1e-6);
        assert!((h[0] - (oracle[0] + 2.0 * oracle[1])).abs() < 1e-12);
        assert!((h[0] - 1.550436).abs() < 1e-6);
    }

    #[test]
    fn no_markers_is_a_pooling_error() {
        let tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(pool_entity(&tape, &[], w), Err(Error::Pooling(_))));
    }

    const BAG: &str = r#"{"subject":"A","object":"B","relations":["MC"],"sentences":[
        {"tokens":["<S-t>","a","<S-t/>","causes","<O-t>","b","<O-t/>"],"subj_marker_idx":[0],"obj_marker_idx":[4]},
        {"tokens":["<O-t>","b","<O-t/>","after","<S-t>","a","<S-t/>"],"subj_marker_idx":[4],"obj_marker_idx":[0],"title":["x"]},
        {"tokens":["<S-t>","a","<S-t/>","and","<O-t>","b","<O-t/>","again"],"subj_marker_idx":[0],"obj_marker_idx":[4]}]}"#;

    fn encode_with_order(order: &[usize]) -> Vec<f64> {
        let mut table = TokenTable::new();
        let mut bag = parse_bags(&BAG.replace('\n', ""), &RelationVocab::default(), &mut table, "t").unwrap().remove(0);
        bag.sentences = order.iter().map(|&i| bag.sentences[i].clone()).collect();
        let mut store = ParamStore::<f64>::new();
        let enc = TextEncoder::init(&mut store, "text", table.len(), 8, Some(4), 32, 12, &mut rng());
        let tape = Tape::new();
        let (hs, ho) = enc.encode_pairs(&tape, &store, &table, &[&bag], Mode::Eval, &mut rng()).unwrap();
        assert_eq!(tape.shape(hs), vec![1, 4]);
        let mut v = tape.value(hs).data().to_vec();
        v.extend_from_slice(tape.value(ho).data());
        v
    }

    #[test]
    fn permuting_sentences_leaves_pooled_vectors_unchanged() {
        let a = encode_with_order(&[0, 1, 2]);
        let b = encode_with_order(&[2, 0, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }
}
