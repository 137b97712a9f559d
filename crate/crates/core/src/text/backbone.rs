//! Sentence backbones: token ids in, one contextual vector per position out.

use std::rc::Rc;

use rand::Rng;

use crate::diff::{init, DiffError, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// A trainable sequence encoder. `forward` maps `L` token ids to an
/// `L × dim()` matrix; parameters live in the caller's store.
pub trait TextBackbone: Clone + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn param_ids(&self) -> Vec<ParamId>;
    fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, tokens: &[u32]) -> Result<Var, DiffError>;
}

/// Token embeddings plus sinusoidal positions, followed by one residual
/// single-head self-attention layer: `H = X + softmax(QKᵀ/√d)V`.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionBackbone {
    pub embed: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    dim: usize,
}

impl AttentionBackbone {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let embed = store.add(format!("{prefix}.embed"), init::normal(rng, &[vocab_size, dim], 1.0 / (dim as f64).sqrt()));
        let mut proj = |name: &str| store.add(format!("{prefix}.{name}"), init::xavier_uniform(rng, &[dim, dim], dim, dim));
        let (wq, wk, wv) = (proj("wq"), proj("wk"), proj("wv"));
        AttentionBackbone { embed, wq, wk, wv, dim }
    }

    /// Rebinds to parameters already present in `store` under `prefix`.
    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let embed = store.id(&format!("{prefix}.embed"))?;
        Some(AttentionBackbone {
            embed,
            wq: store.id(&format!("{prefix}.wq"))?,
            wk: store.id(&format!("{prefix}.wk"))?,
            wv: store.id(&format!("{prefix}.wv"))?,
            dim: store.get(embed).cols(),
        })
    }
}

/// Sinusoidal position table, `len × dim`.
pub fn positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf(-((i - i % 2) as f64) / dim as f64);
            let angle = p as f64 * rate;
            data.push(T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, dim], data).expect("len × dim entries")
}

impl TextBackbone for AttentionBackbone {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.embed, self.wq, self.wk, self.wv]
    }

    fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, tokens: &[u32]) -> Result<Var, DiffError> {
        if tokens.is_empty() {
            return Err(DiffError::Argument("empty token sequence".into()));
        }
        let ids: Rc<[usize]> = tokens.iter().map(|&t| t as usize).collect();
        let emb = tape.gather_rows(tape.param(store, self.embed), ids)?;
        let pos = tape.constant(positions(tokens.len(), self.dim))?;
        let x = tape.add(emb, pos)?;
        let q = tape.matmul(x, tape.param(store, self.wq))?;
        let k = tape.matmul(x, tape.param(store, self.wk))?;
        let v = tape.matmul(x, tape.param(store, self.wv))?;
        let scores = tape.scale(tape.matmul(q, tape.transpose(k)?)?, 1.0 / (self.dim as f64).sqrt())?;
        let attn = tape.softmax(scores)?;
        tape.add(x, tape.matmul(attn, v)?)
    }
}
