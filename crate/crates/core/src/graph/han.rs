//! Heterogeneous graph attention over meta-path neighborhoods.
//!
//! For each meta path Φ and head k, with projected features `h' = f(h_init)`:
//!
//! ```text
//! e_ij   = act(a_left·h'_i + a_right·h'_j)        j ∈ N_i^Φ
//! α_ij   = softmax_j(e_ij)
//! z_i^Φ  = ‖_k σ(Σ_j α_ij h'_j)
//! w_Φ    = mean_i qᵀ tanh(W z_i^Φ + b)
//! β      = softmax(w),   z_i = Σ_Φ β_Φ z_i^Φ
//! ```
//!
//! `act` is the sigmoid by default; leaky ReLU is available.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metapath::NeighborIndex;
use crate::diff::{init, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionActivation {
    #[default]
    Sigmoid,
    LeakyRelu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Han {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// `(a_left, a_right)` per meta path and head.
    pub attention: Vec<Vec<(ParamId, ParamId)>>,
    pub sem_w: ParamId,
    pub sem_b: ParamId,
    pub sem_q: ParamId,
    pub heads: usize,
    pub d_ha: usize,
    pub activation: AttentionActivation,
}

/// Encoder output for a set of nodes.
#[derive(Clone, Debug)]
pub struct HanOutput {
    /// `|nodes| × d_ha`, rows in the order requested.
    pub z: Var,
    /// Per meta path `|nodes| × d_ha`.
    pub per_path: Vec<Var>,
    /// Semantic weights over meta paths.
    pub beta: Var,
    /// Node-level weights per meta path and head, one entry per
    /// (node, neighbor); `offsets[p]` delimits each node's segment.
    pub alpha: Vec<Vec<Var>>,
    pub offsets: Vec<Rc<[usize]>>,
}

impl Han {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_hi: usize,
        d_ha: usize,
        d_sem: usize,
        heads: usize,
        n_paths: usize,
        activation: AttentionActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_ha % heads != 0 {
            return Err(Error::Config(format!("d_ha = {d_ha} is not a positive multiple of {heads} heads")));
        }
        let d_head = d_ha / heads;
        let proj_w = store.add(format!("{prefix}.proj_w"), init::xavier_uniform(rng, &[d_hi, d_ha], d_hi, d_ha));
        let proj_b = store.add(format!("{prefix}.proj_b"), Tensor::zeros(&[d_ha]));
        let mut attention = Vec::with_capacity(n_paths);
        for p in 0..n_paths {
            let mut per_head = Vec::with_capacity(heads);
            for k in 0..heads {
                let l = store.add(format!("{prefix}.attn.{p}.{k}.left"), init::xavier_uniform(rng, &[d_head, 1], 2 * d_head, 1));
                let r = store.add(format!("{prefix}.attn.{p}.{k}.right"), init::xavier_uniform(rng, &[d_head, 1], 2 * d_head, 1));
                per_head.push((l, r));
            }
            attention.push(per_head);
        }
        let sem_w = store.add(format!("{prefix}.sem_w"), init::xavier_uniform(rng, &[d_ha, d_sem], d_ha, d_sem));
        let sem_b = store.add(format!("{prefix}.sem_b"), Tensor::zeros(&[d_sem]));
        let sem_q = store.add(format!("{prefix}.sem_q"), init::xavier_uniform(rng, &[d_sem, 1], d_sem, 1));
        Ok(Han {
            proj_w,
            proj_b,
            attention,
            sem_w,
            sem_b,
            sem_q,
            heads,
            d_ha,
            activation,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.proj_w, self.proj_b];
        for per_head in &self.attention {
            for &(l, r) in per_head {
                v.extend([l, r]);
            }
        }
        v.extend([self.sem_w, self.sem_b, self.sem_q]);
        v
    }

    /// Encodes `nodes` (distinct node indices). `h_init` is the
    /// `node_count × d_hi` feature matrix. The semantic average runs over
    /// the requested nodes.
    pub fn encode<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        h_init: Var,
        index: &NeighborIndex,
        nodes: &[usize],
    ) -> Result<HanOutput> {
        if nodes.is_empty() {
            return Err(Error::Evaluation("no nodes to encode".into()));
        }
        if index.paths.len() != self.attention.len() {
            return Err(Error::Config(format!(
                "encoder has {} meta paths, neighbor index has {}",
                self.attention.len(),
                index.paths.len()
            )));
        }
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in nodes {
            local.insert(u, 0);
            for p in 0..index.paths.len() {
                for &v in index.neighbors(p, u) {
                    local.insert(v, 0);
                }
            }
        }
        let universe: Vec<usize> = local.keys().copied().collect();
        for (i, v) in local.values_mut().enumerate() {
            *v = i;
        }
        let x = tape.gather_rows(h_init, Rc::from(universe))?;
        let hp = tape.add_row(tape.matmul(x, tape.param(store, self.proj_w))?, tape.param(store, self.proj_b))?;
        let d_head = self.d_ha / self.heads;
        let head_feats: Vec<Var> = if self.heads == 1 {
            vec![hp]
        } else {
            (0..self.heads)
                .map(|k| tape.slice_cols(hp, k * d_head, (k + 1) * d_head))
                .collect::<std::result::Result<_, _>>()?
        };

        let mut per_path = Vec::with_capacity(index.paths.len());
        let mut alpha = Vec::with_capacity(index.paths.len());
        let mut all_offsets = Vec::with_capacity(index.paths.len());
        for (p, per_head) in self.attention.iter().enumerate() {
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut offsets = vec![0usize];
            for &u in nodes {
                for &v in index.neighbors(p, u) {
                    src.push(local[&u]);
                    dst.push(local[&v]);
                }
                offsets.push(dst.len());
            }
            let (src, dst, offsets): (Rc<[usize]>, Rc<[usize]>, Rc<[usize]>) = (src.into(), dst.into(), offsets.into());
            let e_count = dst.len();
            let mut heads_out = Vec::with_capacity(self.heads);
            let mut heads_alpha = Vec::with_capacity(self.heads);
            for (k, &(a_l, a_r)) in per_head.iter().enumerate() {
                let hk = head_feats[k];
                let sl = tape.matmul(hk, tape.param(store, a_l))?;
                let sr = tape.matmul(hk, tape.param(store, a_r))?;
                let e = tape.add(tape.gather_rows(sl, src.clone())?, tape.gather_rows(sr, dst.clone())?)?;
                let e = match self.activation {
                    AttentionActivation::Sigmoid => tape.sigmoid(e)?,
                    AttentionActivation::LeakyRelu => tape.leaky_relu(e, 0.2)?,
                };
                let a = tape.segment_softmax(tape.reshape(e, &[e_count])?, offsets.clone())?;
                let msg = tape.mul_col(tape.gather_rows(hk, dst.clone())?, a)?;
                heads_out.push(tape.sigmoid(tape.segment_sum(msg, offsets.clone())?)?);
                heads_alpha.push(a);
            }
            let z = if heads_out.len() == 1 { heads_out[0] } else { tape.concat_cols(&heads_out)? };
            per_path.push(z);
            alpha.push(heads_alpha);
            all_offsets.push(offsets);
        }

        let (w, b, q) = (
            tape.param(store, self.sem_w),
            tape.param(store, self.sem_b),
            tape.param(store, self.sem_q),
        );
        let mut scores = Vec::with_capacity(per_path.len());
        for &z in &per_path {
            let t = tape.tanh(tape.add_row(tape.matmul(z, w)?, b)?)?;
            scores.push(tape.mean(tape.matmul(t, q)?)?);
        }
        let beta = tape.softmax(tape.concat_rows(&scores)?)?;
        let mut z = tape.mul_scalar(per_path[0], tape.index(beta, 0)?)?;
        for (p, &zp) in per_path.iter().enumerate().skip(1) {
            z = tape.add(z, tape.mul_scalar(zp, tape.index(beta, p)?)?)?;
        }
        Ok(HanOutput {
            z,
            per_path,
            beta,
            alpha,
            offsets: all_offsets,
        })
    }
}
