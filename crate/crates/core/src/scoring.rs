//! Relation scorers. All take `B × d` subject/object matrices and return a
//! `B × K` matrix, one column per relation type.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{init, DiffError, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are kept inside `[EPS, 1 − EPS]` so every log stays finite.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Linear,
    Transe,
    #[default]
    Tucker,
}

/// `clamp(σ(logits), ε, 1 − ε)`.
pub fn probabilities<T: Real>(tape: &Tape<T>, logits: Var) -> Result<Var, DiffError> {
    tape.clamp(tape.sigmoid(logits)?, PROB_EPS, 1.0 - PROB_EPS)
}

/// `W_k·(h_s + h_o) + b_k` with `w` of shape `d × K` and `b` of length K.
pub fn linear_logits<T: Real>(tape: &Tape<T>, hs: Var, ho: Var, w: Var, b: Var) -> Result<Var, DiffError> {
    tape.add_row(tape.matmul(tape.add(hs, ho)?, w)?, b)
}

/// `γ − ‖h_s + r_k − h_o‖²`, or the bare squared distance when `literal`.
pub fn transe_logits<T: Real>(tape: &Tape<T>, hs: Var, ho: Var, r: Var, gamma: f64, literal: bool) -> Result<Var, DiffError> {
    let k = tape.shape(r)[0];
    let b = tape.shape(hs)[0];
    let diff = tape.sub(hs, ho)?;
    let mut cols = Vec::with_capacity(k);
    for j in 0..k {
        let rj = tape.gather_rows(r, std::rc::Rc::from([j]))?;
        let dist = tape.reshape(tape.sq_norm_rows(tape.add_row(diff, rj)?)?, &[b, 1])?;
        cols.push(if literal {
            dist
        } else {
            tape.add_scalar(tape.scale(dist, -1.0)?, gamma)?
        });
    }
    if cols.len() == 1 {
        Ok(cols[0])
    } else {
        tape.concat_cols(&cols)
    }
}

/// `W ×₁ h_s ×₂ r_k ×₃ h_o`.
pub fn tucker_logits<T: Real>(tape: &Tape<T>, hs: Var, ho: Var, r: Var, w: Var) -> Result<Var, DiffError> {
    tape.trilinear(w, hs, r, ho)
}

/// `Σ_d h_s[d]·r_k[d]·h_o[d]`.
pub fn distmult_scores<T: Real>(tape: &Tape<T>, hs: Var, ho: Var, r: Var) -> Result<Var, DiffError> {
    tape.matmul(tape.mul(hs, ho)?, tape.transpose(r)?)
}

/// `Re(Σ_d h_s[d]·r_k[d]·conj(h_o[d]))`; each row holds real parts then imaginary parts.
pub fn complex_scores<T: Real>(tape: &Tape<T>, hs: Var, ho: Var, r: Var) -> Result<Var, DiffError> {
    let d2 = tape.shape(hs)[1];
    if d2 % 2 != 0 || tape.shape(r)[1] != d2 || tape.shape(ho)[1] != d2 {
        return Err(DiffError::Shape {
            op: "complex_scores",
            detail: format!("{:?} {:?} {:?}", tape.shape(hs), tape.shape(r), tape.shape(ho)),
        });
    }
    let d = d2 / 2;
    let (a, b) = (tape.slice_cols(hs, 0, d)?, tape.slice_cols(hs, d, d2)?);
    let (c, e) = (tape.slice_cols(ho, 0, d)?, tape.slice_cols(ho, d, d2)?);
    let (x, y) = (tape.slice_cols(r, 0, d)?, tape.slice_cols(r, d, d2)?);
    let real = tape.add(tape.mul(a, c)?, tape.mul(b, e)?)?;
    let imag = tape.sub(tape.mul(a, e)?, tape.mul(b, c)?)?;
    tape.add(tape.matmul(real, tape.transpose(x)?)?, tape.matmul(imag, tape.transpose(y)?)?)
}

/// Scorer parameters for one modality. `relation` is the `K × d_r` relation
/// matrix; it may be shared with another head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringHead {
    pub kind: ScorerKind,
    pub relation: ParamId,
    pub kernel: Option<ParamId>,
    pub linear: Option<(ParamId, ParamId)>,
    pub gamma: f64,
    pub literal_transe: bool,
}

impl ScoringHead {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: ScorerKind,
        d_ent: usize,
        d_r: usize,
        k: usize,
        gamma: f64,
        literal_transe: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if kind == ScorerKind::Transe && d_ent != d_r {
            return Err(Error::Config(format!("TransE needs entity width {d_ent} equal to relation width {d_r}")));
        }
        let relation = store.add(format!("{prefix}.relation"), init::xavier_uniform(rng, &[k, d_r], k, d_r));
        let kernel = (kind == ScorerKind::Tucker).then(|| {
            let std = 1.0 / (d_ent as f64 * (d_r as f64).sqrt());
            store.add(format!("{prefix}.kernel"), init::normal(rng, &[d_ent, d_r, d_ent], std * 4.0))
        });
        let linear = (kind == ScorerKind::Linear).then(|| {
            let w = store.add(format!("{prefix}.linear_w"), init::xavier_uniform(rng, &[d_ent, k], d_ent, k));
            let b = store.add(format!("{prefix}.linear_b"), Tensor::zeros(&[k]));
            (w, b)
        });
        Ok(ScoringHead {
            kind,
            relation,
            kernel,
            linear,
            gamma,
            literal_transe,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.relation];
        v.extend(self.kernel);
        if let Some((w, b)) = self.linear {
            v.extend([w, b]);
        }
        v
    }

    pub fn logits<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, hs: Var, ho: Var) -> Result<Var> {
        let r = tape.param(store, self.relation);
        let out = match self.kind {
            ScorerKind::Linear => {
                let (w, b) = self.linear.ok_or_else(|| Error::Config("linear head without weights".into()))?;
                linear_logits(tape, hs, ho, tape.param(store, w), tape.param(store, b))?
            }
            ScorerKind::Transe => transe_logits(tape, hs, ho, r, self.gamma, self.literal_transe)?,
            ScorerKind::Tucker => {
                let w = self.kernel.ok_or_else(|| Error::Config("TuckER head without kernel".into()))?;
                tucker_logits(tape, hs, ho, r, tape.param(store, w))?
            }
        };
        Ok(out)
    }

    pub fn probabilities<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, hs: Var, ho: Var) -> Result<Var> {
        Ok(probabilities(tape, self.logits(tape, store, hs, ho)?)?)
    }
}
