//! Supervised and alignment losses. Every batch loss sums over its pairs.
//!
//! Scalar helpers work on one pair's K probabilities; the `*_batch`
//! functions build the same quantities on a tape for `B × K` inputs.

use std::rc::Rc;

use crate::data::LabelVector;
use crate::diff::{softmax_in_place, DiffError, Real, Tape, Tensor, Var};

/// `−Σ_k [r_k ln p_k + (1 − r_k) ln(1 − p_k)]`.
pub fn bce_loss(p: &[f64], r: &LabelVector) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| if r.get(k) { -pk.ln() } else { -(1.0 - pk).ln() })
        .sum()
}

/// Softmax of the probabilities themselves across the K types.
pub fn softmax_normalize(p: &[f64]) -> Vec<f64> {
    let mut out = p.to_vec();
    if !out.is_empty() {
        softmax_in_place(&mut out);
    }
    out
}

/// `Σ_k b_k ln(b_k / a_k)`.
pub fn kl_div(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&ak, &bk)| bk * (bk / ak).ln()).sum()
}

pub fn remap_m_loss(l_t: f64, l_g: f64, dist_t: &[f64], dist_g: &[f64], lambda_m: f64) -> f64 {
    l_t + l_g + lambda_m * (kl_div(dist_t, dist_g) + kl_div(dist_g, dist_t))
}

/// Per type, the larger probability for a positive label and the smaller
/// one otherwise. Ties resolve to the text side.
pub fn best_logit(p_t: &[f64], p_g: &[f64], r: &LabelVector) -> Vec<f64> {
    p_t.iter()
        .zip(p_g)
        .enumerate()
        .map(|(k, (&t, &g))| if take_text(t, g, r.get(k)) { t } else { g })
        .collect()
}

fn take_text<T: PartialOrd>(t: T, g: T, positive: bool) -> bool {
    if positive {
        t >= g
    } else {
        t <= g
    }
}

pub fn remap_b_loss(l_t: f64, l_g: f64, p_t: &[f64], p_g: &[f64], r: &LabelVector, lambda_b: f64) -> f64 {
    let p_b = best_logit(p_t, p_g, r);
    let (d_b, d_t, d_g) = (softmax_normalize(&p_b), softmax_normalize(p_t), softmax_normalize(p_g));
    l_t + l_g + lambda_b * (bce_loss(&p_b, r) + kl_div(&d_b, &d_t) + kl_div(&d_b, &d_g))
}

/// `B × K` 0/1 label matrix.
pub fn label_matrix<T: Real>(labels: &[&LabelVector], k: usize) -> Result<Tensor<T>, DiffError> {
    let mut data = Vec::with_capacity(labels.len() * k);
    for l in labels {
        if l.len() != k {
            return Err(DiffError::Shape {
                op: "label_matrix",
                detail: format!("label of length {} for K={k}", l.len()),
            });
        }
        data.extend(l.flags().iter().map(|&f| T::lit(f as f64)));
    }
    Tensor::new(vec![labels.len(), k], data)
}

/// Tape form of [`bce_loss`] summed over the rows of `p`.
pub fn bce_batch<T: Real>(tape: &Tape<T>, p: Var, labels: Var) -> Result<Var, DiffError> {
    let one_minus_p = tape.add_scalar(tape.scale(p, -1.0)?, 1.0)?;
    let one_minus_r = tape.add_scalar(tape.scale(labels, -1.0)?, 1.0)?;
    let ll = tape.add(tape.mul(labels, tape.log(p)?)?, tape.mul(one_minus_r, tape.log(one_minus_p)?)?)?;
    tape.scale(tape.sum(ll)?, -1.0)
}

/// Tape form of [`kl_div`] summed over rows.
pub fn kl_batch<T: Real>(tape: &Tape<T>, a: Var, b: Var) -> Result<Var, DiffError> {
    let ratio = tape.sub(tape.log(b)?, tape.log(a)?)?;
    tape.sum(tape.mul(b, ratio)?)
}

/// Tape form of [`best_logit`]; the choice mask is read from current values
/// and gradients flow into whichever side was chosen.
pub fn best_logit_batch<T: Real>(tape: &Tape<T>, p_t: Var, p_g: Var, labels: &[&LabelVector]) -> Result<Var, DiffError> {
    let mask: Rc<[bool]> = {
        let (vt, vg) = (tape.value(p_t), tape.value(p_g));
        let k = vt.cols();
        if vt.shape() != vg.shape() || labels.len() != vt.rows() {
            return Err(DiffError::Shape {
                op: "best_logit_batch",
                detail: format!("{:?} / {:?} / {} labels", vt.shape(), vg.shape(), labels.len()),
            });
        }
        vt.data()
            .iter()
            .zip(vg.data())
            .enumerate()
            .map(|(i, (&t, &g))| take_text(t, g, labels[i / k].get(i % k)))
            .collect()
    };
    tape.select(p_t, p_g, mask)
}

/// Alignment terms of one batch, recorded for the metrics log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub text: f64,
    pub graph: f64,
    pub kl_tg: f64,
    pub kl_gt: f64,
    pub best: f64,
    pub total: f64,
}

/// Loss variant used during co-training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Remap,
    RemapM,
    #[default]
    RemapB,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Remap => "remap",
            Variant::RemapM => "remap_m",
            Variant::RemapB => "remap_b",
        }
    }
}

/// Builds the variant loss for one aligned batch. Returns the loss node and
/// the value of every term.
pub fn joint_loss<T: Real>(
    tape: &Tape<T>,
    variant: Variant,
    p_t: Var,
    p_g: Var,
    labels: &[&LabelVector],
    lambda: f64,
) -> Result<(Var, LossParts), DiffError> {
    let k = tape.shape(p_t)[1];
    let r = tape.constant(label_matrix(labels, k)?)?;
    let l_t = bce_batch(tape, p_t, r)?;
    let l_g = bce_batch(tape, p_g, r)?;
    let mut parts = LossParts {
        text: tape.scalar_value(l_t).to_f64(),
        graph: tape.scalar_value(l_g).to_f64(),
        ..LossParts::default()
    };
    let base = tape.add(l_t, l_g)?;
    let loss = match variant {
        Variant::Remap => base,
        Variant::RemapM => {
            let (d_t, d_g) = (tape.softmax(p_t)?, tape.softmax(p_g)?);
            let (a, b) = (kl_batch(tape, d_t, d_g)?, kl_batch(tape, d_g, d_t)?);
            parts.kl_tg = tape.scalar_value(a).to_f64();
            parts.kl_gt = tape.scalar_value(b).to_f64();
            if lambda == 0.0 {
                base
            } else {
                tape.add(base, tape.scale(tape.add(a, b)?, lambda)?)?
            }
        }
        Variant::RemapB => {
            let p_b = best_logit_batch(tape, p_t, p_g, labels)?;
            let (d_b, d_t, d_g) = (tape.softmax(p_b)?, tape.softmax(p_t)?, tape.softmax(p_g)?);
            let l_b = bce_batch(tape, p_b, r)?;
            let (a, b) = (kl_batch(tape, d_b, d_t)?, kl_batch(tape, d_b, d_g)?);
            parts.best = tape.scalar_value(l_b).to_f64();
            parts.kl_tg = tape.scalar_value(a).to_f64();
            parts.kl_gt = tape.scalar_value(b).to_f64();
            if lambda == 0.0 {
                base
            } else {
                tape.add(base, tape.scale(tape.add(l_b, tape.add(a, b)?)?, lambda)?)?
            }
        }
    };
    parts.total = tape.scalar_value(loss).to_f64();
    Ok((loss, parts))
}
