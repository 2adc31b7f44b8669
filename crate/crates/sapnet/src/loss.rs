//! Weighted wavelet Charbonnier loss and the total training objective.

use panoqa_core::{Error, Result};

use crate::graph::{Graph, Var};
use crate::model::ForwardVars;
use crate::tensor::Tensor;

/// `L_e`: mean over elements of `sqrt(√β_b·(F̂ − F)² + ε)`, where `b` is the
/// sub-band of the element (`[LL, LH, HL, HH]` channel blocks).
pub fn charbonnier_wavelet_loss(g: &mut Graph, predicted: Var, target: &Tensor, beta: [f64; 4], eps: f64) -> Result<Var> {
    let s = g.shape(predicted);
    if s != target.shape {
        return Err(Error::arg(format!(
            "sub-band shapes differ: predicted {s:?}, target {:?}",
            target.shape
        )));
    }
    if s.c % 4 != 0 {
        return Err(Error::arg(format!("sub-band tensors need 4·c channels, got {}", s.c)));
    }
    if beta.iter().any(|b| !(*b > 0.0)) || !(eps > 0.0) {
        return Err(Error::arg("band weights and epsilon must be positive"));
    }
    Ok(g.charbonnier(predicted, target, beta, eps))
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub enhancement: Var,
    pub score: Var,
}

/// Weights of the objective `L = L_e + λ₁·L_a`.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda1: f64,
    pub beta: [f64; 4],
    pub epsilon: f64,
}

/// `L = L_e + λ₁·mean((ŝ − s)²)`.
pub fn total_loss(
    g: &mut Graph,
    outputs: &ForwardVars,
    target_subbands: &Tensor,
    target_scores: &[f64],
    w: &LossWeights,
) -> Result<LossVars> {
    let n = g.shape(outputs.score).n;
    if target_scores.len() != n {
        return Err(Error::arg(format!(
            "{} target scores for a batch of {n}",
            target_scores.len()
        )));
    }
    if target_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("target scores must be finite"));
    }
    let enhancement = charbonnier_wavelet_loss(g, outputs.subbands, target_subbands, w.beta, w.epsilon)?;
    let score = g.mse_scores(outputs.score, target_scores);
    let total = g.weighted_sum(enhancement, score, 1.0, w.lambda1);
    Ok(LossVars {
        total,
        enhancement,
        score,
    })
}

/// `L_e` on plain tensors.
pub fn charbonnier_value(predicted: &Tensor, target: &Tensor, beta: [f64; 4], eps: f64) -> Result<f64> {
    let mut g = Graph::new(false);
    let p = g.input(predicted.clone());
    let l = charbonnier_wavelet_loss(&mut g, p, target, beta, eps)?;
    Ok(g.value(l).item())
}
