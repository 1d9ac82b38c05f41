//! Training losses: binary cross-entropy, the loss-attenuating uncertainty loss
//! with its penalty variants, and the total objective.

use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, Tape, Var};

pub const PROB_EPS: f64 = 1e-7;
/// Upper clamp on σ² before the penalty; expm1(20) ≈ 4.85e8 already dominates.
pub const SIGMA2_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// e^{σ²} − 1
    #[default]
    Exp,
    /// σ²/2
    L2,
    None,
}

impl std::str::FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exp" => Ok(Penalty::Exp),
            "l2" => Ok(Penalty::L2),
            "none" => Ok(Penalty::None),
            other => Err(format!("unknown penalty `{other}` (exp, l2, none)")),
        }
    }
}

/// `−[y ln p + (1−y) ln(1−p)]` with p clamped to `[eps, 1−eps]`.
#[inline]
pub fn bce(p: f64, y: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn penalty(sigma2: f64, variant: Penalty) -> f64 {
    let s = sigma2.clamp(0.0, SIGMA2_MAX);
    match variant {
        Penalty::Exp => s.exp_m1(),
        Penalty::L2 => 0.5 * s,
        Penalty::None => 0.0,
    }
}

pub fn loss_unc(p: f64, y: f64, sigma2: f64, lambda0: f64, variant: Penalty) -> f64 {
    bce(p, y, PROB_EPS) + lambda0 * penalty(sigma2, variant)
}

pub fn loss_total(l_cls: f64, l_unc: f64, lambda1: f64, use_l_mu: bool, l_mu: f64) -> f64 {
    let base = l_cls + lambda1 * l_unc;
    if use_l_mu {
        base + l_mu
    } else {
        base
    }
}

/// Batch-mean BCE on the tape. `p` is B×1.
pub fn bce_var(tape: &mut Tape, p: Var, y: &Matrix) -> Var {
    let per = tape.bce(p, y.clone(), PROB_EPS);
    tape.mean_all(per)
}

/// Batch-mean penalty of a B×1 σ² node.
pub fn penalty_var(tape: &mut Tape, sigma2: Var, variant: Penalty) -> Option<Var> {
    let s = tape.clamp(sigma2, 0.0, SIGMA2_MAX);
    let per = match variant {
        Penalty::Exp => tape.expm1(s),
        Penalty::L2 => tape.scale(s, 0.5),
        Penalty::None => return None,
    };
    Some(tape.mean_all(per))
}

/// Batch-mean `L_unc` on the tape.
pub fn loss_unc_var(
    tape: &mut Tape,
    p: Var,
    y: &Matrix,
    sigma2: Var,
    lambda0: f64,
    variant: Penalty,
) -> Var {
    let b = bce_var(tape, p, y);
    match penalty_var(tape, sigma2, variant) {
        Some(pen) if lambda0 != 0.0 => {
            let pen = tape.scale(pen, lambda0);
            tape.add(b, pen)
        }
        _ => b,
    }
}
