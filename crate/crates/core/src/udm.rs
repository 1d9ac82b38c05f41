//! Uncertainty disentanglement: the stochastic logit head f_e (MC dropout), the
//! aleatoric head f_a, the total-uncertainty head f_σ, and the MC-integrated
//! predictive probability.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::UdmConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Matrix, Mlp, OutputActivation, ParamStore, Tape, Var};
use crate::rng::SeededRng;

pub use crate::nn::sigmoid;

#[derive(Debug, Clone)]
pub struct UdmHeads {
    pub fe: Mlp,
    pub fa: Mlp,
    pub fsigma: Mlp,
}

impl UdmHeads {
    pub fn new(cfg: &UdmConfig, dim: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Self {
        let id = OutputActivation::Identity;
        let sp = OutputActivation::Softplus;
        UdmHeads {
            fe: Mlp::new(store, rng, "udm.fe", dim, &cfg.hidden, 1, cfg.dropout, id),
            fa: Mlp::new(store, rng, "udm.fa", dim, &cfg.hidden, 1, 0.0, sp),
            fsigma: Mlp::new(store, rng, "udm.fsigma", 2, &[cfg.sigma_hidden], 1, 0.0, sp),
        }
    }

    pub fn bind(cfg: &UdmConfig, store: &ParamStore) -> Option<Self> {
        let depth = cfg.hidden.len();
        Some(UdmHeads {
            fe: Mlp::bind(store, "udm.fe", depth, cfg.dropout, OutputActivation::Identity)?,
            fa: Mlp::bind(store, "udm.fa", depth, 0.0, OutputActivation::Softplus)?,
            fsigma: Mlp::bind(store, "udm.fsigma", 1, 0.0, OutputActivation::Softplus)?,
        })
    }

    /// Copy with f_e's dropout rate replaced.
    pub fn with_epistemic_dropout(&self, rate: f64) -> Self {
        let mut out = self.clone();
        out.fe.blocks.iter_mut().for_each(|b| b.dropout = rate);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub mu: f64,
    pub u_e: f64,
    pub u_a: f64,
    pub sigma2: f64,
    /// MC-integrated probability from (mu, σ²).
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_probs: Option<Vec<f64>>,
}

/// Population variance (divide by n), computed about the first value so that
/// identical inputs give exactly 0.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let Some(&shift) = values.first() else {
        return 0.0;
    };
    let (s, s2) = values.iter().fold((0.0, 0.0), |(s, s2), &v| {
        let d = v - shift;
        (s + d, s2 + d * d)
    });
    let m = s / n;
    (s2 / n - m * m).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epistemic {
    pub mu: f64,
    pub u_e: f64,
    pub sampled_probs: Vec<f64>,
}

/// `t` dropout-active passes of f_e on a single embedding (1×D).
pub fn mc_epistemic(
    h: &Matrix,
    heads: &UdmHeads,
    store: &ParamStore,
    t: usize,
    rng: &mut SeededRng,
) -> Result<Epistemic> {
    if t < 2 || h.rows() != 1 {
        return Err(Error::Shape("mc_epistemic needs T ≥ 2 and a single embedding".into()));
    }
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, false);
    let x = tape.constant(h.clone());
    let logits: Vec<f64> = heads
        .fe
        .forward_passes(&mut tape, &mut ctx, x, t, Some(rng))
        .into_iter()
        .map(|v| tape.value(v).item())
        .collect();
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite {
            stage: "f_e logit".into(),
        });
    }
    let mu = logits.iter().sum::<f64>() / t as f64;
    let sampled_probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(Epistemic {
        mu,
        u_e: population_variance(&sampled_probs),
        sampled_probs,
    })
}

/// f_a on every row of `h`.
pub fn aleatoric(h: &Matrix, heads: &UdmHeads, store: &ParamStore) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, false);
    let x = tape.constant(h.clone());
    let y = heads.fa.forward(&mut tape, &mut ctx, x, None);
    let out = tape.value(y).data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "f_a output".into(),
        });
    }
    Ok(out)
}

pub fn total_uncertainty(u_a: f64, u_e: f64, heads: &UdmHeads, store: &ParamStore) -> f64 {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, false);
    let x = tape.constant(Matrix::row_vector(vec![u_a, u_e]));
    let y = heads.fsigma.forward(&mut tape, &mut ctx, x, None);
    tape.value(y).item()
}

/// `(1/N) Σ S(mu + √σ² ε_i)` with standard-normal ε_i.
pub fn mc_predictive_probability(mu: f64, sigma2: f64, n: usize, rng: &mut SeededRng) -> f64 {
    let s = sigma2.max(0.0).sqrt();
    // Accumulate offsets from S(mu) so that σ² = 0 returns S(mu) exactly.
    let base = sigmoid(mu);
    let mut acc = 0.0;
    for _ in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        acc += sigmoid(mu + s * e) - base;
    }
    base + acc / n as f64
}

/// Training-mode UDM outputs on a B×D embedding node.
pub struct UdmTrain {
    /// B×1 mean logit over the T passes.
    pub mu: Var,
    /// Detached per-row epistemic variance.
    pub u_e: Vec<f64>,
    pub u_a: Var,
    pub sigma2: Var,
    /// B×1 MC-integrated probability.
    pub p: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn forward_train(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UdmHeads,
    h: Var,
    t: usize,
    n: usize,
    dropout_rng: &mut SeededRng,
    mc_rng: &mut SeededRng,
) -> UdmTrain {
    let b = tape.value(h).rows();
    let passes = heads.fe.forward_passes(tape, ctx, h, t, Some(dropout_rng));
    let mu = tape.average(&passes);
    let u_e: Vec<f64> = (0..b)
        .map(|r| {
            let probs: Vec<f64> = passes
                .iter()
                .map(|&v| sigmoid(tape.value(v).get(r, 0)))
                .collect();
            population_variance(&probs)
        })
        .collect();
    let u_a = heads.fa.forward(tape, ctx, h, None);
    let ue_node = tape.constant(Matrix::column(u_e.clone()));
    let sig_in = tape.concat_cols(&[u_a, ue_node]);
    let sigma2 = heads.fsigma.forward(tape, ctx, sig_in, None);
    let p = integrate_on_tape(tape, mu, sigma2, n, mc_rng);
    UdmTrain {
        mu,
        u_e,
        u_a,
        sigma2,
        p,
    }
}

/// Reparameterised MC integration: mean over N columns of S(mu + √σ² ε).
pub fn integrate_on_tape(
    tape: &mut Tape,
    mu: Var,
    sigma2: Var,
    n: usize,
    rng: &mut SeededRng,
) -> Var {
    let b = tape.value(mu).rows();
    let eps: Vec<f64> = (0..b * n).map(|_| rng.sample(StandardNormal)).collect();
    let eps = tape.constant(Matrix::from_vec(b, n, eps));
    let s = tape.sqrt(sigma2);
    let spread = tape.mul_col(eps, s);
    let z = tape.add_col(spread, mu);
    let probs = tape.sigmoid(z);
    tape.mean_cols(probs)
}
