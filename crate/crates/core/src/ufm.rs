//! Uncertainty fusion: refines h with U_e and with U_a separately and classifies
//! the concatenated refinements.
//!
//! `h_e = f_re1(h ⊕ U_e)`, `h_e′ = f_re2(h ⊕ h_e)`, `h_a = h ⊙ U_a`,
//! `h_a′ = f_ra(h ⊕ h_a)`, `p_f = S(f_c(h_e′ ⊕ h_a′))`.

use crate::config::{FusionMode, UfmConfig};
use crate::nn::{Ctx, Mlp, OutputActivation, ParamStore, Tape, Var};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct UfmHeads {
    pub mode: FusionMode,
    pub re1: Option<Mlp>,
    pub re2: Option<Mlp>,
    pub ra: Option<Mlp>,
    pub fc: Option<Mlp>,
    pub upr_weights: [f64; 2],
}

impl UfmHeads {
    pub fn new(cfg: &UfmConfig, dim: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Self {
        let [r, c] = cfg.widths;
        let id = OutputActivation::Identity;
        let d = cfg.dropout;
        let mut heads = UfmHeads {
            mode: cfg.mode,
            re1: None,
            re2: None,
            ra: None,
            fc: None,
            upr_weights: cfg.upr_weights,
        };
        match cfg.mode {
            FusionMode::Ufm => {
                heads.re1 = Some(Mlp::new(store, rng, "ufm.re1", dim + 1, &[r], r, d, id));
                heads.re2 = Some(Mlp::new(store, rng, "ufm.re2", dim + r, &[r], r, d, id));
                heads.ra = Some(Mlp::new(store, rng, "ufm.ra", 2 * dim, &[r], r, d, id));
                heads.fc = Some(Mlp::new(store, rng, "ufm.fc", 2 * r, &[c], 1, d, id));
            }
            FusionMode::UprStyle => {
                heads.fc = Some(Mlp::new(store, rng, "ufm.fc", 2 * dim, &[c], 1, d, id));
            }
            FusionMode::None => {}
        }
        heads
    }

    pub fn bind(cfg: &UfmConfig, store: &ParamStore) -> Option<Self> {
        let id = OutputActivation::Identity;
        let d = cfg.dropout;
        let mut heads = UfmHeads {
            mode: cfg.mode,
            re1: None,
            re2: None,
            ra: None,
            fc: None,
            upr_weights: cfg.upr_weights,
        };
        if cfg.mode == FusionMode::Ufm {
            heads.re1 = Some(Mlp::bind(store, "ufm.re1", 1, d, id)?);
            heads.re2 = Some(Mlp::bind(store, "ufm.re2", 1, d, id)?);
            heads.ra = Some(Mlp::bind(store, "ufm.ra", 1, d, id)?);
        }
        if cfg.mode != FusionMode::None {
            heads.fc = Some(Mlp::bind(store, "ufm.fc", 1, d, id)?);
        }
        Some(heads)
    }
}

fn run(
    mlp: &Option<Mlp>,
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    x: Var,
    rng: Option<&mut SeededRng>,
) -> Var {
    mlp.as_ref()
        .expect("head exists for this fusion mode")
        .forward(tape, ctx, x, rng)
}

/// `h_e′ = f_re2(h ⊕ f_re1(h ⊕ U_e))`. `u_e` is B×1. Dropout applies only when
/// `rng` is given (training).
pub fn fuse_epistemic(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UfmHeads,
    h: Var,
    u_e: Var,
    mut rng: Option<&mut SeededRng>,
) -> Var {
    let x = tape.concat_cols(&[h, u_e]);
    let he = run(&heads.re1, tape, ctx, x, rng.as_deref_mut());
    let x = tape.concat_cols(&[h, he]);
    run(&heads.re2, tape, ctx, x, rng)
}

/// `h_a′ = f_ra(h ⊕ h ⊙ U_a)`. `u_a` is B×1.
pub fn fuse_aleatoric(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UfmHeads,
    h: Var,
    u_a: Var,
    rng: Option<&mut SeededRng>,
) -> Var {
    let ha = tape.mul_col(h, u_a);
    let x = tape.concat_cols(&[h, ha]);
    run(&heads.ra, tape, ctx, x, rng)
}

/// Logit of f_c on `h_e′ ⊕ h_a′`.
pub fn classify_logit(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UfmHeads,
    he: Var,
    ha: Var,
    rng: Option<&mut SeededRng>,
) -> Var {
    let x = tape.concat_cols(&[he, ha]);
    run(&heads.fc, tape, ctx, x, rng)
}

pub fn classify(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UfmHeads,
    he: Var,
    ha: Var,
    rng: Option<&mut SeededRng>,
) -> Var {
    let z = classify_logit(tape, ctx, heads, he, ha, rng);
    tape.sigmoid(z)
}

/// Output of the fusion stage.
pub struct Fused {
    /// B×1 final probability.
    pub p_f: Var,
    /// B×(2·width) representation fed to f_c, if the mode has one.
    pub features: Option<Var>,
}

/// Full fusion path for the configured mode. `p` is the MC-integrated
/// probability, which the `none` mode passes through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn fuse(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    heads: &UfmHeads,
    h: Var,
    u_e: Var,
    u_a: Var,
    p: Var,
    mut rng: Option<&mut SeededRng>,
) -> Fused {
    match heads.mode {
        FusionMode::None => Fused {
            p_f: p,
            features: None,
        },
        FusionMode::Ufm => {
            let he = fuse_epistemic(tape, ctx, heads, h, u_e, rng.as_deref_mut());
            let ha = fuse_aleatoric(tape, ctx, heads, h, u_a, rng.as_deref_mut());
            let features = tape.concat_cols(&[he, ha]);
            let z = run(&heads.fc, tape, ctx, features, rng);
            Fused {
                p_f: tape.sigmoid(z),
                features: Some(features),
            }
        }
        FusionMode::UprStyle => {
            let [we, wa] = heads.upr_weights;
            let se = tape.scale(u_e, we);
            let sa = tape.scale(u_a, wa);
            let weight = tape.add(se, sa);
            let refined = tape.mul_col(h, weight);
            let features = tape.concat_cols(&[h, refined]);
            let z = run(&heads.fc, tape, ctx, features, rng);
            Fused {
                p_f: tape.sigmoid(z),
                features: Some(features),
            }
        }
    }
}
