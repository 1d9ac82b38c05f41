//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use gma_uncertainty::config::{Config, FusionMode, UdmConfig, UfmConfig};
use gma_uncertainty::dataset::PoseSequence;
use gma_uncertainty::metrics::PredictionRecord;
use gma_uncertainty::nn::{Ctx, Matrix, ParamId, ParamStore, Tape, Var};
use gma_uncertainty::objective::{bce_var, loss_unc_var, Penalty};
use gma_uncertainty::rng::{seeded, SeededRng};
use gma_uncertainty::skeleton::SkeletonTopology;
use gma_uncertainty::udm::{self, UdmHeads, UncertaintyEstimate};
use gma_uncertainty::ufm::{self, UfmHeads};
use rand::Rng;

/// Small network for fast end-to-end tests.
pub fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.encoder.widths = vec![8, 16];
    cfg.encoder.strides = vec![2, 2];
    cfg.encoder.embedding_dim = 16;
    cfg.udm.hidden = vec![16, 8];
    cfg.udm.t_train = 4;
    cfg.udm.t_eval = 16;
    cfg.udm.n = 32;
    cfg.ufm.widths = [16, 8];
    cfg.train.epochs = 2;
    cfg.train.warmup_epochs = 1;
    cfg.train.milestones = vec![2];
    cfg
}

/// Training setup of the end-to-end acceptance runs.
pub fn acceptance_config(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.train.epochs = 40;
    cfg.train.milestones = vec![20, 30];
    cfg.train.seed = seed;
    cfg.train.dropout_seed = 100 + seed;
    cfg.train.mc_seed = 200 + seed;
    cfg.train.augment_seed = 300 + seed;
    cfg
}

pub fn coco_names_index(topo: &SkeletonTopology, name: &str) -> usize {
    topo.joint_names
        .iter()
        .position(|n| n == name)
        .unwrap_or_else(|| panic!("joint {name} missing"))
}

/// Random clip: a jittered template plus a random similarity transform.
pub fn random_clip(rng: &mut SeededRng, id: &str, frames: usize) -> PoseSequence {
    let template: [[f64; 2]; 17] = [
        [0.0, 260.0],
        [12.0, 272.0],
        [-12.0, 272.0],
        [28.0, 262.0],
        [-28.0, 262.0],
        [55.0, 180.0],
        [-55.0, 180.0],
        [90.0, 110.0],
        [-90.0, 110.0],
        [110.0, 40.0],
        [-110.0, 40.0],
        [30.0, 0.0],
        [-30.0, 0.0],
        [40.0, -95.0],
        [-40.0, -95.0],
        [45.0, -180.0],
        [-45.0, -180.0],
    ];
    let angle = rng.random_range(-1.0..1.0);
    let scale = rng.random_range(0.5..2.0);
    let (s, c) = f64::sin_cos(angle);
    let shift = [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)];
    let mut coords = Vec::with_capacity(frames * 34);
    for _ in 0..frames {
        for [x, y] in template {
            let x = x + rng.random_range(-8.0..8.0);
            let y = y + rng.random_range(-8.0..8.0);
            coords.push(shift[0] + scale * (c * x - s * y));
            coords.push(shift[1] + scale * (s * x + c * y));
        }
    }
    PoseSequence::new(id, "s", 10.0, 0, frames, 17, 2, coords).unwrap()
}

/// Random record set with deliberate ties in scores and uncertainties.
pub fn random_records(rng: &mut SeededRng, n: usize) -> Vec<PredictionRecord> {
    let mut out: Vec<PredictionRecord> = (0..n)
        .map(|i| {
            let tie = rng.random_bool(0.3);
            let draw = |rng: &mut SeededRng| {
                let v: f64 = rng.random();
                if tie {
                    (v * 5.0).round() / 5.0
                } else {
                    v
                }
            };
            let p_f = draw(rng).clamp(0.001, 0.999);
            let est = UncertaintyEstimate {
                mu: 0.0,
                u_e: 0.25 * draw(rng),
                u_a: draw(rng),
                sigma2: 2.0 * draw(rng),
                p: p_f,
                sampled_probs: None,
            };
            PredictionRecord::new(format!("r{i}"), u8::from(rng.random_bool(0.5)), p_f, est)
        })
        .collect();
    // Both classes present.
    out[0].y_true = 0;
    out[1].y_true = 1;
    out
}

/// Norm-wise relative error between analytic and numeric gradients. The
/// denominator is floored at 1e-6: a bias feeding a training-mode batch norm
/// has an exactly zero gradient, where central differences only return
/// round-off (~1e-10) and a pure ratio is meaningless.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-6)
}

/// Central-difference check of a scalar graph built by `build` from leaf
/// inputs and the parameters in `store`. Returns `(tensor name, rel err)` for
/// each input and each checked parameter.
pub fn gradient_check(
    store: &ParamStore,
    inputs: &[(&str, Matrix)],
    params: &[ParamId],
    step: f64,
    build: &dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Var,
) -> Vec<(String, f64)> {
    let eval = |store: &ParamStore, inputs: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
        let out = build(&mut tape, store, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, m)| tape.input(m.clone())).collect();
    let out = build(&mut tape, store, &vars);
    let grads = tape.backward(out);
    let pgrads = grads.params(&tape);
    let base: Vec<Matrix> = inputs.iter().map(|(_, m)| m.clone()).collect();

    let mut report = Vec::new();
    for (k, (name, m)) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; m.data().len()]);
        let numeric: Vec<f64> = (0..m.data().len())
            .map(|i| {
                let mut plus = base.clone();
                plus[k].data_mut()[i] += step;
                let mut minus = base.clone();
                minus[k].data_mut()[i] -= step;
                (eval(store, &plus) - eval(store, &minus)) / (2.0 * step)
            })
            .collect();
        report.push((name.to_string(), rel_err(&analytic, &numeric)));
    }
    for &id in params {
        let len = store.value(id).data().len();
        let analytic = pgrads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; len]);
        let numeric: Vec<f64> = (0..len)
            .map(|i| {
                let mut plus = store.clone();
                plus.value_mut(id).data_mut()[i] += step;
                let mut minus = store.clone();
                minus.value_mut(id).data_mut()[i] -= step;
                (eval(&plus, &base) - eval(&minus, &base)) / (2.0 * step)
            })
            .collect();
        report.push((store.name(id).to_string(), rel_err(&analytic, &numeric)));
    }
    report
}

pub const MICRO_D: usize = 8;
pub const MICRO_B: usize = 3;
pub const MICRO_T: usize = 4;
pub const MICRO_N: usize = 16;

fn micro_matrix(rng: &mut SeededRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

fn labels() -> Matrix {
    Matrix::column(vec![1.0, 0.0, 1.0])
}

/// L_cls = BCE(p, y) against a probability leaf.
pub fn check_l_cls() -> Vec<(String, f64)> {
    let mut rng = seeded(11);
    let p = micro_matrix(&mut rng, MICRO_B, 1, 0.05, 0.95);
    gradient_check(&ParamStore::new(), &[("p", p)], &[], 1e-5, &|tape, _, v| {
        bce_var(tape, v[0], &labels())
    })
}

/// L_unc against (mu, σ²) leaves, and against f_a and f_σ parameters through
/// the full disentanglement forward pass. U_e enters f_σ detached, so f_e and
/// h are covered by the (mu, σ²) leaf check instead.
pub fn check_l_unc() -> Vec<(String, f64)> {
    let mut rng = seeded(12);
    let mu = micro_matrix(&mut rng, MICRO_B, 1, -2.0, 2.0);
    let s2 = micro_matrix(&mut rng, MICRO_B, 1, 0.2, 3.0);
    let mut out = Vec::new();
    for variant in [Penalty::Exp, Penalty::L2, Penalty::None] {
        let r = gradient_check(
            &ParamStore::new(),
            &[("mu", mu.clone()), ("sigma2", s2.clone())],
            &[],
            1e-5,
            &|tape, _, v| {
                let p = udm::integrate_on_tape(tape, v[0], v[1], MICRO_N, &mut seeded(5));
                loss_unc_var(tape, p, &labels(), v[1], 1.0, variant)
            },
        );
        out.extend(r.into_iter().map(|(n, e)| (format!("{n} ({variant:?})"), e)));
    }

    let cfg = UdmConfig {
        hidden: vec![6, 4],
        sigma_hidden: 4,
        t_train: MICRO_T,
        n: MICRO_N,
        ..UdmConfig::default()
    };
    let mut store = ParamStore::new();
    let heads = UdmHeads::new(&cfg, MICRO_D, &mut store, &mut seeded(13));
    let h = micro_matrix(&mut rng, MICRO_B, MICRO_D, -1.0, 1.0);
    let checked: Vec<ParamId> = store
        .ids()
        .filter(|&id| {
            let n = store.name(id);
            store.is_trainable(id) && (n.starts_with("udm.fa") || n.starts_with("udm.fsigma"))
        })
        .collect();
    let r = gradient_check(&store, &[], &checked, 1e-5, &|tape, store, _| {
        let mut ctx = Ctx::new(store, true);
        let hv = tape.constant(h.clone());
        let u = udm::forward_train(tape, &mut ctx, &heads, hv, MICRO_T, MICRO_N, &mut seeded(6), &mut seeded(7));
        loss_unc_var(tape, u.p, &labels(), u.sigma2, 1.0, Penalty::Exp)
    });
    out.extend(r);
    out
}

/// L_cls of the fused probability p_f(h, U_e, U_a) against the three inputs
/// and every fusion-head parameter, with fixed dropout masks.
pub fn check_composite() -> Vec<(String, f64)> {
    let mut rng = seeded(14);
    let cfg = UfmConfig {
        mode: FusionMode::Ufm,
        widths: [MICRO_D, 4],
        ..UfmConfig::default()
    };
    let mut store = ParamStore::new();
    let heads = UfmHeads::new(&cfg, MICRO_D, &mut store, &mut seeded(15));
    let h = micro_matrix(&mut rng, MICRO_B, MICRO_D, -1.0, 1.0);
    let ue = micro_matrix(&mut rng, MICRO_B, 1, 0.0, 0.25);
    let ua = micro_matrix(&mut rng, MICRO_B, 1, 0.1, 2.0);
    let params: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    gradient_check(
        &store,
        &[("h", h), ("U_e", ue), ("U_a", ua)],
        &params,
        1e-5,
        &|tape, store, v| {
            let mut ctx = Ctx::new(store, true);
            let p = tape.constant(Matrix::column(vec![0.5; MICRO_B]));
            let mut drop = seeded(8);
            let fused = ufm::fuse(tape, &mut ctx, &heads, v[0], v[1], v[2], p, Some(&mut drop));
            bce_var(tape, fused.p_f, &labels())
        },
    )
}

pub fn max_err(report: &[(String, f64)]) -> (String, f64) {
    report
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}
