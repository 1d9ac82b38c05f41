use rand::Rng;

use super::{BatchStats, Matrix, ParamId, ParamStore, Tape, Var};
use crate::rng::SeededRng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass context shared by all layers of one model evaluation.
pub struct Ctx<'a> {
    pub store: &'a ParamStore,
    /// Use per-batch statistics in batch normalisation (training) instead of
    /// the stored running statistics.
    pub batch_stats: bool,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, batch_stats: bool) -> Self {
        Ctx {
            store,
            batch_stats,
            bn_updates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

/// Folds batch statistics into running buffers. Several updates for the same
/// layer in one step are averaged first.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    fold_bn_updates(store, updates, BN_MOMENTUM);
}

/// Overwrites running buffers with the (averaged) batch statistics.
pub fn set_bn_stats(store: &mut ParamStore, updates: &[BnUpdate]) {
    fold_bn_updates(store, updates, 1.0);
}

fn fold_bn_updates(store: &mut ParamStore, updates: &[BnUpdate], momentum: f64) {
    let mut grouped: Vec<(ParamId, ParamId, Vec<&BatchStats>)> = Vec::new();
    for u in updates {
        match grouped.iter_mut().find(|(m, _, _)| *m == u.running_mean) {
            Some((_, _, list)) => list.push(&u.stats),
            None => grouped.push((u.running_mean, u.running_var, vec![&u.stats])),
        }
    }
    for (mean_id, var_id, list) in grouped {
        let k = list.len() as f64;
        let width = list[0].mean.len();
        let mut mean = vec![0.0; width];
        let mut var = vec![0.0; width];
        for s in &list {
            for c in 0..width {
                mean[c] += s.mean[c] / k;
                var[c] += s.var_unbiased[c] / k;
            }
        }
        for (r, m) in store.value_mut(mean_id).data_mut().iter_mut().zip(&mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in store.value_mut(var_id).data_mut().iter_mut().zip(&var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

/// Inverted dropout mask: kept units are scaled by 1/(1−rate); rate 1 zeroes all.
pub fn dropout_mask(rng: &mut SeededRng, rows: usize, cols: usize, rate: f64) -> Matrix {
    if rate >= 1.0 {
        return Matrix::zeros(rows, cols);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weight stored as fan_in×fan_out; uniform ±1/√fan_in initialisation.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ParamStore::uniform(rng, fan_in, fan_out, bound);
        let b = ParamStore::uniform(rng, 1, fan_out, bound);
        Linear {
            weight: store.insert(format!("{name}.w"), w, true),
            bias: store.insert(format!("{name}.b"), b, true),
            fan_in,
            fan_out,
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let weight = store.id(&format!("{name}.w"))?;
        let bias = store.id(&format!("{name}.b"))?;
        let (fan_in, fan_out) = store.value(weight).shape();
        Some(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, ctx: &Ctx<'_>, x: Var) -> Var {
        let w = tape.param(ctx.store, self.weight);
        let b = tape.param(ctx.store, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        BatchNorm {
            gamma: store.insert(format!("{name}.gamma"), Matrix::filled(1, width, 1.0), true),
            beta: store.insert(format!("{name}.beta"), Matrix::zeros(1, width), true),
            running_mean: store.insert(
                format!("{name}.running_mean"),
                Matrix::zeros(1, width),
                false,
            ),
            running_var: store.insert(
                format!("{name}.running_var"),
                Matrix::filled(1, width, 1.0),
                false,
            ),
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(BatchNorm {
            gamma: store.id(&format!("{name}.gamma"))?,
            beta: store.id(&format!("{name}.beta"))?,
            running_mean: store.id(&format!("{name}.running_mean"))?,
            running_var: store.id(&format!("{name}.running_var"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let gamma = tape.param(ctx.store, self.gamma);
        let beta = tape.param(ctx.store, self.beta);
        if ctx.batch_stats {
            let (y, stats) = tape.batch_norm_train(x, gamma, beta, BN_EPS);
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                stats,
            });
            y
        } else {
            let rm = ctx.store.value(self.running_mean).data().to_vec();
            let rv = ctx.store.value(self.running_var).data().to_vec();
            tape.batch_norm_eval(x, gamma, beta, &rm, &rv, BN_EPS)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Softplus,
}

/// One hidden block: linear → batch norm → ReLU → dropout.
#[derive(Debug, Clone)]
pub struct Block {
    pub linear: Linear,
    pub norm: BatchNorm,
    pub dropout: f64,
}

/// Stack of hidden blocks followed by a final linear layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub blocks: Vec<Block>,
    pub head: Linear,
    pub output: OutputActivation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        input: usize,
        hidden: &[usize],
        output_width: usize,
        dropout: f64,
        output: OutputActivation,
    ) -> Self {
        let mut blocks = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            let prefix = format!("{name}.{i}");
            blocks.push(Block {
                linear: Linear::new(store, rng, &format!("{prefix}.linear"), width, h),
                norm: BatchNorm::new(store, &format!("{prefix}.bn"), h),
                dropout,
            });
            width = h;
        }
        let head = Linear::new(store, rng, &format!("{name}.out"), width, output_width);
        Mlp {
            blocks,
            head,
            output,
        }
    }

    pub fn bind(
        store: &ParamStore,
        name: &str,
        depth: usize,
        dropout: f64,
        output: OutputActivation,
    ) -> Option<Self> {
        let blocks = (0..depth)
            .map(|i| {
                Some(Block {
                    linear: Linear::bind(store, &format!("{name}.{i}.linear"))?,
                    norm: BatchNorm::bind(store, &format!("{name}.{i}.bn"))?,
                    dropout,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Mlp {
            blocks,
            head: Linear::bind(store, &format!("{name}.out"))?,
            output,
        })
    }

    pub fn input_width(&self) -> usize {
        self.blocks
            .first()
            .map(|b| b.linear.fan_in)
            .unwrap_or(self.head.fan_in)
    }

    /// Single pass. Dropout is applied only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<'_>,
        x: Var,
        rng: Option<&mut SeededRng>,
    ) -> Var {
        self.forward_passes(tape, ctx, x, 1, rng)
            .pop()
            .expect("one pass")
    }

    /// `passes` stochastic passes sharing everything up to the first dropout
    /// layer, which is deterministic given the input.
    pub fn forward_passes(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<'_>,
        x: Var,
        passes: usize,
        mut rng: Option<&mut SeededRng>,
    ) -> Vec<Var> {
        let Some((first, rest)) = self.blocks.split_first() else {
            let y = self.finish(tape, ctx, x);
            return vec![y; passes];
        };
        let pre = block_body(first, tape, ctx, x);
        let mut outs = Vec::with_capacity(passes);
        for _ in 0..passes {
            let mut h = apply_dropout(tape, pre, first.dropout, rng.as_deref_mut());
            for block in rest {
                let body = block_body(block, tape, ctx, h);
                h = apply_dropout(tape, body, block.dropout, rng.as_deref_mut());
            }
            outs.push(self.finish(tape, ctx, h));
        }
        outs
    }

    fn finish(&self, tape: &mut Tape, ctx: &mut Ctx<'_>, h: Var) -> Var {
        let y = self.head.forward(tape, ctx, h);
        match self.output {
            OutputActivation::Identity => y,
            OutputActivation::Softplus => tape.softplus(y),
        }
    }
}

fn block_body(block: &Block, tape: &mut Tape, ctx: &mut Ctx<'_>, x: Var) -> Var {
    let y = block.linear.forward(tape, ctx, x);
    let y = block.norm.forward(tape, ctx, y);
    tape.relu(y)
}

fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut SeededRng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let (r, c) = tape.value(x).shape();
            let mask = dropout_mask(rng, r, c, rate);
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}
