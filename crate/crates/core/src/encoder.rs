//! Motion encoders mapping a preprocessed pose sequence to an embedding h.
//!
//! Encoders are plug-ins behind [`MotionEncoder`]; [`build_encoder`] and
//! [`bind_encoder`] resolve them by name. The reference `graph-temporal`
//! encoder stacks blocks of joint mixing over the normalised skeleton graph, a
//! per-joint linear map, a temporal convolution and ReLU, then averages over
//! frames and joints and projects to D.

use std::rc::Rc;

use rand::Rng;

use crate::config::EncoderConfig;
use crate::dataset::PoseSequence;
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, Ctx, Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::rng::SeededRng;
use crate::skeleton::SkeletonTopology;

pub const GRAPH_TEMPORAL: &str = "graph-temporal";

/// `D^{-1/2} (A + I) D^{-1/2}` for the skeleton adjacency A.
pub fn build_graph(topology: &SkeletonTopology) -> Matrix {
    let j = topology.joint_count();
    let mut a = topology.adjacency();
    for i in 0..j {
        a.set(i, i, 1.0);
    }
    let deg: Vec<f64> = (0..j).map(|r| a.row(r).iter().sum::<f64>()).collect();
    let mut out = Matrix::zeros(j, j);
    for r in 0..j {
        for c in 0..j {
            out.set(r, c, a.get(r, c) / (deg[r] * deg[c]).sqrt());
        }
    }
    out
}

/// Contract every encoder plug-in satisfies.
pub trait MotionEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn joints(&self) -> usize;
    fn channels(&self) -> usize;
    fn embedding_dim(&self) -> usize;

    /// Encodes one clip given as an (M·J)×C matrix (rows ordered frame, joint),
    /// of which the first `valid_frames` frames are real. Returns a 1×D node.
    fn encode_one(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<'_>,
        input: Matrix,
        frames: usize,
        valid_frames: usize,
    ) -> Result<Var>;
}

/// Rows ordered (frame, joint), columns = channels.
pub fn sequence_matrix(seq: &PoseSequence) -> Matrix {
    Matrix::from_vec(
        seq.frames() * seq.joints(),
        seq.channels(),
        seq.coords().to_vec(),
    )
}

/// Encodes a batch into a B×D node. Shorter clips are right-padded with their
/// last frame to the batch maximum and pooled over their true length.
pub fn encode_batch(
    encoder: &dyn MotionEncoder,
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    batch: &[&PoseSequence],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let max_frames = batch.iter().map(|s| s.frames()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(batch.len());
    for seq in batch {
        if seq.joints() != encoder.joints() || seq.channels() != encoder.channels() {
            return Err(Error::Shape(format!(
                "clip `{}` is {}×{} per frame, encoder expects {}×{}",
                seq.clip_id,
                seq.joints(),
                seq.channels(),
                encoder.joints(),
                encoder.channels()
            )));
        }
        let mut data = seq.coords().to_vec();
        let last = seq.frame(seq.frames() - 1).to_vec();
        for _ in seq.frames()..max_frames {
            data.extend_from_slice(&last);
        }
        let input = Matrix::from_vec(max_frames * seq.joints(), seq.channels(), data);
        rows.push(encoder.encode_one(tape, ctx, input, max_frames, seq.frames())?);
    }
    Ok(if rows.len() == 1 {
        rows[0]
    } else {
        tape.stack_rows(&rows)
    })
}

/// Evaluation-mode embeddings as plain matrices (one row per clip).
pub fn embed(
    encoder: &dyn MotionEncoder,
    store: &ParamStore,
    batch: &[&PoseSequence],
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, false);
    let h = encode_batch(encoder, &mut tape, &mut ctx, batch)?;
    Ok(tape.value(h).clone())
}

#[derive(Debug, Clone)]
struct GtBlock {
    proj: Linear,
    conv: Option<(ParamId, ParamId)>,
    stride: usize,
}

#[derive(Debug, Clone)]
pub struct GraphTemporalEncoder {
    adjacency: Matrix,
    blocks: Vec<GtBlock>,
    head: Linear,
    kernel: usize,
    channels: usize,
}

fn he_uniform(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

impl GraphTemporalEncoder {
    pub fn new(
        cfg: &EncoderConfig,
        topology: &SkeletonTopology,
        store: &mut ParamStore,
        rng: &mut SeededRng,
    ) -> Self {
        let channels = topology.channel_count;
        let mut blocks = Vec::with_capacity(cfg.widths.len());
        let mut cin = channels;
        for (i, (&cout, &stride)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            let name = format!("encoder.block{i}");
            let w = he_uniform(rng, cin, cout, cin);
            let proj = Linear {
                weight: store.insert(format!("{name}.proj.w"), w, true),
                bias: store.insert(format!("{name}.proj.b"), Matrix::zeros(1, cout), true),
                fan_in: cin,
                fan_out: cout,
            };
            let conv = (cfg.kernel > 0).then(|| {
                let fan = cfg.kernel * cout;
                let w = he_uniform(rng, fan, cout, fan);
                (
                    store.insert(format!("{name}.conv.w"), w, true),
                    store.insert(format!("{name}.conv.b"), Matrix::zeros(1, cout), true),
                )
            });
            blocks.push(GtBlock { proj, conv, stride });
            cin = cout;
        }
        let head = Linear::new(store, rng, "encoder.head", cin, cfg.embedding_dim);
        GraphTemporalEncoder {
            adjacency: build_graph(topology),
            blocks,
            head,
            kernel: cfg.kernel,
            channels,
        }
    }

    pub fn bind(cfg: &EncoderConfig, topology: &SkeletonTopology, store: &ParamStore) -> Option<Self> {
        let mut blocks = Vec::with_capacity(cfg.widths.len());
        for (i, &stride) in cfg.strides.iter().enumerate() {
            let name = format!("encoder.block{i}");
            let proj = Linear::bind(store, &format!("{name}.proj"))?;
            let conv = if cfg.kernel > 0 {
                Some((
                    store.id(&format!("{name}.conv.w"))?,
                    store.id(&format!("{name}.conv.b"))?,
                ))
            } else {
                None
            };
            blocks.push(GtBlock { proj, conv, stride });
        }
        Some(GraphTemporalEncoder {
            adjacency: build_graph(topology),
            blocks,
            head: Linear::bind(store, "encoder.head")?,
            kernel: cfg.kernel,
            channels: topology.channel_count,
        })
    }
}

impl MotionEncoder for GraphTemporalEncoder {
    fn name(&self) -> &str {
        GRAPH_TEMPORAL
    }

    fn joints(&self) -> usize {
        self.adjacency.rows()
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn embedding_dim(&self) -> usize {
        self.head.fan_out
    }

    fn encode_one(
        &self,
        tape: &mut Tape,
        ctx: &mut Ctx<'_>,
        input: Matrix,
        frames: usize,
        valid_frames: usize,
    ) -> Result<Var> {
        let joints = self.joints();
        if input.shape() != (frames * joints, self.channels) || valid_frames == 0 {
            return Err(Error::Shape(format!(
                "encoder input {:?} does not match {frames} frames × {joints} joints × {} channels",
                input.shape(),
                self.channels
            )));
        }
        let adjacency = Rc::new(self.adjacency.clone());
        let mut x = tape.constant(input);
        let mut frames = frames;
        let mut valid = valid_frames;
        for (i, block) in self.blocks.iter().enumerate() {
            let mixed = tape.joint_mix(x, Rc::clone(&adjacency), frames);
            let mut y = block.proj.forward(tape, ctx, mixed);
            if let Some((w, b)) = block.conv {
                let geometry = ConvGeometry {
                    frames,
                    joints,
                    kernel: self.kernel,
                    stride: block.stride,
                    pad: self.kernel / 2,
                };
                let wv = tape.param(ctx.store, w);
                let bv = tape.param(ctx.store, b);
                let conv = tape.temporal_conv(y, wv, geometry);
                y = tape.add_row(conv, bv);
                frames = geometry.out_frames();
                valid = valid.div_ceil(block.stride).min(frames);
            }
            x = tape.relu(y);
            if !tape.value(x).is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("encoder block {i}"),
                });
            }
        }
        let pooled = tape.masked_mean_pool(x, joints, valid.max(1));
        Ok(self.head.forward(tape, ctx, pooled))
    }
}

pub fn build_encoder(
    cfg: &EncoderConfig,
    topology: &SkeletonTopology,
    store: &mut ParamStore,
    rng: &mut SeededRng,
) -> Result<Box<dyn MotionEncoder>> {
    match cfg.name.as_str() {
        GRAPH_TEMPORAL => Ok(Box::new(GraphTemporalEncoder::new(cfg, topology, store, rng))),
        other => Err(Error::Config(format!("unknown encoder plug-in `{other}`"))),
    }
}

pub fn bind_encoder(
    cfg: &EncoderConfig,
    topology: &SkeletonTopology,
    store: &ParamStore,
) -> Result<Box<dyn MotionEncoder>> {
    match cfg.name.as_str() {
        GRAPH_TEMPORAL => GraphTemporalEncoder::bind(cfg, topology, store)
            .map(|e| Box::new(e) as Box<dyn MotionEncoder>)
            .ok_or_else(|| Error::Checkpoint("encoder parameters missing".into())),
        other => Err(Error::Config(format!("unknown encoder plug-in `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::skeleton::Anchor;

    fn chain(j: usize, edges: Vec<(usize, usize)>) -> SkeletonTopology {
        SkeletonTopology {
            joint_names: (0..j).map(|i| format!("j{i}")).collect(),
            edges,
            hip_left: 0,
            hip_right: 1.min(j - 1),
            knee_left: 0,
            knee_right: 0,
            ankle_left: 0,
            ankle_right: 0,
            neck: Anchor::Joint(0),
            nose: 0,
            facial_indices: vec![],
            channel_count: 2,
        }
    }

    #[test]
    fn normalised_adjacency_examples() {
        let a = build_graph(&chain(2, vec![(0, 1)]));
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let eye = build_graph(&chain(3, vec![]));
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(eye.get(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn shape_contract_and_determinism() {
        let topo = SkeletonTopology::coco17();
        let (topo, _) = topo.without_joints(&topo.facial_indices).unwrap();
        let cfg = EncoderConfig::default();
        let mut store = ParamStore::new();
        let enc = build_encoder(&cfg, &topo, &mut store, &mut seeded(0)).unwrap();
        let clips: Vec<PoseSequence> = (0..3)
            .map(|k| {
                let coords = (0..40 * 13 * 2)
                    .map(|i| ((i * (k + 3)) as f64 * 0.37).sin())
                    .collect();
                PoseSequence::new(format!("c{k}"), "s", 10.0, 0, 40, 13, 2, coords).unwrap()
            })
            .collect();
        let refs: Vec<&PoseSequence> = clips.iter().collect();
        let a = embed(enc.as_ref(), &store, &refs).unwrap();
        assert_eq!(a.shape(), (3, 256));
        assert_eq!(a, embed(enc.as_ref(), &store, &refs).unwrap());
        let rev: Vec<&PoseSequence> = clips.iter().rev().collect();
        let b = embed(enc.as_ref(), &store, &rev).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(2 - r));
        }
    }

    #[test]
    fn unknown_plugin_is_rejected() {
        let cfg = EncoderConfig {
            name: "ctr-gcn".into(),
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        assert!(build_encoder(&cfg, &SkeletonTopology::coco17(), &mut store, &mut seeded(0)).is_err());
    }
}
