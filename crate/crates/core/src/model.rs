//! The full network: encoder, disentanglement heads and fusion heads over one
//! parameter store, with the training-mode loss graph and per-clip inference.

use crate::config::{Config, FusionMode};
use crate::dataset::PoseSequence;
use crate::encoder::{bind_encoder, build_encoder, encode_batch, MotionEncoder};
use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;
use crate::nn::{BnUpdate, Ctx, Matrix, ParamStore, Tape, Var};
use crate::objective::{bce_var, loss_unc_var};
use crate::preprocess::{output_topology, preprocess};
use crate::rng::{derive_seed, seeded, stable_hash, stream, SeededRng};
use crate::skeleton::SkeletonTopology;
use crate::udm::{self, UdmHeads, UncertaintyEstimate};
use crate::ufm::{self, UfmHeads};

pub struct Model {
    pub config: Config,
    /// Topology of raw input clips.
    pub topology: SkeletonTopology,
    /// Topology after preprocessing (what the encoder sees).
    pub net_topology: SkeletonTopology,
    pub store: ParamStore,
    pub encoder: Box<dyn MotionEncoder>,
    pub udm: UdmHeads,
    pub ufm: UfmHeads,
}

/// Scalar loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l_cls: f64,
    pub l_unc: f64,
    pub l_mu: f64,
}

pub struct TrainStep {
    pub loss: Var,
    pub terms: LossTerms,
    pub bn_updates: Vec<BnUpdate>,
}

/// Rng streams consumed by one training step.
pub struct StepRngs {
    pub dropout: SeededRng,
    pub mc: SeededRng,
}

impl StepRngs {
    pub fn for_step(cfg: &Config, epoch: usize, step: usize) -> Self {
        let parts = [epoch as u64, step as u64];
        StepRngs {
            dropout: stream(cfg.train.dropout_seed, &parts),
            mc: stream(cfg.train.mc_seed, &parts),
        }
    }
}

/// Everything inference produces for one clip.
#[derive(Debug, Clone)]
pub struct Inference {
    pub record: PredictionRecord,
    pub h: Vec<f64>,
    pub fused: Option<Vec<f64>>,
}

impl Model {
    pub fn new(config: Config, topology: SkeletonTopology) -> Result<Self> {
        config.validate()?;
        topology.validate()?;
        let net_topology = output_topology(&topology, &config.preprocess)?;
        let mut store = ParamStore::new();
        let mut rng = seeded(derive_seed(config.train.seed, &[0x1417]));
        let encoder = build_encoder(&config.encoder, &net_topology, &mut store, &mut rng)?;
        let dim = config.encoder.embedding_dim;
        let udm = UdmHeads::new(&config.udm, dim, &mut store, &mut rng);
        let ufm = UfmHeads::new(&config.ufm, dim, &mut store, &mut rng);
        Ok(Model {
            config,
            topology,
            net_topology,
            store,
            encoder,
            udm,
            ufm,
        })
    }

    /// Rebinds the architecture described by `config` onto stored parameters.
    pub fn from_store(config: Config, topology: SkeletonTopology, store: ParamStore) -> Result<Self> {
        config.validate()?;
        topology.validate()?;
        let net_topology = output_topology(&topology, &config.preprocess)?;
        let encoder = bind_encoder(&config.encoder, &net_topology, &store)?;
        let missing = |what: &str| Error::Checkpoint(format!("{what} parameters missing"));
        let udm = UdmHeads::bind(&config.udm, &store).ok_or_else(|| missing("udm"))?;
        let ufm = UfmHeads::bind(&config.ufm, &store).ok_or_else(|| missing("ufm"))?;
        Ok(Model {
            config,
            topology,
            net_topology,
            store,
            encoder,
            udm,
            ufm,
        })
    }

    pub fn preprocess(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        if seq.joints() != self.topology.joint_count() {
            return Err(Error::Topology(format!(
                "clip `{}` has {} joints, the model expects {}",
                seq.clip_id,
                seq.joints(),
                self.topology.joint_count()
            )));
        }
        Ok(preprocess(seq, &self.topology, &self.config.preprocess)?.0)
    }

    /// Builds the loss graph for a batch of preprocessed (and possibly
    /// augmented) clips.
    pub fn train_step(
        &self,
        tape: &mut Tape,
        batch: &[&PoseSequence],
        rngs: &mut StepRngs,
    ) -> Result<TrainStep> {
        let mut ctx = Ctx::new(&self.store, true);
        let h = encode_batch(self.encoder.as_ref(), tape, &mut ctx, batch)?;
        let y = Matrix::column(batch.iter().map(|s| s.label as f64).collect());
        let cfg = &self.config;
        let u = udm::forward_train(
            tape,
            &mut ctx,
            &self.udm,
            h,
            cfg.udm.t_train,
            cfg.udm.n,
            &mut rngs.dropout,
            &mut rngs.mc,
        );
        let l_unc = loss_unc_var(tape, u.p, &y, u.sigma2, cfg.loss.lambda0, cfg.loss.penalty);
        let ue = tape.constant(Matrix::column(u.u_e.clone()));
        let fused = ufm::fuse(
            tape,
            &mut ctx,
            &self.ufm,
            h,
            ue,
            u.u_a,
            u.p,
            Some(&mut rngs.dropout),
        );
        let l_cls = bce_var(tape, fused.p_f, &y);
        let weighted = tape.scale(l_unc, cfg.loss.lambda1);
        let mut loss = tape.add(l_cls, weighted);
        let mut l_mu_value = 0.0;
        if cfg.loss.use_l_mu {
            let pm = tape.sigmoid(u.mu);
            let l_mu = bce_var(tape, pm, &y);
            l_mu_value = tape.value(l_mu).item();
            loss = tape.add(loss, l_mu);
        }
        let terms = LossTerms {
            total: tape.value(loss).item(),
            l_cls: tape.value(l_cls).item(),
            l_unc: tape.value(l_unc).item(),
            l_mu: l_mu_value,
        };
        Ok(TrainStep {
            loss,
            terms,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Replaces the running statistics of every head batch norm with batch
    /// statistics over `h` (N×D embeddings of clean clips). f_e keeps its
    /// dropout, as at inference; the fusion heads run without it.
    pub fn recalibrate_heads(&mut self, h: &Matrix, rngs: &mut StepRngs) {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&self.store, true);
        let hv = tape.constant(h.clone());
        let cfg = &self.config;
        let u = udm::forward_train(
            &mut tape,
            &mut ctx,
            &self.udm,
            hv,
            cfg.udm.t_train,
            cfg.udm.n,
            &mut rngs.dropout,
            &mut rngs.mc,
        );
        let ue = tape.constant(Matrix::column(u.u_e));
        ufm::fuse(&mut tape, &mut ctx, &self.ufm, hv, ue, u.u_a, u.p, None);
        let updates = ctx.bn_updates;
        crate::nn::set_bn_stats(&mut self.store, &updates);
    }

    /// Rng of f_e's dropout for one clip at inference.
    pub fn clip_dropout_rng(&self, clip_id: &str) -> SeededRng {
        stream(self.config.train.dropout_seed, &[0xE7A1, stable_hash(clip_id)])
    }

    pub fn clip_mc_rng(&self, clip_id: &str) -> SeededRng {
        stream(self.config.train.mc_seed, &[0xE7A1, stable_hash(clip_id)])
    }

    /// Embedding of a preprocessed clip (1×D).
    pub fn embed(&self, seq: &PoseSequence) -> Result<Matrix> {
        crate::encoder::embed(self.encoder.as_ref(), &self.store, &[seq])
    }

    /// U_a of a preprocessed clip.
    pub fn aleatoric(&self, seq: &PoseSequence) -> Result<f64> {
        let h = self.embed(seq)?;
        Ok(udm::aleatoric(&h, &self.udm, &self.store)?[0])
    }

    /// Inference on a preprocessed clip: dropout active only in f_e.
    pub fn infer(&self, seq: &PoseSequence, keep_samples: bool) -> Result<Inference> {
        let h = self.embed(seq)?;
        self.infer_embedding(&seq.clip_id, seq.label, &h, &self.udm, keep_samples)
    }

    pub fn infer_embedding(
        &self,
        clip_id: &str,
        label: u8,
        h: &Matrix,
        heads: &UdmHeads,
        keep_samples: bool,
    ) -> Result<Inference> {
        let cfg = &self.config;
        let mut drng = self.clip_dropout_rng(clip_id);
        let epi = udm::mc_epistemic(h, heads, &self.store, cfg.udm.t_eval, &mut drng)?;
        let u_a = udm::aleatoric(h, heads, &self.store)?[0];
        let sigma2 = udm::total_uncertainty(u_a, epi.u_e, heads, &self.store);
        let mut mrng = self.clip_mc_rng(clip_id);
        let p = udm::mc_predictive_probability(epi.mu, sigma2, cfg.udm.n, &mut mrng);

        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&self.store, false);
        let hv = tape.constant(h.clone());
        let ue = tape.constant(Matrix::scalar(epi.u_e));
        let ua = tape.constant(Matrix::scalar(u_a));
        let pv = tape.constant(Matrix::scalar(p));
        let fused = ufm::fuse(&mut tape, &mut ctx, &self.ufm, hv, ue, ua, pv, None);
        let p_f = tape.value(fused.p_f).item();
        if !p_f.is_finite() || !sigma2.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("inference on clip `{clip_id}`"),
            });
        }
        let estimate = UncertaintyEstimate {
            mu: epi.mu,
            u_e: epi.u_e,
            u_a,
            sigma2,
            p,
            sampled_probs: keep_samples.then_some(epi.sampled_probs),
        };
        Ok(Inference {
            record: PredictionRecord::new(clip_id, label, p_f, estimate),
            h: h.data().to_vec(),
            fused: fused.features.map(|f| tape.value(f).data().to_vec()),
        })
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.ufm.mode
    }
}
