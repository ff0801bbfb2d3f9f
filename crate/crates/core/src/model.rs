//! Variant dispatch: one façade over the propagator and its ablations,
//! with uniform parameter naming for the optimizer and checkpoints.

use std::collections::HashMap;

use cape_tensor::{Graph, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_composition_embeddings, CompositionMode, CompositionTable, EmbeddingMatrix, Vocabulary,
};
use crate::propagator::{
    forward_cape, forward_cape_dual, forward_cape_self, forward_mlp_baseline, mlp_parity_hidden,
    AttentionMaps, BoundCrossAttention, BoundMlp, BoundPropagator, CrossAttentionParams,
    MlpConfig, MlpParams, PropagatorConfig, PropagatorParams,
};
use crate::{CoreError, Result};

/// Which architecture to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Self-attention over composition embeddings (the full method).
    Cape,
    /// Self-attention over primitives and compositions together.
    CapeSelf,
    /// Dual cross-attention between states and objects feeding the
    /// composition propagator.
    CapeDual,
    /// Parameter-matched row-wise MLP, no message passing.
    Mlp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cape, Variant::CapeSelf, Variant::CapeDual, Variant::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cape => "cape",
            Variant::CapeSelf => "cape_self",
            Variant::CapeDual => "cape_dual",
            Variant::Mlp => "mlp",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "cape" => Ok(Variant::Cape),
            "cape_self" => Ok(Variant::CapeSelf),
            "cape_dual" => Ok(Variant::CapeDual),
            "mlp" => Ok(Variant::Mlp),
            other => Err(CoreError::ConfigError(format!(
                "unknown variant '{other}' (expected cape, cape_self, cape_dual or mlp)"
            ))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Variant::Cape => 0,
            Variant::CapeSelf => 1,
            Variant::CapeDual => 2,
            Variant::Mlp => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Variant::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CoreError::BadCheckpoint(format!("variant index {i} out of range")))
    }
}

/// Architecture hyperparameters independent of the data dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHyper {
    pub heads: usize,
    /// Hidden width of the propagator's projection MLP. The `mlp` variant
    /// derives its own (wider) hidden width from this via parameter parity.
    pub mlp_hidden: usize,
    pub dropout_p: f64,
    pub scale_attention: bool,
    pub use_output_projection: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            heads: 6,
            mlp_hidden: 4096,
            dropout_p: 0.5,
            scale_attention: true,
            use_output_projection: false,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelHyper {
    fn cape_config(&self, embed_dim: usize, feature_dim: usize) -> PropagatorConfig {
        PropagatorConfig {
            embed_dim,
            feature_dim,
            n_heads: self.heads,
            mlp_hidden: self.mlp_hidden,
            dropout_p: self.dropout_p,
            scale_attention: self.scale_attention,
            use_output_projection: self.use_output_projection,
            layer_norm_eps: self.layer_norm_eps,
        }
    }
}

/// Weights of the dual variant: two cross-attention blocks plus the main
/// propagator over the fused pair embeddings.
#[derive(Debug, Clone)]
pub struct DualParams {
    pub cross_states: CrossAttentionParams,
    pub cross_objects: CrossAttentionParams,
    pub main: PropagatorParams,
}

#[derive(Debug, Clone)]
enum Inner {
    Cape(PropagatorParams),
    CapeSelf(PropagatorParams),
    Dual(DualParams),
    Mlp(MlpParams),
}

/// All learnable state of one model instance.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub variant: Variant,
    /// Width of one primitive word embedding.
    pub word_dim: usize,
    pub feature_dim: usize,
    pub hyper: ModelHyper,
    inner: Inner,
}

impl ModelParams {
    /// Fresh weights. Initialization draws from `rng` in `named()` order
    /// (for the dual variant: state block, object block, main propagator).
    pub fn init<R: Rng>(
        variant: Variant,
        word_dim: usize,
        feature_dim: usize,
        hyper: ModelHyper,
        rng: &mut R,
    ) -> Result<Self> {
        if word_dim == 0 || feature_dim == 0 {
            return Err(CoreError::ConfigError(
                "embedding and feature dimensions must be positive".into(),
            ));
        }
        let inner = match variant {
            Variant::Cape => Inner::Cape(PropagatorParams::init(
                hyper.cape_config(2 * word_dim, feature_dim),
                rng,
            )?),
            Variant::CapeSelf => Inner::CapeSelf(PropagatorParams::init(
                hyper.cape_config(word_dim, feature_dim),
                rng,
            )?),
            Variant::CapeDual => {
                let cross_states =
                    CrossAttentionParams::init(word_dim, hyper.heads, hyper.scale_attention, rng)?;
                let cross_objects =
                    CrossAttentionParams::init(word_dim, hyper.heads, hyper.scale_attention, rng)?;
                let main =
                    PropagatorParams::init(hyper.cape_config(2 * word_dim, feature_dim), rng)?;
                Inner::Dual(DualParams {
                    cross_states,
                    cross_objects,
                    main,
                })
            }
            Variant::Mlp => {
                let reference = hyper.cape_config(2 * word_dim, feature_dim);
                reference.validate()?;
                let config = MlpConfig {
                    embed_dim: 2 * word_dim,
                    feature_dim,
                    hidden: mlp_parity_hidden(&reference),
                    dropout_p: hyper.dropout_p,
                    layer_norm_eps: hyper.layer_norm_eps,
                };
                Inner::Mlp(MlpParams::init(config, rng)?)
            }
        };
        Ok(ModelParams {
            variant,
            word_dim,
            feature_dim,
            hyper,
            inner,
        })
    }

    /// Deterministic placeholder weights, used as the target of
    /// [`ModelParams::assign_named`] when restoring a checkpoint.
    pub fn blank(
        variant: Variant,
        word_dim: usize,
        feature_dim: usize,
        hyper: ModelHyper,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::init(variant, word_dim, feature_dim, hyper, &mut rng)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        match &self.inner {
            Inner::Cape(p) | Inner::CapeSelf(p) => {
                p.named().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
            }
            Inner::Dual(d) => {
                let mut out: Vec<(String, &Tensor)> = Vec::new();
                out.extend(
                    d.cross_states
                        .named()
                        .into_iter()
                        .map(|(n, t)| (format!("cross_s.{n}"), t)),
                );
                out.extend(
                    d.cross_objects
                        .named()
                        .into_iter()
                        .map(|(n, t)| (format!("cross_o.{n}"), t)),
                );
                out.extend(d.main.named().into_iter().map(|(n, t)| (format!("main.{n}"), t)));
                out
            }
            Inner::Mlp(p) => p.named().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
        }
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.inner {
            Inner::Cape(p) | Inner::CapeSelf(p) => {
                p.named_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
            }
            Inner::Dual(d) => {
                let mut out: Vec<(String, &mut Tensor)> = Vec::new();
                out.extend(
                    d.cross_states
                        .named_mut()
                        .into_iter()
                        .map(|(n, t)| (format!("cross_s.{n}"), t)),
                );
                out.extend(
                    d.cross_objects
                        .named_mut()
                        .into_iter()
                        .map(|(n, t)| (format!("cross_o.{n}"), t)),
                );
                out.extend(
                    d.main
                        .named_mut()
                        .into_iter()
                        .map(|(n, t)| (format!("main.{n}"), t)),
                );
                out
            }
            Inner::Mlp(p) => {
                p.named_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrites every parameter from `get(name)`, verifying shapes.
    pub fn assign_named<F: FnMut(&str) -> Result<Tensor>>(&mut self, mut get: F) -> Result<()> {
        for (name, tensor) in self.named_mut() {
            let value = get(&name)?;
            if value.shape() != tensor.shape() {
                return Err(CoreError::BadCheckpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    value.shape(),
                    tensor.shape()
                )));
            }
            *tensor = value;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let (inner, names) = match &self.inner {
            Inner::Cape(p) => {
                let b = p.bind(g, trainable);
                let names = b.named().into_iter().map(|(n, id)| (n.to_string(), id)).collect();
                (BoundInner::Cape(b), names)
            }
            Inner::CapeSelf(p) => {
                let b = p.bind(g, trainable);
                let names = b.named().into_iter().map(|(n, id)| (n.to_string(), id)).collect();
                (BoundInner::CapeSelf(b), names)
            }
            Inner::Dual(d) => {
                let bs = d.cross_states.bind(g, trainable);
                let bo = d.cross_objects.bind(g, trainable);
                let bm = d.main.bind(g, trainable);
                let mut names: Vec<(String, TensorId)> = Vec::new();
                names.extend(bs.named().into_iter().map(|(n, id)| (format!("cross_s.{n}"), id)));
                names.extend(bo.named().into_iter().map(|(n, id)| (format!("cross_o.{n}"), id)));
                names.extend(bm.named().into_iter().map(|(n, id)| (format!("main.{n}"), id)));
                (
                    BoundInner::Dual {
                        states: bs,
                        objects: bo,
                        main: bm,
                    },
                    names,
                )
            }
            Inner::Mlp(p) => {
                let b = p.bind(g, trainable);
                let names = b.named().into_iter().map(|(n, id)| (n.to_string(), id)).collect();
                (BoundInner::Mlp(b), names)
            }
        };
        BoundModel { names, inner }
    }

    /// Runs the variant's forward pass over the active compositions.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        inputs: &ModelInputs,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutput> {
        match (&self.inner, &bound.inner) {
            (Inner::Cape(p), BoundInner::Cape(b)) => {
                let y_hat = g.leaf(inputs.comp_concat.clone());
                let out = forward_cape(g, b, &p.config, y_hat, training, rng)?;
                Ok(ModelOutput {
                    y_f: out.y_f,
                    attention: Some(AttentionView {
                        maps: out.maps,
                        comp_row_offset: 0,
                    }),
                })
            }
            (Inner::CapeSelf(p), BoundInner::CapeSelf(b)) => {
                let all = g.leaf(inputs.self_rows.clone());
                let out = forward_cape_self(
                    g,
                    b,
                    &p.config,
                    all,
                    inputs.n_primitive_rows,
                    training,
                    rng,
                )?;
                Ok(ModelOutput {
                    y_f: out.y_f_comps,
                    attention: Some(AttentionView {
                        maps: out.maps,
                        comp_row_offset: out.comp_row_offset,
                    }),
                })
            }
            (Inner::Dual(d), BoundInner::Dual { states, objects, main }) => {
                let se = g.leaf(inputs.state_emb.clone());
                let oe = g.leaf(inputs.object_emb.clone());
                let out = forward_cape_dual(
                    g,
                    (&d.cross_states, states),
                    (&d.cross_objects, objects),
                    (&d.main.config, main),
                    se,
                    oe,
                    &inputs.active_pairs,
                    training,
                    rng,
                )?;
                Ok(ModelOutput {
                    y_f: out.y_f,
                    attention: Some(AttentionView {
                        maps: out.maps,
                        comp_row_offset: 0,
                    }),
                })
            }
            (Inner::Mlp(p), BoundInner::Mlp(b)) => {
                let y_hat = g.leaf(inputs.comp_concat.clone());
                let y_f = forward_mlp_baseline(g, p, b, y_hat, training, rng)?;
                Ok(ModelOutput { y_f, attention: None })
            }
            _ => Err(CoreError::ConfigError(
                "bound handles do not belong to this model".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
enum BoundInner {
    Cape(BoundPropagator),
    CapeSelf(BoundPropagator),
    Dual {
        states: BoundCrossAttention,
        objects: BoundCrossAttention,
        main: BoundPropagator,
    },
    Mlp(BoundMlp),
}

/// Graph handles for one bound model, names aligned with
/// [`ModelParams::named`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    names: Vec<(String, TensorId)>,
    inner: BoundInner,
}

impl BoundModel {
    pub fn named(&self) -> &[(String, TensorId)] {
        &self.names
    }
}

/// Embedding-side inputs for one forward pass over a fixed set of active
/// compositions (the label space of that pass).
#[derive(Debug, Clone)]
pub struct ModelInputs {
    /// Composition ids in row order.
    pub active: Vec<usize>,
    /// state ∥ object rows, n_active × 2·word_dim.
    pub comp_concat: Tensor,
    /// states ++ objects ++ mean-composition rows, all word_dim wide.
    pub self_rows: Tensor,
    /// Number of leading primitive rows in `self_rows`.
    pub n_primitive_rows: usize,
    pub state_emb: Tensor,
    pub object_emb: Tensor,
    /// (state_id, object_id) per active composition.
    pub active_pairs: Vec<(usize, usize)>,
    position: HashMap<usize, usize>,
}

impl ModelInputs {
    pub fn build(
        emb: &EmbeddingMatrix,
        table: &CompositionTable,
        active: &[usize],
    ) -> Result<Self> {
        for &id in active {
            if id >= table.len() {
                return Err(CoreError::UnknownComposition(format!("id {id}")));
            }
        }
        let comp_concat = build_composition_embeddings(emb, table, active, CompositionMode::Concat)?;
        let comp_mean = build_composition_embeddings(emb, table, active, CompositionMode::Mean)?;
        let state_emb = emb.state_matrix().clone();
        let object_emb = emb.object_matrix().clone();
        let n_states = state_emb.rows();
        let n_objects = object_emb.rows();
        let mut stacked = Vec::with_capacity((n_states + n_objects + active.len()) * emb.dim());
        stacked.extend_from_slice(state_emb.data());
        stacked.extend_from_slice(object_emb.data());
        stacked.extend_from_slice(comp_mean.data());
        let self_rows =
            Tensor::from_vec(stacked, &[n_states + n_objects + active.len(), emb.dim()])?;
        let active_pairs: Vec<(usize, usize)> = active.iter().map(|&id| table.pair(id)).collect();
        let position: HashMap<usize, usize> =
            active.iter().enumerate().map(|(row, &id)| (id, row)).collect();
        Ok(ModelInputs {
            active: active.to_vec(),
            comp_concat,
            self_rows,
            n_primitive_rows: n_states + n_objects,
            state_emb,
            object_emb,
            active_pairs,
            position,
        })
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Row index of a composition id within the active set.
    pub fn position(&self, composition_id: usize) -> Option<usize> {
        self.position.get(&composition_id).copied()
    }
}

/// Results of one forward pass.
#[derive(Debug)]
pub struct ModelOutput {
    /// Projected composition embeddings: n_active × feature_dim.
    pub y_f: TensorId,
    /// Attention matrices, absent for the MLP baseline.
    pub attention: Option<AttentionView>,
}

/// Attention matrices plus the mapping from attention rows to entities.
#[derive(Debug)]
pub struct AttentionView {
    pub maps: AttentionMaps,
    /// Attention row where the active compositions start (nonzero only for
    /// the primitive+composition variant).
    pub comp_row_offset: usize,
}

/// Human-readable name of every attention row, in row order.
pub fn attention_row_names(
    variant: Variant,
    vocab: &Vocabulary,
    table: &CompositionTable,
    active: &[usize],
) -> Vec<String> {
    let comps = active.iter().map(|&id| table.name(id, vocab));
    match variant {
        Variant::CapeSelf => vocab
            .states()
            .iter()
            .cloned()
            .chain(vocab.objects().iter().cloned())
            .chain(comps)
            .collect(),
        _ => comps.collect(),
    }
}
