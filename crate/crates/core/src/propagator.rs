//! The propagator: multi-head self-attention over composition embeddings
//! with a residual connection and an MLP projection into the image-feature
//! space, plus the ablation variants (primitive+composition self-attention,
//! dual cross-attention, and a parameter-matched plain MLP).

use cape_tensor::{Graph, Tensor, TensorId};
use rand::Rng;

use crate::{CoreError, Result};

/// Architecture hyperparameters shared by all variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    /// Width E of the embeddings attention operates on.
    pub embed_dim: usize,
    /// Width D_img of the projected output (the image-feature space).
    pub feature_dim: usize,
    pub n_heads: usize,
    /// Hidden width of the projection MLP's first layer.
    pub mlp_hidden: usize,
    pub dropout_p: f64,
    /// Divide attention logits by sqrt(head_dim). Disable to use raw
    /// query–key dot products.
    pub scale_attention: bool,
    /// Mix concatenated heads through an extra E×E affine before the
    /// residual. Off by default: heads concatenate straight back to E.
    pub use_output_projection: bool,
    pub layer_norm_eps: f64,
}

impl PropagatorConfig {
    pub fn new(embed_dim: usize, feature_dim: usize) -> Self {
        PropagatorConfig {
            embed_dim,
            feature_dim,
            n_heads: 6,
            mlp_hidden: 4096,
            dropout_p: 0.5,
            scale_attention: true,
            use_output_projection: false,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.feature_dim == 0 || self.n_heads == 0 || self.mlp_hidden == 0
        {
            return Err(CoreError::ConfigError(
                "dimensions and head count must be positive".into(),
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(CoreError::HeadDivisibility {
                embed_dim: self.embed_dim,
                heads: self.n_heads,
            });
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(CoreError::ConfigError(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Learnable-parameter count as a pure function of the dimensions.
    pub fn param_count(&self) -> usize {
        let e = self.embed_dim;
        let h = self.mlp_hidden;
        let d = self.feature_dim;
        let attention = 2 * e                   // input LayerNorm affine
            + 3 * (e * e + e)                   // Q, K, V maps with biases
            + if self.use_output_projection { e * e + e } else { 0 };
        let mlp = (e * h + h) + 2 * h           // expand + its LayerNorm
            + (h * e + e) + 2 * e               // contract + its LayerNorm
            + (e * d + d);                      // project to feature space
        attention + mlp
    }
}

fn uniform_init<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(&[rows, cols], -bound, bound, rng).expect("valid shape")
}

/// All learnable weights of the propagator.
#[derive(Debug, Clone)]
pub struct PropagatorParams {
    pub config: PropagatorConfig,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Option<Tensor>,
    pub b_o: Option<Tensor>,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_ln1_gamma: Tensor,
    pub mlp_ln1_beta: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub mlp_ln2_gamma: Tensor,
    pub mlp_ln2_beta: Tensor,
    pub mlp_w3: Tensor,
    pub mlp_b3: Tensor,
}

impl PropagatorParams {
    /// Fresh parameters: affine weights ~ uniform(±1/sqrt(fan_in)), biases
    /// zero, LayerNorm gamma 1 / beta 0.
    pub fn init<R: Rng>(config: PropagatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let h = config.mlp_hidden;
        let d = config.feature_dim;
        let (w_o, b_o) = if config.use_output_projection {
            (
                Some(uniform_init(e, e, e, rng)),
                Some(Tensor::zeros(&[e]).expect("valid shape")),
            )
        } else {
            (None, None)
        };
        Ok(PropagatorParams {
            config,
            ln1_gamma: Tensor::full(&[e], 1.0).expect("valid shape"),
            ln1_beta: Tensor::zeros(&[e]).expect("valid shape"),
            w_q: uniform_init(e, e, e, rng),
            b_q: Tensor::zeros(&[e]).expect("valid shape"),
            w_k: uniform_init(e, e, e, rng),
            b_k: Tensor::zeros(&[e]).expect("valid shape"),
            w_v: uniform_init(e, e, e, rng),
            b_v: Tensor::zeros(&[e]).expect("valid shape"),
            w_o,
            b_o,
            mlp_w1: uniform_init(e, h, e, rng),
            mlp_b1: Tensor::zeros(&[h]).expect("valid shape"),
            mlp_ln1_gamma: Tensor::full(&[h], 1.0).expect("valid shape"),
            mlp_ln1_beta: Tensor::zeros(&[h]).expect("valid shape"),
            mlp_w2: uniform_init(h, e, h, rng),
            mlp_b2: Tensor::zeros(&[e]).expect("valid shape"),
            mlp_ln2_gamma: Tensor::full(&[e], 1.0).expect("valid shape"),
            mlp_ln2_beta: Tensor::zeros(&[e]).expect("valid shape"),
            mlp_w3: uniform_init(e, d, e, rng),
            mlp_b3: Tensor::zeros(&[d]).expect("valid shape"),
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
        ];
        if let (Some(w_o), Some(b_o)) = (&self.w_o, &self.b_o) {
            out.push(("w_o", w_o));
            out.push(("b_o", b_o));
        }
        out.extend([
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_ln1_gamma", &self.mlp_ln1_gamma),
            ("mlp_ln1_beta", &self.mlp_ln1_beta),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
            ("mlp_ln2_gamma", &self.mlp_ln2_gamma),
            ("mlp_ln2_beta", &self.mlp_ln2_beta),
            ("mlp_w3", &self.mlp_w3),
            ("mlp_b3", &self.mlp_b3),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_k", &mut self.w_k),
            ("b_k", &mut self.b_k),
            ("w_v", &mut self.w_v),
            ("b_v", &mut self.b_v),
        ];
        if let (Some(w_o), Some(b_o)) = (&mut self.w_o, &mut self.b_o) {
            out.push(("w_o", w_o));
            out.push(("b_o", b_o));
        }
        out.extend([
            ("mlp_w1", &mut self.mlp_w1),
            ("mlp_b1", &mut self.mlp_b1),
            ("mlp_ln1_gamma", &mut self.mlp_ln1_gamma),
            ("mlp_ln1_beta", &mut self.mlp_ln1_beta),
            ("mlp_w2", &mut self.mlp_w2),
            ("mlp_b2", &mut self.mlp_b2),
            ("mlp_ln2_gamma", &mut self.mlp_ln2_gamma),
            ("mlp_ln2_beta", &mut self.mlp_ln2_beta),
            ("mlp_w3", &mut self.mlp_w3),
            ("mlp_b3", &mut self.mlp_b3),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Inserts every parameter into the graph, as differentiation targets
    /// when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundPropagator {
        let mut ins = |t: &Tensor| if trainable { g.param(t) } else { g.constant(t) };
        BoundPropagator {
            ln1_gamma: ins(&self.ln1_gamma),
            ln1_beta: ins(&self.ln1_beta),
            w_q: ins(&self.w_q),
            b_q: ins(&self.b_q),
            w_k: ins(&self.w_k),
            b_k: ins(&self.b_k),
            w_v: ins(&self.w_v),
            b_v: ins(&self.b_v),
            w_o: self.w_o.as_ref().map(&mut ins),
            b_o: self.b_o.as_ref().map(&mut ins),
            mlp_w1: ins(&self.mlp_w1),
            mlp_b1: ins(&self.mlp_b1),
            mlp_ln1_gamma: ins(&self.mlp_ln1_gamma),
            mlp_ln1_beta: ins(&self.mlp_ln1_beta),
            mlp_w2: ins(&self.mlp_w2),
            mlp_b2: ins(&self.mlp_b2),
            mlp_ln2_gamma: ins(&self.mlp_ln2_gamma),
            mlp_ln2_beta: ins(&self.mlp_ln2_beta),
            mlp_w3: ins(&self.mlp_w3),
            mlp_b3: ins(&self.mlp_b3),
        }
    }
}

/// Graph handles for one [`PropagatorParams`], in `named()` order.
#[derive(Debug, Clone)]
pub struct BoundPropagator {
    pub ln1_gamma: TensorId,
    pub ln1_beta: TensorId,
    pub w_q: TensorId,
    pub b_q: TensorId,
    pub w_k: TensorId,
    pub b_k: TensorId,
    pub w_v: TensorId,
    pub b_v: TensorId,
    pub w_o: Option<TensorId>,
    pub b_o: Option<TensorId>,
    pub mlp_w1: TensorId,
    pub mlp_b1: TensorId,
    pub mlp_ln1_gamma: TensorId,
    pub mlp_ln1_beta: TensorId,
    pub mlp_w2: TensorId,
    pub mlp_b2: TensorId,
    pub mlp_ln2_gamma: TensorId,
    pub mlp_ln2_beta: TensorId,
    pub mlp_w3: TensorId,
    pub mlp_b3: TensorId,
}

impl BoundPropagator {
    /// Handles in the same order as [`PropagatorParams::named`].
    pub fn named(&self) -> Vec<(&'static str, TensorId)> {
        let mut out = vec![
            ("ln1_gamma", self.ln1_gamma),
            ("ln1_beta", self.ln1_beta),
            ("w_q", self.w_q),
            ("b_q", self.b_q),
            ("w_k", self.w_k),
            ("b_k", self.b_k),
            ("w_v", self.w_v),
            ("b_v", self.b_v),
        ];
        if let (Some(w_o), Some(b_o)) = (self.w_o, self.b_o) {
            out.push(("w_o", w_o));
            out.push(("b_o", b_o));
        }
        out.extend([
            ("mlp_w1", self.mlp_w1),
            ("mlp_b1", self.mlp_b1),
            ("mlp_ln1_gamma", self.mlp_ln1_gamma),
            ("mlp_ln1_beta", self.mlp_ln1_beta),
            ("mlp_w2", self.mlp_w2),
            ("mlp_b2", self.mlp_b2),
            ("mlp_ln2_gamma", self.mlp_ln2_gamma),
            ("mlp_ln2_beta", self.mlp_ln2_beta),
            ("mlp_w3", self.mlp_w3),
            ("mlp_b3", self.mlp_b3),
        ]);
        out
    }
}

/// Per-head attention matrices captured during a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub n_rows: usize,
    /// Post-softmax propagation coefficients, one rows×rows matrix per head.
    pub p: Vec<Vec<f64>>,
    /// Attention scores before softmax (after head scaling, if enabled).
    pub a_pre: Vec<Vec<f64>>,
}

/// Result of a propagator forward pass.
#[derive(Debug)]
pub struct CapeOutput {
    /// Projected embeddings, rows × feature_dim.
    pub y_f: TensorId,
    /// Post-residual embeddings, rows × embed_dim (before the MLP).
    pub y_a: TensorId,
    pub maps: AttentionMaps,
}

/// Multi-head self-attention with a shared Q/K/V projection, head slicing,
/// and a residual anchored on the pre-LayerNorm input.
fn attention_block(
    g: &mut Graph,
    bound: &BoundPropagator,
    config: &PropagatorConfig,
    y_hat: TensorId,
) -> Result<(TensorId, AttentionMaps)> {
    let rows = g.shape(y_hat)[0];
    let hd = config.head_dim();

    let z = g.layer_norm(y_hat, bound.ln1_gamma, bound.ln1_beta, config.layer_norm_eps)?;
    let q0 = g.matmul(z, bound.w_q)?;
    let q = g.add_row(q0, bound.b_q)?;
    let k0 = g.matmul(z, bound.w_k)?;
    let k = g.add_row(k0, bound.b_k)?;
    let v0 = g.matmul(z, bound.w_v)?;
    let v = g.add_row(v0, bound.b_v)?;

    let mut head_outputs = Vec::with_capacity(config.n_heads);
    let mut maps = AttentionMaps {
        n_rows: rows,
        p: Vec::with_capacity(config.n_heads),
        a_pre: Vec::with_capacity(config.n_heads),
    };
    for h in 0..config.n_heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let a_pre = if config.scale_attention {
            g.scale(logits, 1.0 / (hd as f64).sqrt())?
        } else {
            logits
        };
        let p = g.softmax_rows(a_pre)?;
        maps.a_pre.push(g.data(a_pre).to_vec());
        maps.p.push(g.data(p).to_vec());
        head_outputs.push(g.matmul(p, vh)?);
    }
    let mut mixed = g.concat_cols(&head_outputs)?;
    if let (Some(w_o), Some(b_o)) = (bound.w_o, bound.b_o) {
        let projected = g.matmul(mixed, w_o)?;
        mixed = g.add_row(projected, b_o)?;
    }
    let y_a = g.add(y_hat, mixed)?;
    Ok((y_a, maps))
}

/// The projection MLP φ: expand to the hidden width, contract back, then
/// project into the image-feature space, with LayerNorm + ReLU + Dropout
/// after the first two affines and a bare ReLU after the last.
fn phi<R: Rng>(
    g: &mut Graph,
    bound: &BoundPropagator,
    config: &PropagatorConfig,
    y_a: TensorId,
    training: bool,
    rng: &mut R,
) -> Result<TensorId> {
    let eps = config.layer_norm_eps;
    let h1 = g.matmul(y_a, bound.mlp_w1)?;
    let h1 = g.add_row(h1, bound.mlp_b1)?;
    let h1 = g.layer_norm(h1, bound.mlp_ln1_gamma, bound.mlp_ln1_beta, eps)?;
    let h1 = g.relu(h1)?;
    let h1 = g.dropout(h1, config.dropout_p, training, rng)?;

    let h2 = g.matmul(h1, bound.mlp_w2)?;
    let h2 = g.add_row(h2, bound.mlp_b2)?;
    let h2 = g.layer_norm(h2, bound.mlp_ln2_gamma, bound.mlp_ln2_beta, eps)?;
    let h2 = g.relu(h2)?;
    let h2 = g.dropout(h2, config.dropout_p, training, rng)?;

    let out = g.matmul(h2, bound.mlp_w3)?;
    let out = g.add_row(out, bound.mlp_b3)?;
    Ok(g.relu(out)?)
}

/// Standard forward pass over composition embeddings (rows × embed_dim).
pub fn forward_cape<R: Rng>(
    g: &mut Graph,
    bound: &BoundPropagator,
    config: &PropagatorConfig,
    y_hat: TensorId,
    training: bool,
    rng: &mut R,
) -> Result<CapeOutput> {
    if g.shape(y_hat).len() != 2 || g.shape(y_hat)[1] != config.embed_dim {
        return Err(CoreError::ConfigError(format!(
            "propagator expects rows of width {}, got shape {:?}",
            config.embed_dim,
            g.shape(y_hat)
        )));
    }
    let (y_a, maps) = attention_block(g, bound, config, y_hat)?;
    let y_f = phi(g, bound, config, y_a, training, rng)?;
    Ok(CapeOutput { y_f, y_a, maps })
}

/// Output of the primitive+composition self-attention variant.
#[derive(Debug)]
pub struct CapeSelfOutput {
    /// Projected embeddings for the composition rows only.
    pub y_f_comps: TensorId,
    /// Projected embeddings for all rows (primitives first).
    pub y_f_all: TensorId,
    pub maps: AttentionMaps,
    /// Row index where composition rows begin (= #states + #objects).
    pub comp_row_offset: usize,
}

/// Self-attention over states ∥ objects ∥ compositions (mean embeddings);
/// identical mechanism, but scoring consumes only the trailing composition
/// rows.
pub fn forward_cape_self<R: Rng>(
    g: &mut Graph,
    bound: &BoundPropagator,
    config: &PropagatorConfig,
    all_rows: TensorId,
    n_primitive_rows: usize,
    training: bool,
    rng: &mut R,
) -> Result<CapeSelfOutput> {
    let rows = g.shape(all_rows)[0];
    if n_primitive_rows > rows {
        return Err(CoreError::ConfigError(format!(
            "{n_primitive_rows} primitive rows exceed {rows} total rows"
        )));
    }
    let out = forward_cape(g, bound, config, all_rows, training, rng)?;
    let y_f_comps = g.slice_rows(out.y_f, n_primitive_rows, rows - n_primitive_rows)?;
    Ok(CapeSelfOutput {
        y_f_comps,
        y_f_all: out.y_f,
        maps: out.maps,
        comp_row_offset: n_primitive_rows,
    })
}

/// Learnable weights of one bare cross-attention block (dual variant).
#[derive(Debug, Clone)]
pub struct CrossAttentionParams {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub scale_attention: bool,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
}

impl CrossAttentionParams {
    pub fn init<R: Rng>(
        embed_dim: usize,
        n_heads: usize,
        scale_attention: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0 {
            return Err(CoreError::HeadDivisibility { embed_dim, heads: n_heads });
        }
        let e = embed_dim;
        Ok(CrossAttentionParams {
            embed_dim,
            n_heads,
            scale_attention,
            w_q: uniform_init(e, e, e, rng),
            b_q: Tensor::zeros(&[e]).expect("valid shape"),
            w_k: uniform_init(e, e, e, rng),
            b_k: Tensor::zeros(&[e]).expect("valid shape"),
            w_v: uniform_init(e, e, e, rng),
            b_v: Tensor::zeros(&[e]).expect("valid shape"),
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_k", &mut self.w_k),
            ("b_k", &mut self.b_k),
            ("w_v", &mut self.w_v),
            ("b_v", &mut self.b_v),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundCrossAttention {
        let mut ins = |t: &Tensor| if trainable { g.param(t) } else { g.constant(t) };
        BoundCrossAttention {
            w_q: ins(&self.w_q),
            b_q: ins(&self.b_q),
            w_k: ins(&self.w_k),
            b_k: ins(&self.b_k),
            w_v: ins(&self.w_v),
            b_v: ins(&self.b_v),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCrossAttention {
    pub w_q: TensorId,
    pub b_q: TensorId,
    pub w_k: TensorId,
    pub b_k: TensorId,
    pub w_v: TensorId,
    pub b_v: TensorId,
}

impl BoundCrossAttention {
    pub fn named(&self) -> Vec<(&'static str, TensorId)> {
        vec![
            ("w_q", self.w_q),
            ("b_q", self.b_q),
            ("w_k", self.w_k),
            ("b_k", self.b_k),
            ("w_v", self.w_v),
            ("b_v", self.b_v),
        ]
    }
}

/// Bare head-split cross-attention: `queries` attend over `keys_values`.
/// No normalization, residual, or MLP — just softmax(Q Kᵀ) V per head,
/// heads concatenated.
pub fn cross_attention(
    g: &mut Graph,
    params: &CrossAttentionParams,
    bound: &BoundCrossAttention,
    queries: TensorId,
    keys_values: TensorId,
) -> Result<TensorId> {
    let hd = params.embed_dim / params.n_heads;
    let q0 = g.matmul(queries, bound.w_q)?;
    let q = g.add_row(q0, bound.b_q)?;
    let k0 = g.matmul(keys_values, bound.w_k)?;
    let k = g.add_row(k0, bound.b_k)?;
    let v0 = g.matmul(keys_values, bound.w_v)?;
    let v = g.add_row(v0, bound.b_v)?;

    let mut heads = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let scaled = if params.scale_attention {
            g.scale(logits, 1.0 / (hd as f64).sqrt())?
        } else {
            logits
        };
        let p = g.softmax_rows(scaled)?;
        heads.push(g.matmul(p, vh)?);
    }
    Ok(g.concat_cols(&heads)?)
}

/// Dual-variant forward: states cross-attend over objects and vice versa,
/// the per-pair results concatenate into dual embeddings, and those feed
/// the standard propagator.
#[allow(clippy::too_many_arguments)]
pub fn forward_cape_dual<R: Rng>(
    g: &mut Graph,
    cross_states: (&CrossAttentionParams, &BoundCrossAttention),
    cross_objects: (&CrossAttentionParams, &BoundCrossAttention),
    main: (&PropagatorConfig, &BoundPropagator),
    state_emb: TensorId,
    object_emb: TensorId,
    pairs: &[(usize, usize)],
    training: bool,
    rng: &mut R,
) -> Result<CapeOutput> {
    let y_states = cross_attention(g, cross_states.0, cross_states.1, state_emb, object_emb)?;
    let y_objects = cross_attention(g, cross_objects.0, cross_objects.1, object_emb, state_emb)?;
    let state_ids: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let object_ids: Vec<usize> = pairs.iter().map(|&(_, o)| o).collect();
    let per_pair_states = g.gather_rows(y_states, &state_ids)?;
    let per_pair_objects = g.gather_rows(y_objects, &object_ids)?;
    let y_dual = g.concat_cols(&[per_pair_states, per_pair_objects])?;
    forward_cape(g, main.1, main.0, y_dual, training, rng)
}

/// Hyperparameters of the parameter-matched MLP baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub layer_norm_eps: f64,
}

impl MlpConfig {
    /// Parameter count as a pure function of the dimensions.
    pub fn param_count(&self) -> usize {
        let e = self.embed_dim;
        let h = self.hidden;
        let d = self.feature_dim;
        (e * h + h) + 2 * h + (h * e + e) + 2 * e + (e * d + d)
    }
}

/// Hidden width that brings the MLP baseline's parameter count closest to
/// the propagator's (attention weights are absorbed into a wider hidden
/// layer).
pub fn mlp_parity_hidden(cape: &PropagatorConfig) -> usize {
    let e = cape.embed_dim as f64;
    let d = cape.feature_dim as f64;
    let target = cape.param_count() as f64;
    // Solve (e*h + h) + 2h + (h*e + e) + 2e + (e*d + d) = target for h.
    let h = (target - 3.0 * e - e * d - d) / (2.0 * e + 3.0);
    h.round().max(1.0) as usize
}

/// Learnable weights of the MLP baseline: the projection-MLP pattern with
/// a widened hidden layer and no attention.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub w1: Tensor,
    pub b1: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl MlpParams {
    pub fn init<R: Rng>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        if config.embed_dim == 0 || config.feature_dim == 0 || config.hidden == 0 {
            return Err(CoreError::ConfigError("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(CoreError::ConfigError(format!(
                "dropout_p {} outside [0, 1)",
                config.dropout_p
            )));
        }
        let e = config.embed_dim;
        let h = config.hidden;
        let d = config.feature_dim;
        Ok(MlpParams {
            config,
            w1: uniform_init(e, h, e, rng),
            b1: Tensor::zeros(&[h]).expect("valid shape"),
            ln1_gamma: Tensor::full(&[h], 1.0).expect("valid shape"),
            ln1_beta: Tensor::zeros(&[h]).expect("valid shape"),
            w2: uniform_init(h, e, h, rng),
            b2: Tensor::zeros(&[e]).expect("valid shape"),
            ln2_gamma: Tensor::full(&[e], 1.0).expect("valid shape"),
            ln2_beta: Tensor::zeros(&[e]).expect("valid shape"),
            w3: uniform_init(e, d, e, rng),
            b3: Tensor::zeros(&[d]).expect("valid shape"),
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let mut ins = |t: &Tensor| if trainable { g.param(t) } else { g.constant(t) };
        BoundMlp {
            w1: ins(&self.w1),
            b1: ins(&self.b1),
            ln1_gamma: ins(&self.ln1_gamma),
            ln1_beta: ins(&self.ln1_beta),
            w2: ins(&self.w2),
            b2: ins(&self.b2),
            ln2_gamma: ins(&self.ln2_gamma),
            ln2_beta: ins(&self.ln2_beta),
            w3: ins(&self.w3),
            b3: ins(&self.b3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub w1: TensorId,
    pub b1: TensorId,
    pub ln1_gamma: TensorId,
    pub ln1_beta: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub ln2_gamma: TensorId,
    pub ln2_beta: TensorId,
    pub w3: TensorId,
    pub b3: TensorId,
}

impl BoundMlp {
    pub fn named(&self) -> Vec<(&'static str, TensorId)> {
        vec![
            ("w1", self.w1),
            ("b1", self.b1),
            ("ln1_gamma", self.ln1_gamma),
            ("ln1_beta", self.ln1_beta),
            ("w2", self.w2),
            ("b2", self.b2),
            ("ln2_gamma", self.ln2_gamma),
            ("ln2_beta", self.ln2_beta),
            ("w3", self.w3),
            ("b3", self.b3),
        ]
    }
}

/// Row-wise MLP baseline: no cross-row mixing of any kind.
pub fn forward_mlp_baseline<R: Rng>(
    g: &mut Graph,
    params: &MlpParams,
    bound: &BoundMlp,
    y_hat: TensorId,
    training: bool,
    rng: &mut R,
) -> Result<TensorId> {
    let eps = params.config.layer_norm_eps;
    let p = params.config.dropout_p;
    let h1 = g.matmul(y_hat, bound.w1)?;
    let h1 = g.add_row(h1, bound.b1)?;
    let h1 = g.layer_norm(h1, bound.ln1_gamma, bound.ln1_beta, eps)?;
    let h1 = g.relu(h1)?;
    let h1 = g.dropout(h1, p, training, rng)?;

    let h2 = g.matmul(h1, bound.w2)?;
    let h2 = g.add_row(h2, bound.b2)?;
    let h2 = g.layer_norm(h2, bound.ln2_gamma, bound.ln2_beta, eps)?;
    let h2 = g.relu(h2)?;
    let h2 = g.dropout(h2, p, training, rng)?;

    let out = g.matmul(h2, bound.w3)?;
    let out = g.add_row(out, bound.b3)?;
    Ok(g.relu(out)?)
}
