//! Hyperparameter resolution: built-in defaults, then the optional TOML
//! config file, then command-line flags — later layers win. The resolved
//! recipe is dumped back out as TOML so a run's configuration is always
//! reproducible from its output directory alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cape_core::model::Variant;
use cape_core::trainer::TrainConfig;
use cape_core::{CoreError, Result};

use crate::HyperArgs;

/// The keys accepted in a `--config` TOML file. Unknown keys are rejected
/// so typos fail loudly instead of silently using a default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    variant: Option<String>,
    heads: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    scale_attention: Option<bool>,
    logit_scale: Option<f64>,
    mlp_hidden: Option<usize>,
    dropout: Option<f64>,
    output_projection: Option<bool>,
    eval_every: Option<usize>,
    n_bias: Option<usize>,
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        CoreError::ConfigError(format!("config file {}: {e}", path.display()))
    })
}

/// Worker threads for evaluation sweeps, from the `CAPE_THREADS`
/// environment variable (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("CAPE_THREADS") {
        Err(_) => Ok(1),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CoreError::ConfigError(format!(
                "CAPE_THREADS must be a positive integer, got '{raw}'"
            ))),
        },
    }
}

/// Resolves flags > config file > defaults into a validated recipe.
pub fn resolve(args: &HyperArgs) -> Result<TrainConfig> {
    let file = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    let mut c = TrainConfig::default();

    let variant_tag = args.variant.clone().or(file.variant);
    if let Some(tag) = variant_tag {
        c.variant = Variant::parse(&tag)?;
    }
    if let Some(v) = args.seed.or(file.seed) {
        c.seed = v;
    }
    if let Some(v) = args.lr.or(file.lr) {
        c.lr = v;
    }
    if let Some(v) = args.batch.or(file.batch) {
        c.batch_size = v;
    }
    if let Some(v) = args.epochs.or(file.epochs) {
        c.epochs = v;
    }
    if let Some(v) = args.logit_scale.or(file.logit_scale) {
        c.logit_scale = v;
    }
    if let Some(v) = args.eval_every.or(file.eval_every) {
        c.eval_every = v;
    }
    if let Some(v) = args.n_bias.or(file.n_bias) {
        c.n_bias = Some(v);
    }
    if let Some(v) = args.heads.or(file.heads) {
        c.hyper.heads = v;
    }
    if let Some(v) = args.mlp_hidden.or(file.mlp_hidden) {
        c.hyper.mlp_hidden = v;
    }
    if let Some(v) = args.dropout.or(file.dropout) {
        c.hyper.dropout_p = v;
    }
    if let Some(v) = args.scale_attention.or(file.scale_attention) {
        c.hyper.scale_attention = v;
    }
    if let Some(v) = args.output_projection.or(file.output_projection) {
        c.hyper.use_output_projection = v;
    }
    c.threads = threads_from_env()?;
    c.validate()?;
    Ok(c)
}

/// The resolved recipe, serialized in a fixed key order.
#[derive(Debug, Serialize)]
struct EffectiveConfig<'a> {
    variant: &'a str,
    seed: u64,
    lr: f64,
    batch: usize,
    epochs: usize,
    beta1: f64,
    beta2: f64,
    adam_eps: f64,
    logit_scale: f64,
    eval_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_bias: Option<usize>,
    threads: usize,
    heads: usize,
    mlp_hidden: usize,
    dropout: f64,
    scale_attention: bool,
    output_projection: bool,
    layer_norm_eps: f64,
}

/// Renders the resolved recipe as TOML (no timestamps, no paths — the
/// same recipe always produces identical bytes).
pub fn effective_toml(c: &TrainConfig) -> String {
    let view = EffectiveConfig {
        variant: c.variant.as_str(),
        seed: c.seed,
        lr: c.lr,
        batch: c.batch_size,
        epochs: c.epochs,
        beta1: c.beta1,
        beta2: c.beta2,
        adam_eps: c.adam_eps,
        logit_scale: c.logit_scale,
        eval_every: c.eval_every,
        n_bias: c.n_bias,
        threads: c.threads,
        heads: c.hyper.heads,
        mlp_hidden: c.hyper.mlp_hidden,
        dropout: c.hyper.dropout_p,
        scale_attention: c.hyper.scale_attention,
        output_projection: c.hyper.use_output_projection,
        layer_norm_eps: c.hyper.layer_norm_eps,
    };
    toml::to_string(&view).expect("config serializes")
}
