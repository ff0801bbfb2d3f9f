//! Dataset assembly from the command-line file flags, plus the writers
//! used by `synth` and the sidecar metadata file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cape_core::data::{
    load_pairs, CompositionTable, Dataset, EmbeddingMatrix, FeatureStore, Vocabulary,
};
use cape_core::{CoreError, Result};

use crate::DataArgs;

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CoreError::ConfigError(format!("--{flag} is required for this command")))
}

impl DataArgs {
    /// Vocabulary, composition table and word embeddings (no features) —
    /// what forward passes over the label space need.
    pub fn load_words(&self) -> Result<(Vocabulary, CompositionTable, EmbeddingMatrix)> {
        let (vocab, table) = load_pairs(require(&self.pairs, "pairs")?)?;
        let emb = EmbeddingMatrix::from_files(
            &vocab,
            require(&self.embeddings, "embeddings")?,
            self.embeddings2.as_deref(),
            &self.joiner,
        )?;
        Ok((vocab, table, emb))
    }

    /// The full dataset: pairs, embeddings and image features.
    pub fn load(&self) -> Result<Dataset> {
        let (vocab, table, embeddings) = self.load_words()?;
        let features = FeatureStore::load(require(&self.features, "features")?)?;
        features.validate_against(&table)?;
        Ok(Dataset {
            vocab,
            table,
            embeddings,
            features,
        })
    }
}

/// Writes word embeddings in the text format the loader reads back:
/// a "count dim" header, then one "token v1 v2 ..." line per primitive.
/// Floats print in shortest round-trip form, so save → load is exact.
pub fn write_embeddings(path: &Path, vocab: &Vocabulary, emb: &EmbeddingMatrix) -> Result<()> {
    let mut out = String::new();
    let count = vocab.n_states() + vocab.n_objects();
    writeln!(out, "{} {}", count, emb.dim()).expect("string write");
    let mut push_row = |token: &str, row: &[f64]| {
        out.push_str(token);
        for v in row {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    };
    for (i, name) in vocab.states().iter().enumerate() {
        push_row(name, emb.state_vec(i));
    }
    for (i, name) in vocab.objects().iter().enumerate() {
        push_row(name, emb.object_vec(i));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Wall-clock bookkeeping for the sidecar metadata file. Timestamps live
/// only here, never in the reproducible outputs.
pub struct RunClock {
    command: &'static str,
    started: SystemTime,
    t0: Instant,
}

impl RunClock {
    pub fn start(command: &'static str) -> Self {
        RunClock {
            command,
            started: SystemTime::now(),
            t0: Instant::now(),
        }
    }

    /// Writes `run_meta.json` into `dir`.
    pub fn write_sidecar(&self, dir: &Path) -> Result<()> {
        let started_unix_s = self
            .started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "command": self.command,
            "started_unix_s": started_unix_s,
            "wall_ms": self.t0.elapsed().as_millis() as u64,
        });
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(dir.join("run_meta.json"), text + "\n")?;
        Ok(())
    }
}
