//! Word-embedding ingestion and composition-embedding assembly.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use cape_tensor::Tensor;

use super::{CompositionTable, Vocabulary};
use crate::{CoreError, Result};

/// Parses a plain-text word-vector file (one token per line followed by its
/// float components, optional "count dim" header) and returns vectors for
/// the wanted tokens only.
///
/// Multi-word names are matched after replacing spaces with `joiner`.
pub fn parse_embedding_file(
    path: &Path,
    wanted: &[String],
    joiner: &str,
) -> Result<HashMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();

    // token-in-file → original wanted name
    let mut lookup: HashMap<String, String> = HashMap::new();
    for name in wanted {
        lookup.insert(name.replace(' ', joiner), name.clone());
    }

    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let rest: Vec<&str> = fields.collect();

        // Optional header: exactly two integer fields on the first line.
        if lineno == 0 && rest.len() == 1 {
            let both_ints = token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok();
            if both_ints {
                continue;
            }
        }

        let Some(original) = lookup.get(token) else {
            continue;
        };
        let mut vec = Vec::with_capacity(rest.len());
        for field in &rest {
            vec.push(field.parse::<f64>().map_err(|_| CoreError::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: format!("cannot parse '{field}' as a float"),
            })?);
        }
        if vec.is_empty() || vec.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: "vector is empty or non-finite".to_string(),
            });
        }
        match dim {
            None => dim = Some(vec.len()),
            Some(d) if d != vec.len() => {
                return Err(CoreError::RaggedVectors {
                    path: display,
                    line: lineno + 1,
                    expected: d,
                    found: vec.len(),
                });
            }
            _ => {}
        }
        found.insert(original.clone(), vec);
    }

    let missing: Vec<String> = wanted
        .iter()
        .filter(|name| !found.contains_key(*name))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(CoreError::MissingToken { tokens: missing });
    }
    Ok(found)
}

/// Per-primitive word embeddings for every state and object.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    state_vecs: Tensor,
    object_vecs: Tensor,
    source: String,
}

impl EmbeddingMatrix {
    /// Builds from one embedding file, or the concatenation of two
    /// (first file's components first).
    pub fn from_files(
        vocab: &Vocabulary,
        path: &Path,
        second: Option<&Path>,
        joiner: &str,
    ) -> Result<Self> {
        let mut wanted: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for name in vocab.states().iter().chain(vocab.objects()) {
            if seen.insert(name.clone()) {
                wanted.push(name.clone());
            }
        }
        let first = parse_embedding_file(path, &wanted, joiner)?;
        match second {
            Some(p2) => {
                let snd = parse_embedding_file(p2, &wanted, joiner)?;
                let tag = format!("{}+{}", path.display(), p2.display());
                Self::assemble(vocab, &[&first, &snd], tag)
            }
            None => Self::assemble(vocab, &[&first], path.display().to_string()),
        }
    }

    fn assemble(
        vocab: &Vocabulary,
        maps: &[&HashMap<String, Vec<f64>>],
        source: String,
    ) -> Result<Self> {
        let dim: usize = maps
            .iter()
            .map(|m| m.values().next().map_or(0, Vec::len))
            .sum();
        let fetch = |name: &String| -> Vec<f64> {
            let mut row = Vec::with_capacity(dim);
            for m in maps {
                row.extend_from_slice(&m[name]);
            }
            row
        };
        let state_rows: Vec<f64> = vocab.states().iter().flat_map(&fetch).collect();
        let object_rows: Vec<f64> = vocab.objects().iter().flat_map(&fetch).collect();
        Self::from_rows(vocab, dim, state_rows, object_rows, source)
    }

    /// Builds directly from row-major buffers (used by the synthesizer).
    pub fn from_rows(
        vocab: &Vocabulary,
        dim: usize,
        state_rows: Vec<f64>,
        object_rows: Vec<f64>,
        source: String,
    ) -> Result<Self> {
        let state_vecs = Tensor::from_vec(state_rows, &[vocab.n_states(), dim])?;
        let object_vecs = Tensor::from_vec(object_rows, &[vocab.n_objects(), dim])?;
        if !state_vecs.all_finite() || !object_vecs.all_finite() {
            return Err(CoreError::SpecError(
                "embedding vectors must be finite".to_string(),
            ));
        }
        Ok(EmbeddingMatrix {
            dim,
            state_vecs,
            object_vecs,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn state_vec(&self, id: usize) -> &[f64] {
        self.state_vecs.row(id)
    }

    pub fn object_vec(&self, id: usize) -> &[f64] {
        self.object_vecs.row(id)
    }

    pub fn state_matrix(&self) -> &Tensor {
        &self.state_vecs
    }

    pub fn object_matrix(&self) -> &Tensor {
        &self.object_vecs
    }
}

/// How a composition row combines its two primitive vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    /// state ∥ object: rows are 2·dim wide.
    Concat,
    /// (state + object) / 2: rows are dim wide.
    Mean,
}

/// Stacks composition embeddings for the given composition ids, in the
/// order given.
pub fn build_composition_embeddings(
    emb: &EmbeddingMatrix,
    table: &CompositionTable,
    ids: &[usize],
    mode: CompositionMode,
) -> Result<Tensor> {
    let dim = emb.dim();
    let width = match mode {
        CompositionMode::Concat => 2 * dim,
        CompositionMode::Mean => dim,
    };
    let mut data = Vec::with_capacity(ids.len() * width);
    for &id in ids {
        let (s, o) = table.pair(id);
        let sv = emb.state_vec(s);
        let ov = emb.object_vec(o);
        match mode {
            CompositionMode::Concat => {
                data.extend_from_slice(sv);
                data.extend_from_slice(ov);
            }
            CompositionMode::Mean => {
                data.extend(sv.iter().zip(ov).map(|(a, b)| 0.5 * (a + b)));
            }
        }
    }
    Ok(Tensor::from_vec(data, &[ids.len(), width])?)
}
