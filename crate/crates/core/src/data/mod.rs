//! States, objects, compositions, splits, and dataset ingestion.

mod embeddings;
mod features;
mod guard;
mod synthetic;

pub use embeddings::{
    build_composition_embeddings, parse_embedding_file, CompositionMode, EmbeddingMatrix,
};
pub use features::{FeatureRecord, FeatureStore, Partition};
pub use guard::SeenGuard;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{CoreError, Result};

/// Ordered state and object name lists with dense index maps.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    states: Vec<String>,
    objects: Vec<String>,
    state_index: HashMap<String, usize>,
    object_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(states: Vec<String>, objects: Vec<String>) -> Result<Self> {
        let state_index = index_names(&states)?;
        let object_index = index_names(&objects)?;
        Ok(Vocabulary {
            states,
            objects,
            state_index,
            object_index,
        })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.state_index.get(name).copied()
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }
}

fn index_names(names: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if map.insert(name.clone(), i).is_some() {
            return Err(CoreError::DuplicateName(name.clone()));
        }
    }
    Ok(map)
}

/// Split membership of a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Seen,
    UnseenVal,
    UnseenTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::UnseenVal => "unseen_val",
            Split::UnseenTest => "unseen_test",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "seen" => Ok(Split::Seen),
            "unseen_val" => Ok(Split::UnseenVal),
            "unseen_test" => Ok(Split::UnseenTest),
            other => Err(CoreError::InvalidSplit(other.to_string())),
        }
    }

    pub fn is_unseen(self) -> bool {
        !matches!(self, Split::Seen)
    }
}

/// Ordered list of (state, object) compositions with split tags.
///
/// Seen and unseen pair sets are disjoint by construction: a pair appears
/// exactly once and carries exactly one split tag.
#[derive(Debug, Clone)]
pub struct CompositionTable {
    pairs: Vec<(usize, usize)>,
    splits: Vec<Split>,
    by_pair: HashMap<(usize, usize), usize>,
}

impl CompositionTable {
    pub fn new(pairs: Vec<(usize, usize)>, splits: Vec<Split>, vocab: &Vocabulary) -> Result<Self> {
        assert_eq!(pairs.len(), splits.len(), "one split tag per pair");
        let mut by_pair = HashMap::with_capacity(pairs.len());
        for (i, &(s, o)) in pairs.iter().enumerate() {
            if s >= vocab.n_states() || o >= vocab.n_objects() {
                return Err(CoreError::UnknownName(format!(
                    "composition ({s}, {o}) is outside the vocabulary"
                )));
            }
            if by_pair.insert((s, o), i).is_some() {
                return Err(CoreError::DuplicatePair {
                    state: vocab.states()[s].clone(),
                    object: vocab.objects()[o].clone(),
                });
            }
        }
        Ok(CompositionTable {
            pairs,
            splits,
            by_pair,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, id: usize) -> (usize, usize) {
        self.pairs[id]
    }

    pub fn split(&self, id: usize) -> Split {
        self.splits[id]
    }

    pub fn find(&self, state: usize, object: usize) -> Option<usize> {
        self.by_pair.get(&(state, object)).copied()
    }

    /// Composition ids with the given split, in table order.
    pub fn ids_with_split(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn seen_ids(&self) -> Vec<usize> {
        self.ids_with_split(Split::Seen)
    }

    pub fn seen_count(&self) -> usize {
        self.splits.iter().filter(|s| **s == Split::Seen).count()
    }

    pub fn unseen_count(&self) -> usize {
        self.len() - self.seen_count()
    }

    /// Display name "state+object" used in CSV headers and reports.
    pub fn name(&self, id: usize, vocab: &Vocabulary) -> String {
        let (s, o) = self.pairs[id];
        format!("{}+{}", vocab.states()[s], vocab.objects()[o])
    }

    /// Resolves a "state object" (or "state+object") query to its id.
    pub fn resolve(&self, query: &str, vocab: &Vocabulary) -> Result<usize> {
        let parts: Vec<&str> = if query.contains('+') {
            query.splitn(2, '+').collect()
        } else {
            query.splitn(2, ' ').collect()
        };
        if parts.len() != 2 {
            return Err(CoreError::UnknownComposition(query.to_string()));
        }
        let s = vocab
            .state_id(parts[0].trim())
            .ok_or_else(|| CoreError::UnknownComposition(query.to_string()))?;
        let o = vocab
            .object_id(parts[1].trim())
            .ok_or_else(|| CoreError::UnknownComposition(query.to_string()))?;
        self.find(s, o)
            .ok_or_else(|| CoreError::UnknownComposition(query.to_string()))
    }
}

/// Loads a composition table from the tab-separated text format
/// ("state<TAB>object<TAB>split", one line per pair). The vocabulary is
/// derived from first appearance order.
pub fn load_pairs(path: &Path) -> Result<(Vocabulary, CompositionTable)> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut states: Vec<String> = Vec::new();
    let mut objects: Vec<String> = Vec::new();
    let mut state_index: HashMap<String, usize> = HashMap::new();
    let mut object_index: HashMap<String, usize> = HashMap::new();
    let mut pairs = Vec::new();
    let mut splits = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CoreError::Parse {
                path: display,
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let s = *state_index.entry(fields[0].to_string()).or_insert_with(|| {
            states.push(fields[0].to_string());
            states.len() - 1
        });
        let o = *object_index
            .entry(fields[1].to_string())
            .or_insert_with(|| {
                objects.push(fields[1].to_string());
                objects.len() - 1
            });
        pairs.push((s, o));
        splits.push(Split::parse(fields[2])?);
    }

    let vocab = Vocabulary::new(states, objects)?;
    let table = CompositionTable::new(pairs, splits, &vocab)?;
    Ok((vocab, table))
}

/// Writes the tab-separated composition table format.
pub fn save_pairs(path: &Path, vocab: &Vocabulary, table: &CompositionTable) -> Result<()> {
    let mut out = String::new();
    for id in 0..table.len() {
        let (s, o) = table.pair(id);
        writeln!(
            out,
            "{}\t{}\t{}",
            vocab.states()[s],
            vocab.objects()[o],
            table.split(id).as_str()
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A complete dataset: vocabulary, composition splits, frozen word
/// embeddings, and frozen image features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub table: CompositionTable,
    pub embeddings: EmbeddingMatrix,
    pub features: FeatureStore,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["wet".into(), "dry".into()],
            vec!["dog".into(), "cat".into()],
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = Vocabulary::new(vec!["wet".into(), "wet".into()], vec!["dog".into()]);
        assert!(matches!(err, Err(CoreError::DuplicateName(_))));
    }

    #[test]
    fn table_rejects_duplicate_pairs() {
        let v = vocab();
        let err = CompositionTable::new(
            vec![(0, 0), (0, 0)],
            vec![Split::Seen, Split::UnseenVal],
            &v,
        );
        assert!(matches!(err, Err(CoreError::DuplicatePair { .. })));
    }

    #[test]
    fn table_rejects_out_of_vocab_ids() {
        let v = vocab();
        let err = CompositionTable::new(vec![(5, 0)], vec![Split::Seen], &v);
        assert!(matches!(err, Err(CoreError::UnknownName(_))));
    }

    #[test]
    fn splits_are_disjoint_by_construction() {
        let v = vocab();
        let t = CompositionTable::new(
            vec![(0, 0), (0, 1), (1, 0), (1, 1)],
            vec![Split::Seen, Split::Seen, Split::UnseenVal, Split::UnseenTest],
            &v,
        )
        .unwrap();
        assert_eq!(t.seen_count(), 2);
        assert_eq!(t.unseen_count(), 2);
        let seen = t.seen_ids();
        for id in t.ids_with_split(Split::UnseenVal) {
            assert!(!seen.contains(&id));
        }
    }

    #[test]
    fn resolve_accepts_space_and_plus_forms() {
        let v = vocab();
        let t = CompositionTable::new(vec![(0, 1)], vec![Split::Seen], &v).unwrap();
        assert_eq!(t.resolve("wet cat", &v).unwrap(), 0);
        assert_eq!(t.resolve("wet+cat", &v).unwrap(), 0);
        assert!(matches!(
            t.resolve("dry dog", &v),
            Err(CoreError::UnknownComposition(_))
        ));
    }
}
