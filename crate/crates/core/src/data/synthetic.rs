//! Deterministic desk-scale dataset synthesis.
//!
//! Each state and object gets a latent unit vector. A primitive's "word
//! embedding" is its latent plus small noise; an image feature for the pair
//! (s, o) is a fixed random bilinear map of the two latents plus Gaussian
//! noise. Because features are bilinear in the latents, unseen compositions
//! are genuinely inferable from seen primitives, which makes generalization
//! a meaningful property to test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    CompositionTable, Dataset, EmbeddingMatrix, FeatureRecord, FeatureStore, Partition, Split,
    Vocabulary,
};
use crate::{CoreError, Result};

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_states: usize,
    pub n_objects: usize,
    /// Number of seen pairs; must cover every primitive, so it is at least
    /// max(n_states, n_objects).
    pub n_seen: usize,
    /// Number of unseen pairs, alternating unseen_val / unseen_test.
    pub n_unseen: usize,
    /// Train records per seen pair.
    pub samples_per_pair: usize,
    /// Val/test records per pair included in that partition.
    pub eval_samples_per_pair: usize,
    /// Standard deviation of feature noise.
    pub noise_sigma: f64,
    pub feature_dim: usize,
    /// Width of each primitive's word embedding.
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_states: 6,
            n_objects: 6,
            n_seen: 24,
            n_unseen: 12,
            samples_per_pair: 60,
            eval_samples_per_pair: 10,
            noise_sigma: 0.05,
            feature_dim: 32,
            embedding_dim: 12,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let grid = self.n_states * self.n_objects;
        if self.n_states == 0 || self.n_objects == 0 {
            return Err(CoreError::SpecError("need at least one state and object".into()));
        }
        if self.n_unseen == 0 {
            return Err(CoreError::SpecError("need at least one unseen pair".into()));
        }
        if self.n_seen < self.n_states.max(self.n_objects) {
            return Err(CoreError::SpecError(format!(
                "{} seen pairs cannot cover {} states and {} objects",
                self.n_seen, self.n_states, self.n_objects
            )));
        }
        if self.n_seen + self.n_unseen > grid {
            return Err(CoreError::SpecError(format!(
                "{}+{} pairs exceed the {}x{} grid",
                self.n_seen, self.n_unseen, self.n_states, self.n_objects
            )));
        }
        if self.samples_per_pair == 0 || self.eval_samples_per_pair == 0 {
            return Err(CoreError::SpecError("samples per pair must be positive".into()));
        }
        if self.feature_dim == 0 || self.embedding_dim == 0 {
            return Err(CoreError::SpecError("dimensions must be positive".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(CoreError::SpecError("noise_sigma must be a finite non-negative".into()));
        }
        Ok(())
    }
}

/// Deterministic generator: the same spec always produces the same dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.embedding_dim;

    let states: Vec<String> = (0..spec.n_states).map(|i| format!("state{i}")).collect();
    let objects: Vec<String> = (0..spec.n_objects).map(|i| format!("object{i}")).collect();
    let vocab = Vocabulary::new(states, objects)?;

    // Latent unit vectors per primitive.
    let state_latents: Vec<Vec<f64>> = (0..spec.n_states).map(|_| unit_vector(e, &mut rng)).collect();
    let object_latents: Vec<Vec<f64>> = (0..spec.n_objects).map(|_| unit_vector(e, &mut rng)).collect();

    // Word embedding = latent + small fixed-scale noise, so embeddings carry
    // the latent structure without being exactly it.
    let emb_noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let mut state_rows = Vec::with_capacity(spec.n_states * e);
    for latent in &state_latents {
        state_rows.extend(latent.iter().map(|v| v + emb_noise.sample(&mut rng)));
    }
    let mut object_rows = Vec::with_capacity(spec.n_objects * e);
    for latent in &object_latents {
        object_rows.extend(latent.iter().map(|v| v + emb_noise.sample(&mut rng)));
    }
    let embeddings = EmbeddingMatrix::from_rows(
        &vocab,
        e,
        state_rows,
        object_rows,
        format!("synthetic(seed={})", spec.seed),
    )?;

    // Pair selection. A diagonal walk covers every state and object, then
    // the remaining seen slots and the unseen pairs come from a shuffled
    // pool of the leftover grid cells.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let cover = spec.n_states.max(spec.n_objects);
    for i in 0..cover {
        pairs.push((i % spec.n_states, i % spec.n_objects));
    }
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for s in 0..spec.n_states {
        for o in 0..spec.n_objects {
            if !pairs.contains(&(s, o)) {
                pool.push((s, o));
            }
        }
    }
    pool.shuffle(&mut rng);
    while pairs.len() < spec.n_seen {
        pairs.push(pool.pop().expect("grid size validated above"));
    }
    let mut splits = vec![Split::Seen; spec.n_seen];
    for i in 0..spec.n_unseen {
        pairs.push(pool.pop().expect("grid size validated above"));
        splits.push(if i % 2 == 0 {
            Split::UnseenVal
        } else {
            Split::UnseenTest
        });
    }
    let table = CompositionTable::new(pairs, splits, &vocab)?;

    // Fixed random bilinear map: feature_dim matrices of shape e×e.
    // Entries scaled by 1/sqrt(e) keep features O(1).
    let scale = 1.0 / (e as f64).sqrt();
    let maps: Vec<Vec<f64>> = (0..spec.feature_dim)
        .map(|_| {
            (0..e * e)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        })
        .collect();

    let clean_feature = |comp: usize| -> Vec<f64> {
        let (s, o) = table.pair(comp);
        let u = &state_latents[s];
        let v = &object_latents[o];
        maps.iter()
            .map(|m| {
                let mut acc = 0.0;
                for (i, ui) in u.iter().enumerate() {
                    let row = &m[i * e..(i + 1) * e];
                    acc += ui * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                }
                acc
            })
            .collect()
    };

    let feat_noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .expect("validated sigma");
    let mut records = Vec::new();
    let emit = |comp: usize,
                    partition: Partition,
                    count: usize,
                    tag: &str,
                    rng: &mut ChaCha8Rng,
                    records: &mut Vec<FeatureRecord>| {
        let clean = clean_feature(comp);
        for k in 0..count {
            let feature: Vec<f32> = clean
                .iter()
                .map(|v| {
                    let noisy = if spec.noise_sigma > 0.0 {
                        v + feat_noise.sample(rng)
                    } else {
                        *v
                    };
                    noisy as f32
                })
                .collect();
            records.push(FeatureRecord {
                image_id: format!("img_{tag}_{comp:03}_{k:04}"),
                composition_id: comp,
                feature,
                partition,
            });
        }
    };

    for comp in 0..table.len() {
        if table.split(comp) == Split::Seen {
            emit(comp, Partition::Train, spec.samples_per_pair, "train", &mut rng, &mut records);
        }
    }
    for comp in 0..table.len() {
        if matches!(table.split(comp), Split::Seen | Split::UnseenVal) {
            emit(comp, Partition::Val, spec.eval_samples_per_pair, "val", &mut rng, &mut records);
        }
    }
    for comp in 0..table.len() {
        if matches!(table.split(comp), Split::Seen | Split::UnseenTest) {
            emit(comp, Partition::Test, spec.eval_samples_per_pair, "test", &mut rng, &mut records);
        }
    }

    let features = FeatureStore::new(spec.feature_dim, records)?;
    features.validate_against(&table)?;
    Ok(Dataset {
        vocab,
        table,
        embeddings,
        features,
    })
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
