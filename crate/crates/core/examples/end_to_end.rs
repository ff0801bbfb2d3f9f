//! End-to-end library walkthrough: synthesize a small benchmark, train the
//! attention model, score the held-out split, and inspect the attention
//! routes of one composition.
//!
//! Run with `cargo run --release --example end_to_end`.

use cape_core::data::{generate_synthetic, Partition, SyntheticSpec};
use cape_core::model::{attention_row_names, ModelHyper, ModelInputs, Variant};
use cape_core::routes::{extract_routes, report_to_text, HeadSelect};
use cape_core::trainer::{evaluate_split, train, TrainConfig, TrainState};
use cape_tensor::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // A small benchmark: a 5×5 primitive grid with 15 seen and 6 unseen
    // compositions.
    let spec = SyntheticSpec {
        n_states: 5,
        n_objects: 5,
        n_seen: 15,
        n_unseen: 6,
        samples_per_pair: 20,
        eval_samples_per_pair: 6,
        ..SyntheticSpec::default()
    };
    let dataset = generate_synthetic(&spec).expect("synthesis");

    let config = TrainConfig {
        variant: Variant::Cape,
        seed: 7,
        lr: 1e-3,
        epochs: 20,
        logit_scale: 10.0,
        eval_every: 5,
        hyper: ModelHyper {
            mlp_hidden: 128,
            dropout_p: 0.25,
            ..ModelHyper::default()
        },
        ..TrainConfig::default()
    };
    let mut state = TrainState::fresh(&dataset, &config).expect("init");
    let logs = train(&dataset, &config, &mut state, None).expect("training");
    for log in &logs {
        let val = log
            .val
            .as_ref()
            .map_or(String::from("-"), |v| format!("{:.4}", v.auc));
        println!(
            "epoch {:>2}  loss {:.4}  val auc {val}",
            log.epoch, log.train_loss
        );
    }

    let best = state.best_model.as_ref().unwrap_or(&state.model);
    let (curve, _) =
        evaluate_split(&dataset, best, Partition::Test, &config).expect("evaluation");
    println!("test auc {:.4}  best hm {:.4}", curve.auc, curve.best_hm);

    // Attention routes for the first seen composition: which other rows it
    // draws from, per the strongest head at each candidate.
    let active = dataset.table.seen_ids();
    let inputs =
        ModelInputs::build(&dataset.embeddings, &dataset.table, &active).expect("inputs");
    let mut g = Graph::new();
    let bound = best.bind(&mut g, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = best
        .forward(&mut g, &bound, &inputs, false, &mut rng)
        .expect("forward");
    let view = out.attention.expect("attention maps");
    let names = attention_row_names(best.variant, &dataset.vocab, &dataset.table, &inputs.active);
    let query_row = view.comp_row_offset + inputs.position(active[0]).expect("active row");
    let report = extract_routes(&view.maps, &names, query_row, 3, HeadSelect::MaxOverHeads, true)
        .expect("routes");
    print!("{}", report_to_text(&report));
}
