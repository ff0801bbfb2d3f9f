//! Loss-curve behavior on the mid-sized synthetic benchmark.

use cape_core::data::{generate_synthetic, SyntheticSpec};
use cape_core::trainer::{train, TrainConfig, TrainState};

#[test]
fn loss_decreases_over_the_first_five_epochs() {
    // 5×5 grid, 20 seen pairs, 50 samples per pair, noise 0.05, seed 7.
    let spec = SyntheticSpec {
        n_states: 5,
        n_objects: 5,
        n_seen: 20,
        n_unseen: 5,
        samples_per_pair: 50,
        eval_samples_per_pair: 5,
        noise_sigma: 0.05,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let dataset = generate_synthetic(&spec).unwrap();
    let config = TrainConfig {
        seed: 7,
        lr: 1e-3,
        logit_scale: 10.0,
        epochs: 5,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let mut state = TrainState::fresh(&dataset, &config).unwrap();
    let log = train(&dataset, &config, &mut state, None).unwrap();
    assert_eq!(log.len(), 5);

    let losses: Vec<f64> = log.iter().map(|row| row.train_loss).collect();
    let violations = losses
        .windows(2)
        .filter(|w| w[1] >= w[0])
        .count();
    assert!(
        violations <= 1,
        "loss curve {losses:?} has {violations} non-decreasing steps"
    );
    assert!(
        losses.last().unwrap() < losses.first().unwrap(),
        "no net progress: {losses:?}"
    );
}
