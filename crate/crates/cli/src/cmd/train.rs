//! `cape train` — one training run with checkpointing and a CSV log.

use std::path::Path;

use cape_core::checkpoint::Checkpoint;
use cape_core::trainer::{
    log_to_csv, model_to_checkpoint, train, train_state_from_checkpoint,
    train_state_to_checkpoint, TrainState,
};
use cape_core::Result;

use crate::config::{effective_toml, resolve, threads_from_env};
use crate::data_io::RunClock;
use crate::TrainCmdArgs;

/// Appends the data rows of `csv` (skipping its header) to an existing
/// log file, or writes it whole when no log exists yet.
fn append_log(path: &Path, csv: &str) -> Result<()> {
    if path.exists() {
        let mut existing = std::fs::read_to_string(path)?;
        for line in csv.lines().skip(1) {
            existing.push_str(line);
            existing.push('\n');
        }
        std::fs::write(path, existing)?;
    } else {
        std::fs::write(path, csv)?;
    }
    Ok(())
}

pub fn run(args: &TrainCmdArgs) -> Result<()> {
    let clock = RunClock::start("train");
    let dataset = args.data.load()?;
    std::fs::create_dir_all(&args.out)?;
    let last_path = args.out.join("last.ckpt");

    let resumed = args.resume && last_path.exists();
    let (mut state, config) = if resumed {
        let ckpt = Checkpoint::load(&last_path)?;
        let (state, mut config) = train_state_from_checkpoint(&ckpt)?;
        // The checkpointed recipe wins on resume; only a larger --epochs
        // extends the run.
        if let Some(epochs) = args.hyper.epochs {
            if epochs > config.epochs {
                config.epochs = epochs;
            }
        }
        config.threads = threads_from_env()?;
        (state, config)
    } else {
        let config = resolve(&args.hyper)?;
        (TrainState::fresh(&dataset, &config)?, config)
    };

    let effective = effective_toml(&config);
    std::fs::write(args.out.join("config.toml"), &effective)?;
    print!("{effective}");

    let logs = train(&dataset, &config, &mut state, None)?;

    let log_path = args.out.join("train_log.csv");
    if resumed {
        append_log(&log_path, &log_to_csv(&logs))?;
    } else {
        std::fs::write(&log_path, log_to_csv(&logs))?;
    }

    train_state_to_checkpoint(&state, &config)?.save(&last_path)?;
    let best = state.best_model.as_ref().unwrap_or(&state.model);
    model_to_checkpoint(best, &config)?.save(&args.out.join("best.ckpt"))?;
    clock.write_sidecar(&args.out)?;

    println!(
        "trained {} epoch(s); best validation auc {}",
        state.next_epoch, state.best_val_auc
    );
    println!("wrote last.ckpt, best.ckpt, train_log.csv to {}", args.out.display());
    Ok(())
}
