//! `cape eval` — generalized evaluation with a calibration-bias sweep.
//!
//! Two modes:
//! * checkpoint mode: score a trained model on the validation or test
//!   partition of a dataset, then sweep;
//! * score mode (`--scores`): re-evaluate an exported score CSV, with the
//!   seen/unseen column split taken from `--pairs` or `--unseen-cols`.

use std::collections::HashSet;

use cape_core::checkpoint::Checkpoint;
use cape_core::data::{load_pairs, CompositionTable, Partition, Vocabulary};
use cape_core::evaluator::{evaluate_with_threads, point_at_bias, EvalCurve, EvalInstance};
use cape_core::scoring::ScoreMatrix;
use cape_core::trainer::{evaluate_split, model_from_checkpoint};
use cape_core::{CoreError, Result};

use crate::config::threads_from_env;
use crate::data_io::RunClock;
use crate::EvalArgs;

/// Marks each score column seen/unseen by resolving its name in the
/// composition table.
fn mask_from_table(
    matrix: &ScoreMatrix,
    vocab: &Vocabulary,
    table: &CompositionTable,
) -> Result<Vec<bool>> {
    matrix
        .col_names
        .iter()
        .map(|name| Ok(table.split(table.resolve(name, vocab)?).is_unseen()))
        .collect()
}

/// Marks the named columns unseen and every other column seen.
fn mask_from_list(matrix: &ScoreMatrix, list: &str) -> Result<Vec<bool>> {
    let wanted: Vec<&str> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let known: HashSet<&str> = matrix.col_names.iter().map(String::as_str).collect();
    for name in &wanted {
        if !known.contains(name) {
            return Err(CoreError::UnknownComposition((*name).to_string()));
        }
    }
    let unseen: HashSet<&str> = wanted.into_iter().collect();
    Ok(matrix
        .col_names
        .iter()
        .map(|n| unseen.contains(n.as_str()))
        .collect())
}

fn print_curve_summary(curve: &EvalCurve) {
    println!("auc {}", curve.auc);
    println!("best_hm {}", curve.best_hm);
    println!("best_hm_bias {}", curve.best_hm_bias);
    println!("best_seen {}", curve.best_seen);
    println!("best_unseen {}", curve.best_unseen);
}

fn print_at_biases(inst: &EvalInstance, biases: &[f64]) {
    for &b in biases {
        let p = point_at_bias(inst, b);
        println!("bias {} seen {} unseen {} hm {}", b, p.seen_acc, p.unseen_acc, p.hm);
    }
}

fn run_on_matrix(args: &EvalArgs, matrix: &ScoreMatrix, unseen: &[bool]) -> Result<()> {
    let inst = EvalInstance::new(&matrix.scores, matrix.n, matrix.c, &matrix.labels, unseen)?;
    let curve = evaluate_with_threads(&inst, args.n_bias, threads_from_env()?)?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("curve.csv"), curve.to_csv())?;
        matrix.save(&out.join("scores.csv"))?;
    }
    print_curve_summary(&curve);
    print_at_biases(&inst, &args.at_bias);
    Ok(())
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let clock = RunClock::start("eval");
    match (&args.scores, &args.checkpoint) {
        (Some(score_path), _) => {
            let matrix = ScoreMatrix::load(score_path)?;
            let unseen = if let Some(pairs) = &args.data.pairs {
                let (vocab, table) = load_pairs(pairs)?;
                mask_from_table(&matrix, &vocab, &table)?
            } else if let Some(list) = &args.unseen_cols {
                mask_from_list(&matrix, list)?
            } else {
                return Err(CoreError::ConfigError(
                    "score mode needs --pairs or --unseen-cols to split the columns".into(),
                ));
            };
            run_on_matrix(args, &matrix, &unseen)?;
        }
        (None, Some(ckpt_path)) => {
            let dataset = args.data.load()?;
            let (model, mut config) = model_from_checkpoint(&Checkpoint::load(ckpt_path)?)?;
            if args.n_bias.is_some() {
                config.n_bias = args.n_bias;
            }
            config.threads = threads_from_env()?;
            let partition = match args.split.as_str() {
                "val" => Partition::Val,
                "test" => Partition::Test,
                other => {
                    return Err(CoreError::ConfigError(format!(
                        "--split must be val or test, got '{other}'"
                    )))
                }
            };
            let (curve, matrix) = evaluate_split(&dataset, &model, partition, &config)?;
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("curve.csv"), curve.to_csv())?;
                matrix.save(&out.join("scores.csv"))?;
            }
            print_curve_summary(&curve);
            if !args.at_bias.is_empty() {
                let unseen = mask_from_table(&matrix, &dataset.vocab, &dataset.table)?;
                let inst = EvalInstance::new(
                    &matrix.scores,
                    matrix.n,
                    matrix.c,
                    &matrix.labels,
                    &unseen,
                )?;
                print_at_biases(&inst, &args.at_bias);
            }
        }
        (None, None) => {
            return Err(CoreError::ConfigError(
                "eval needs --checkpoint or --scores".into(),
            ))
        }
    }
    if let Some(out) = &args.out {
        clock.write_sidecar(out)?;
    }
    Ok(())
}
