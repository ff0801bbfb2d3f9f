//! `cape ablate` — train all four variants with identical hyperparameters
//! and tabulate their validation metrics.

use std::fmt::Write as _;

use cape_core::data::Partition;
use cape_core::model::Variant;
use cape_core::trainer::{evaluate_split, train, TrainState};
use cape_core::{CoreError, Result};

use crate::config::{effective_toml, resolve};
use crate::data_io::RunClock;
use crate::AblateArgs;

struct Row {
    variant: &'static str,
    auc: f64,
    best_hm: f64,
    best_seen: f64,
    best_unseen: f64,
}

fn to_markdown(rows: &[Row]) -> String {
    let mut out = String::from(
        "| variant | val auc | best hm | best seen | best unseen |\n|---|---|---|---|---|\n",
    );
    for r in rows {
        writeln!(
            out,
            "| {} | {:.6} | {:.6} | {:.6} | {:.6} |",
            r.variant, r.auc, r.best_hm, r.best_seen, r.best_unseen
        )
        .expect("string write");
    }
    out
}

fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from("variant,val_auc,best_hm,best_seen,best_unseen\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.variant, r.auc, r.best_hm, r.best_seen, r.best_unseen
        )
        .expect("string write");
    }
    out
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let clock = RunClock::start("ablate");
    if args.hyper.variant.is_some() {
        return Err(CoreError::ConfigError(
            "ablate trains every variant; drop --variant".into(),
        ));
    }
    let dataset = args.data.load()?;
    let base = resolve(&args.hyper)?;

    std::fs::create_dir_all(&args.out)?;
    let effective = effective_toml(&base);
    std::fs::write(args.out.join("config.toml"), &effective)?;
    print!("{effective}");

    let mut rows = Vec::with_capacity(4);
    for variant in [Variant::Cape, Variant::CapeSelf, Variant::CapeDual, Variant::Mlp] {
        let mut config = base.clone();
        config.variant = variant;
        let mut state = TrainState::fresh(&dataset, &config)?;
        train(&dataset, &config, &mut state, None)?;
        let best = state.best_model.as_ref().unwrap_or(&state.model);
        let (curve, _) = evaluate_split(&dataset, best, Partition::Val, &config)?;
        rows.push(Row {
            variant: variant.as_str(),
            auc: curve.auc,
            best_hm: curve.best_hm,
            best_seen: curve.best_seen,
            best_unseen: curve.best_unseen,
        });
    }

    let md = to_markdown(&rows);
    std::fs::write(args.out.join("ablation.md"), &md)?;
    std::fs::write(args.out.join("ablation.csv"), to_csv(&rows))?;
    clock.write_sidecar(&args.out)?;
    print!("{md}");
    Ok(())
}
