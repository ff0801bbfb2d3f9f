//! `cape routes` — rank a trained model's attention routes for one query.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cape_core::checkpoint::Checkpoint;
use cape_core::model::{attention_row_names, ModelInputs};
use cape_core::routes::{extract_routes, report_to_text, reports_to_csv, HeadSelect};
use cape_core::trainer::model_from_checkpoint;
use cape_core::{CoreError, Result};
use cape_tensor::Graph;

use crate::data_io::RunClock;
use crate::RoutesArgs;

pub fn run(args: &RoutesArgs) -> Result<()> {
    let clock = RunClock::start("routes");
    let (vocab, table, emb) = args.data.load_words()?;
    let (model, _config) = model_from_checkpoint(&Checkpoint::load(&args.checkpoint)?)?;
    if emb.dim() != model.word_dim {
        return Err(CoreError::DimMismatch {
            expected: model.word_dim,
            found: emb.dim(),
        });
    }

    // One evaluation-mode forward over every composition.
    let active: Vec<usize> = (0..table.len()).collect();
    let inputs = ModelInputs::build(&emb, &table, &active)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let output = model.forward(&mut g, &bound, &inputs, false, &mut rng)?;
    let view = output.attention.ok_or_else(|| {
        CoreError::ConfigError("the mlp variant has no attention routes to inspect".into())
    })?;

    let names = attention_row_names(model.variant, &vocab, &table, &active);
    let query_id = table.resolve(&args.query, &vocab)?;
    let query_row = view.comp_row_offset
        + inputs
            .position(query_id)
            .expect("active covers every composition");

    let selections: Vec<HeadSelect> = match args.head {
        Some(h) => vec![HeadSelect::Head(h)],
        None => (0..view.maps.a_pre.len())
            .map(HeadSelect::Head)
            .chain(std::iter::once(HeadSelect::MaxOverHeads))
            .collect(),
    };
    let mut reports = Vec::with_capacity(selections.len());
    for sel in selections {
        let report = extract_routes(&view.maps, &names, query_row, args.k, sel, !args.include_self)?;
        print!("{}", report_to_text(&report));
        reports.push(report);
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("routes.csv"), reports_to_csv(&reports))?;
        clock.write_sidecar(out)?;
    }
    Ok(())
}
