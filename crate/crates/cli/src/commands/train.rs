use mocap_core::decoder::{evaluate, generate_samples, io, train, DatasetSpec};
use mocap_core::Result;
use serde::Serialize;

use super::Context;
use crate::output::{num, write_csv, write_json, OUTPUT_SCHEMA_VERSION};

#[derive(Serialize)]
struct TrainingSummary {
    schema_version: u32,
    train_samples: usize,
    holdout_samples: usize,
    holdout_dropout: f64,
    holdout_mpjpe_mm: f64,
    best_epoch: usize,
    best_val_mpjpe_mm: f64,
    epochs_run: usize,
}

/// Trains the pose decoder; writes the model, its sidecar, `loss_curve.csv`
/// and `training_summary.json`.
pub fn train_decoder(ctx: &Context) -> Result<String> {
    let t = &ctx.config.training;
    let out = ctx.out_dir()?;
    let samples = generate_samples(&t.dataset)?;
    // Sequence seeds are `seed * 1_000_003 + i`, so the next master seed
    // yields a disjoint range.
    let holdout_spec = DatasetSpec {
        sequences: t.holdout_sequences,
        seed: t.dataset.seed.wrapping_add(1),
        ..t.dataset.clone()
    };
    let holdout = generate_samples(&holdout_spec)?;
    let (decoder, report) = train(&samples, t.dataset.image_diagonal(), &t.train)?;
    let holdout_mpjpe_mm = if holdout.is_empty() {
        f64::NAN
    } else {
        evaluate(&decoder, &holdout, t.holdout_dropout, t.train.seed)?
    };
    let model = ctx.config.model_path();
    if let Some(parent) = model.parent() {
        std::fs::create_dir_all(parent)?;
    }
    io::save(&decoder, Some(&report), &model)?;

    let header = ["epoch", "train_loss", "val_mpjpe_mm", "learning_rate"].map(String::from);
    let rows: Vec<Vec<String>> = (0..report.train_loss.len())
        .map(|e| {
            vec![
                e.to_string(),
                num(report.train_loss[e]),
                num(report.val_mpjpe_mm[e]),
                num(report.learning_rate[e]),
            ]
        })
        .collect();
    write_csv(&out.join("loss_curve.csv"), &header, &rows)?;
    write_json(
        &out.join("training_summary.json"),
        &TrainingSummary {
            schema_version: OUTPUT_SCHEMA_VERSION,
            train_samples: samples.len(),
            holdout_samples: holdout.len(),
            holdout_dropout: t.holdout_dropout,
            holdout_mpjpe_mm,
            best_epoch: report.best_epoch,
            best_val_mpjpe_mm: report.best_val_mpjpe_mm,
            epochs_run: report.train_loss.len(),
        },
    )?;
    Ok(format!(
        "trained on {} samples for {} epochs; held-out MPJPE {:.2} mm at {:.0}% dropout -> {}",
        samples.len(),
        report.train_loss.len(),
        holdout_mpjpe_mm,
        t.holdout_dropout * 100.0,
        model.display()
    ))
}
