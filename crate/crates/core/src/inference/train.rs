//! Minibatch training loop: per-story objectives are built and
//! differentiated in parallel, gradients join into one Adam step, and
//! early stopping watches a validation bound.
//!
//! Objective dispatch per story: the plain LM always uses its exact
//! likelihood; the switching model uses the supervised objective when
//! the story kept its gold labels and the relaxed unsupervised one
//! otherwise; the single-state model is always unsupervised.
//!
//! The validation signal is the negative hard-sample bound, which is
//! defined for every model kind and does not involve temperatures or
//! supervision weights, so runs with different label fractions remain
//! comparable.
//!
//! Determinism: story order, label subset, per-story noise, and
//! validation noise all come from independent seeded streams keyed by
//! epoch and corpus index, and batch gradients merge in corpus order
//! regardless of how many worker threads ran the forward passes.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ModelKind, TrainConfig};
use crate::corpus::Story;
use crate::inference::elbo::{self, ElboReport};
use crate::model::SldsModel;
use crate::seeding;
use crate::tensor::{adam_step, clip_global_norm, AdamHyper, AdamState, BoundParams};
use crate::{Result, SldsError};

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-story training loss (the minimized objective).
    pub train_loss: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_s: f64,
    pub supervision: f64,
    /// Mean negative hard-sample bound on the validation split.
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Which stories keep their labels under `fraction` percent, chosen
/// uniformly among the labeled ones. Deterministic in the seed and
/// independent of story order elsewhere.
fn label_mask(stories: &[Story], kind: ModelKind, fraction: f64, seed: u64) -> Vec<bool> {
    let mut mask = vec![false; stories.len()];
    if kind != ModelKind::Slds {
        return mask;
    }
    let mut labeled: Vec<usize> = (0..stories.len())
        .filter(|&i| stories[i].labels.is_some())
        .collect();
    let mut rng = seeding::stream(seed, "train.labels", 0);
    shuffle(&mut labeled, &mut rng);
    let keep = ((fraction / 100.0) * labeled.len() as f64).round() as usize;
    for &i in labeled.iter().take(keep) {
        mask[i] = true;
    }
    mask
}

fn shuffle<R: rand::Rng>(items: &mut [usize], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Loss, gradients, and component report for one story. Runs on worker
/// threads; all randomness comes from the passed noise index.
fn story_pass(
    model: &SldsModel,
    story: &Story,
    use_labels: bool,
    cfg: &TrainConfig,
    kl_weight: f64,
    noise_index: u64,
) -> (f64, ElboReport, BTreeMap<String, Vec<f64>>) {
    let mut rng = seeding::stream(cfg.seed, "train.noise", noise_index);
    let mut bp = BoundParams::new(&model.params, true);
    let (loss, report) = match (model.config.kind, use_labels, &story.labels) {
        (ModelKind::Lm, _, _) => elbo::lm_loss(model, &mut bp, story),
        (ModelKind::Slds, true, Some(labels)) => elbo::supervised_loss(
            model,
            &mut bp,
            story,
            labels,
            kl_weight,
            cfg.supervision_weight,
            &mut rng,
        ),
        _ => elbo::elbo_soft_loss(model, &mut bp, story, cfg.temperature, kl_weight, &mut rng),
    };
    let loss_value = bp.tape.value(loss)[0];
    bp.tape.backward(loss);
    (loss_value, report, bp.grads())
}

/// Mean negative hard-sample bound per story. Noise streams are keyed
/// by story index only, so successive epochs see common random numbers
/// and their comparison is low-variance.
pub fn validation_loss(model: &SldsModel, stories: &[Story], seed: u64) -> f64 {
    if stories.is_empty() {
        return f64::NAN;
    }
    let total: f64 = stories
        .par_iter()
        .enumerate()
        .map(|(i, story)| {
            let mut rng = seeding::stream(seed, "train.val", i as u64);
            elbo::elbo_hard(model, story, &mut rng).elbo
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    -total / stories.len() as f64
}

/// Trains in place. Writes one checkpoint per epoch into
/// `checkpoint_dir` when given, restores the best-validation parameters
/// before returning, and calls `on_epoch` after each epoch.
pub fn train(
    model: &mut SldsModel,
    train_stories: &[Story],
    val_stories: &[Story],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_stories.is_empty() {
        return Err(SldsError::Invalid("empty training corpus".into()));
    }
    let n = train_stories.len();
    let mask = label_mask(train_stories, model.config.kind, cfg.label_fraction, cfg.seed);
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut adam = AdamState::new();

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut bad_streak = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut order_rng = seeding::stream(cfg.seed, "train.order", epoch as u64);
        shuffle(&mut order, &mut order_rng);
        let steps = order.chunks(cfg.batch).len();

        let mut loss_sum = 0.0;
        let mut comp = [0.0f64; 4];
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let kl_weight = if cfg.kl_warmup && epoch == 0 {
                (step + 1) as f64 / steps as f64
            } else {
                1.0
            };
            let passes: Vec<(usize, (f64, ElboReport, BTreeMap<String, Vec<f64>>))> = chunk
                .par_iter()
                .map(|&idx| {
                    let noise = epoch as u64 * n as u64 + idx as u64;
                    (
                        idx,
                        story_pass(model, &train_stories[idx], mask[idx], cfg, kl_weight, noise),
                    )
                })
                .collect();

            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (idx, (loss, story_report, story_grads)) in passes {
                story_report
                    .check_finite(&train_stories[idx].id)
                    .map_err(|e| SldsError::Diverged {
                        epoch,
                        story: idx,
                        diagnostics: e.to_string(),
                    })?;
                loss_sum += loss;
                comp[0] += story_report.recon;
                comp[1] += story_report.kl_z;
                comp[2] += story_report.kl_s;
                comp[3] += story_report.supervision;
                for (name, g) in story_grads {
                    match grads.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in grads.values_mut() {
                for x in g.iter_mut() {
                    *x *= inv;
                }
            }
            clip_global_norm(&mut grads, cfg.clip);
            adam_step(&mut model.params, &grads, &mut adam, &hyper)?;
        }

        let train_loss = loss_sum / n as f64;
        let mut val_loss = validation_loss(model, val_stories, cfg.seed);
        if val_stories.is_empty() {
            val_loss = train_loss;
        }
        let improved = val_loss < best_val;
        if improved {
            best_val = val_loss;
            report.best_epoch = epoch;
            best_params = model.params.clone();
            bad_streak = 0;
        } else {
            bad_streak += 1;
        }

        if let Some(dir) = checkpoint_dir {
            let mut meta = BTreeMap::new();
            meta.insert("epoch".to_string(), epoch.to_string());
            meta.insert("val_loss".to_string(), format!("{val_loss:.6}"));
            model.save(&dir.join(format!("epoch-{epoch:03}.ckpt")), &meta)?;
        }

        let stats = EpochStats {
            epoch,
            train_loss,
            recon: comp[0] / n as f64,
            kl_z: comp[1] / n as f64,
            kl_s: comp[2] / n as f64,
            supervision: comp[3] / n as f64,
            val_loss,
            improved,
        };
        on_epoch(&stats);
        report.epochs.push(stats);

        if bad_streak >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    Ok(report)
}
