//! Command implementations behind the binary's subcommands.
//!
//! Training runs at 64-bit precision by default; building with the
//! `train-f32` feature switches the training pipeline to 32-bit for speed.
//! Evaluation, inference and gradient checks always run at 64-bit, and the
//! checkpoint format is identical either way.

use std::path::Path;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::datagen::{generate_synthetic, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::metrics::{confusion, confusion_report, ConfusionCounts, ConfusionReport};
use crate::model::{binarize, SegNetwork, SegSample};
use crate::pgm;
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Real;
use crate::tensor::Tensor4;
use crate::train::{log_to_csv, stack_batch, train, LogEvent};

#[cfg(feature = "train-f32")]
type TrainReal = f32;
#[cfg(not(feature = "train-f32"))]
type TrainReal = f64;

/// `synth`: writes `count` image/mask pairs under `out`.
pub fn cmd_synth(out: &Path, count: usize, seed: u64, size: usize) -> Result<()> {
    let spec = SynthSpec {
        count,
        size,
        seed,
        ..Default::default()
    };
    let samples = generate_synthetic::<f64>(&spec)?;
    pgm::save_dataset(&samples, out)?;
    println!(
        "wrote {count} image/mask pairs ({size}x{size}, seed {seed}) to {}",
        out.display()
    );
    Ok(())
}

/// `train`: loads the dataset, trains per the config, writes the
/// checkpoint and the CSV loss log, and returns the final step loss.
pub fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: &Path,
    overrides: &[(&'static str, String)],
) -> Result<f64> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;

    let dataset = pgm::load_dataset::<TrainReal>(data)?;
    if dataset.is_empty() {
        return Err(Error::Input(format!(
            "no image/mask pairs found in {}",
            data.display()
        )));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.size() != (cfg.size, cfg.size) {
            return Err(Error::Input(format!(
                "sample {i} is {:?}, configured size is {}",
                s.size(),
                cfg.size
            )));
        }
    }

    let mut net: SegNetwork<TrainReal> = SegNetwork::new(
        cfg.network(),
        &mut SplitMix64::new(derive_seed(cfg.seed, 0)),
    )?;
    let events = train(&dataset, &mut net, &cfg.trainer())?;
    checkpoint::save(&net, out)?;
    std::fs::write(log, log_to_csv(&events))?;

    let final_loss = events
        .iter()
        .rev()
        .find_map(|e| match e {
            LogEvent::Step { loss, .. } => Some(*loss),
            _ => None,
        })
        .unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} samples; final loss {final_loss}",
        cfg.epochs,
        dataset.len()
    );
    println!("checkpoint: {}", out.display());
    println!("loss log:   {}", log.display());
    Ok(final_loss)
}

/// Accumulates confusion counts of thresholded predictions over a dataset.
pub fn evaluate_dataset<R: Real>(
    net: &SegNetwork<R>,
    dataset: &[SegSample<R>],
    threshold: f64,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for chunk in dataset.chunks(8) {
        let (images, masks) = stack_batch(chunk)?;
        let pred = net.infer(&images)?;
        let pred_mask = binarize(&pred, R::from_f64(threshold));
        counts.merge(&confusion(&pred_mask, &masks)?);
    }
    Ok(counts)
}

/// `eval`: prints overall pixel accuracy and the two-row confusion report.
pub fn cmd_eval(data: &Path, ckpt: &Path, threshold: f64) -> Result<ConfusionReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let net: SegNetwork<f64> = checkpoint::load(ckpt)?;
    let dataset = pgm::load_dataset::<f64>(data)?;
    if dataset.is_empty() {
        return Err(Error::Input(format!(
            "no image/mask pairs found in {}",
            data.display()
        )));
    }
    let counts = evaluate_dataset(&net, &dataset, threshold)?;
    let report = confusion_report(&counts)?;
    print!("{}", report.to_text());
    Ok(report)
}

/// `infer`: segments one image and writes the binarized mask as PGM.
pub fn cmd_infer(
    image: &Path,
    ckpt: &Path,
    out: &Path,
    threshold: f64,
    size: usize,
) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let net: SegNetwork<f64> = checkpoint::load(ckpt)?;
    let (data, h, w) = pgm::load_pgm::<f64>(image)?;
    if (h, w) != (size, size) {
        return Err(Error::Input(format!(
            "input image is {h}x{w}, expected {size}x{size}"
        )));
    }
    let x = Tensor4::from_vec(1, 1, h, w, data)?;
    let pred = net.infer(&x)?;
    let mask = binarize(&pred, threshold);
    pgm::save_pgm(mask.plane(0, 0), h, w, out)?;
    println!("wrote mask to {}", out.display());
    Ok(())
}

/// `gradcheck`: runs the finite-difference suite and prints one line per
/// check; errors if any check exceeds its tolerance.
pub fn cmd_gradcheck(seed: u64) -> Result<()> {
    let results = gradcheck::run_all(seed);
    let mut failures = 0;
    for r in &results {
        println!(
            "check {:<24} max rel err {:>10.3e}  (tol {:.0e})  {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.pass() { "PASS" } else { "FAIL" }
        );
        if !r.pass() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!(
            "{failures} of {} gradient checks exceeded tolerance",
            results.len()
        )));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
