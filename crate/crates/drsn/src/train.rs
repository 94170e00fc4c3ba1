//! Training loop, data augmentation and the step/epoch loss log.
//!
//! All loop randomness (epoch shuffles, augmentation draws) comes from one
//! SplitMix64 stream seeded with `derive_seed(cfg.seed, 1)`; weight init by
//! convention uses `derive_seed(seed, 0)`, so a whole run is a function of
//! the single config seed.

use crate::error::{Error, Result};
use crate::model::{euclidean_loss, euclidean_loss_backward, SegNetwork, SegSample};
use crate::optim::{adam_step, AdamParams, OptimizerState};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Real;
use crate::tensor::Tensor4;

/// Optimization settings. Adam's betas and epsilon are fixed at the
/// conventional 0.9 / 0.999 / 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 8,
            epochs: 50,
            seed: 42,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Input("epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// A spatial transform applied identically to image and mask: optional
/// horizontal/vertical mirror, then an integer translation with zero fill.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Rows shifted downward.
    pub shift_r: i32,
    /// Columns shifted rightward.
    pub shift_c: i32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip_h: false,
        flip_v: false,
        shift_r: 0,
        shift_c: 0,
    };

    /// Draw order: horizontal flip (p = 0.5), vertical flip (p = 0.5),
    /// row shift in [-5, 5], column shift in [-5, 5].
    pub fn sample(rng: &mut SplitMix64) -> Transform {
        Transform {
            flip_h: rng.chance(0.5),
            flip_v: rng.chance(0.5),
            shift_r: rng.int_in(-5, 5) as i32,
            shift_c: rng.int_in(-5, 5) as i32,
        }
    }

    fn apply_plane<R: Real>(&self, src: &[R], h: usize, w: usize) -> Vec<R> {
        let mut dst = vec![R::zero(); h * w];
        for r in 0..h as i32 {
            for c in 0..w as i32 {
                let sr = r - self.shift_r;
                let sc = c - self.shift_c;
                if sr < 0 || sr >= h as i32 || sc < 0 || sc >= w as i32 {
                    continue;
                }
                let fr = if self.flip_v { h as i32 - 1 - sr } else { sr };
                let fc = if self.flip_h { w as i32 - 1 - sc } else { sc };
                dst[(r * w as i32 + c) as usize] = src[(fr * w as i32 + fc) as usize];
            }
        }
        dst
    }
}

/// Applies one transform to both halves of a sample.
pub fn apply_transform<R: Real>(sample: &SegSample<R>, t: Transform) -> Result<SegSample<R>> {
    let (h, w) = sample.size();
    let image = t.apply_plane(sample.image().plane(0, 0), h, w);
    let mask = t.apply_plane(sample.mask().plane(0, 0), h, w);
    SegSample::new(
        Tensor4::from_vec(1, 1, h, w, image)?,
        Tensor4::from_vec(1, 1, h, w, mask)?,
    )
}

/// Random flips and a small random translation, identical on image and mask.
pub fn augment<R: Real>(sample: &SegSample<R>, rng: &mut SplitMix64) -> Result<SegSample<R>> {
    apply_transform(sample, Transform::sample(rng))
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogEvent {
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
    },
}

/// Renders the log as CSV: header `epoch,step,loss`, one row per step, and
/// a summary row `epoch,<n>,<mean loss>` after each epoch.
pub fn log_to_csv(events: &[LogEvent]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for e in events {
        match e {
            LogEvent::Step { epoch, step, loss } => {
                out.push_str(&format!("{epoch},{step},{loss}\n"));
            }
            LogEvent::Epoch { epoch, mean_loss } => {
                out.push_str(&format!("epoch,{epoch},{mean_loss}\n"));
            }
        }
    }
    out
}

/// Stacks samples into batch image/mask tensors.
pub fn stack_batch<R: Real>(samples: &[SegSample<R>]) -> Result<(Tensor4<R>, Tensor4<R>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("cannot stack an empty batch".into()))?;
    let (h, w) = first.size();
    let mut images = Tensor4::zeros(samples.len(), 1, h, w)?;
    let mut masks = Tensor4::zeros(samples.len(), 1, h, w)?;
    for (i, s) in samples.iter().enumerate() {
        if s.size() != (h, w) {
            return Err(Error::Input(format!(
                "sample {i} is {:?}, batch is {h}x{w}",
                s.size()
            )));
        }
        images.plane_mut(i, 0).copy_from_slice(s.image().plane(0, 0));
        masks.plane_mut(i, 0).copy_from_slice(s.mask().plane(0, 0));
    }
    Ok((images, masks))
}

/// Runs `epochs * ceil(N / batch)` optimization steps and returns the log.
/// Deterministic given `cfg.seed`. Dataset order is reshuffled each epoch;
/// augmentation draws happen per sample in batch order.
pub fn train<R: Real>(
    dataset: &[SegSample<R>],
    net: &mut SegNetwork<R>,
    cfg: &TrainConfig,
) -> Result<Vec<LogEvent>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    let size = dataset[0].size();
    if let Some(bad) = dataset.iter().position(|s| s.size() != size) {
        return Err(Error::Input(format!(
            "sample {bad} is {:?}, dataset is {size:?}",
            dataset[bad].size()
        )));
    }

    let mut rng = SplitMix64::new(derive_seed(cfg.seed, 1));
    let mut state = OptimizerState::new(net);
    let adam = cfg.adam();
    let mut events = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_losses = Vec::new();

        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SegSample<R>> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&dataset[i], &mut rng)
                    } else {
                        Ok(dataset[i].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let (images, masks) = stack_batch(&batch)?;

            net.zero_grads();
            let pred = net.forward(&images)?;
            let loss = euclidean_loss(&pred, &masks)?.as_f64();
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at step {step}"
                )));
            }
            let dpred = euclidean_loss_backward(&pred, &masks)?;
            net.backward(&dpred)?;
            adam_step(net, &mut state, &adam)?;

            epoch_losses.push(loss);
            events.push(LogEvent::Step { epoch, step, loss });
        }

        let mean_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        events.push(LogEvent::Epoch { epoch, mean_loss });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, SynthSpec};
    use crate::model::NetworkConfig;

    fn tiny_dataset(count: usize, size: usize, seed: u64) -> Vec<SegSample> {
        generate_synthetic(&SynthSpec {
            count,
            size,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_net(seed: u64) -> SegNetwork {
        SegNetwork::new(
            NetworkConfig {
                channels: 4,
                blocks: 2,
                kernel: 3,
            },
            &mut SplitMix64::new(derive_seed(seed, 0)),
        )
        .unwrap()
    }

    #[test]
    fn identity_transform_is_identity() {
        let s = &tiny_dataset(1, 16, 3)[0];
        let t = apply_transform(s, Transform::IDENTITY).unwrap();
        assert_eq!(t.image().data(), s.image().data());
        assert_eq!(t.mask().data(), s.mask().data());
    }

    #[test]
    fn double_flip_is_identity() {
        let s = &tiny_dataset(1, 16, 4)[0];
        let flip = Transform {
            flip_h: true,
            ..Transform::IDENTITY
        };
        let once = apply_transform(s, flip).unwrap();
        let twice = apply_transform(&once, flip).unwrap();
        assert_eq!(twice.image().data(), s.image().data());
        let vflip = Transform {
            flip_v: true,
            ..Transform::IDENTITY
        };
        let once = apply_transform(s, vflip).unwrap();
        let twice = apply_transform(&once, vflip).unwrap();
        assert_eq!(twice.mask().data(), s.mask().data());
    }

    #[test]
    fn translation_zero_fills() {
        let img = Tensor4::from_vec(1, 1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mask = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = SegSample::new(img, mask).unwrap();
        let t = apply_transform(
            &s,
            Transform {
                shift_r: 1,
                shift_c: 0,
                ..Transform::IDENTITY
            },
        )
        .unwrap();
        assert_eq!(t.image().data(), &[0.0, 0.0, 0.1, 0.2]);
        assert_eq!(t.mask().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn image_and_mask_receive_the_same_transform() {
        // Embed the mask into a spare image: augmenting (mask-as-image,
        // mask) must keep both halves identical.
        let s = &tiny_dataset(1, 16, 5)[0];
        let embedded = SegSample::new(s.mask().clone(), s.mask().clone()).unwrap();
        let mut rng = SplitMix64::new(77);
        for _ in 0..100 {
            let aug = augment(&embedded, &mut rng).unwrap();
            assert_eq!(aug.image().data(), aug.mask().data());
        }
    }

    #[test]
    fn augmented_mask_stays_binary() {
        let s = &tiny_dataset(1, 16, 6)[0];
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let aug = augment(s, &mut rng).unwrap();
            assert!(aug.mask().data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = tiny_net(1);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train::<f64>(&[], &mut net, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let data = tiny_dataset(6, 16, 9);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 5,
            ..Default::default()
        };
        let mut net1 = tiny_net(5);
        let log1 = train(&data, &mut net1, &cfg).unwrap();
        let mut net2 = tiny_net(5);
        let log2 = train(&data, &mut net2, &cfg).unwrap();
        assert_eq!(log1, log2);
        let mut p1 = Vec::new();
        net1.visit_params(|p| p1.extend_from_slice(p.values));
        let mut p2 = Vec::new();
        net2.visit_params(|p| p2.extend_from_slice(p.values));
        assert_eq!(p1, p2);
    }

    #[test]
    fn log_shape_and_csv_rows() {
        let data = tiny_dataset(5, 16, 10);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 1,
            ..Default::default()
        };
        let mut net = tiny_net(2);
        let events = train(&data, &mut net, &cfg).unwrap();
        let steps_per_epoch = 3; // ceil(5 / 2)
        let epoch_rows = events
            .iter()
            .filter(|e| matches!(e, LogEvent::Epoch { .. }))
            .count();
        assert_eq!(epoch_rows, 3);
        assert_eq!(events.len(), 3 * steps_per_epoch + 3);

        let csv = log_to_csv(&events);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,step,loss");
        assert_eq!(lines.len(), 1 + events.len());
        assert!(lines.last().unwrap().starts_with("epoch,3,"));
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let data = tiny_dataset(4, 16, 11);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            seed: 3,
            augment: false,
            lr: 2e-3,
            ..Default::default()
        };
        let mut net = tiny_net(3);
        let events = train(&data, &mut net, &cfg).unwrap();
        let first = events.iter().find_map(|e| match e {
            LogEvent::Step { loss, .. } => Some(*loss),
            _ => None,
        });
        let last = events.iter().rev().find_map(|e| match e {
            LogEvent::Step { loss, .. } => Some(*loss),
            _ => None,
        });
        assert!(last.unwrap() < first.unwrap());
    }

    #[test]
    fn consecutive_backwards_yield_identical_grads() {
        let data = tiny_dataset(3, 16, 12);
        let (images, masks) = stack_batch(&data).unwrap();
        let mut net = tiny_net(7);
        let grads_of = |net: &mut SegNetwork| {
            net.zero_grads();
            let pred = net.forward(&images).unwrap();
            let dpred = euclidean_loss_backward(&pred, &masks).unwrap();
            net.backward(&dpred).unwrap();
            let mut g = Vec::new();
            net.visit_params(|p| g.extend_from_slice(p.grads));
            g
        };
        assert_eq!(grads_of(&mut net), grads_of(&mut net));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = tiny_dataset(2, 16, 13);
        let mut net = tiny_net(8);
        // Poison one weight; the forward pass then produces non-finite loss.
        net.visit_params_mut(|p| {
            if p.name == "recon.conv3.weight" {
                p.values[0] = f64::INFINITY;
            }
        });
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let err = train(&data, &mut net, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }
}
