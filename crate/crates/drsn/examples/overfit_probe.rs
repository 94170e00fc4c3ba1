//! Probe for the overfit-one-batch behavior: loss trajectory and step cost.

use drsn::datagen::{generate_synthetic, SynthSpec};
use drsn::model::{NetworkConfig, SegNetwork};
use drsn::rng::{derive_seed, SplitMix64};
use drsn::train::{train, LogEvent, TrainConfig};
use std::time::Instant;

fn main() {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2024);
    let lr: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2e-4);

    let data = generate_synthetic::<f32>(&SynthSpec {
        count: 8,
        size: 80,
        seed,
        ..Default::default()
    })
    .unwrap();
    let mut net: SegNetwork<f32> = SegNetwork::new(
        NetworkConfig::default(),
        &mut SplitMix64::new(derive_seed(seed, 0)),
    )
    .unwrap();
    let cfg = TrainConfig {
        lr,
        batch_size: 8,
        epochs: steps, // 8 samples, batch 8: one step per epoch
        seed,
        augment: false,
    };
    let t0 = Instant::now();
    let events = train(&data, &mut net, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let losses: Vec<f64> = events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Step { loss, .. } => Some(*loss),
            _ => None,
        })
        .collect();
    for (i, l) in losses.iter().enumerate() {
        if i < 5 || i % 25 == 0 || i == losses.len() - 1 {
            println!("step {:>4}  loss {l:.6}", i + 1);
        }
    }
    println!(
        "{} steps in {:.1} s ({:.2} s/step)",
        losses.len(),
        dt,
        dt / losses.len() as f64
    );
}
