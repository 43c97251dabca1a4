// Scratch harness for desk-scale hyperparameter probing. Not part of the
// deliverable surface; run with `cargo run -p massing-models --example probe`.

use std::time::Instant;

use massing_core::dataset::{generate, GenerateConfig};
use massing_models::pipeline::record_to_sample;
use massing_models::sequence::{ModelKind, SequenceModel, TrainConfig};
use massing_neural::AttentionConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let gen_cfg = GenerateConfig {
        max_subsampled_len: 40,
        train_fraction: 0.8,
        ..GenerateConfig::default()
    };
    let t0 = Instant::now();
    let dataset = generate(n, 7, &gen_cfg).unwrap();
    println!(
        "generated {} train / {} eval in {:.1?}",
        dataset.manifest.counts.train,
        dataset.manifest.counts.eval,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let train_samples: Vec<_> = dataset
        .train
        .iter()
        .map(|r| record_to_sample(r, 40).unwrap())
        .collect();
    let eval_samples: Vec<_> = dataset
        .eval
        .iter()
        .map(|r| record_to_sample(r, 40).unwrap())
        .collect();
    println!("pipelines in {:.1?}", t0.elapsed());
    let lens: Vec<usize> = train_samples.iter().map(|s| s.len()).collect();
    println!("seq lens: min {:?} max {:?}", lens.iter().min(), lens.iter().max());

    let config = AttentionConfig {
        layers: 4,
        heads: 8,
        model_dim: 128,
        input_dim: 1000,
        max_len: 41,
    };
    let mut model = SequenceModel::new(ModelKind::Vdr, config, 1).unwrap();
    let tensors: Vec<_> = train_samples.iter().map(|s| s.embeddings.clone()).collect();
    let cfg = TrainConfig {
        lr,
        epochs,
        batch_size: 8,
        kl_weight: 1.0,
        grad_clip: 1.0,
        momentum: 0.9,
        lr_decay: 1.0,
    };
    let t0 = Instant::now();
    let report = model.train(&tensors, &cfg, 11).unwrap();
    let train_time = t0.elapsed();
    println!(
        "trained {} epochs in {:.1?} ({:.1?}/epoch)",
        epochs,
        train_time,
        train_time / epochs as u32,
    );
    let show: Vec<String> = report
        .epoch_losses
        .iter()
        .enumerate()
        .step_by((epochs / 10).max(1))
        .map(|(i, l)| format!("{i}:{l:.1}"))
        .collect();
    println!("loss curve: {}", show.join(" "));

    let t0 = Instant::now();
    let train_acc = model.reconstruction_accuracy(&train_samples).unwrap();
    let eval_acc = model.reconstruction_accuracy(&eval_samples).unwrap();
    println!(
        "accuracy train {:.4} +- {:.4} | eval {:.4} +- {:.4} (eval pass {:.1?})",
        train_acc.mean, train_acc.std, eval_acc.mean, eval_acc.std, t0.elapsed()
    );
    let curve = &eval_acc.per_timestep;
    println!(
        "eval curve: t0 {:.3} mid {:.3} last {:.3}",
        curve[0],
        curve[curve.len() / 2],
        curve[curve.len() - 1]
    );
}
