// AVD + rollout + preference probe. Not part of the deliverable surface.

use std::time::Instant;

use massing_core::dataset::{generate, subsample_states, DesignSequence, GenerateConfig};
use massing_core::state_diff;
use massing_models::autocomplete::{rollout, rollout_latents, RolloutConfig};
use massing_models::evaluate::{preference_experiment, sequential_fid, Judge};
use massing_models::flow::{FlowModel, FlowTrainConfig};
use massing_models::pipeline::{corrupted_sample, record_to_sample};
use massing_models::sequence::{ModelKind, SequenceModel, TrainConfig};
use massing_neural::AttentionConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.2);

    let gen_cfg = GenerateConfig {
        max_subsampled_len: 40,
        train_fraction: 0.7,
        ..GenerateConfig::default()
    };
    let dataset = generate(n, 7, &gen_cfg).unwrap();
    println!(
        "dataset: {} train / {} eval",
        dataset.manifest.counts.train, dataset.manifest.counts.eval
    );
    let train_samples: Vec<_> = dataset
        .train
        .iter()
        .map(|r| record_to_sample(r, 40).unwrap())
        .collect();

    let config = AttentionConfig {
        layers: 4,
        heads: 8,
        model_dim: 128,
        input_dim: 1000,
        max_len: 41,
    };
    let mut avd = SequenceModel::new(ModelKind::Avd, config.clone(), 1).unwrap();
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
    let report = avd.train(&tensors, &cfg, 11).unwrap();
    println!(
        "AVD trained in {:.1?}; loss first {:.1} last {:.1}",
        t0.elapsed(),
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap()
    );

    // Rollout fidelity on training prefixes.
    let t0 = Instant::now();
    let mut matches = Vec::new();
    for record in dataset.train.iter().take(12) {
        let seq = DesignSequence::from_record(record).unwrap();
        let states = subsample_states(&seq.states, 40);
        let cfg = RolloutConfig {
            prefix_len: 5,
            horizon: states.len(),
        };
        let completed = rollout(&avd, &states[..5].to_vec(), &cfg).unwrap();
        let m = state_diff(completed.last().unwrap(), states.last().unwrap()).unwrap();
        matches.push(m);
    }
    let mean_match = matches.iter().sum::<f64>() / matches.len() as f64;
    println!(
        "rollout final match: mean {:.3} min {:.3} ({:.1?})",
        mean_match,
        matches.iter().cloned().fold(1.0, f64::min),
        t0.elapsed()
    );

    // Flow on final latents of the training split.
    let t0 = Instant::now();
    let latents: Vec<Vec<f64>> = train_samples
        .iter()
        .map(|s| avd.final_latent(&s.embeddings).unwrap())
        .collect();
    let mut flow = FlowModel::new(128, 5, 128, 2).unwrap();
    let flow_report = flow
        .train(
            &latents,
            &FlowTrainConfig {
                lr: 5e-3,
                epochs: 60,
                batch_size: 16,
                grad_clip: 1.0,
            },
            3,
        )
        .unwrap();
    println!(
        "flow trained in {:.1?}; NLL first {:.1} last {:.1}",
        t0.elapsed(),
        flow_report.epoch_nll.first().unwrap(),
        flow_report.epoch_nll.last().unwrap()
    );

    // Preference accuracy across corruption levels.
    let t0 = Instant::now();
    let judge = Judge::Flow(&avd, &flow);
    let points =
        preference_experiment(&judge, &dataset.eval, &[0.0, 0.25, 0.5, 0.75, 1.0], 40, 99)
            .unwrap();
    for p in &points {
        println!("H={:.2} accuracy {:.3}", p.h_fraction, p.accuracy);
    }
    println!("preference experiment in {:.1?}", t0.elapsed());

    // Sequential FID: trained rollouts vs random sequences, against
    // training-reference latents.
    let t0 = Instant::now();
    let reference: Vec<Vec<Vec<f64>>> = {
        let mut by_t: Vec<Vec<Vec<f64>>> = Vec::new();
        for s in &train_samples {
            let out = avd.forward(&s.embeddings).unwrap();
            let (rows, _) = out.latents.dims2();
            if by_t.len() < rows {
                by_t.resize(rows, Vec::new());
            }
            for t in 0..rows {
                by_t[t].push(out.latents.row(t).to_vec());
            }
        }
        by_t.truncate(30);
        by_t
    };
    let rollouts: Vec<_> = dataset
        .train
        .iter()
        .take(20)
        .map(|record| {
            let seq = DesignSequence::from_record(record).unwrap();
            let states = subsample_states(&seq.states, 40);
            rollout(
                &avd,
                &states[..5].to_vec(),
                &RolloutConfig {
                    prefix_len: 5,
                    horizon: 30,
                },
            )
            .unwrap()
        })
        .collect();
    let gen_latents = rollout_latents(&avd, &rollouts).unwrap();
    let fid_gen = sequential_fid(&reference, &gen_latents).unwrap();

    let random_latents: Vec<Vec<Vec<f64>>> = {
        let mut by_t: Vec<Vec<Vec<f64>>> = Vec::new();
        for (i, record) in dataset.train.iter().take(20).enumerate() {
            let sample = corrupted_sample(record, 0.0, 1000 + i as u64, 40).unwrap();
            let out = avd.forward(&sample.embeddings).unwrap();
            let (rows, _) = out.latents.dims2();
            if by_t.len() < rows {
                by_t.resize(rows, Vec::new());
            }
            for t in 0..rows.min(30) {
                by_t[t].push(out.latents.row(t).to_vec());
            }
        }
        by_t.truncate(30);
        by_t
    };
    let fid_random = sequential_fid(&reference, &random_latents).unwrap();
    let below = fid_gen
        .iter()
        .zip(&fid_random)
        .filter(|(g, r)| g < r)
        .count();
    println!(
        "FID: generated below random at {}/{} steps; gen t5 {:.1} t25 {:.1} | random t5 {:.1} t25 {:.1} ({:.1?})",
        below,
        fid_gen.len().min(fid_random.len()),
        fid_gen[5],
        fid_gen[25.min(fid_gen.len() - 1)],
        fid_random[5],
        fid_random[25.min(fid_random.len() - 1)],
        t0.elapsed()
    );
}
