//! Desk-scale ablation study on synthetic data.
//!
//! `cargo run --release --example ablation_study -- [users] [epochs] [seeds]`
//!
//! Prints test AUC and logloss per variant, followed by logloss per
//! behavior-length bucket.

use std::time::Instant;

use dualgraph::data::{parse_reader, Dataset, NegativeMode};
use dualgraph::graphs::{GraphSet, SimilarityParams};
use dualgraph::metrics::{evaluate, slice_by_behavior_length, Buckets};
use dualgraph::model::{predict, train, Ablation, ModelSpec, Network, TrainConfig};
use dualgraph::synthgen::{generate, SynthConfig};

fn main() -> dualgraph::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let users = args.first().copied().unwrap_or(2000);
    let epochs = args.get(1).copied().unwrap_or(20);
    let seeds = args.get(2).copied().unwrap_or(3) as u64;

    for seed in 0..seeds {
        let t = Instant::now();
        let synth = SynthConfig {
            n_users: users,
            n_items: users,
            seed,
            ..SynthConfig::default()
        };
        let log = generate(&synth)?;
        let parsed = parse_reader(log.to_csv()?.as_slice(), &log.schema)?;
        let ds = Dataset::build(&parsed, 10, seed, NegativeMode::Uniform)?;
        let graphs = GraphSet::build(&ds, &SimilarityParams::default())?;
        println!(
            "seed {seed}: {} rows, {} train / {} test instances, prepared in {:.1}s",
            log.rows.len(),
            ds.train.len(),
            ds.test.len(),
            t.elapsed().as_secs_f64()
        );
        for ablation in [
            Ablation::BaseOnly,
            Ablation::AttrOnly,
            Ablation::UuVvOnly,
            Ablation::UvOnly,
            Ablation::None,
        ] {
            let t = Instant::now();
            let spec = ModelSpec {
                mlp: vec![64, 32, 1],
                variant: ablation.variant(),
                ..ModelSpec::default()
            };
            let cfg = TrainConfig {
                epochs,
                batch_size: 500,
                lr: 1e-3,
                patience: 1,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&spec, &ds.layout(), &graphs, &cfg, &ds.train, &ds.val)?;
            let net = Network::new(&spec, &ds.layout(), &graphs)?;
            let scores = predict(&net, &out.state.params, &ds.test)?;
            let report = evaluate(&ds.test, &scores);
            let slices =
                slice_by_behavior_length(&ds.test, &scores, &Buckets::default_behavior_length());
            let ll: Vec<String> = slices
                .slices
                .iter()
                .map(|s| format!("{}:{:.4}", s.bucket, s.report.logloss.unwrap_or(f64::NAN)))
                .collect();
            println!(
                "  {:<11} auc {:.4} logloss {:.4} best epoch {} ({:.1}s) {}",
                ablation.name(),
                report.auc.unwrap_or(f64::NAN),
                report.logloss.unwrap_or(f64::NAN),
                out.best_epoch,
                t.elapsed().as_secs_f64(),
                ll.join(" ")
            );
        }
    }
    Ok(())
}
