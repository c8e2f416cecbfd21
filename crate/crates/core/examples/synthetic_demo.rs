//! Trains on a generated dataset and compares with the cosine baseline.
//!
//! `cargo run --release -p answervault-core --example synthetic_demo -- [loss] [lr] [epochs]`

use answervault::baseline::{CosineBaseline, EmbeddingProvider};
use answervault::corpus::InputFormat;
use answervault::evaluate::{evaluate_accuracy, run_ablation, ComparisonReport};
use answervault::siamese::{train, EncoderConfig, LossKind};
use answervault::synthetic::{embedding_table, generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = SyntheticSpec::default();
    let data = generate(&spec);
    let (train_set, test_set) = data.split_at(150);

    let mut config = EncoderConfig {
        vocab_size: 1000,
        embed_dim: 128,
        hidden_dim: 128,
        max_len: 48,
        loss_kind: LossKind::Bce,
        learning_rate: 0.5,
        epochs: 30,
        batch_size: 8,
        init_range: 0.5,
        ..EncoderConfig::default()
    };
    if let Some(loss) = args.first() {
        config.loss_kind = loss.parse()?;
    }
    if let Some(lr) = args.get(1) {
        config.learning_rate = lr.parse()?;
    }
    if let Some(epochs) = args.get(2) {
        config.epochs = epochs.parse()?;
    }

    let start = std::time::Instant::now();
    let out = train(&config, train_set, test_set, InputFormat::SentenceSelected)?;
    for e in &out.history.epochs {
        println!("epoch {:>3} loss {:.5} acc {:.3}", e.epoch, e.train_loss, e.validation_accuracy.unwrap_or(f64::NAN));
    }
    println!("trained in {:.1?}", start.elapsed());

    let baseline = CosineBaseline::new(EmbeddingProvider::LocalTable(embedding_table(&spec, 200)));
    let mut report = ComparisonReport::default();
    report.push("Baseline", "synthetic", evaluate_accuracy(&baseline, test_set, InputFormat::OptionsOnly)?);
    report.push("Siamese", "synthetic", evaluate_accuracy(&out.model, test_set, InputFormat::SentenceSelected)?);
    print!("{}", report.render());
    print!("{}", run_ablation(&out.model, test_set, &InputFormat::ALL)?.render());
    Ok(())
}
