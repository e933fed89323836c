//! Train the desk-scale model on a small synthetic corpus and report the
//! full metric set plus a ROC query.

use pmanet::data::{split, synth};
use pmanet::metrics::{roc_points, tpr_at_fpr};
use pmanet::model::{ModelConfig, ModelParams};
use pmanet::rng::Rng;
use pmanet::tokenizer::train_bpe;
use pmanet::train::{evaluate, fit, tokenize_records, Task, TrainConfig};

fn main() -> pmanet::Result<()> {
    let records = synth::binary_dataset(500, 500, 5);
    let splits = split(&records, &[0.7, 0.15, 0.15], 5, true)?;
    let (train_recs, val_recs, test_recs) = (&splits[0], &splits[1], &splits[2]);
    println!(
        "split: {} train / {} val / {} test",
        train_recs.len(),
        val_recs.len(),
        test_recs.len()
    );

    let vocab = train_bpe(train_recs.iter().map(|r| r.url.as_str()), 1024)?;
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let train_data = tokenize_records(&vocab, train_recs, cfg.max_len, Task::Binary)?;
    let val_data = tokenize_records(&vocab, val_recs, cfg.max_len, Task::Binary)?;
    let test_data = tokenize_records(&vocab, test_recs, cfg.max_len, Task::Binary)?;

    let mut params = ModelParams::<f32>::init(cfg, &Rng::new(5))?;
    let train_cfg = TrainConfig {
        epochs: 3,
        verbose: true,
        ..TrainConfig::desk(5)
    };
    let log = fit(&mut params, &train_data, &val_data, &train_cfg, None)?;
    println!(
        "best val loss {:.4} at step {:?}",
        log.best_val_loss, log.best_step
    );

    let eval = evaluate(&params, &test_data)?;
    let m = &eval.metrics;
    println!("\ntest metrics:");
    println!("  accuracy  {:.4}", m.accuracy);
    println!("  precision {:.4}", m.precision);
    println!("  recall    {:.4}", m.recall);
    println!("  f1        {:.4}", m.f1);
    println!("  auc       {:.4}", m.auc);
    println!("  fpr       {:.4}", m.fpr);
    let labels: Vec<bool> = test_data.iter().map(|(_, l)| *l != 0).collect();
    let points = roc_points(&eval.scores, &labels)?;
    println!("  tpr@fpr=0.1: {:.4}", tpr_at_fpr(&points, 0.1));
    Ok(())
}
