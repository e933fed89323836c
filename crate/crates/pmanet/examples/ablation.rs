//! Layer-count ablation on a small corpus: train once per stack depth and
//! compare the metric rows.

use pmanet::data::{split, synth};
use pmanet::model::ModelConfig;
use pmanet::tokenizer::train_bpe;
use pmanet::train::{layer_ablation, tokenize_records, Task, TrainConfig};

fn main() -> pmanet::Result<()> {
    let records = synth::binary_dataset(300, 300, 17);
    let splits = split(&records, &[0.7, 0.15, 0.15], 17, true)?;
    let vocab = train_bpe(splits[0].iter().map(|r| r.url.as_str()), 800)?;

    // a narrow 4-layer base keeps this example quick
    let mut cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    cfg.n_layers = 4;
    let train_data = tokenize_records(&vocab, &splits[0], cfg.max_len, Task::Binary)?;
    let val_data = tokenize_records(&vocab, &splits[1], cfg.max_len, Task::Binary)?;
    let test_data = tokenize_records(&vocab, &splits[2], cfg.max_len, Task::Binary)?;

    let train_cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::desk(17)
    };
    let rows = layer_ablation::<f32>(&cfg, &train_data, &val_data, &test_data, &[2, 4], &train_cfg)?;
    println!("layers  accuracy  precision  recall  f1      auc");
    for r in &rows {
        println!(
            "{:<7} {:.4}    {:.4}     {:.4}  {:.4}  {:.4}",
            r.layers, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
    }
    Ok(())
}
