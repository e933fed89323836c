//! Train briefly, save a checkpoint, reload it, and score a few URLs —
//! the programmatic equivalent of `pmanet predict`.

use pmanet::data::synth;
use pmanet::model::{predict_probs, ModelConfig, ModelParams};
use pmanet::rng::Rng;
use pmanet::tokenizer::train_bpe;
use pmanet::train::{fit, tokenize_records, Task, TrainConfig};

fn main() -> pmanet::Result<()> {
    let records = synth::binary_dataset(300, 300, 9);
    let vocab = train_bpe(records.iter().map(|r| r.url.as_str()), 1024)?;
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let data = tokenize_records(&vocab, &records, cfg.max_len, Task::Binary)?;
    let mut params = ModelParams::<f32>::init(cfg, &Rng::new(9))?;
    let train_cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::desk(9)
    };
    fit(&mut params, &data, &[], &train_cfg, None)?;

    let dir = std::env::temp_dir().join("pmanet-predict-example");
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt = dir.join("model.ckpt");
    params.save(&ckpt)?;
    let loaded = ModelParams::<f32>::load(&ckpt)?;
    println!("checkpoint round trip: {} tensors", loaded.len());

    // benign probes reuse the corpus vocabulary; words the tiny training
    // set never saw would tokenize into rare-byte soup and read as the
    // random-entropy malicious pattern
    let urls = [
        "https://www.cloudstore.com/photo",
        "http://paypalverify3.tk/login/confirm",
        "https://news.daily.org/article.html",
        "http://203.44.12.9/secure/update",
    ];
    let seqs: Vec<_> = urls
        .iter()
        .map(|u| vocab.encode(u, loaded.config.max_len))
        .collect::<pmanet::Result<Vec<_>>>()?;
    let probs = predict_probs(&loaded, &seqs)?;
    println!("\nurl,malicious_probability,label");
    for (url, p) in urls.iter().zip(&probs) {
        let score = 1.0 - p[0];
        let label = if score >= 0.5 { "malicious" } else { "benign" };
        println!("{url},{score:.4},{label}");
    }
    Ok(())
}
