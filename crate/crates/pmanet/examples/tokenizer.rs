//! Train a byte-level BPE vocabulary on URLs, inspect the merges, and
//! round-trip an encoding.

use pmanet::data::synth;
use pmanet::tokenizer::{train_bpe, Vocab};

fn main() -> pmanet::Result<()> {
    let corpus = synth::binary_dataset(400, 400, 1);
    let vocab = train_bpe(corpus.iter().map(|r| r.url.as_str()), 1024)?;
    println!(
        "trained vocab: {} subwords ({} merges), {} char ids",
        vocab.subword_count(),
        vocab.merges().len(),
        vocab.char_count()
    );
    println!("first merges:");
    for &(l, r) in vocab.merges().iter().take(8) {
        println!(
            "  {:?} + {:?}",
            String::from_utf8_lossy(vocab.token_str(l).unwrap()),
            String::from_utf8_lossy(vocab.token_str(r).unwrap())
        );
    }

    let url = "https://login.example-bank.com/session?id=42";
    let seq = vocab.encode(url, 64)?;
    println!("\nencode {url:?}");
    println!("  {} tokens ({} real), {} chars", seq.token_count(), seq.real_len(), seq.char_ids.len());
    let pieces: Vec<String> = seq.subword_ids[..seq.real_len()]
        .iter()
        .map(|&id| String::from_utf8_lossy(vocab.token_str(id).unwrap()).into_owned())
        .collect();
    println!("  pieces: {pieces:?}");
    let decoded = vocab.decode(&seq)?;
    println!("  decode -> {decoded:?}");
    assert_eq!(decoded, url.to_lowercase());

    // persistence round trip
    let path = std::env::temp_dir().join("pmanet-example.vocab");
    vocab.save(&path)?;
    let loaded = Vocab::load(&path)?;
    assert_eq!(loaded.encode(url, 64)?, seq);
    println!("\nvocab file round trip OK ({})", path.display());
    Ok(())
}
