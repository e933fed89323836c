//! Corpus-scale tokenizer properties: the encode/decode round trip and
//! span tiling over ten thousand URLs.

use pmanet::data::synth;
use pmanet::tokenizer::{train_bpe, DEFAULT_VOCAB_SIZE};

#[test]
fn round_trip_and_span_tiling_over_10k_urls() {
    let records = synth::binary_dataset(5_000, 5_000, 20_26);
    let vocab = train_bpe(records.iter().map(|r| r.url.as_str()), DEFAULT_VOCAB_SIZE).unwrap();
    let mut checked = 0usize;
    for r in &records {
        let seq = vocab.encode(&r.url, 200).unwrap();
        // spans tile [0, N)
        let mut cursor = 0usize;
        for &(start, len) in &seq.spans {
            assert_eq!(start, cursor, "{}", r.url);
            assert!(len >= 1);
            cursor += len;
        }
        assert_eq!(cursor, seq.char_ids.len());
        // decode inverts encode up to lowercasing (URLs fit the budget)
        let decoded = vocab.decode(&seq).unwrap();
        assert_eq!(decoded, r.url.to_lowercase(), "round trip failed");
        checked += 1;
    }
    assert_eq!(checked, 10_000);
}
