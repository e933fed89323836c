//! Build a compound-attack adversarial test set: hyphen insertion at BPE
//! subword boundaries plus benign-to-malicious domain swaps.

use pmanet::adversarial::{build_adversarial_testset, tag_domain_subwords, AttackConfig};
use pmanet::data::synth;
use pmanet::tokenizer::train_bpe;

fn main() -> pmanet::Result<()> {
    let test_set = synth::binary_dataset(600, 300, 21);
    let vocab = train_bpe(test_set.iter().map(|r| r.url.as_str()), 2048)?;

    // tag one host by hand to show the mechanism
    let sample = "http://cloudstore.com/files";
    match tag_domain_subwords(sample, &vocab) {
        Ok(bounds) => println!("{sample}: boundaries at {bounds:?}"),
        Err(e) => println!("{sample}: {e}"),
    }

    let cfg = AttackConfig {
        n_benign: 400,
        n_malicious: 200,
        n_adversarial: 200,
        hyphens_per_url: 1,
        swap_fraction: 0.5,
    };
    let set = build_adversarial_testset(&test_set, &vocab, &cfg, 21)?;
    println!(
        "\nadversarial set: {} records ({} benign : {} malicious : {} adversarial), {} skipped",
        set.dataset.len(),
        cfg.n_benign,
        cfg.n_malicious,
        set.records.len(),
        set.skipped_unsplittable
    );
    println!("\nsample perturbations:");
    for r in set.records.iter().take(6) {
        let swap = if r.donor_malicious_url.is_some() { " (domain swap)" } else { "" };
        println!("  {} -> {}{swap}", r.original_url, r.adversarial_url);
    }
    Ok(())
}
