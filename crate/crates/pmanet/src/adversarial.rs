//! Compound-attack test-set generation: tag subword boundaries inside
//! benign domain names, insert hyphen evasion characters, swap benign
//! domains onto malicious donor hosts, and assemble a 2:1:1 adversarial
//! evaluation set.

use crate::data::{Label, UrlRecord};
use crate::error::{Error, Result};
use crate::metrics::host_of;
use crate::rng::Rng;
use crate::tokenizer::Vocab;
use serde::Serialize;

/// Provenance of one generated adversarial sample.
#[derive(Debug, Clone, Serialize)]
pub struct AttackRecord {
    pub original_url: String,
    /// The URL the hyphens were inserted into (equals `original_url`
    /// unless the domain was swapped first).
    pub base_url: String,
    pub adversarial_url: String,
    /// Char positions within the host where hyphens were inserted.
    pub insertion_offsets: Vec<usize>,
    pub donor_malicious_url: Option<String>,
    pub label: Label,
}

/// Composition and generation knobs; defaults follow the 2:1:1 ratio at
/// desk scale.
#[derive(Debug, Clone, Serialize)]
pub struct AttackConfig {
    pub n_benign: usize,
    pub n_malicious: usize,
    pub n_adversarial: usize,
    /// Hyphens inserted per URL (capped by available boundaries).
    pub hyphens_per_url: usize,
    /// Fraction of adversarial records built by domain swapping.
    pub swap_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            n_benign: 8000,
            n_malicious: 4000,
            n_adversarial: 4000,
            hyphens_per_url: 1,
            swap_fraction: 0.5,
        }
    }
}

impl AttackConfig {
    /// Scale all three counts by the same factor, keeping the ratio.
    pub fn scaled(factor: f64) -> Self {
        let d = AttackConfig::default();
        AttackConfig {
            n_benign: ((d.n_benign as f64) * factor).round() as usize,
            n_malicious: ((d.n_malicious as f64) * factor).round() as usize,
            n_adversarial: ((d.n_adversarial as f64) * factor).round() as usize,
            ..d
        }
    }
}

/// Byte span of the host inside a URL string, if present.
fn host_span(url: &str) -> Option<(usize, usize)> {
    let authority_start = match url.find("://") {
        Some(i) => i + 3,
        None => 0,
    };
    let rest = &url[authority_start..];
    let authority_end = rest
        .find(['/', '?', '#'])
        .map(|i| authority_start + i)
        .unwrap_or(url.len());
    let authority = &url[authority_start..authority_end];
    let host_start = match authority.rfind('@') {
        Some(i) => authority_start + i + 1,
        None => authority_start,
    };
    let host = &url[host_start..authority_end];
    let host_end = match host.find(':') {
        Some(i) => host_start + i,
        None => authority_end,
    };
    if host_start >= host_end {
        None
    } else {
        Some((host_start, host_end))
    }
}

/// Subword boundaries inside a host eligible for hyphen insertion.
///
/// Labels are tokenized with the BPE vocabulary; boundaries fall between
/// consecutive subwords, never adjacent to a '.' or an existing '-', and
/// never inside the final (TLD) label. The registrable label (the one
/// left of the TLD) must split into at least two subwords, otherwise the
/// host is reported `Unsplittable`.
pub fn tag_domain_subwords(url: &str, vocab: &Vocab) -> Result<Vec<usize>> {
    let (hs, he) = host_span(url).ok_or_else(|| Error::NoHost(url.to_string()))?;
    let host = url[hs..he].to_ascii_lowercase();
    let labels: Vec<&str> = host.split('.').collect();
    let eligible = if labels.len() >= 2 {
        &labels[..labels.len() - 1]
    } else {
        &labels[..]
    };
    let registrable = eligible.last().copied().unwrap_or("");
    if registrable.is_empty() || vocab.tokenize_raw(registrable).len() < 2 {
        return Err(Error::Unsplittable(host.clone()));
    }
    let host_bytes = host.as_bytes();
    let mut boundaries = Vec::new();
    let mut label_start = 0usize;
    for (li, label) in labels.iter().enumerate() {
        if li < eligible.len() && !label.is_empty() {
            let tokens = vocab.tokenize_raw(label);
            let mut cut = 0usize;
            for (_, _, len) in tokens.iter().take(tokens.len().saturating_sub(1)) {
                cut += len;
                let b = label_start + cut;
                let left = host_bytes[b - 1];
                let right = host_bytes[b];
                if left != b'.' && left != b'-' && right != b'.' && right != b'-' {
                    boundaries.push(b);
                }
            }
        }
        label_start += label.len() + 1; // past the dot
    }
    if boundaries.is_empty() {
        return Err(Error::Unsplittable(host));
    }
    Ok(boundaries)
}

/// Insert `k` hyphens at boundaries chosen uniformly without replacement.
/// Returns the perturbed URL and the chosen host offsets (ascending).
pub fn insert_hyphens(
    url: &str,
    boundaries: &[usize],
    k: usize,
    rng: &mut Rng,
) -> Result<(String, Vec<usize>)> {
    if boundaries.is_empty() || k == 0 || k > boundaries.len() {
        return Err(Error::NoBoundaries);
    }
    let (hs, he) = host_span(url).ok_or_else(|| Error::NoHost(url.to_string()))?;
    let picks = rng.sample_indices(boundaries.len(), k);
    let offsets: Vec<usize> = picks.iter().map(|&i| boundaries[i]).collect();
    let host = &url[hs..he];
    let mut new_host = String::with_capacity(host.len() + k);
    let mut prev = 0usize;
    for &b in &offsets {
        new_host.push_str(&host[prev..b]);
        new_host.push('-');
        prev = b;
    }
    new_host.push_str(&host[prev..]);
    debug_assert!(host_labels_valid(&new_host));
    let mut out = String::with_capacity(url.len() + k);
    out.push_str(&url[..hs]);
    out.push_str(&new_host);
    out.push_str(&url[he..]);
    Ok((out, offsets))
}

/// Every label matches `[a-z0-9]([a-z0-9-]*[a-z0-9])?` (no leading,
/// trailing, or doubled hyphens).
pub fn host_labels_valid(host: &str) -> bool {
    !host.is_empty()
        && host.split('.').all(|label| {
            !label.is_empty()
                && !label.starts_with('-')
                && !label.ends_with('-')
                && !label.contains("--")
                && label
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        })
}

/// Replace the host of `url` with `donor_host`.
fn swap_host(url: &str, donor_host: &str) -> Option<String> {
    let (hs, he) = host_span(url)?;
    let mut out = String::with_capacity(url.len() + donor_host.len());
    out.push_str(&url[..hs]);
    out.push_str(donor_host);
    out.push_str(&url[he..]);
    Some(out)
}

/// Result of building the adversarial evaluation set.
#[derive(Debug)]
pub struct AdversarialSet {
    /// benign originals, then malicious originals, then generated samples.
    pub dataset: Vec<UrlRecord>,
    pub records: Vec<AttackRecord>,
    /// Benign candidates skipped because their host would not split.
    pub skipped_unsplittable: usize,
}

/// Assemble the compound-attack test set: original benign and malicious
/// samples plus newly generated adversarial malicious samples built from
/// benign URLs by hyphen insertion (and donor-domain swapping for a
/// configurable fraction).
pub fn build_adversarial_testset(
    test_set: &[UrlRecord],
    vocab: &Vocab,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AdversarialSet> {
    let benign: Vec<&UrlRecord> = test_set.iter().filter(|r| r.label == Label::Benign).collect();
    let malicious: Vec<&UrlRecord> =
        test_set.iter().filter(|r| r.label != Label::Benign).collect();
    if benign.len() < cfg.n_benign.max(1) {
        return Err(Error::InsufficientSource {
            kind: "benign",
            needed: cfg.n_benign.max(1),
            available: benign.len(),
        });
    }
    if malicious.len() < cfg.n_malicious.max(1) {
        return Err(Error::InsufficientSource {
            kind: "malicious",
            needed: cfg.n_malicious.max(1),
            available: malicious.len(),
        });
    }
    let donor_hosts: Vec<(String, String)> = malicious
        .iter()
        .filter_map(|r| host_of(&r.url).map(|h| (h, r.url.clone())))
        .filter(|(h, _)| host_labels_valid(h))
        .collect();
    if donor_hosts.is_empty() && cfg.swap_fraction > 0.0 {
        return Err(Error::InsufficientSource {
            kind: "malicious donor hosts",
            needed: 1,
            available: 0,
        });
    }

    let root = Rng::new(seed).derive("attack");
    let mut records = Vec::with_capacity(cfg.n_adversarial);
    let mut skipped = 0usize;
    let mut cursor = 0usize;
    let mut round = 0u64;
    while records.len() < cfg.n_adversarial {
        if cursor >= benign.len() {
            cursor = 0;
            round += 1;
            if round > cfg.hyphens_per_url as u64 + 8 {
                return Err(Error::InsufficientSource {
                    kind: "splittable benign hosts",
                    needed: cfg.n_adversarial,
                    available: records.len(),
                });
            }
        }
        let source = benign[cursor];
        cursor += 1;
        let index = records.len() as u64;
        let mut rng = root.derive_index(index);
        let swap = rng.next_f64() < cfg.swap_fraction && !donor_hosts.is_empty();
        let (base_url, donor) = if swap {
            let (host, donor_url) = &donor_hosts[rng.next_below(donor_hosts.len())];
            match swap_host(&source.url, host) {
                Some(u) => (u, Some(donor_url.clone())),
                None => {
                    skipped += 1;
                    continue;
                }
            }
        } else {
            (source.url.clone(), None)
        };
        match tag_domain_subwords(&base_url, vocab) {
            Ok(boundaries) => {
                let k = cfg.hyphens_per_url.min(boundaries.len()).max(1);
                let (adv, offsets) = insert_hyphens(&base_url, &boundaries, k, &mut rng)?;
                records.push(AttackRecord {
                    original_url: source.url.clone(),
                    base_url,
                    adversarial_url: adv,
                    insertion_offsets: offsets,
                    donor_malicious_url: donor,
                    label: Label::Malicious,
                });
            }
            Err(Error::Unsplittable(_)) if donor.is_some() => {
                // swapped URL is adversarial even without hyphens
                records.push(AttackRecord {
                    original_url: source.url.clone(),
                    adversarial_url: base_url.clone(),
                    base_url,
                    insertion_offsets: Vec::new(),
                    donor_malicious_url: donor,
                    label: Label::Malicious,
                });
            }
            Err(Error::Unsplittable(_)) | Err(Error::NoHost(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
    }

    let mut dataset = Vec::with_capacity(cfg.n_benign + cfg.n_malicious + cfg.n_adversarial);
    dataset.extend(benign[..cfg.n_benign].iter().map(|r| (*r).clone()));
    dataset.extend(malicious[..cfg.n_malicious].iter().map(|r| (*r).clone()));
    dataset.extend(records.iter().map(|r| UrlRecord {
        url: r.adversarial_url.clone(),
        label: Label::Malicious,
        source: "adversarial".into(),
    }));
    Ok(AdversarialSet {
        dataset,
        records,
        skipped_unsplittable: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use crate::tokenizer::{train_bpe, MIN_VOCAB};

    /// Vocabulary whose merges produce exactly ["pay", "pal"] on "paypal".
    fn paypal_vocab() -> Vocab {
        let mut corpus: Vec<&str> = std::iter::repeat_n("pay", 10).collect();
        corpus.extend(std::iter::repeat_n("pal", 9));
        train_bpe(corpus, MIN_VOCAB + 3).unwrap()
    }

    #[test]
    fn paypal_splits_at_offset_three() {
        let vocab = paypal_vocab();
        let tokens = vocab.tokenize_raw("paypal");
        let strings: Vec<&[u8]> = tokens
            .iter()
            .map(|&(id, _, _)| vocab.token_str(id).unwrap())
            .collect();
        assert_eq!(strings, vec![b"pay".as_slice(), b"pal".as_slice()]);
        let boundaries = tag_domain_subwords("http://paypal.com", &vocab).unwrap();
        assert_eq!(boundaries, vec![3]);
    }

    #[test]
    fn single_char_registrable_is_unsplittable() {
        let vocab = paypal_vocab();
        assert!(matches!(
            tag_domain_subwords("http://a.com", &vocab),
            Err(Error::Unsplittable(_))
        ));
    }

    #[test]
    fn no_host_rejected() {
        let vocab = paypal_vocab();
        assert!(matches!(
            tag_domain_subwords("not a url at all://", &vocab),
            Err(Error::NoHost(_)) | Err(Error::Unsplittable(_))
        ));
    }

    #[test]
    fn boundaries_never_adjacent_to_dot_or_hyphen() {
        let vocab = paypal_vocab();
        // host already contains a hyphen right at the subword seam
        let boundaries = tag_domain_subwords("http://pay-pal.paypal.com", &vocab);
        if let Ok(bs) = boundaries {
            let host = "pay-pal.paypal";
            for &b in &bs {
                let bytes = host.as_bytes();
                assert_ne!(bytes[b - 1], b'.');
                assert_ne!(bytes[b - 1], b'-');
                assert_ne!(bytes[b], b'.');
                assert_ne!(bytes[b], b'-');
            }
        }
    }

    #[test]
    fn forced_single_boundary_inserts_hyphen() {
        let vocab = paypal_vocab();
        let boundaries = tag_domain_subwords("http://paypal.com", &vocab).unwrap();
        let mut rng = Rng::new(123);
        let (adv, offsets) = insert_hyphens("http://paypal.com", &boundaries, 1, &mut rng).unwrap();
        assert_eq!(adv, "http://pay-pal.com");
        assert_eq!(offsets, vec![3]);
    }

    #[test]
    fn zero_k_rejected() {
        let mut rng = Rng::new(1);
        assert!(matches!(
            insert_hyphens("http://paypal.com", &[3], 0, &mut rng),
            Err(Error::NoBoundaries)
        ));
    }

    #[test]
    fn reinserted_tokenization_differs() {
        let vocab = paypal_vocab();
        let before = vocab.tokenize_raw("paypal");
        let after = vocab.tokenize_raw("pay-pal");
        let ids_before: Vec<u32> = before.iter().map(|&(id, _, _)| id).collect();
        let ids_after: Vec<u32> = after.iter().map(|&(id, _, _)| id).collect();
        assert_ne!(ids_before, ids_after);
    }

    fn synth_testset(n_benign: usize, n_malicious: usize) -> Vec<UrlRecord> {
        synth::binary_dataset(n_benign, n_malicious, 77)
    }

    #[test]
    fn testset_composition_and_labels() {
        let test = synth_testset(400, 200);
        let vocab = train_bpe(test.iter().map(|r| r.url.as_str()), 600).unwrap();
        let cfg = AttackConfig {
            n_benign: 200,
            n_malicious: 100,
            n_adversarial: 100,
            hyphens_per_url: 1,
            swap_fraction: 0.5,
        };
        let set = build_adversarial_testset(&test, &vocab, &cfg, 9).unwrap();
        assert_eq!(set.dataset.len(), 400);
        let adv = &set.dataset[300..];
        assert!(adv.iter().all(|r| r.label == Label::Malicious));
        assert_eq!(set.records.len(), 100);
        // validity + minimality for every record
        for r in &set.records {
            let host = host_of(&r.adversarial_url).unwrap();
            assert!(host_labels_valid(&host), "{host}");
            let dehyphenated = remove_inserted(&r.adversarial_url, &r.insertion_offsets);
            assert_eq!(dehyphenated, r.base_url, "minimality violated");
        }
    }

    /// Strip exactly the inserted hyphens (by host offset) from an
    /// adversarial URL, reconstructing the base.
    fn remove_inserted(url: &str, offsets: &[usize]) -> String {
        let (hs, he) = host_span(url).unwrap();
        let host = &url[hs..he];
        let mut out_host = String::new();
        let mut inserted_at: Vec<usize> = offsets
            .iter()
            .enumerate()
            .map(|(i, &b)| b + i) // each prior insertion shifts the next
            .collect();
        for (i, ch) in host.chars().enumerate() {
            if let Some(pos) = inserted_at.iter().position(|&b| b == i) {
                inserted_at.remove(pos);
                continue; // skip the inserted '-'
            }
            out_host.push(ch);
        }
        format!("{}{}{}", &url[..hs], out_host, &url[he..])
    }

    #[test]
    fn deterministic_generation() {
        let test = synth_testset(300, 150);
        let vocab = train_bpe(test.iter().map(|r| r.url.as_str()), 600).unwrap();
        let cfg = AttackConfig {
            n_benign: 100,
            n_malicious: 50,
            n_adversarial: 50,
            hyphens_per_url: 1,
            swap_fraction: 0.5,
        };
        let a = build_adversarial_testset(&test, &vocab, &cfg, 42).unwrap();
        let b = build_adversarial_testset(&test, &vocab, &cfg, 42).unwrap();
        assert_eq!(a.dataset.len(), b.dataset.len());
        for (x, y) in a.dataset.iter().zip(&b.dataset) {
            assert_eq!(x.url, y.url);
        }
    }

    #[test]
    fn insufficient_source_detected() {
        let test = synth_testset(10, 5);
        let vocab = train_bpe(test.iter().map(|r| r.url.as_str()), 400).unwrap();
        let cfg = AttackConfig {
            n_benign: 100,
            ..AttackConfig::default()
        };
        assert!(matches!(
            build_adversarial_testset(&test, &vocab, &cfg, 1),
            Err(Error::InsufficientSource { .. })
        ));
    }

    #[test]
    fn edit_distance_equals_hyphen_count() {
        let test = synth_testset(200, 100);
        let vocab = train_bpe(test.iter().map(|r| r.url.as_str()), 600).unwrap();
        let cfg = AttackConfig {
            n_benign: 50,
            n_malicious: 30,
            n_adversarial: 60,
            hyphens_per_url: 1,
            swap_fraction: 0.0, // hyphen-only so base == original
        };
        let set = build_adversarial_testset(&test, &vocab, &cfg, 5).unwrap();
        for r in &set.records {
            assert_eq!(
                r.adversarial_url.len() - r.base_url.len(),
                r.insertion_offsets.len()
            );
            assert!(!r.insertion_offsets.is_empty());
        }
    }
}
