//! Dataset records, CSV ingestion, deterministic splits, and a synthetic
//! URL generator for demos and scaled-down empirical tests.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// URL class. The binary task uses Benign/Malicious; the four-class task
/// uses all variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Defacement,
    Phishing,
    Malicious,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Defacement => "defacement",
            Label::Phishing => "phishing",
            Label::Malicious => "malicious",
        }
    }

    /// Class index for the binary task (benign 0, anything else 1).
    pub fn binary_index(self) -> usize {
        usize::from(self != Label::Benign)
    }

    /// Class index for the four-class task.
    pub fn multi_index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Defacement => 1,
            Label::Phishing => 2,
            Label::Malicious => 3,
        }
    }
}

pub const MULTI_CLASS_NAMES: [&str; 4] = ["benign", "defacement", "phishing", "malicious"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlRecord {
    pub url: String,
    pub label: Label,
    pub source: String,
}

/// How to read a dataset file: column names (or indices for headerless
/// files) and the label vocabulary.
#[derive(Debug, Clone)]
pub struct Schema {
    pub url_col: String,
    pub label_col: String,
    pub delimiter: u8,
    pub has_header: bool,
    pub label_map: Vec<(String, Label)>,
    pub source: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema::binary()
    }
}

impl Schema {
    /// Two-column `url,label` CSV with common binary label spellings
    /// (numeric 0/1 included); the Grambeddings-style layout.
    pub fn binary() -> Schema {
        Schema {
            url_col: "url".into(),
            label_col: "label".into(),
            delimiter: b',',
            has_header: true,
            label_map: vec![
                ("benign".into(), Label::Benign),
                ("good".into(), Label::Benign),
                ("legitimate".into(), Label::Benign),
                ("0".into(), Label::Benign),
                ("malicious".into(), Label::Malicious),
                ("bad".into(), Label::Malicious),
                ("phishing".into(), Label::Malicious),
                ("phish".into(), Label::Malicious),
                ("malware".into(), Label::Malicious),
                ("1".into(), Label::Malicious),
            ],
            source: "csv".into(),
        }
    }

    /// Four-class schema for the multi-class task.
    pub fn multiclass() -> Schema {
        Schema {
            url_col: "url".into(),
            label_col: "type".into(),
            delimiter: b',',
            has_header: true,
            label_map: vec![
                ("benign".into(), Label::Benign),
                ("defacement".into(), Label::Defacement),
                ("phishing".into(), Label::Phishing),
                ("malware".into(), Label::Malicious),
                ("malicious".into(), Label::Malicious),
            ],
            source: "csv".into(),
        }
    }

    fn lookup(&self, raw: &str) -> Option<Label> {
        let key = raw.trim().to_ascii_lowercase();
        self.label_map
            .iter()
            .find(|(name, _)| *name == key)
            .map(|&(_, label)| label)
    }
}

/// Outcome counts of one load.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadStats {
    pub rows: usize,
    pub skipped_malformed: usize,
}

/// Parse a CSV/TSV dataset. Duplicate URLs are retained and row order is
/// preserved; malformed rows are skipped and counted, but an unmapped
/// label aborts with `UnknownLabel`.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<(Vec<UrlRecord>, LoadStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_path(path)?;
    let (url_idx, label_idx) = if schema.has_header {
        let headers = reader.headers()?.clone();
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        (find(&schema.url_col)?, find(&schema.label_col)?)
    } else {
        let parse = |name: &str| -> Result<usize> {
            name.parse()
                .map_err(|_| Error::MissingColumn(name.to_string()))
        };
        (parse(&schema.url_col)?, parse(&schema.label_col)?)
    };

    let mut records = Vec::new();
    let mut stats = LoadStats::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                stats.skipped_malformed += 1;
                continue;
            }
        };
        let (Some(url), Some(raw_label)) = (row.get(url_idx), row.get(label_idx)) else {
            stats.skipped_malformed += 1;
            continue;
        };
        let url = url.trim();
        if url.is_empty() {
            stats.skipped_malformed += 1;
            continue;
        }
        let label = schema
            .lookup(raw_label)
            .ok_or_else(|| Error::UnknownLabel(raw_label.to_string()))?;
        records.push(UrlRecord {
            url: url.to_string(),
            label,
            source: schema.source.clone(),
        });
        stats.rows += 1;
    }
    if records.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok((records, stats))
}

/// Write records in the standard two-column schema.
pub fn save_dataset(path: &Path, records: &[UrlRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["url", "label"])?;
    for r in records {
        writer.write_record([r.url.as_str(), r.label.name()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Deterministic dataset split by fractions. Stratified mode keeps each
/// class's proportions within one sample of exact.
pub fn split(
    records: &[UrlRecord],
    fractions: &[f64],
    seed: u64,
    stratified: bool,
) -> Result<Vec<Vec<UrlRecord>>> {
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::FractionOverflow(total));
    }
    if records.is_empty() {
        return Err(Error::DataEmpty);
    }
    let mut rng = Rng::new(seed).derive("split");
    let mut out: Vec<Vec<UrlRecord>> = fractions.iter().map(|_| Vec::new()).collect();
    let slice_class = |items: &mut Vec<usize>, rng: &mut Rng, out: &mut Vec<Vec<UrlRecord>>| {
        rng.shuffle(items);
        let n = items.len() as f64;
        let mut cursor = 0usize;
        let mut cum = 0.0;
        for (si, &f) in fractions.iter().enumerate() {
            cum += f;
            let end = (cum * n).round() as usize;
            for &idx in &items[cursor..end.min(items.len())] {
                out[si].push(records[idx].clone());
            }
            cursor = end.min(items.len());
        }
    };
    if stratified {
        let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_class.entry(r.label).or_default().push(i);
        }
        for (_, mut items) in by_class {
            slice_class(&mut items, &mut rng, &mut out);
        }
    } else {
        let mut items: Vec<usize> = (0..records.len()).collect();
        slice_class(&mut items, &mut rng, &mut out);
    }
    Ok(out)
}

/// Synthetic URL corpus with distinguishable benign/malicious structure,
/// loosely mirroring real TLD compositions. Used by examples and the
/// scaled-down empirical checks.
pub mod synth {
    use super::*;

    const WORDS: &[&str] = &[
        "news", "shop", "blog", "cloud", "mail", "photo", "video", "music", "store", "forum",
        "wiki", "travel", "sport", "game", "tech", "home", "food", "book", "art", "health",
        "green", "smart", "open", "fast", "global", "digital", "media", "data", "web", "net",
        "alpha", "nova", "prime", "metro", "civic", "urban", "local", "daily", "first", "best",
    ];
    const BRANDS: &[&str] = &[
        "paypal", "amazon", "google", "apple", "microsoft", "netflix", "facebook", "chase",
        "wellsfargo", "dropbox", "icloud", "instagram", "whatsapp", "linkedin", "ebay",
    ];
    const SUSPICIOUS: &[&str] = &[
        "login", "verify", "secure", "account", "update", "confirm", "signin", "banking",
        "password", "wallet", "billing", "support", "alert", "recover",
    ];
    const CC: &[&str] = &["de", "uk", "fr", "jp", "cn", "ru", "br", "in", "it", "nl"];
    const GTLD: &[&str] = &["org", "net", "info", "biz", "edu", "dev"];
    // free/cheap registries favored by throwaway domains; the 2-letter
    // ones are genuine ccTLDs and count as such in stats
    const CHEAP_CC: &[&str] = &["tk", "ml", "ga", "pw"];
    const CHEAP_GTLD: &[&str] = &["xyz", "top", "icu"];
    const PAGES: &[&str] = &["index", "home", "page", "view", "item", "post", "article"];

    fn pick<'a>(rng: &mut Rng, list: &[&'a str]) -> &'a str {
        list[rng.next_below(list.len())]
    }

    fn benign_tld(rng: &mut Rng) -> String {
        let roll = rng.next_f64();
        if roll < 0.5217 {
            "com".to_string()
        } else if roll < 0.5217 + 0.1204 {
            pick(rng, CC).to_string()
        } else {
            pick(rng, GTLD).to_string()
        }
    }

    fn random_token(rng: &mut Rng, len: usize) -> String {
        const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        (0..len)
            .map(|_| ALPHABET[rng.next_below(ALPHABET.len())] as char)
            .collect()
    }

    pub fn benign_url(rng: &mut Rng) -> String {
        let tld = benign_tld(rng);
        let host = match rng.next_below(4) {
            0 => format!("www.{}.{tld}", pick(rng, WORDS)),
            1 => format!("{}{}.{tld}", pick(rng, WORDS), pick(rng, WORDS)),
            2 => format!("{}.{}.{tld}", pick(rng, WORDS), pick(rng, WORDS)),
            _ => format!("{}.{tld}", pick(rng, WORDS)),
        };
        let mut url = format!("http{}://{host}", if rng.next_f64() < 0.6 { "s" } else { "" });
        for _ in 0..rng.next_below(3) {
            url.push('/');
            url.push_str(pick(rng, WORDS));
        }
        if rng.next_f64() < 0.25 {
            url.push_str(&format!("/{}.html", pick(rng, PAGES)));
        }
        if rng.next_f64() < 0.15 {
            url.push_str(&format!("?id={}", rng.next_below(10_000)));
        }
        url
    }

    pub fn malicious_url(rng: &mut Rng) -> String {
        let style = rng.next_below(5);
        let tld_roll = rng.next_f64();
        let tld = if tld_roll < 0.601 {
            "com".to_string()
        } else if tld_roll < 0.601 + 0.118 {
            if rng.next_f64() < 0.5 {
                pick(rng, CHEAP_CC).to_string()
            } else {
                pick(rng, CC).to_string()
            }
        } else if tld_roll < 0.86 {
            pick(rng, CHEAP_GTLD).to_string()
        } else {
            pick(rng, GTLD).to_string()
        };
        let host = match style {
            // brand spoof with digits
            0 => format!(
                "{}{}{}.{tld}",
                pick(rng, BRANDS),
                pick(rng, SUSPICIOUS),
                rng.next_below(100)
            ),
            // random-entropy domain
            1 => {
                let len = 8 + rng.next_below(10);
                format!("{}.{tld}", random_token(rng, len))
            }
            // deep brand subdomain on a junk registrable domain
            2 => format!(
                "{}.{}.{}.{tld}",
                pick(rng, BRANDS),
                pick(rng, SUSPICIOUS),
                random_token(rng, 6)
            ),
            // raw IPv4 host
            3 => format!(
                "{}.{}.{}.{}",
                1 + rng.next_below(254),
                rng.next_below(256),
                rng.next_below(256),
                1 + rng.next_below(254)
            ),
            // brand embedded mid-host
            _ => format!(
                "{}-{}.{}.{tld}",
                pick(rng, SUSPICIOUS),
                pick(rng, BRANDS),
                random_token(rng, 5)
            ),
        };
        let mut url = format!("http://{host}");
        let depth = 1 + rng.next_below(3);
        for _ in 0..depth {
            match rng.next_below(3) {
                0 => {
                    url.push('/');
                    url.push_str(pick(rng, SUSPICIOUS));
                }
                1 => {
                    url.push('/');
                    let len = 4 + rng.next_below(8);
                    url.push_str(&random_token(rng, len));
                }
                _ => {
                    url.push('/');
                    url.push_str(pick(rng, WORDS));
                }
            }
        }
        if rng.next_f64() < 0.5 {
            url.push_str(&format!("?session={}", random_token(rng, 12)));
        }
        url
    }

    /// Balanced-or-not binary corpus with deterministic content.
    pub fn binary_dataset(n_benign: usize, n_malicious: usize, seed: u64) -> Vec<UrlRecord> {
        let root = Rng::new(seed).derive("synth");
        let mut out = Vec::with_capacity(n_benign + n_malicious);
        for i in 0..n_benign {
            let mut rng = root.derive_index(i as u64);
            out.push(UrlRecord {
                url: benign_url(&mut rng),
                label: Label::Benign,
                source: "synth".into(),
            });
        }
        for i in 0..n_malicious {
            let mut rng = root.derive_index((n_benign + i) as u64);
            out.push(UrlRecord {
                url: malicious_url(&mut rng),
                label: Label::Malicious,
                source: "synth".into(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pmanet-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn three_row_csv_loads_three_records() {
        let path = tmp("three.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "url,label").unwrap();
        writeln!(f, "http://a.com,benign").unwrap();
        writeln!(f, "http://b.com,malicious").unwrap();
        writeln!(f, "http://c.de,0").unwrap();
        drop(f);
        let (records, stats) = load_dataset(&path, &Schema::binary()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(stats.rows, 3);
        assert_eq!(records[0].label, Label::Benign);
        assert_eq!(records[1].label, Label::Malicious);
        assert_eq!(records[2].label, Label::Benign);
    }

    #[test]
    fn unknown_label_aborts() {
        let path = tmp("unknown.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "url,label").unwrap();
        writeln!(f, "http://a.com,weird").unwrap();
        drop(f);
        let mut schema = Schema::binary();
        schema.label_map.retain(|(n, _)| n != "phish");
        let err = load_dataset(&path, &schema).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel(_)));
    }

    #[test]
    fn missing_column_reported() {
        let path = tmp("missing.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "address,label").unwrap();
        writeln!(f, "http://a.com,benign").unwrap();
        drop(f);
        assert!(matches!(
            load_dataset(&path, &Schema::binary()),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn quoted_urls_with_commas_survive() {
        let path = tmp("quoted.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "url,label").unwrap();
        writeln!(f, "\"http://a.com/x,y\",benign").unwrap();
        drop(f);
        let (records, _) = load_dataset(&path, &Schema::binary()).unwrap();
        assert_eq!(records[0].url, "http://a.com/x,y");
    }

    #[test]
    fn duplicates_and_order_preserved() {
        let path = tmp("dups.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "url,label").unwrap();
        writeln!(f, "http://same.com,benign").unwrap();
        writeln!(f, "http://other.com,malicious").unwrap();
        writeln!(f, "http://same.com,benign").unwrap();
        drop(f);
        let (records, _) = load_dataset(&path, &Schema::binary()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].url, records[2].url);
        assert_eq!(records[1].url, "http://other.com");
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let records = synth::binary_dataset(60, 60, 42);
        let a = split(&records, &[0.5, 0.25, 0.25], 7, true).unwrap();
        let b = split(&records, &[0.5, 0.25, 0.25], 7, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        let total: usize = a.iter().map(|s| s.len()).sum();
        assert_eq!(total, 120);
    }

    #[test]
    fn stratified_keeps_imbalance_within_one_sample() {
        // 43:1 style imbalance
        let records = synth::binary_dataset(430, 10, 1);
        let parts = split(&records, &[0.8, 0.1, 0.1], 3, true).unwrap();
        for (frac, part) in [0.8, 0.1, 0.1].iter().zip(&parts) {
            let benign = part.iter().filter(|r| r.label == Label::Benign).count();
            let mal = part.len() - benign;
            assert!((benign as f64 - frac * 430.0).abs() <= 1.0, "benign {benign}");
            assert!((mal as f64 - frac * 10.0).abs() <= 1.0, "malicious {mal}");
        }
    }

    #[test]
    fn fraction_overflow_rejected() {
        let records = synth::binary_dataset(4, 4, 0);
        assert!(matches!(
            split(&records, &[0.8, 0.4], 1, false),
            Err(Error::FractionOverflow(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_parseable() {
        let a = synth::binary_dataset(50, 50, 9);
        let b = synth::binary_dataset(50, 50, 9);
        assert_eq!(a, b);
        for r in &a {
            assert!(crate::metrics::host_of(&r.url).is_some(), "{}", r.url);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let path = tmp("round.csv");
        let records = synth::binary_dataset(5, 5, 3);
        save_dataset(&path, &records).unwrap();
        let (loaded, _) = load_dataset(&path, &Schema::binary()).unwrap();
        assert_eq!(records.len(), loaded.len());
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.url, b.url);
            assert_eq!(a.label, b.label);
        }
    }
}
