//! Classification metrics: confusion-derived scores, rank-statistic AUC,
//! ROC curves, and dataset TLD composition.

use crate::error::{Error, Result};
use serde::Serialize;

/// Confusion-matrix scores plus AUC and FPR. Degenerate ratios (zero
/// denominator) report 0.0 and set the matching flag.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub degenerate_precision: bool,
    pub degenerate_recall: bool,
    pub degenerate_auc: bool,
}

/// Mann-Whitney AUC via average ranks; tied scores count half.
/// Returns (auc, degenerate) — degenerate when a class is missing.
pub fn auc_rank(scores: &[f64], labels: &[bool]) -> (f64, bool) {
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return (0.5, true);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l)
        .map(|(_, &r)| r)
        .sum();
    let p = pos as f64;
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64);
    (auc, false)
}

/// Threshold the malicious-class scores and derive the full metric set.
pub fn compute_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Metrics> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::DataEmpty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        match (predicted, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = scores.len() as f64;
    let ratio = |num: usize, den: usize| -> (f64, bool) {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, degenerate_precision) = ratio(tp, tp + fp);
    let (recall, degenerate_recall) = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (fpr, _) = ratio(fp, fp + tn);
    let (auc, degenerate_auc) = auc_rank(scores, labels);
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1,
        auc,
        fpr,
        tp,
        fp,
        tn,
        fn_,
        degenerate_precision,
        degenerate_recall,
        degenerate_auc,
    })
}

/// Per-class one-vs-rest metrics plus the macro average, for the
/// multi-class task.
#[derive(Debug, Clone, Serialize)]
pub struct MulticlassReport {
    pub accuracy: f64,
    pub per_class: Vec<(String, Metrics)>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

pub fn compute_multiclass(
    probs: &[Vec<f64>],
    labels: &[usize],
    class_names: &[&str],
) -> Result<MulticlassReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::DataEmpty);
    }
    let k = class_names.len();
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| {
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            argmax == l
        })
        .count();
    let mut per_class = Vec::with_capacity(k);
    let (mut sp, mut sr, mut sf, mut sa) = (0.0, 0.0, 0.0, 0.0);
    for (c, name) in class_names.iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let binary: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        // one-vs-rest prediction: argmax equals this class
        let preds: Vec<f64> = probs
            .iter()
            .map(|p| {
                let argmax = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if argmax == c {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut m = compute_metrics(&preds, &binary, 0.5)?;
        let (auc, degenerate) = auc_rank(&scores, &binary);
        m.auc = auc;
        m.degenerate_auc = degenerate;
        sp += m.precision;
        sr += m.recall;
        sf += m.f1;
        sa += m.auc;
        per_class.push((name.to_string(), m));
    }
    Ok(MulticlassReport {
        accuracy: correct as f64 / probs.len() as f64,
        per_class,
        macro_precision: sp / k as f64,
        macro_recall: sr / k as f64,
        macro_f1: sf / k as f64,
        macro_auc: sa / k as f64,
    })
}

/// ROC polyline from (0,0) to (1,1); tied scores collapse into single
/// diagonal segments so the trapezoid area equals the rank AUC.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::DataEmpty);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DataEmpty);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    Ok(points)
}

/// Trapezoid area under a ROC polyline.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// TPR at a given FPR by linear interpolation along the polyline.
pub fn tpr_at_fpr(points: &[(f64, f64)], fpr: f64) -> f64 {
    let x = fpr.clamp(0.0, 1.0);
    let mut best = 0.0f64;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x0 <= x && x <= x1 {
            let y = if x1 > x0 {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            } else {
                y0.max(y1)
            };
            best = best.max(y);
        }
    }
    best
}

// ── TLD statistics ───────────────────────────────────────────────────

/// ISO 3166-1 alpha-2 country codes, frozen for ccTLD classification.
const CC_TLDS: &[&str] = &[
    "ad", "ae", "af", "ag", "ai", "al", "am", "ao", "aq", "ar", "as", "at", "au", "aw", "ax",
    "az", "ba", "bb", "bd", "be", "bf", "bg", "bh", "bi", "bj", "bl", "bm", "bn", "bo", "bq",
    "br", "bs", "bt", "bv", "bw", "by", "bz", "ca", "cc", "cd", "cf", "cg", "ch", "ci", "ck",
    "cl", "cm", "cn", "co", "cr", "cu", "cv", "cw", "cx", "cy", "cz", "de", "dj", "dk", "dm",
    "do", "dz", "ec", "ee", "eg", "eh", "er", "es", "et", "eu", "fi", "fj", "fk", "fm", "fo",
    "fr", "ga", "gb", "gd", "ge", "gf", "gg", "gh", "gi", "gl", "gm", "gn", "gp", "gq", "gr",
    "gs", "gt", "gu", "gw", "gy", "hk", "hm", "hn", "hr", "ht", "hu", "id", "ie", "il", "im",
    "in", "io", "iq", "ir", "is", "it", "je", "jm", "jo", "jp", "ke", "kg", "kh", "ki", "km",
    "kn", "kp", "kr", "kw", "ky", "kz", "la", "lb", "lc", "li", "lk", "lr", "ls", "lt", "lu",
    "lv", "ly", "ma", "mc", "md", "me", "mf", "mg", "mh", "mk", "ml", "mm", "mn", "mo", "mp",
    "mq", "mr", "ms", "mt", "mu", "mv", "mw", "mx", "my", "mz", "na", "nc", "ne", "nf", "ng",
    "ni", "nl", "no", "np", "nr", "nu", "nz", "om", "pa", "pe", "pf", "pg", "ph", "pk", "pl",
    "pm", "pn", "pr", "ps", "pt", "pw", "py", "qa", "re", "ro", "rs", "ru", "rw", "sa", "sb",
    "sc", "sd", "se", "sg", "sh", "si", "sj", "sk", "sl", "sm", "sn", "so", "sr", "ss", "st",
    "sv", "sx", "sy", "sz", "tc", "td", "tf", "tg", "th", "tj", "tk", "tl", "tm", "tn", "to",
    "tr", "tt", "tv", "tw", "tz", "ua", "ug", "uk", "um", "us", "uy", "uz", "va", "vc", "ve",
    "vg", "vi", "vn", "vu", "wf", "ws", "ye", "yt", "za", "zm", "zw",
];

/// Which TLD bucket a host falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TldBucket {
    Com,
    CountryCode,
    OtherGtld,
}

/// Extract the host from a URL-ish string; falls back to the token before
/// the first '/' when no scheme is present.
pub fn host_of(url: &str) -> Option<String> {
    let s = url.trim();
    let after_scheme = match s.find("://") {
        Some(i) => &s[i + 3..],
        None => s,
    };
    let authority = after_scheme
        .split(['/', '?', '#'])
        .next()
        .unwrap_or("");
    let host = match authority.rfind('@') {
        Some(i) => &authority[i + 1..],
        None => authority,
    };
    // strip a port, but not an IPv6 bracket block
    let host = if host.starts_with('[') {
        host.split(']').next().map(|h| &h[1..]).unwrap_or(host)
    } else {
        host.split(':').next().unwrap_or(host)
    };
    let host = host.trim_matches('.').to_ascii_lowercase();
    if host.is_empty() {
        None
    } else {
        Some(host)
    }
}

pub fn classify_tld(host: &str) -> TldBucket {
    let last = host.rsplit('.').next().unwrap_or(host);
    if last == "com" {
        TldBucket::Com
    } else if last.len() == 2
        && last.bytes().all(|b| b.is_ascii_lowercase())
        && CC_TLDS.binary_search(&last).is_ok()
    {
        TldBucket::CountryCode
    } else {
        TldBucket::OtherGtld
    }
}

/// Per-class TLD fractions; the three fractions sum to 1.
#[derive(Debug, Clone, Serialize)]
pub struct TldStats {
    pub per_class: Vec<(String, TldFractions)>,
    pub unparseable: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TldFractions {
    pub com: f64,
    pub cc_tld: f64,
    pub other_gtld: f64,
    pub count: usize,
}

pub fn tld_stats<'a, I>(records: I) -> TldStats
where
    I: IntoIterator<Item = (&'a str, &'a str)>, // (url, class name)
{
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut unparseable = 0usize;
    for (url, class) in records {
        let bucket = match host_of(url) {
            Some(host) => classify_tld(&host),
            None => {
                unparseable += 1;
                TldBucket::OtherGtld
            }
        };
        let e = counts.entry(class.to_string()).or_insert([0; 3]);
        match bucket {
            TldBucket::Com => e[0] += 1,
            TldBucket::CountryCode => e[1] += 1,
            TldBucket::OtherGtld => e[2] += 1,
        }
    }
    let per_class = counts
        .into_iter()
        .map(|(class, [com, cc, other])| {
            let n = (com + cc + other).max(1) as f64;
            (
                class,
                TldFractions {
                    com: com as f64 / n,
                    cc_tld: cc as f64 / n,
                    other_gtld: other as f64 / n,
                    count: com + cc + other,
                },
            )
        })
        .collect();
    TldStats {
        per_class,
        unparseable,
    }
}
