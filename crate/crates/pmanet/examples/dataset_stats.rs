//! Per-class TLD composition of a URL dataset.

use pmanet::data::synth;
use pmanet::metrics::tld_stats;

fn main() {
    let records = synth::binary_dataset(4000, 4000, 3);
    let stats = tld_stats(records.iter().map(|r| (r.url.as_str(), r.label.name())));
    println!("class        .com     ccTLD    other gTLD");
    for (class, f) in &stats.per_class {
        println!(
            "{class:<12} {:>6.2}%  {:>6.2}%  {:>6.2}%",
            f.com * 100.0,
            f.cc_tld * 100.0,
            f.other_gtld * 100.0
        );
    }
    println!("({} unparseable hosts)", stats.unparseable);
}
