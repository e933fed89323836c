//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use pmanet::data::synth;
use pmanet::model::{ModelConfig, ModelParams};
use pmanet::rng::Rng;
use pmanet::tokenizer::train_bpe;
use pmanet::train::{evaluate, fit, tokenize_records, Task, TrainConfig};

fn pass(criterion: &str, detail: String) {
    println!("[acceptance] {criterion}: PASS ({detail})");
}

#[test]
fn criterion_02_overfit_sanity() {
    let t0 = std::time::Instant::now();
    let records = synth::binary_dataset(32, 32, 2024);
    let vocab = train_bpe(records.iter().map(|r| r.url.as_str()), 4096).unwrap();
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let data = tokenize_records(&vocab, &records, cfg.max_len, Task::Binary).unwrap();
    let mut params = ModelParams::<f32>::init(cfg, &Rng::new(7)).unwrap();

    // loss at step 0 on the balanced batch
    let init_eval = evaluate(&params, &data).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!(
        (init_eval.mean_loss - ln2).abs() < 0.1,
        "initial loss {} not within 0.1 of ln 2",
        init_eval.mean_loss
    );

    // 200 optimizer steps of the desk preset (batch 64 = the whole set)
    let train_cfg = TrainConfig {
        epochs: 200,
        eval_every: Some(usize::MAX - 1),
        ..TrainConfig::desk(7)
    };
    fit(&mut params, &data, &[], &train_cfg, None).unwrap();
    let final_eval = evaluate(&params, &data).unwrap();
    assert!(
        final_eval.metrics.accuracy >= 0.98,
        "train accuracy {} below 0.98 after 200 steps",
        final_eval.metrics.accuracy
    );
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "runtime {secs:.1}s exceeds 5 minutes");
    pass(
        "criterion 2 (overfit sanity)",
        format!(
            "init loss {:.4}, final train acc {:.4}, {:.1}s",
            init_eval.mean_loss, final_eval.metrics.accuracy, secs
        ),
    );
}

#[test]
fn criterion_03_scaled_separability() {
    let t0 = std::time::Instant::now();
    // synthetic corpus in the standard two-column CSV layout, stratified
    // 10k/2k/2k
    let records = synth::binary_dataset(7000, 7000, 311);
    let splits = pmanet::data::split(&records, &[10.0 / 14.0, 2.0 / 14.0, 2.0 / 14.0], 311, true)
        .unwrap();
    let (train_recs, val_recs, test_recs) = (&splits[0], &splits[1], &splits[2]);
    assert_eq!(train_recs.len(), 10_000);
    assert_eq!(val_recs.len(), 2_000);
    assert_eq!(test_recs.len(), 2_000);

    // exercise the external CSV surface: write and reload the split
    let dir = std::env::temp_dir().join("pmanet-acceptance-c3");
    std::fs::create_dir_all(&dir).unwrap();
    let train_path = dir.join("train.csv");
    pmanet::data::save_dataset(&train_path, train_recs).unwrap();
    let (train_loaded, _) =
        pmanet::data::load_dataset(&train_path, &pmanet::data::Schema::binary()).unwrap();
    assert_eq!(train_loaded.len(), train_recs.len());

    // tokenizer sees the training split only
    let vocab = train_bpe(train_loaded.iter().map(|r| r.url.as_str()), 4096).unwrap();
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let train_data = tokenize_records(&vocab, &train_loaded, cfg.max_len, Task::Binary).unwrap();
    let val_data = tokenize_records(&vocab, val_recs, cfg.max_len, Task::Binary).unwrap();
    let test_data = tokenize_records(&vocab, test_recs, cfg.max_len, Task::Binary).unwrap();

    let mut params = ModelParams::<f32>::init(cfg, &Rng::new(311)).unwrap();
    let ckpt = dir.join("best.ckpt");
    let train_cfg = TrainConfig::desk(311);
    let log = fit(&mut params, &train_data, &val_data, &train_cfg, Some(&ckpt)).unwrap();
    let best = ModelParams::<f32>::load(&ckpt).unwrap();
    let eval = evaluate(&best, &test_data).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert!(
        eval.metrics.auc >= 0.85,
        "test AUC {} below 0.85 (best val loss {})",
        eval.metrics.auc,
        log.best_val_loss
    );
    assert!(secs < 3600.0, "runtime {secs:.0}s exceeds 60 minutes");
    pass(
        "criterion 3 (scaled separability)",
        format!(
            "test auc {:.4}, acc {:.4}, {:.0}s",
            eval.metrics.auc, eval.metrics.accuracy, secs
        ),
    );
}

mod helpers {
    use pmanet::rng::Rng;
    use pmanet::tensor::Tensor;

    pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Brute-force pairwise AUC oracle, independent of the library path.
    pub fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }
}

#[test]
fn criterion_01_gradient_integrity() {
    use helpers::randn;
    use pmanet::gradcheck::{check, CheckOpts};
    use pmanet::model::{forward_sample, Bound};
    use pmanet::tape::{GruWeights, Padding, Tape, Var};
    use pmanet::tensor::Tensor;
    use pmanet::tokenizer::MIN_VOCAB;

    let t0 = std::time::Instant::now();
    let opts = CheckOpts::default();
    let probe = |tape: &mut Tape<f64>, out: Var| -> pmanet::Result<Var> {
        let shape = tape.value(out).shape().to_vec();
        let p = tape.constant(randn(&shape, 0xf00d));
        let prod = tape.mul(out, p)?;
        tape.sum_all(prod)
    };

    // every forward-op kind
    type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> pmanet::Result<Var>>;
    let kinds: Vec<(&str, Vec<Tensor<f64>>, Builder)> = vec![
        (
            "matmul",
            vec![randn(&[3, 4], 1), randn(&[4, 5], 2)],
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            "add",
            vec![randn(&[3, 4], 1), randn(&[4], 2)],
            Box::new(move |t, v| {
                let y = t.add(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            "mul",
            vec![randn(&[3, 4, 2], 1), randn(&[3, 1, 1], 2)],
            Box::new(move |t, v| {
                let y = t.mul(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            "concat+slice",
            vec![randn(&[3, 2], 1), randn(&[3, 5], 2)],
            Box::new(move |t, v| {
                let y = t.concat(&[v[0], v[1]], 1)?;
                let z = t.slice(y, 1, 1, 4)?;
                probe(t, z)
            }),
        ),
        (
            "reshape+permute",
            vec![randn(&[2, 3, 4], 1)],
            Box::new(move |t, v| {
                let y = t.permute(v[0], vec![2, 0, 1])?;
                let z = t.reshape(y, vec![4, 6])?;
                probe(t, z)
            }),
        ),
        (
            "conv1d",
            vec![randn(&[7, 3], 1), randn(&[3, 3, 4], 2)],
            Box::new(move |t, v| {
                let y = t.conv1d(v[0], v[1], 1, Padding::Same)?;
                probe(t, y)
            }),
        ),
        (
            "max_pool",
            vec![randn(&[2, 9, 3], 1)],
            Box::new(move |t, v| {
                let y = t.max_pool(v[0], 1, 3, 2)?;
                probe(t, y)
            }),
        ),
        (
            "avg_pool",
            vec![randn(&[2, 8, 3], 1)],
            Box::new(move |t, v| {
                let y = t.avg_pool(v[0], 1, 4, 2)?;
                probe(t, y)
            }),
        ),
        (
            "softmax",
            vec![randn(&[4, 6], 1)],
            Box::new(move |t, v| {
                let y = t.softmax(v[0], 1)?;
                probe(t, y)
            }),
        ),
        (
            "layer_norm",
            vec![randn(&[5, 8], 1)],
            Box::new(move |t, v| {
                let y = t.layer_norm(v[0], 1, 1e-5)?;
                probe(t, y)
            }),
        ),
        (
            "gelu",
            vec![randn(&[13], 1)],
            Box::new(move |t, v| {
                let y = t.gelu(v[0])?;
                probe(t, y)
            }),
        ),
        (
            "sigmoid",
            vec![randn(&[13], 1)],
            Box::new(move |t, v| {
                let y = t.sigmoid(v[0])?;
                probe(t, y)
            }),
        ),
        (
            "tanh",
            vec![randn(&[13], 1)],
            Box::new(move |t, v| {
                let y = t.tanh(v[0])?;
                probe(t, y)
            }),
        ),
        (
            "relu",
            vec![randn(&[13], 1)],
            Box::new(move |t, v| {
                let y = t.relu(v[0])?;
                probe(t, y)
            }),
        ),
        (
            "dropout",
            vec![randn(&[10], 1)],
            Box::new(move |t, v| {
                let mut rng = pmanet::Rng::new(77);
                let y = t.dropout(v[0], 0.4, &mut rng)?;
                probe(t, y)
            }),
        ),
        (
            "embedding_lookup",
            vec![randn(&[6, 4], 1)],
            Box::new(move |t, v| {
                let y = t.embedding_lookup(v[0], &[0, 3, 3, 5])?;
                probe(t, y)
            }),
        ),
        (
            "cross_entropy",
            vec![randn(&[4, 3], 1)],
            Box::new(move |t, v| t.cross_entropy_with_logits(v[0], &[0, 2, 1, 2])),
        ),
        (
            "gru",
            vec![
                randn(&[5, 3], 1),
                randn(&[3, 4], 2),
                randn(&[3, 4], 3),
                randn(&[3, 4], 4),
                randn(&[4, 4], 5),
                randn(&[4, 4], 6),
                randn(&[4, 4], 7),
                randn(&[4], 8),
                randn(&[4], 9),
                randn(&[4], 10),
            ],
            Box::new(move |t, v| {
                let w = GruWeights {
                    wz: v[1],
                    wr: v[2],
                    wh: v[3],
                    uz: v[4],
                    ur: v[5],
                    uh: v[6],
                    bz: v[7],
                    br: v[8],
                    bh: v[9],
                };
                let y = t.gru(v[0], w, true)?;
                probe(t, y)
            }),
        ),
    ];
    let mut worst: (f64, &str) = (0.0, "none");
    for (name, inputs, builder) in &kinds {
        let report = check(inputs, &opts, builder).unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "op {name}: rel err {}",
            report.max_rel_err
        );
        if report.max_rel_err > worst.0 {
            worst = (report.max_rel_err, name);
        }
    }

    // composed encoder -> head path at N=2, C_hid=8, W=12, g=4
    let vocab = pmanet::tokenizer::train_bpe(
        ["http://a.com/x", "http://bb.org", "https://cc.net/q?p=1"],
        MIN_VOCAB + 10,
    )
    .unwrap();
    let cfg = ModelConfig::tiny(vocab.subword_count(), vocab.char_count());
    assert_eq!((cfg.n_layers, cfg.hidden, cfg.max_len, cfg.gru_hidden), (2, 8, 12, 4));
    let params = ModelParams::<f64>::init(cfg, &Rng::new(13)).unwrap();
    let seq = vocab.encode("http://bb.org/zq", 12).unwrap();
    let inputs: Vec<pmanet::Tensor<f64>> = params.tensors().to_vec();
    let opts = CheckOpts {
        max_elems_per_input: Some(3),
        ..CheckOpts::default()
    };
    let report = check(&inputs, &opts, |tape, vars| {
        let bound = Bound::from_vars(&params, vars.to_vec());
        let mut rng = Rng::new(0);
        let logits = forward_sample(tape, &bound, &seq, false, &mut rng)?;
        tape.cross_entropy_with_logits(logits, &[1])
    })
    .unwrap();
    assert!(
        report.max_rel_err < 1e-3,
        "composed path rel err {}",
        report.max_rel_err
    );
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 120.0, "runtime {secs:.1}s exceeds 2 minutes");
    pass(
        "criterion 1 (gradient integrity)",
        format!(
            "worst op {} rel err {:.2e}; composed path rel err {:.2e} over {} elements; {:.1}s",
            worst.1, worst.0, report.max_rel_err, report.checked, secs
        ),
    );
}

#[test]
fn criterion_04_structural_fidelity() {
    use pmanet::head::{build_stack, spp_vector};
    use pmanet::model::Bound;
    use pmanet::tape::Tape;
    use pmanet::tensor::Tensor;

    // desk-width parameters with the full 200-position window
    let cfg = ModelConfig::desk(300, 140);
    let c_hid = cfg.hidden;
    let params = ModelParams::<f32>::init(cfg, &Rng::new(3)).unwrap();

    // attention MLP shapes for r=3, N=12
    assert_eq!(params.get("lattn.w0").unwrap().shape(), &[4, 12]);
    assert_eq!(params.get("lattn.w1").unwrap().shape(), &[12, 4]);

    // build_stack over a batch of 4 produces (4, 12, 200, C_hid) exactly
    let mut tape = Tape::<f32>::new();
    let bound = Bound::new(&mut tape, &params, false);
    let mut rng = Rng::new(11);
    let batch: Vec<Vec<_>> = (0..4)
        .map(|_| {
            (0..12)
                .map(|_| {
                    let t = tape.constant(Tensor::trunc_normal(&[200, c_hid], 1.0, &mut rng));
                    let h = tape.constant(Tensor::trunc_normal(&[200, c_hid], 1.0, &mut rng));
                    (t, h)
                })
                .collect()
        })
        .collect();
    let stack = build_stack(&mut tape, &bound, &batch).unwrap();
    assert_eq!(tape.value(stack).shape(), &[4, 12, 200, c_hid]);

    // SPP output length = 12 * C_hid * 7, independent of W in {50, 200}
    let mut lens = Vec::new();
    for w in [50usize, 200] {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[12, w, c_hid]));
        let v = spp_vector(&mut tape, x, &[1, 2, 4]).unwrap();
        lens.push(tape.value(v).numel());
    }
    assert_eq!(lens[0], 12 * c_hid * 7);
    assert_eq!(lens[0], lens[1]);
    pass(
        "criterion 4 (structural fidelity)",
        format!(
            "stack (4,12,200,{c_hid}); attention MLP (4x12)/(12x4); spp len {} for W in {{50,200}}",
            lens[0]
        ),
    );
}

#[test]
fn criterion_05_metric_oracle_equivalence() {
    use helpers::auc_bruteforce;
    use pmanet::metrics::{auc_rank, compute_metrics};

    let mut rng = Rng::new(0xAEC);
    let mut checked = 0;
    for trial in 0..100 {
        let n = 2 + rng.next_below(499);
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            // mix of continuous and quantized so ties occur
            let s = if rng.next_f64() < 0.5 {
                rng.next_f64()
            } else {
                (rng.next_f64() * 6.0).floor() / 6.0
            };
            scores.push(s);
            labels.push(rng.next_f64() < 0.4);
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            continue;
        }
        let (rank, _) = auc_rank(&scores, &labels);
        let brute = auc_bruteforce(&scores, &labels);
        assert!(
            (rank - brute).abs() < 1e-12,
            "trial {trial}: rank {rank} vs brute {brute}"
        );
        checked += 1;
    }
    assert!(checked >= 90, "only {checked} non-degenerate trials");

    // confusion fixture TP=50 / FP=10 / FN=5 / TN=100
    let mut scores = vec![0.9; 50];
    let mut labels = vec![true; 50];
    scores.extend(vec![0.9; 10]);
    labels.extend(vec![false; 10]);
    scores.extend(vec![0.1; 5]);
    labels.extend(vec![true; 5]);
    scores.extend(vec![0.1; 100]);
    labels.extend(vec![false; 100]);
    let m = compute_metrics(&scores, &labels, 0.5).unwrap();
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (50, 10, 5, 100));
    assert!((m.precision - 50.0 / 60.0).abs() < 1e-12);
    assert!((m.recall - 50.0 / 55.0).abs() < 1e-12);
    assert!((m.fpr - 10.0 / 110.0).abs() < 1e-12);
    let (p, r) = (50.0 / 60.0, 50.0 / 55.0);
    assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
    pass(
        "criterion 5 (metric oracle equivalence)",
        format!("{checked} random sets exact to 1e-12; fixture matches hand formulas"),
    );
}

#[test]
fn criterion_06_adversarial_generator_validity() {
    use pmanet::adversarial::{build_adversarial_testset, host_labels_valid, AttackConfig};
    use pmanet::metrics::host_of;
    use std::collections::HashSet;

    // disjoint synthetic train and test pools, desk-scale counts
    let all = synth::binary_dataset(22_000, 11_000, 640);
    let splits = pmanet::data::split(&all, &[0.55, 0.45], 640, true).unwrap();
    let (train_split, test_split) = (&splits[0], &splits[1]);
    let vocab = train_bpe(train_split.iter().map(|r| r.url.as_str()), 4096).unwrap();

    let cfg = AttackConfig::default(); // 8000 / 4000 / 4000
    let set = build_adversarial_testset(test_split, &vocab, &cfg, 99).unwrap();
    assert_eq!(set.dataset.len(), 16_000);
    assert_eq!(set.records.len(), 4_000);
    assert!(set.records.len() >= 1_000);

    // composition 2:1:1
    let benign = set
        .dataset
        .iter()
        .filter(|r| r.label == pmanet::data::Label::Benign)
        .count();
    assert_eq!(benign, 8_000);
    assert_eq!(set.dataset.len() - benign, 8_000);

    let train_urls: HashSet<&str> = train_split.iter().map(|r| r.url.as_str()).collect();
    let mut parsed = 0usize;
    let mut recovered = 0usize;
    let mut leaked = 0usize;
    for r in &set.records {
        let host = host_of(&r.adversarial_url);
        if host.as_deref().map(host_labels_valid).unwrap_or(false) {
            parsed += 1;
        }
        // strip inserted hyphens (host offsets, each prior insertion
        // shifts the next by one)
        let mut base = r.adversarial_url.clone();
        let (hs, _) = {
            // host span via the public parser: find the host substring
            let h = host.clone().unwrap_or_default();
            let start = r.adversarial_url.find(&h).unwrap_or(0);
            (start, start + h.len())
        };
        let mut offsets: Vec<usize> = r
            .insertion_offsets
            .iter()
            .enumerate()
            .map(|(i, &b)| hs + b + i)
            .collect();
        offsets.reverse();
        for off in offsets {
            base.remove(off);
        }
        if base == r.base_url {
            recovered += 1;
        }
        if train_urls.contains(r.adversarial_url.as_str()) {
            leaked += 1;
        }
    }
    assert_eq!(parsed, set.records.len(), "all adversarial URLs must parse");
    assert_eq!(recovered, set.records.len(), "hyphen removal must recover the base URL");
    assert_eq!(leaked, 0, "no adversarial URL may occur in the train split");
    pass(
        "criterion 6 (adversarial generator validity)",
        format!(
            "{} records: 100% parse, 100% recover base, 0% in train, composition 8000/4000/4000",
            set.records.len()
        ),
    );
}

#[test]
fn criterion_07_robustness_harness() {
    use pmanet::adversarial::{build_adversarial_testset, AttackConfig};
    use pmanet::metrics::{roc_points, tpr_at_fpr, trapezoid_auc};

    // small but complete end-to-end run: train, attack, score, ROC
    let records = synth::binary_dataset(600, 600, 4242);
    let splits = pmanet::data::split(&records, &[0.6, 0.2, 0.2], 4242, true).unwrap();
    let vocab = train_bpe(splits[0].iter().map(|r| r.url.as_str()), 2048).unwrap();
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let train_data = tokenize_records(&vocab, &splits[0], cfg.max_len, Task::Binary).unwrap();
    let val_data = tokenize_records(&vocab, &splits[1], cfg.max_len, Task::Binary).unwrap();
    let mut params = ModelParams::<f32>::init(cfg.clone(), &Rng::new(4242)).unwrap();
    let train_cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::desk(4242)
    };
    fit(&mut params, &train_data, &val_data, &train_cfg, None).unwrap();

    let attack_cfg = AttackConfig {
        n_benign: 80,
        n_malicious: 40,
        n_adversarial: 40,
        hyphens_per_url: 1,
        swap_fraction: 0.5,
    };
    let set = build_adversarial_testset(&splits[2], &vocab, &attack_cfg, 4242).unwrap();
    let adv_data = tokenize_records(&vocab, &set.dataset, cfg.max_len, Task::Binary).unwrap();
    let eval = evaluate(&params, &adv_data).unwrap();
    let labels: Vec<bool> = adv_data.iter().map(|(_, l)| *l != 0).collect();
    let points = roc_points(&eval.scores, &labels).unwrap();
    assert_eq!(points.first().unwrap(), &(0.0, 0.0));
    assert_eq!(points.last().unwrap(), &(1.0, 1.0));

    // ROC emitted as the two-column CSV surface
    let dir = std::env::temp_dir().join("pmanet-acceptance-c7");
    std::fs::create_dir_all(&dir).unwrap();
    let roc_path = dir.join("roc.csv");
    let mut csv = String::from("fpr,tpr\n");
    for (f, t) in &points {
        csv.push_str(&format!("{f},{t}\n"));
    }
    std::fs::write(&roc_path, &csv).unwrap();
    assert!(roc_path.exists());

    let t001 = tpr_at_fpr(&points, 0.001);
    assert!((0.0..=1.0).contains(&t001), "tpr@fpr=0.001 must be computable");
    pass(
        "criterion 7 (robustness harness)",
        format!(
            "adversarial AUC {:.4} (trapezoid {:.4}), tpr@fpr=0.001 = {:.4}, ROC rows {}",
            eval.metrics.auc,
            trapezoid_auc(&points),
            t001,
            points.len()
        ),
    );
}

#[test]
fn criterion_08_grambeddings_tld_statistics() {
    use pmanet::data::{load_dataset, Label, Schema};
    use pmanet::metrics::tld_stats;

    // the real dataset is not redistributable; look for a local copy
    let candidates = [
        std::env::var("PMA_GRAMBEDDINGS").unwrap_or_default(),
        "data/grambeddings.csv".to_string(),
        "../data/grambeddings.csv".to_string(),
        "../../data/grambeddings.csv".to_string(),
    ];
    let Some(path) = candidates
        .iter()
        .filter(|p| !p.is_empty())
        .map(std::path::PathBuf::from)
        .find(|p| p.exists())
    else {
        println!(
            "[acceptance] criterion 8 (Table-1 statistics): SKIP (Grambeddings dataset not \
             downloaded; set PMA_GRAMBEDDINGS to its CSV to enable)"
        );
        return;
    };
    let (records, _) = load_dataset(&path, &Schema::binary()).unwrap();
    let benign: Vec<_> = records
        .iter()
        .filter(|r| r.label == Label::Benign)
        .map(|r| (r.url.as_str(), "benign"))
        .collect();
    let stats = tld_stats(benign);
    let f = &stats.per_class[0].1;
    assert!(
        (f.com - 0.5217).abs() < 0.005,
        ".com fraction {:.4} not within 0.5pp of 52.17%",
        f.com
    );
    assert!(
        (f.cc_tld - 0.1204).abs() < 0.005,
        "ccTLD fraction {:.4} not within 0.5pp of 12.04%",
        f.cc_tld
    );
    pass(
        "criterion 8 (Table-1 statistics)",
        format!(".com {:.2}%, ccTLD {:.2}%", f.com * 100.0, f.cc_tld * 100.0),
    );
}

#[test]
fn criterion_09_determinism() {
    use pmanet::adversarial::{build_adversarial_testset, AttackConfig};

    // train twice with one seed: bit-identical step-10 losses and
    // byte-identical best checkpoints
    let records = synth::binary_dataset(48, 48, 2718);
    let vocab = train_bpe(records.iter().map(|r| r.url.as_str()), 1024).unwrap();
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let data = tokenize_records(&vocab, &records, cfg.max_len, Task::Binary).unwrap();
    let val = data[..16].to_vec();
    let dir = std::env::temp_dir().join("pmanet-acceptance-c9");
    std::fs::create_dir_all(&dir).unwrap();

    let run = |tag: &str| {
        let mut params = ModelParams::<f32>::init(cfg.clone(), &Rng::new(2718)).unwrap();
        let ckpt = dir.join(format!("best-{tag}.ckpt"));
        let train_cfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            eval_every: Some(6),
            ..TrainConfig::desk(2718)
        };
        let log = fit(&mut params, &data, &val, &train_cfg, Some(&ckpt)).unwrap();
        (log, std::fs::read(&ckpt).unwrap())
    };
    let (log_a, bytes_a) = run("a");
    let (log_b, bytes_b) = run("b");
    assert!(log_a.steps.len() >= 10);
    assert_eq!(
        log_a.steps[9].loss.to_bits(),
        log_b.steps[9].loss.to_bits(),
        "step-10 losses differ"
    );
    assert_eq!(bytes_a, bytes_b, "best checkpoints differ");

    // attack twice with one seed: byte-identical CSV
    let test_set = synth::binary_dataset(300, 150, 123);
    let attack_vocab = train_bpe(test_set.iter().map(|r| r.url.as_str()), 1024).unwrap();
    let attack_cfg = AttackConfig {
        n_benign: 100,
        n_malicious: 50,
        n_adversarial: 50,
        hyphens_per_url: 1,
        swap_fraction: 0.5,
    };
    let csv = |tag: &str| {
        let set = build_adversarial_testset(&test_set, &attack_vocab, &attack_cfg, 55).unwrap();
        let path = dir.join(format!("adv-{tag}.csv"));
        pmanet::data::save_dataset(&path, &set.dataset).unwrap();
        std::fs::read(&path).unwrap()
    };
    assert_eq!(csv("a"), csv("b"), "adversarial CSVs differ");
    pass(
        "criterion 9 (determinism)",
        format!(
            "step-10 loss {:.6} bit-identical; checkpoint {} bytes identical; attack CSV identical",
            log_a.steps[9].loss,
            bytes_a.len()
        ),
    );
}

#[test]
fn criterion_10_ablation_harness() {
    use pmanet::train::layer_ablation;

    let t0 = std::time::Instant::now();
    let records = synth::binary_dataset(6_000, 6_000, 888);
    let splits = pmanet::data::split(&records, &[10.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0], 888, true)
        .unwrap();
    assert_eq!(splits[0].len(), 10_000);
    let vocab = train_bpe(splits[0].iter().map(|r| r.url.as_str()), 4096).unwrap();
    let cfg = ModelConfig::desk(vocab.subword_count(), vocab.char_count());
    let train_data = tokenize_records(&vocab, &splits[0], cfg.max_len, Task::Binary).unwrap();
    let val_data = tokenize_records(&vocab, &splits[1], cfg.max_len, Task::Binary).unwrap();
    let test_data = tokenize_records(&vocab, &splits[2], cfg.max_len, Task::Binary).unwrap();
    // one epoch per depth keeps the harness inside the suite budget; the
    // criterion asserts shape and records the trend, not absolute values
    let train_cfg = TrainConfig {
        epochs: 1,
        eval_every: Some(usize::MAX - 1),
        ..TrainConfig::desk(888)
    };
    let rows = layer_ablation::<f32>(
        &cfg,
        &train_data,
        &val_data,
        &test_data,
        &[2, 3, 4, 5, 12],
        &train_cfg,
    )
    .unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.auc] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(rows[4].layers, 12);
    let trend: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.4}", r.layers, r.accuracy))
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    pass(
        "criterion 10 (ablation harness)",
        format!("5-row table emitted; accuracy by depth {}; {:.0}s", trend.join(" "), secs),
    );
}
