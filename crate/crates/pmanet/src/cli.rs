//! Command-line front end: thin orchestration over the library.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 numeric failure.

use crate::adversarial::{build_adversarial_testset, AttackConfig};
use crate::data::{load_dataset, save_dataset, Schema, UrlRecord, MULTI_CLASS_NAMES};
use crate::error::{Error, Result};
use crate::metrics::{compute_multiclass, roc_points, tld_stats, tpr_at_fpr, trapezoid_auc};
use crate::model::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tokenizer::{train_bpe, Vocab, DEFAULT_VOCAB_SIZE};
use crate::train::{evaluate, fit, layer_ablation, tokenize_records, Task, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pmanet",
    version,
    about = "Character-aware dual-channel URL classifier with layer attention and pyramid pooling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model (optionally training the BPE vocabulary first)
    Train(TrainArgs),
    /// Score URLs with a trained checkpoint
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a labeled test set
    Eval(EvalArgs),
    /// Generate the compound-attack adversarial test set
    Attack(AttackArgs),
    /// Dataset TLD composition statistics
    Stats(StatsArgs),
    /// Layer-count ablation: one training run per stack depth
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Preset: "desk" (narrow, trainable on CPU) or "paper" (full width)
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Root seed; all randomness derives from it
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Hyperparameter override, repeatable: --override epochs=1
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for checkpoints, logs and reports
    #[arg(long, default_value = "runs/latest")]
    pub out_dir: PathBuf,
    /// Task: "binary" or "multi" (four-class)
    #[arg(long, default_value = "binary")]
    pub task: String,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training CSV (columns url,label)
    #[arg(long)]
    pub data: PathBuf,
    /// Validation CSV
    #[arg(long)]
    pub val: PathBuf,
    /// Optional test CSV evaluated with the best checkpoint after training
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Load an existing vocabulary instead of training one
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Train a fresh BPE vocabulary on the training split
    #[arg(long, default_value_t = false)]
    pub train_vocab: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// URLs to score; use --data for a file with one URL per line
    pub urls: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Source test set CSV
    #[arg(long)]
    pub test: PathBuf,
    /// Vocabulary used as the subword tagger
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Train the tagger vocabulary on the test file itself
    #[arg(long, default_value_t = false)]
    pub train_vocab: bool,
}

#[derive(Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Comma-separated stack depths, e.g. 2,3,4,5,12
    #[arg(long, default_value = "2,3,4,5,12")]
    pub layers: String,
}

/// Parsed `--override` pairs.
pub struct Overrides(HashMap<String, String>);

impl Overrides {
    pub fn parse(raw: &[String]) -> Result<Overrides> {
        let mut map = HashMap::new();
        for item in raw {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {item:?} is not KEY=VALUE")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Overrides(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("override {key}={v} has the wrong type"))),
        }
    }

    pub fn apply_model(&self, cfg: &mut ModelConfig) -> Result<()> {
        if let Some(v) = self.get("n_layers")? {
            cfg.n_layers = v;
        }
        if let Some(v) = self.get("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.get("n_heads")? {
            cfg.n_heads = v;
        }
        if let Some(v) = self.get("gru_hidden")? {
            cfg.gru_hidden = v;
        }
        if let Some(v) = self.get("char_dim")? {
            cfg.char_dim = v;
        }
        if let Some(v) = self.get("max_len")? {
            cfg.max_len = v;
        }
        if let Some(v) = self.get("dropout")? {
            cfg.dropout = v;
        }
        if let Some(v) = self.get("stack_layers")? {
            cfg.stack_layers = Some(v);
        }
        Ok(())
    }

    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.get("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.get("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.get("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = self.get("weight_decay")? {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.get("eval_every")? {
            cfg.eval_every = Some(v);
        }
        Ok(())
    }

    pub fn apply_attack(&self, cfg: &mut AttackConfig) -> Result<()> {
        if let Some(v) = self.get("attack_benign")? {
            cfg.n_benign = v;
        }
        if let Some(v) = self.get("attack_malicious")? {
            cfg.n_malicious = v;
        }
        if let Some(v) = self.get("attack_adversarial")? {
            cfg.n_adversarial = v;
        }
        if let Some(v) = self.get("hyphens")? {
            cfg.hyphens_per_url = v;
        }
        if let Some(v) = self.get("swap_fraction")? {
            cfg.swap_fraction = v;
        }
        Ok(())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
    }
}

fn parse_task(name: &str) -> Result<Task> {
    match name {
        "binary" => Ok(Task::Binary),
        "multi" | "multiclass" => Ok(Task::MultiClass),
        other => Err(Error::Usage(format!("unknown task {other:?}"))),
    }
}

fn schema_for(task: Task) -> Schema {
    match task {
        Task::Binary => Schema::binary(),
        Task::MultiClass => Schema::multiclass(),
    }
}

fn model_preset(name: &str, subword_vocab: usize, char_vocab: usize) -> Result<ModelConfig> {
    match name {
        "desk" => Ok(ModelConfig::desk(subword_vocab, char_vocab)),
        "paper" => Ok(ModelConfig::paper(subword_vocab, char_vocab)),
        other => Err(Error::Usage(format!("unknown preset {other:?}"))),
    }
}

fn train_preset(name: &str, seed: u64) -> Result<TrainConfig> {
    match name {
        "desk" => Ok(TrainConfig::desk(seed)),
        "paper" => Ok(TrainConfig::paper(seed)),
        other => Err(Error::Usage(format!("unknown preset {other:?}"))),
    }
}

/// Open-with-context so missing paths name themselves in errors.
fn read_records(path: &Path, schema: &Schema) -> Result<Vec<UrlRecord>> {
    if !path.exists() {
        return Err(Error::Usage(format!("input file not found: {}", path.display())));
    }
    let (records, stats) = load_dataset(path, schema)?;
    if stats.skipped_malformed > 0 {
        eprintln!(
            "warning: skipped {} malformed rows in {}",
            stats.skipped_malformed,
            path.display()
        );
    }
    Ok(records)
}

fn load_vocab_checked(path: &Path) -> Result<Vocab> {
    if !path.exists() {
        return Err(Error::Usage(format!("vocab file not found: {}", path.display())));
    }
    Vocab::load(path)
}

/// The checkpoint's embedded table sizes must match the vocabulary it is
/// paired with.
fn check_vocab_matches(params: &ModelParams<f32>, vocab: &Vocab) -> Result<()> {
    if params.config.subword_vocab != vocab.subword_count()
        || params.config.char_vocab != vocab.char_count()
    {
        return Err(Error::BadCheckpoint(format!(
            "checkpoint expects vocab of {} subwords / {} chars, file has {} / {}",
            params.config.subword_vocab,
            params.config.char_vocab,
            vocab.subword_count(),
            vocab.char_count()
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let task = parse_task(&args.common.task)?;
    let overrides = Overrides::parse(&args.common.overrides)?;
    let schema = schema_for(task);
    let train_records = read_records(&args.data, &schema)?;
    let val_records = read_records(&args.val, &schema)?;
    std::fs::create_dir_all(&args.common.out_dir)?;

    let vocab = match (&args.vocab, args.train_vocab) {
        (Some(path), _) => load_vocab_checked(path)?,
        (None, _) => {
            // tokenizer sees the training split only
            let size = overrides.get_usize("vocab_size")?.unwrap_or(DEFAULT_VOCAB_SIZE);
            let v = train_bpe(train_records.iter().map(|r| r.url.as_str()), size)?;
            let path = args.common.out_dir.join("bpe.vocab");
            v.save(&path)?;
            println!("vocab: trained {} merges -> {}", v.merges().len(), path.display());
            v
        }
    };

    let mut model_cfg = model_preset(&args.common.preset, vocab.subword_count(), vocab.char_count())?;
    model_cfg.classes = task.classes();
    overrides.apply_model(&mut model_cfg)?;
    model_cfg.validate()?;
    let mut train_cfg = train_preset(&args.common.preset, args.common.seed)?;
    train_cfg.verbose = true;
    overrides.apply_train(&mut train_cfg)?;

    let train_data = tokenize_records(&vocab, &train_records, model_cfg.max_len, task)?;
    let val_data = tokenize_records(&vocab, &val_records, model_cfg.max_len, task)?;

    let mut params = ModelParams::<f32>::init(model_cfg.clone(), &Rng::new(args.common.seed))?;
    println!(
        "model: {} layers, hidden {}, {} parameters",
        model_cfg.n_layers,
        model_cfg.hidden,
        params.total_elements()
    );
    let ckpt = args.common.out_dir.join("best.ckpt");
    let log = fit(&mut params, &train_data, &val_data, &train_cfg, Some(&ckpt))?;
    write_json(&args.common.out_dir.join("train_log.json"), &log)?;

    // final metrics from the best checkpoint
    let best: ModelParams<f32> = if ckpt.exists() {
        ModelParams::load(&ckpt)?
    } else {
        params
    };
    let final_eval = evaluate(&best, &val_data)?;
    write_json(&args.common.out_dir.join("metrics.json"), &final_eval.metrics)?;
    println!(
        "val: loss={:.6} acc={:.4} auc={:.4}",
        final_eval.mean_loss, final_eval.metrics.accuracy, final_eval.metrics.auc
    );
    if let Some(test_path) = &args.test {
        let test_records = read_records(test_path, &schema)?;
        let test_data = tokenize_records(&vocab, &test_records, model_cfg.max_len, task)?;
        let test_eval = evaluate(&best, &test_data)?;
        write_json(&args.common.out_dir.join("test_metrics.json"), &test_eval.metrics)?;
        println!(
            "test: acc={:.4} auc={:.4} f1={:.4} fpr={:.4}",
            test_eval.metrics.accuracy,
            test_eval.metrics.auc,
            test_eval.metrics.f1,
            test_eval.metrics.fpr
        );
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let vocab = load_vocab_checked(&args.vocab)?;
    if !args.checkpoint.exists() {
        return Err(Error::Usage(format!(
            "checkpoint not found: {}",
            args.checkpoint.display()
        )));
    }
    let params = ModelParams::<f32>::load(&args.checkpoint)?;
    check_vocab_matches(&params, &vocab)?;
    let mut urls = args.urls.clone();
    if let Some(path) = &args.data {
        if !path.exists() {
            return Err(Error::Usage(format!("input file not found: {}", path.display())));
        }
        for line in std::fs::read_to_string(path)?.lines() {
            let line = line.trim();
            if !line.is_empty() {
                urls.push(line.to_string());
            }
        }
    }
    if urls.is_empty() {
        return Err(Error::Usage("no URLs to score".into()));
    }
    let seqs: Vec<_> = urls
        .iter()
        .map(|u| vocab.encode(u, params.config.max_len))
        .collect::<Result<Vec<_>>>()?;
    let probs = crate::model::predict_probs(&params, &seqs)?;
    println!("url,malicious_probability,label");
    for (url, p) in urls.iter().zip(&probs) {
        let score = 1.0 - p[0];
        let label = if score >= 0.5 { "malicious" } else { "benign" };
        println!("{url},{score:.6},{label}");
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let task = parse_task(&args.common.task)?;
    let vocab = load_vocab_checked(&args.vocab)?;
    if !args.checkpoint.exists() {
        return Err(Error::Usage(format!(
            "checkpoint not found: {}",
            args.checkpoint.display()
        )));
    }
    let params = ModelParams::<f32>::load(&args.checkpoint)?;
    check_vocab_matches(&params, &vocab)?;
    let records = read_records(&args.test, &schema_for(task))?;
    let data = tokenize_records(&vocab, &records, params.config.max_len, task)?;
    let eval = evaluate(&params, &data)?;
    std::fs::create_dir_all(&args.common.out_dir)?;
    write_json(&args.common.out_dir.join("metrics.json"), &eval.metrics)?;
    if task == Task::MultiClass {
        let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
        let report = compute_multiclass(&eval.probs, &labels, &MULTI_CLASS_NAMES)?;
        write_json(&args.common.out_dir.join("multiclass.json"), &report)?;
        println!(
            "multiclass: acc={:.4} macro_f1={:.4}",
            report.accuracy, report.macro_f1
        );
    }
    // ROC as two-column CSV
    let labels: Vec<bool> = data.iter().map(|(_, l)| *l != 0).collect();
    let points = roc_points(&eval.scores, &labels)?;
    let roc_path = args.common.out_dir.join("roc.csv");
    let mut f = std::fs::File::create(&roc_path)?;
    writeln!(f, "fpr,tpr")?;
    for (fpr, tpr) in &points {
        writeln!(f, "{fpr},{tpr}")?;
    }
    println!(
        "eval: acc={:.4} auc={:.4} (trapezoid {:.4}) fpr={:.4} tpr@fpr0.001={:.4}",
        eval.metrics.accuracy,
        eval.metrics.auc,
        trapezoid_auc(&points),
        eval.metrics.fpr,
        tpr_at_fpr(&points, 0.001)
    );
    Ok(())
}

pub fn cmd_attack(args: &AttackArgs) -> Result<()> {
    let overrides = Overrides::parse(&args.common.overrides)?;
    let records = read_records(&args.test, &Schema::binary())?;
    let vocab = match (&args.vocab, args.train_vocab) {
        (Some(path), _) => load_vocab_checked(path)?,
        (None, _) => {
            let size = overrides.get_usize("vocab_size")?.unwrap_or(DEFAULT_VOCAB_SIZE);
            train_bpe(records.iter().map(|r| r.url.as_str()), size)?
        }
    };
    let mut cfg = AttackConfig::default();
    overrides.apply_attack(&mut cfg)?;
    let set = build_adversarial_testset(&records, &vocab, &cfg, args.common.seed)?;
    std::fs::create_dir_all(&args.common.out_dir)?;
    let csv_path = args.common.out_dir.join("adversarial.csv");
    save_dataset(&csv_path, &set.dataset)?;
    #[derive(serde::Serialize)]
    struct Provenance<'a> {
        seed: u64,
        config: &'a AttackConfig,
        skipped_unsplittable: usize,
        records: &'a [crate::adversarial::AttackRecord],
    }
    write_json(
        &args.common.out_dir.join("attack_provenance.json"),
        &Provenance {
            seed: args.common.seed,
            config: &cfg,
            skipped_unsplittable: set.skipped_unsplittable,
            records: &set.records,
        },
    )?;
    println!(
        "attack: {} benign + {} malicious + {} adversarial -> {}",
        cfg.n_benign,
        cfg.n_malicious,
        set.records.len(),
        csv_path.display()
    );
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let task = parse_task(&args.common.task)?;
    let records = read_records(&args.data, &schema_for(task))?;
    let stats = tld_stats(records.iter().map(|r| (r.url.as_str(), r.label.name())));
    std::fs::create_dir_all(&args.common.out_dir)?;
    write_json(&args.common.out_dir.join("tld_stats.json"), &stats)?;
    println!("class        .com     ccTLD    other    (count)");
    for (class, f) in &stats.per_class {
        println!(
            "{class:<12} {:>6.2}%  {:>6.2}%  {:>6.2}%  ({})",
            f.com * 100.0,
            f.cc_tld * 100.0,
            f.other_gtld * 100.0,
            f.count
        );
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let task = parse_task(&args.common.task)?;
    let overrides = Overrides::parse(&args.common.overrides)?;
    let schema = schema_for(task);
    let train_records = read_records(&args.data, &schema)?;
    let val_records = read_records(&args.val, &schema)?;
    let test_records = read_records(&args.test, &schema)?;
    let layer_counts: Vec<usize> = args
        .layers
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad layer count {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let vocab = match &args.vocab {
        Some(path) => load_vocab_checked(path)?,
        None => {
            let size = overrides.get_usize("vocab_size")?.unwrap_or(DEFAULT_VOCAB_SIZE);
            train_bpe(train_records.iter().map(|r| r.url.as_str()), size)?
        }
    };
    let mut model_cfg = model_preset(&args.common.preset, vocab.subword_count(), vocab.char_count())?;
    model_cfg.classes = task.classes();
    overrides.apply_model(&mut model_cfg)?;
    let mut train_cfg = train_preset(&args.common.preset, args.common.seed)?;
    overrides.apply_train(&mut train_cfg)?;

    let train_data = tokenize_records(&vocab, &train_records, model_cfg.max_len, task)?;
    let val_data = tokenize_records(&vocab, &val_records, model_cfg.max_len, task)?;
    let test_data = tokenize_records(&vocab, &test_records, model_cfg.max_len, task)?;

    let rows = layer_ablation::<f32>(
        &model_cfg,
        &train_data,
        &val_data,
        &test_data,
        &layer_counts,
        &train_cfg,
    )?;
    std::fs::create_dir_all(&args.common.out_dir)?;
    write_json(&args.common.out_dir.join("ablation.json"), &rows)?;
    let table_path = args.common.out_dir.join("ablation.csv");
    let mut f = std::fs::File::create(&table_path)?;
    writeln!(f, "layers,accuracy,precision,recall,f1,auc")?;
    println!("layers  accuracy  precision  recall   f1       auc");
    for r in &rows {
        writeln!(
            f,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.layers, r.accuracy, r.precision, r.recall, r.f1, r.auc
        )?;
        println!(
            "{:<7} {:.4}    {:.4}     {:.4}   {:.4}   {:.4}",
            r.layers, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
    }
    Ok(())
}

/// Dispatch a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    crate::init_threads();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
