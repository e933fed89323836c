//! Verify analytic gradients of the full encoder-to-classifier path
//! against central finite differences on a tiny configuration.

use pmanet::gradcheck::{check, CheckOpts};
use pmanet::model::{forward_sample, Bound, ModelConfig, ModelParams};
use pmanet::rng::Rng;
use pmanet::tensor::Tensor;
use pmanet::tokenizer::{train_bpe, MIN_VOCAB};

fn main() -> pmanet::Result<()> {
    let vocab = train_bpe(
        ["http://a.com/x", "http://bb.org", "https://cc.net/q"],
        MIN_VOCAB + 10,
    )?;
    let cfg = ModelConfig::tiny(vocab.subword_count(), vocab.char_count());
    let params = ModelParams::<f64>::init(cfg, &Rng::new(13))?;
    let seq = vocab.encode("http://bb.org/zq", 12)?;
    println!(
        "tiny model: {} tensors, {} parameters",
        params.len(),
        params.total_elements()
    );

    let inputs: Vec<Tensor<f64>> = params.tensors().to_vec();
    let opts = CheckOpts {
        max_elems_per_input: Some(2),
        ..CheckOpts::default()
    };
    let report = check(&inputs, &opts, |tape, vars| {
        let bound = Bound::from_vars(&params, vars.to_vec());
        let mut rng = Rng::new(0);
        let logits = forward_sample(tape, &bound, &seq, false, &mut rng)?;
        tape.cross_entropy_with_logits(logits, &[1])
    })?;
    println!(
        "checked {} elements across every parameter tensor",
        report.checked
    );
    println!("max relative error: {:.3e}", report.max_rel_err);
    assert!(report.max_rel_err < 1e-3);
    println!("analytic gradients agree with finite differences");
    Ok(())
}
