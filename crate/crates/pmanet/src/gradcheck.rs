//! Central finite-difference verification of analytic gradients.
//!
//! Used by the test suite for every op kind and for the composed
//! encoder-to-head path; kept public so the acceptance suite and the
//! `gradient_check` example can drive it.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, element index) of the worst disagreement.
    pub worst: (usize, usize),
}

/// Options for the sweep. `max_elems_per_input` caps how many elements of
/// each input are perturbed (deterministically sampled), which keeps full
/// model checks inside the acceptance-time budget.
#[derive(Debug, Clone)]
pub struct CheckOpts {
    pub step: f64,
    pub max_elems_per_input: Option<usize>,
    pub sample_seed: u64,
}

impl Default for CheckOpts {
    fn default() -> Self {
        CheckOpts {
            step: 1e-5,
            max_elems_per_input: None,
            sample_seed: 0x5eed,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Compare analytic gradients of a scalar loss against central finite
/// differences, perturbing each (sampled) element of each input.
///
/// `build` must construct the loss from leaves created in input order; it
/// is re-invoked on perturbed copies, so it must be deterministic.
pub fn check<F>(inputs: &[Tensor<f64>], opts: &CheckOpts, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0].as_f64())
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[ti]);
        let elems: Vec<usize> = match opts.max_elems_per_input {
            Some(cap) if input.numel() > cap => {
                let mut rng = Rng::new(opts.sample_seed).derive_index(ti as u64);
                rng.sample_indices(input.numel(), cap)
            }
            _ => (0..input.numel()).collect(),
        };
        for e in elems {
            let got = analytic.map_or(0.0, |t| t.data()[e]);
            // central differences at the base step; when a subgradient kink
            // (max-pool argmax or ReLU flip) sits inside the interval the
            // estimate is invalid, so refine the step — a genuinely wrong
            // analytic gradient is not rescued by a smaller h
            let mut err = f64::INFINITY;
            let ladder = [
                opts.step,
                opts.step / 10.0,
                opts.step / 100.0,
                opts.step / 1000.0,
                opts.step / 10000.0,
            ];
            for step in ladder {
                let orig = work[ti].data()[e];
                work[ti].data_mut()[e] = orig + step;
                let up = eval(&work)?;
                work[ti].data_mut()[e] = orig - step;
                let down = eval(&work)?;
                work[ti].data_mut()[e] = orig;
                let numeric = (up - down) / (2.0 * step);
                err = err.min(rel_err(got, numeric));
                if err < 1e-4 {
                    break;
                }
            }
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, e);
            }
        }
    }
    Ok(report)
}
