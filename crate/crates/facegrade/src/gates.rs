//! Stochastic feature gates: a Gumbel-softmax relaxation over input features.
//!
//! Each output neuron of the gated layer carries a row of gate logits over
//! the `m` input features. Sampling perturbs the logits with Gumbel(0,1)
//! noise, divides by a temperature, and takes a row softmax; the resulting
//! soft probabilities multiply the layer weights elementwise, so gradient
//! descent can move gate mass toward useful features while the noise keeps
//! exploration alive. Low temperatures approach a hard one-of-m selection.
//! Hardening (inference/reporting only) ranks features by their summed
//! logits across neurons and keeps the top k.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::tape::{Activation, NodeId, Tape};

/// Learnable gate state: one row of logits per neuron, plus the shared
/// relaxation temperature.
#[derive(Clone, Debug)]
pub struct GateBank {
    pub logits: Matrix,
    pub temperature: f64,
}

impl GateBank {
    pub fn new(logits: Matrix, temperature: f64) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::Parameter(format!(
                "gate temperature must be positive, got {temperature}"
            )));
        }
        Ok(GateBank {
            logits,
            temperature,
        })
    }

    /// Zero logits: every neuron starts with a uniform gate distribution.
    pub fn uniform(n_neurons: usize, n_features: usize, temperature: f64) -> Result<Self> {
        Self::new(Matrix::zeros(n_neurons, n_features), temperature)
    }

    pub fn n_neurons(&self) -> usize {
        self.logits.rows()
    }

    pub fn n_features(&self) -> usize {
        self.logits.cols()
    }
}

/// One draw of relaxed gate probabilities, with the noise that produced it
/// (kept so a draw can be replayed exactly, e.g. under gradient checking).
#[derive(Clone, Debug)]
pub struct GateSample {
    pub probs: Matrix,
    pub noise: Matrix,
}

/// Relaxed gate probabilities for given noise:
/// `P = softmax_rows((logits + noise) / temperature)`.
pub fn gate_probs(logits: &Matrix, noise: &Matrix, temperature: f64) -> Result<Matrix> {
    if temperature <= 0.0 {
        return Err(Error::Parameter(format!(
            "gate temperature must be positive, got {temperature}"
        )));
    }
    Ok(logits.add(noise)?.scale(1.0 / temperature).softmax_rows())
}

/// Draws Gumbel(0,1) noise per gate entry and returns the relaxed sample.
/// Identical `(bank, rng state)` pairs reproduce identical samples.
pub fn sample_gates(bank: &GateBank, rng: &mut ChaCha8Rng) -> Result<GateSample> {
    let (n, m) = bank.logits.shape();
    let mut noise = Matrix::zeros(n, m);
    for v in noise.data_mut() {
        *v = rng::gumbel(rng);
    }
    let probs = gate_probs(&bank.logits, &noise, bank.temperature)?;
    Ok(GateSample { probs, noise })
}

/// The noise-free sample (`noise = 0`), used at evaluation time so
/// inference is deterministic.
pub fn sample_gates_deterministic(bank: &GateBank) -> Result<GateSample> {
    let (n, m) = bank.logits.shape();
    let noise = Matrix::zeros(n, m);
    let probs = gate_probs(&bank.logits, &noise, bank.temperature)?;
    Ok(GateSample { probs, noise })
}

/// Gated dense layer on values: `out = act(x * (P .* W)^T)` for
/// `x: batch x m`, `weights, probs: n x m`, output `batch x n`.
pub fn gated_forward(
    x: &Matrix,
    weights: &Matrix,
    sample: &GateSample,
    activation: Activation,
) -> Result<Matrix> {
    if weights.shape() != sample.probs.shape() {
        return Err(Error::Shape {
            op: "gated_forward",
            lhs_rows: weights.rows(),
            lhs_cols: weights.cols(),
            rhs_rows: sample.probs.rows(),
            rhs_cols: sample.probs.cols(),
        });
    }
    let eff = weights.hadamard(&sample.probs)?;
    let out = x.matmul(&eff.transpose())?;
    Ok(out.map(|v| activation.apply(v)))
}

/// Records the relaxed gate probabilities on a tape so gradients reach the
/// logits parameter. `noise` is a constant input node.
pub fn gate_prob_nodes(
    tape: &mut Tape,
    logits: NodeId,
    noise: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    if temperature <= 0.0 {
        return Err(Error::Parameter(format!(
            "gate temperature must be positive, got {temperature}"
        )));
    }
    let shifted = tape.add(logits, noise)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    Ok(tape.softmax_rows(scaled))
}

/// Records the gated dense layer on a tape (same math as
/// [`gated_forward`]).
pub fn gated_forward_nodes(
    tape: &mut Tape,
    x: NodeId,
    weights: NodeId,
    probs: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let eff = tape.hadamard(weights, probs)?;
    let eff_t = tape.transpose(eff);
    let out = tape.matmul(x, eff_t)?;
    Ok(tape.activate(out, activation))
}

/// Per-feature relevance scores: gate logits summed across neurons.
pub fn gate_scores(bank: &GateBank) -> Vec<f64> {
    let mut scores = vec![0.0; bank.n_features()];
    for i in 0..bank.n_neurons() {
        for (j, s) in scores.iter_mut().enumerate() {
            *s += bank.logits.get(i, j);
        }
    }
    scores
}

/// Top-`k` feature indices by [`gate_scores`], highest first; score ties
/// resolve toward the lower index. Hardening is a reporting/inference
/// operation — training always uses the soft relaxation.
pub fn harden_gates(bank: &GateBank, k: usize) -> Result<Vec<usize>> {
    let m = bank.n_features();
    if k > m {
        return Err(Error::Parameter(format!(
            "cannot harden to {k} features out of {m}"
        )));
    }
    let scores = gate_scores(bank);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}
