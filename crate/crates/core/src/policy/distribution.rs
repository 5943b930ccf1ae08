use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyOutput};
use crate::scenario::{FactoredAction, HEAD_OFFSETS, HEAD_SIZES, NUM_LOGITS};

/// Per-head categorical distributions, laid out (verb, x, y) like the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDistributions {
    pub probs: [f64; NUM_LOGITS],
}

fn head_range(h: usize) -> std::ops::Range<usize> {
    HEAD_OFFSETS[h]..HEAD_OFFSETS[h] + HEAD_SIZES[h]
}

/// Per-head softmax with masked logits replaced by -inf.
pub fn masked_distribution(
    out: &PolicyOutput,
    mask: &[bool; NUM_LOGITS],
) -> Result<HeadDistributions, PolicyError> {
    let logits = out.logits();
    let mut probs = [0.0; NUM_LOGITS];
    for h in 0..3 {
        let r = head_range(h);
        let max = r
            .clone()
            .filter(|&i| mask[i])
            .map(|i| logits[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(PolicyError::FullyMaskedHead(h));
        }
        let mut z = 0.0;
        for i in r.clone() {
            if mask[i] {
                probs[i] = (logits[i] - max).exp();
                z += probs[i];
            }
        }
        for i in r {
            probs[i] /= z;
        }
    }
    Ok(HeadDistributions { probs })
}

impl HeadDistributions {
    pub fn head(&self, h: usize) -> &[f64] {
        &self.probs[head_range(h)]
    }

    /// Inverse-CDF sampling of each head from its own uniform in [0, 1).
    /// Zero-probability entries are never chosen.
    pub fn sample_with_uniforms(&self, u: [f64; 3]) -> FactoredAction {
        let mut idx = [0usize; 3];
        for h in 0..3 {
            let p = self.head(h);
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_support = 0;
            for (i, &pi) in p.iter().enumerate() {
                if pi > 0.0 {
                    last_support = i;
                    acc += pi;
                    if u[h] < acc {
                        chosen = Some(i);
                        break;
                    }
                }
            }
            idx[h] = chosen.unwrap_or(last_support);
        }
        FactoredAction::from_indices(idx[0], idx[1], idx[2]).expect("indices in range")
    }

    pub fn head_log_probs(&self, a: FactoredAction) -> [f64; 3] {
        let [v, x, y] = a.indices();
        [self.head(0)[v].ln(), self.head(1)[x].ln(), self.head(2)[y].ln()]
    }

    /// Joint log-probability: sum of the per-head log-probabilities.
    pub fn log_prob(&self, a: FactoredAction) -> f64 {
        self.head_log_probs(a).iter().sum()
    }

    pub fn head_entropies(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (h, e) in out.iter_mut().enumerate() {
            *e = -self
                .head(h)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
        }
        out
    }

    pub fn entropy(&self) -> f64 {
        self.head_entropies().iter().sum()
    }

    /// Most likely action per head, ties to the lowest index.
    pub fn argmax(&self) -> FactoredAction {
        let idx: Vec<usize> = (0..3).map(|h| argmax_lowest(self.head(h))).collect();
        FactoredAction::from_indices(idx[0], idx[1], idx[2]).expect("indices in range")
    }

    /// Probability of each of the 18 factored actions, by flat index.
    pub fn joint(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for (i, p) in out.iter_mut().enumerate() {
            let [v, x, y] = FactoredAction::from_flat_index(i).expect("flat index").indices();
            *p = self.head(0)[v] * self.head(1)[x] * self.head(2)[y];
        }
        out
    }
}

/// Index of the first maximum.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample_action<R: Rng + ?Sized>(dists: &HeadDistributions, rng: &mut R) -> FactoredAction {
    dists.sample_with_uniforms(draw_uniforms(rng))
}

/// The three head uniforms consumed by one sampling.
pub fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Human-readable command for raw (verb, x, y) indices.
pub fn decode_action(verb: usize, x: usize, y: usize) -> Result<String, PolicyError> {
    Ok(FactoredAction::from_indices(verb, x, y)?.to_string())
}
