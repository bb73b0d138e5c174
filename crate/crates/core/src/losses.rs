//! Training objectives: hard-label cross-entropy over gold masked tokens,
//! soft-label KL distillation against a teacher distribution, and the
//! masking procedure that produces both.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Tape, Tensor, TensorError, Var};
use crate::tokenizer::{MASK_ID, SPECIALS};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("loss over an empty mask set is undefined")]
    EmptyMaskSet,
    #[error("logits have {logits} rows but {targets} target rows were given")]
    RowMismatch { logits: usize, targets: usize },
    #[error("soft target row {row} is not a probability distribution (sum {sum})")]
    BadTargetRow { row: usize, sum: f64 },
    #[error("sequence contains no maskable (non-special) tokens")]
    AllSpecial,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Masked-LM corruption parameters. Of the selected positions, `mask_prob`
/// become `[MASK]`, `random_prob` a random non-special token, the remainder
/// are kept unchanged.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { rate: 0.15, mask_prob: 0.8, random_prob: 0.1 }
    }
}

/// Corrupt one encoded sentence: select `ceil(rate * n)` of the `n`
/// non-special positions uniformly without replacement, then apply the
/// per-position categorical corruption. Returns the corrupted ids and the
/// `(position, gold_id)` pairs, positions ascending.
pub fn apply_masking<R: Rng>(
    ids: &[u32],
    cfg: &MaskingConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<(usize, u32)>), LossError> {
    let candidates: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= SPECIALS.len() as u32)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(LossError::AllSpecial);
    }
    let n = candidates.len();
    let want = ((cfg.rate * n as f64).ceil() as usize).clamp(1, n);
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, n, want)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();

    let mut corrupted = ids.to_vec();
    let mut golds = Vec::with_capacity(want);
    let first_regular = SPECIALS.len() as u32;
    for &pos in &picked {
        let gold = ids[pos];
        let u: f64 = rng.gen();
        if u < cfg.mask_prob {
            corrupted[pos] = MASK_ID;
        } else if u < cfg.mask_prob + cfg.random_prob {
            corrupted[pos] = rng.gen_range(first_regular..vocab_size as u32);
        } // else: keep original token
        golds.push((pos, gold));
    }
    Ok((corrupted, golds))
}

/// A batch of corrupted single-language sequences padded to a common length.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub lang: usize,
    /// `rows * seq_len` token ids, row-major, PAD-padded.
    pub token_ids: Vec<u32>,
    pub rows: usize,
    pub seq_len: usize,
    /// Masked positions as (row, column), in row-major order.
    pub masks: Vec<(usize, usize)>,
    /// Gold ids aligned with `masks`.
    pub golds: Vec<u32>,
}

impl MaskedBatch {
    /// Corrupt and pad a chunk of encoded sentences of one language.
    pub fn build<R: Rng>(
        lang: usize,
        encoded: &[Vec<u32>],
        cfg: &MaskingConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self, LossError> {
        let seq_len = encoded.iter().map(Vec::len).max().ok_or(LossError::EmptyMaskSet)?;
        let rows = encoded.len();
        let mut token_ids = vec![crate::tokenizer::PAD_ID; rows * seq_len];
        let mut masks = Vec::new();
        let mut golds = Vec::new();
        for (r, ids) in encoded.iter().enumerate() {
            let (corrupted, row_golds) = apply_masking(ids, cfg, vocab_size, rng)?;
            token_ids[r * seq_len..r * seq_len + ids.len()].copy_from_slice(&corrupted);
            for (pos, gold) in row_golds {
                masks.push((r, pos));
                golds.push(gold);
            }
        }
        Ok(Self { lang, token_ids, rows, seq_len, masks, golds })
    }
}

/// Mean over mask positions of `-log softmax(logits)[gold]` (natural log,
/// log-sum-exp stabilized).
pub fn hard_loss<E: Element>(
    tape: &mut Tape<E>,
    logits: Var,
    golds: &[u32],
) -> Result<Var, LossError> {
    let rows = row_count(tape, logits);
    if rows == 0 || golds.is_empty() {
        return Err(LossError::EmptyMaskSet);
    }
    if rows != golds.len() {
        return Err(LossError::RowMismatch { logits: rows, targets: golds.len() });
    }
    let idx: Vec<usize> = golds.iter().map(|&g| g as usize).collect();
    let logp = tape.log_softmax_last(logits)?;
    let picked = tape.pick(logp, &idx)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Teacher probability rows, one distribution per mask position.
#[derive(Debug, Clone)]
pub struct SoftTarget {
    rows: Tensor<f32>,
    /// `(1/R) * sum P log P` over all rows, the constant KL entropy term.
    entropy_term: f64,
}

impl SoftTarget {
    pub fn new(rows: Tensor<f32>) -> Result<Self, LossError> {
        let shape = rows.shape();
        let (r, v) = (shape[0], shape[1]);
        let mut entropy_term = 0.0f64;
        for i in 0..r {
            let row = &rows.data()[i * v..(i + 1) * v];
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            // f32 softmax rows accumulate rounding error proportional to
            // their width, so the sanity band scales with the vocabulary
            let tol = 1e-6f64.max(4.0 * v as f64 * f32::EPSILON as f64);
            if (sum - 1.0).abs() > tol || row.iter().any(|&p| p < 0.0) {
                return Err(LossError::BadTargetRow { row: i, sum });
            }
            entropy_term += row
                .iter()
                .map(|&p| if p > 0.0 { p as f64 * (p as f64).ln() } else { 0.0 })
                .sum::<f64>();
        }
        entropy_term /= r as f64;
        Ok(Self { rows, entropy_term })
    }

    /// One-hot targets at the gold ids (bridges the soft loss to the hard one).
    pub fn one_hot(golds: &[u32], vocab_size: usize) -> Self {
        let mut data = vec![0.0f32; golds.len() * vocab_size];
        for (i, &g) in golds.iter().enumerate() {
            data[i * vocab_size + g as usize] = 1.0;
        }
        Self {
            rows: Tensor::new(vec![golds.len(), vocab_size], data).unwrap(),
            entropy_term: 0.0,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn rows(&self) -> &Tensor<f32> {
        &self.rows
    }
}

/// Mean over positions of `KL(teacher || student)`; terms with zero teacher
/// probability contribute nothing.
pub fn soft_loss<E: Element>(
    tape: &mut Tape<E>,
    logits: Var,
    target: &SoftTarget,
) -> Result<Var, LossError> {
    let rows = row_count(tape, logits);
    if rows == 0 {
        return Err(LossError::EmptyMaskSet);
    }
    if rows != target.num_rows() {
        return Err(LossError::RowMismatch { logits: rows, targets: target.num_rows() });
    }
    let logp = tape.log_softmax_last(logits)?;
    let t = tape.constant(target.rows().cast::<E>());
    let weighted = tape.mul(logp, t)?;
    let total = tape.sum(weighted)?;
    let cross = tape.scale(total, -1.0 / rows as f64)?;
    Ok(tape.add_scalar(cross, target.entropy_term)?)
}

fn row_count<E: Element>(tape: &Tape<E>, logits: Var) -> usize {
    tape.value(logits).shape().first().copied().unwrap_or(0)
}
