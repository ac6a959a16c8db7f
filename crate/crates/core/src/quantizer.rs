//! Uniform quantization of embedding matrices to b bits per entry.
//!
//! The grid holds 2^b equally spaced values on [-c, c] including both
//! endpoints; entries outside the interval clip to the nearest endpoint, and
//! rounding is deterministic with ties resolved toward the larger grid index.
//! b = 32 means full precision and passes the matrix through unchanged.

use crate::embedding_store::{EmbeddingMatrix, EmbeddingMeta, VALID_PRECISIONS};
use crate::error::{Error, Result};

/// Bit width plus clip threshold; the rounding rule is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationConfig {
    bits: u8,
    clip: f64,
}

impl QuantizationConfig {
    pub fn new(bits: u8, clip: f64) -> Result<Self> {
        if !VALID_PRECISIONS.contains(&bits) {
            return Err(Error::InvalidConfig(format!(
                "precision {bits} not in {VALID_PRECISIONS:?}"
            )));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "clip threshold must be positive and finite, got {clip}"
            )));
        }
        Ok(QuantizationConfig { bits, clip })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }
}

/// Snap one value onto the 2^b-level grid on [-c, c].
fn snap(v: f64, clip: f64, bits: u8) -> f64 {
    debug_assert!(bits < 32);
    let levels = (1u64 << bits) as f64; // 2^b
    let steps = levels - 1.0;
    let clamped = v.clamp(-clip, clip);
    // Map to [0, 2^b - 1]; f64::round resolves ties away from zero, which on
    // this nonnegative scale is toward the larger grid index.
    let t = (clamped + clip) * steps / (2.0 * clip);
    let i = t.round().min(steps).max(0.0);
    -clip + 2.0 * clip * i / steps
}

fn squared_error(x: &EmbeddingMatrix, clip: f64, bits: u8) -> f64 {
    x.weights()
        .iter()
        .map(|&v| {
            let q = snap(v, clip, bits);
            (v - q) * (v - q)
        })
        .sum()
}

/// Refine a clip threshold by alternating minimization. Between assignment
/// breakpoints the error is quadratic in c (each entry maps to a fixed grid
/// fraction a = q/c), so holding assignments fixed the optimum is
/// c* = sum(a x) / sum(a^2); re-snapping then only lowers the error, and the
/// iteration terminates at an exact local minimum.
fn refine_clip(x: &EmbeddingMatrix, bits: u8, start: f64) -> f64 {
    let mut c = start;
    let mut err = squared_error(x, c, bits);
    for _ in 0..100 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &v in x.weights().iter() {
            let a = snap(v, c, bits) / c;
            num += a * v;
            den += a * a;
        }
        if den == 0.0 || num <= 0.0 {
            break;
        }
        let next = num / den;
        let next_err = squared_error(x, next, bits);
        if next_err >= err || (next - c).abs() <= f64::EPSILON * c {
            break;
        }
        c = next;
        err = next_err;
    }
    c
}

/// Find the clip threshold minimizing total squared quantization error over
/// the entries of `x`: a scan over 256 candidates between 0 and max|x|, then
/// alternating-minimization refinement of the best candidates.
pub fn optimal_clip(x: &EmbeddingMatrix, bits: u8) -> Result<f64> {
    if bits == 0 || bits >= 32 {
        return Err(Error::InvalidConfig(format!(
            "optimal_clip needs 1 <= bits <= 31, got {bits}"
        )));
    }
    let max_abs = x.weights().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateMatrix(
            "cannot pick a clip threshold for an all-zero matrix".into(),
        ));
    }

    const CANDIDATES: usize = 256;
    const REFINED: usize = 8;
    let mut scan: Vec<(f64, f64)> = (1..=CANDIDATES)
        .map(|j| {
            let c = max_abs * j as f64 / CANDIDATES as f64;
            (squared_error(x, c, bits), c)
        })
        .collect();
    scan.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite errors"));

    let mut best_c = scan[0].1;
    let mut best_err = scan[0].0;
    for &(_, c) in scan.iter().take(REFINED) {
        let refined = refine_clip(x, bits, c);
        let err = squared_error(x, refined, bits);
        if err < best_err {
            best_err = err;
            best_c = refined;
        }
    }
    Ok(best_c)
}

/// Quantize every entry onto the grid. b = 32 returns the input unchanged.
pub fn quantize(x: &EmbeddingMatrix, config: &QuantizationConfig) -> EmbeddingMatrix {
    if config.bits == 32 {
        return x.clone();
    }
    let weights = x.weights().map(|v| snap(v, config.clip, config.bits));
    let meta = EmbeddingMeta {
        precision_bits: config.bits,
        ..x.meta().clone()
    };
    EmbeddingMatrix::new(x.vocab().to_vec(), weights, meta)
        .expect("quantization preserves shape and finiteness")
}

/// Quantize an aligned pair with a single clip threshold chosen from the
/// first matrix, so the shared grid adds no avoidable instability.
pub fn quantize_pair(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    bits: u8,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if !x.same_vocab(y) {
        return Err(Error::VocabMismatch(
            "quantize_pair expects a harmonized, aligned pair".into(),
        ));
    }
    if bits == 32 {
        return Ok((x.clone(), y.clone()));
    }
    let clip = optimal_clip(x, bits)?;
    let config = QuantizationConfig::new(bits, clip)?;
    Ok((quantize(x, &config), quantize(y, &config)))
}
