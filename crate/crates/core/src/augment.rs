//! Intermediate-domain synthesis by fixed-ratio mixing of source and target inputs.

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Real;

/// Mixing ratio used unless configured otherwise.
pub const DEFAULT_LAMBDA: f64 = 0.7;

/// Source-similar and target-similar batches built from paired raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatchPair<R: Real> {
    pub x_source_similar: Array2<R>,
    pub x_target_similar: Array2<R>,
    /// `(source row, target row)` combined into each output row.
    pub pairing: Vec<(usize, usize)>,
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.5 && lambda <= 1.0) {
        return Err(Error::config(
            "lambda",
            format!("{lambda} is outside (0.5, 1]; the source-similar domain must be source-dominated"),
        ));
    }
    Ok(())
}

/// Pairs source row `i` with a uniformly permuted target row and mixes:
/// `lambda * x_s + (1 - lambda) * x_t` and `(1 - lambda) * x_s + lambda * x_t`.
///
/// Batches of different sizes are truncated to the shorter one. Rows are
/// flattened samples and must have the same width.
pub fn mix_domains<R: Real>(
    x_s: &ArrayView2<R>,
    x_t: &ArrayView2<R>,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<MixedBatchPair<R>> {
    check_lambda(lambda)?;
    let pairing = draw_pairing(x_s, x_t, rng)?;
    Ok(mix_with_pairing(x_s, x_t, lambda, pairing))
}

pub(crate) fn draw_pairing<R: Real>(
    x_s: &ArrayView2<R>,
    x_t: &ArrayView2<R>,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if x_s.ncols() != x_t.ncols() {
        return Err(Error::contract(format!(
            "mix_domains: sample widths differ ({} vs {})",
            x_s.ncols(),
            x_t.ncols()
        )));
    }
    let n = x_s.nrows().min(x_t.nrows());
    if n == 0 {
        return Err(Error::contract("mix_domains: empty batch"));
    }
    let mut targets: Vec<usize> = (0..n).collect();
    targets.shuffle(rng);
    Ok(targets.into_iter().enumerate().collect())
}

/// Mixing with an explicit pairing; `lambda` is not range-checked here.
pub fn mix_with_pairing<R: Real>(
    x_s: &ArrayView2<R>,
    x_t: &ArrayView2<R>,
    lambda: f64,
    pairing: Vec<(usize, usize)>,
) -> MixedBatchPair<R> {
    let width = x_s.ncols();
    let lam = R::lit(lambda);
    let rest = R::lit(1.0 - lambda);
    let mut source_similar = Array2::zeros((pairing.len(), width));
    let mut target_similar = Array2::zeros((pairing.len(), width));
    for (row, &(i, j)) in pairing.iter().enumerate() {
        Zip::from(source_similar.row_mut(row))
            .and(target_similar.row_mut(row))
            .and(x_s.row(i))
            .and(x_t.row(j))
            .for_each(|ss, ts, &s, &t| {
                *ss = lam * s + rest * t;
                *ts = rest * s + lam * t;
            });
    }
    MixedBatchPair {
        x_source_similar: source_similar,
        x_target_similar: target_similar,
        pairing,
    }
}
