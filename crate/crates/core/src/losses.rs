//! Loss functions and their exact gradients.
//!
//! All reductions are batch means so loss magnitudes do not depend on the
//! batch size. Gradients are returned with respect to the loss value itself
//! (multiply by the upstream weight at the call site).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::nn::Real;

/// Floor applied to the per-sample union in [`soft_similarity`].
pub const SIMILARITY_EPS: f64 = 1e-8;

/// Probabilities fed to [`adversarial_loss`] are clamped into `[EPS, 1 - EPS]` by the producer.
pub const PROBABILITY_EPS: f64 = 1e-7;

fn same_shape<R: Real>(a: &ArrayView2<R>, b: &ArrayView2<R>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "{what}: shape {:?} does not match {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::contract(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Per-sample intersection and (guarded) union of two conditional vectors.
fn overlap<R: Real>(a: ArrayView1<R>, b: ArrayView1<R>) -> (R, R, bool) {
    let mut inter = R::zero();
    let mut union = R::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += x * y;
        union += x + y - x * y;
    }
    let eps = R::lit(SIMILARITY_EPS);
    if union < eps {
        (inter, eps, true)
    } else {
        (inter, union, false)
    }
}

/// Mean over the batch of `<a, b> / sum(a + b - a*b)`.
///
/// Both inputs are `B x d` with entries in `[0, 1]`; the result lies in `[0, 1]`.
/// A union below [`SIMILARITY_EPS`] is clamped to it.
pub fn soft_similarity<R: Real>(h_hat: &ArrayView2<R>, h_tilde: &ArrayView2<R>) -> Result<R> {
    same_shape(h_hat, h_tilde, "soft_similarity")?;
    let total: R = h_hat
        .rows()
        .into_iter()
        .zip(h_tilde.rows())
        .map(|(a, b)| {
            let (inter, union, _) = overlap(a, b);
            inter / union
        })
        .sum();
    Ok(total / R::lit(h_hat.nrows() as f64))
}

/// Gradients of [`soft_similarity`] with respect to both inputs.
///
/// Where the union was clamped the denominator is treated as constant.
pub fn soft_similarity_grad<R: Real>(
    h_hat: &ArrayView2<R>,
    h_tilde: &ArrayView2<R>,
) -> Result<(Array2<R>, Array2<R>)> {
    same_shape(h_hat, h_tilde, "soft_similarity")?;
    let scale = R::one() / R::lit(h_hat.nrows() as f64);
    let mut d_hat = Array2::zeros(h_hat.raw_dim());
    let mut d_tilde = Array2::zeros(h_tilde.raw_dim());
    for (i, (a, b)) in h_hat.rows().into_iter().zip(h_tilde.rows()).enumerate() {
        let (inter, union, clamped) = overlap(a, b);
        let u2 = union * union;
        let one = R::one();
        Zip::from(d_hat.row_mut(i))
            .and(d_tilde.row_mut(i))
            .and(a)
            .and(b)
            .for_each(|da, db, &x, &y| {
                if clamped {
                    *da = scale * y / union;
                    *db = scale * x / union;
                } else {
                    *da = scale * (y * union - inter * (one - y)) / u2;
                    *db = scale * (x * union - inter * (one - x)) / u2;
                }
            });
    }
    Ok((d_hat, d_tilde))
}

/// Sum of the two heads' mean squared errors, each averaged over batch and coordinates.
pub fn regression_loss<R: Real>(
    pred_hat: &ArrayView2<R>,
    pred_tilde: &ArrayView2<R>,
    labels: &ArrayView2<R>,
) -> Result<R> {
    same_shape(pred_hat, labels, "regression_loss")?;
    same_shape(pred_tilde, labels, "regression_loss")?;
    Ok(mse(pred_hat, labels) + mse(pred_tilde, labels))
}

/// Mean over all entries of the squared difference.
pub fn mse<R: Real>(pred: &ArrayView2<R>, labels: &ArrayView2<R>) -> R {
    let n = R::lit(pred.len() as f64);
    let sum: R = pred
        .iter()
        .zip(labels.iter())
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum();
    sum / n
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_grad<R: Real>(pred: &ArrayView2<R>, labels: &ArrayView2<R>) -> Array2<R> {
    let scale = R::lit(2.0 / pred.len() as f64);
    let mut out = pred.to_owned();
    out -= labels;
    out *= scale;
    out
}

/// Gradients of [`regression_loss`] with respect to both predictions.
pub fn regression_loss_grad<R: Real>(
    pred_hat: &ArrayView2<R>,
    pred_tilde: &ArrayView2<R>,
    labels: &ArrayView2<R>,
) -> Result<(Array2<R>, Array2<R>)> {
    same_shape(pred_hat, labels, "regression_loss")?;
    same_shape(pred_tilde, labels, "regression_loss")?;
    Ok((mse_grad(pred_hat, labels), mse_grad(pred_tilde, labels)))
}

fn check_probabilities<R: Real>(p: &ArrayView1<R>, what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::contract(format!("{what}: empty batch")));
    }
    if let Some(bad) = p.iter().find(|&&v| !(v > R::zero() && v < R::one())) {
        return Err(Error::contract(format!(
            "{what}: probability {bad} outside (0, 1)"
        )));
    }
    Ok(())
}

/// `mean(log p_source) + mean(log(1 - p_target))`, always `<= 0`.
///
/// The discriminator ascends this value and the feature generator descends it.
pub fn adversarial_loss<R: Real>(
    d_source_similar: &ArrayView1<R>,
    d_target_similar: &ArrayView1<R>,
) -> Result<R> {
    check_probabilities(d_source_similar, "adversarial_loss source-similar")?;
    check_probabilities(d_target_similar, "adversarial_loss target-similar")?;
    let ns = R::lit(d_source_similar.len() as f64);
    let nt = R::lit(d_target_similar.len() as f64);
    let s: R = d_source_similar.iter().map(|p| p.ln()).sum();
    let t: R = d_target_similar.iter().map(|p| (R::one() - *p).ln()).sum();
    Ok(s / ns + t / nt)
}

/// Gradients of [`adversarial_loss`] with respect to both probability vectors.
pub fn adversarial_loss_grad<R: Real>(
    d_source_similar: &ArrayView1<R>,
    d_target_similar: &ArrayView1<R>,
) -> Result<(Array1<R>, Array1<R>)> {
    check_probabilities(d_source_similar, "adversarial_loss source-similar")?;
    check_probabilities(d_target_similar, "adversarial_loss target-similar")?;
    let ns = R::lit(d_source_similar.len() as f64);
    let nt = R::lit(d_target_similar.len() as f64);
    Ok((
        d_source_similar.mapv(|p| R::one() / (ns * p)),
        d_target_similar.mapv(|p| -R::one() / (nt * (R::one() - p))),
    ))
}

/// Mean absolute difference between the two heads' predictions.
pub fn l1_discrepancy<R: Real>(pred_hat: &ArrayView2<R>, pred_tilde: &ArrayView2<R>) -> Result<R> {
    same_shape(pred_hat, pred_tilde, "l1_discrepancy")?;
    let sum: R = pred_hat
        .iter()
        .zip(pred_tilde.iter())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(sum / R::lit(pred_hat.len() as f64))
}

pub fn l1_discrepancy_grad<R: Real>(
    pred_hat: &ArrayView2<R>,
    pred_tilde: &ArrayView2<R>,
) -> Result<(Array2<R>, Array2<R>)> {
    same_shape(pred_hat, pred_tilde, "l1_discrepancy")?;
    let scale = R::one() / R::lit(pred_hat.len() as f64);
    let mut d_hat = Array2::zeros(pred_hat.raw_dim());
    Zip::from(&mut d_hat)
        .and(pred_hat)
        .and(pred_tilde)
        .for_each(|d, &a, &b| *d = scale * (a - b).signum());
    let d_tilde = d_hat.mapv(|v| -v);
    Ok((d_hat, d_tilde))
}
