//! Loss functions as pure scalar operations. Natural log everywhere, so the
//! JS divergence is bounded by ln 2.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};

const LOG_CLIP: f64 = 1e-12;

fn check_prob_rows<S: Scalar>(rows: &[Vec<S>]) -> Result<()> {
    let tol = S::from_f64_lossy(1e-6);
    for (i, row) in rows.iter().enumerate() {
        let sum: S = row.iter().copied().sum();
        if (sum - S::one()).abs() > tol || row.iter().any(|v| *v < S::zero()) {
            return Err(Error::Shape(format!("row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Jensen-Shannon divergence, ½KL(p‖m) + ½KL(q‖m) with m = (p+q)/2.
/// Symmetric, in [0, ln 2]; 0·log 0 := 0.
pub fn js_divergence<S: Scalar>(p: &[S], q: &[S]) -> Result<S> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "js divergence over dims {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let half = S::from_f64_lossy(0.5);
    let mut acc = S::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        let m = half * (pi + qi);
        if pi > S::zero() {
            acc += half * pi * (pi / m).ln();
        }
        if qi > S::zero() {
            acc += half * qi * (qi / m).ln();
        }
    }
    Ok(acc.max(S::zero()))
}

fn sampled_rows(rows: usize, sample_count: usize, rng_seed: u64) -> Vec<usize> {
    let take = sample_count.min(rows);
    if take == rows {
        (0..rows).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picked = sample(&mut rng, rows, take).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Mean JS divergence over `sample_count` uniformly sampled common row
/// indices (clamped to the row count). Deterministic for a fixed seed.
pub fn augmentation_loss<S: Scalar>(
    pred_a: &[Vec<S>],
    pred_b: &[Vec<S>],
    sample_count: usize,
    rng_seed: u64,
) -> Result<S> {
    if pred_a.len() != pred_b.len() {
        return Err(Error::Shape("prediction row counts differ".into()));
    }
    if pred_a.is_empty() || sample_count == 0 {
        return Ok(S::zero());
    }
    check_prob_rows(pred_a)?;
    check_prob_rows(pred_b)?;
    let picked = sampled_rows(pred_a.len(), sample_count, rng_seed);
    let mut acc = S::zero();
    for &i in &picked {
        acc += js_divergence(&pred_a[i], &pred_b[i])?;
    }
    Ok(acc / S::from_f64_lossy(picked.len() as f64))
}

/// Mean squared row difference over the same sampling scheme as
/// [`augmentation_loss`].
pub fn mse_augmentation_loss<S: Scalar>(
    pred_a: &[Vec<S>],
    pred_b: &[Vec<S>],
    sample_count: usize,
    rng_seed: u64,
) -> Result<S> {
    if pred_a.len() != pred_b.len() {
        return Err(Error::Shape("prediction row counts differ".into()));
    }
    if pred_a.is_empty() || sample_count == 0 {
        return Ok(S::zero());
    }
    let picked = sampled_rows(pred_a.len(), sample_count, rng_seed);
    let mut acc = S::zero();
    for &i in &picked {
        let (a, b) = (&pred_a[i], &pred_b[i]);
        if a.len() != b.len() {
            return Err(Error::Shape(format!("row {i} dims differ")));
        }
        let sq: S = a
            .iter()
            .zip(b)
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum::<S>()
            / S::from_f64_lossy(a.len() as f64);
        acc += sq;
    }
    Ok(acc / S::from_f64_lossy(picked.len() as f64))
}

/// Mean of `y d² + (1−y) max(τ−d, 0)²` over sample pairs.
pub fn contrastive_loss<S: Scalar>(distances: &[S], labels: &[bool], tau: S) -> Result<S> {
    if distances.len() != labels.len() {
        return Err(Error::Shape("distances and labels differ in length".into()));
    }
    if distances.is_empty() {
        return Ok(S::zero());
    }
    let mut acc = S::zero();
    for (&d, &positive) in distances.iter().zip(labels) {
        if positive {
            acc += d * d;
        } else {
            let margin = (tau - d).max(S::zero());
            acc += margin * margin;
        }
    }
    Ok(acc / S::from_f64_lossy(distances.len() as f64))
}

/// Mean of `max(d_ap − d_an + ρ, 0)` over triplets.
pub fn triplet_loss<S: Scalar>(d_ap: &[S], d_an: &[S], rho: S) -> Result<S> {
    if d_ap.len() != d_an.len() {
        return Err(Error::Shape("triplet distance arrays differ".into()));
    }
    if d_ap.is_empty() {
        return Ok(S::zero());
    }
    let mut acc = S::zero();
    for (&ap, &an) in d_ap.iter().zip(d_an) {
        acc += (ap - an + rho).max(S::zero());
    }
    Ok(acc / S::from_f64_lossy(d_ap.len() as f64))
}

/// Voting-center regression: mean of `‖o_t − o_t1‖ − ô_t · ô_t1`. A pair with
/// a zero-norm vector contributes only its norm term.
pub fn offset_loss<S: Scalar>(o_t: &[Vec3<S>], o_t1: &[Vec3<S>]) -> Result<S> {
    if o_t.len() != o_t1.len() {
        return Err(Error::Shape("offset arrays differ in length".into()));
    }
    if o_t.is_empty() {
        return Ok(S::zero());
    }
    let mut acc = S::zero();
    for (&a, &b) in o_t.iter().zip(o_t1) {
        let mut term = (a - b).norm();
        if let (Some(ua), Some(ub)) = (a.normalized(), b.normalized()) {
            term -= ua.dot(ub);
        }
        acc += term;
    }
    Ok(acc / S::from_f64_lossy(o_t.len() as f64))
}

/// Masked cross entropy, mean of `−log p[label]` over rows where the mask is
/// set. An empty mask yields 0. Probabilities clipped at 1e-12 before log.
pub fn cross_entropy<S: Scalar>(pred: &[Vec<S>], labels: &[i32], mask: &[bool]) -> Result<S> {
    if pred.len() != labels.len() || pred.len() != mask.len() {
        return Err(Error::Shape("cross entropy input lengths differ".into()));
    }
    let clip = S::from_f64_lossy(LOG_CLIP);
    let mut acc = S::zero();
    let mut count = 0usize;
    for ((row, &label), &m) in pred.iter().zip(labels).zip(mask) {
        if !m {
            continue;
        }
        if label < 0 || label as usize >= row.len() {
            return Err(Error::Bounds(format!(
                "label {label} outside 0..{}",
                row.len()
            )));
        }
        acc += -(row[label as usize].max(clip)).ln();
        count += 1;
    }
    if count == 0 {
        return Ok(S::zero());
    }
    Ok(acc / S::from_f64_lossy(count as f64))
}

/// Soft Dice loss, `1 − 2Σpg / (Σp + Σg)`; both-empty masks give 0.
pub fn dice_loss<S: Scalar>(pred_mask: &[S], gt_mask: &[bool]) -> Result<S> {
    if pred_mask.len() != gt_mask.len() {
        return Err(Error::Shape("dice mask lengths differ".into()));
    }
    let mut inter = S::zero();
    let mut psum = S::zero();
    let mut gsum = S::zero();
    for (&p, &g) in pred_mask.iter().zip(gt_mask) {
        psum += p;
        if g {
            gsum += S::one();
            inter += p;
        }
    }
    let denom = psum + gsum;
    if denom <= S::zero() {
        return Ok(S::zero());
    }
    Ok(S::one() - S::from_f64_lossy(2.0) * inter / denom)
}

/// Mean binary cross entropy over per-class presence predictions.
pub fn class_presence_loss<S: Scalar>(scene_pred: &[S], gt_presence: &[bool]) -> Result<S> {
    if scene_pred.len() != gt_presence.len() {
        return Err(Error::Shape("presence lengths differ".into()));
    }
    if scene_pred.is_empty() {
        return Ok(S::zero());
    }
    let clip = S::from_f64_lossy(LOG_CLIP);
    let mut acc = S::zero();
    for (&p, &g) in scene_pred.iter().zip(gt_presence) {
        let p = p.max(clip).min(S::one() - clip);
        acc += if g { -p.ln() } else { -(S::one() - p).ln() };
    }
    Ok(acc / S::from_f64_lossy(scene_pred.len() as f64))
}
