//! Evaluation metrics for the two diagnosis tasks, plus the inter-task
//! affinity probe used to check that the tasks help each other.

use crate::autodiff::Tape;
use crate::dataset::FailureSample;
use crate::error::{Error, Result};
use crate::model::Model;

/// Fraction of cases whose ground truth sits within the top k. `ranks` holds
/// the 1-based rank of the ground-truth instance per case.
pub fn hr_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let hits = ranks.iter().filter(|&&r| r >= 1 && r <= k).count();
    hits as f64 / ranks.len() as f64
}

/// Mean of HR@1 through HR@k.
pub fn avg_at_k(ranks: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    (1..=k).map(|i| hr_at_k(ranks, i)).sum::<f64>() / k as f64
}

/// Mean reciprocal rank, counting only ground truths ranked within the top k.
pub fn mrr_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let total: f64 = ranks
        .iter()
        .map(|&r| if r >= 1 && r <= k { 1.0 / r as f64 } else { 0.0 })
        .sum();
    total / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<[usize; 3]>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    // per class: [tp, fp, fn]
    let mut counts = vec![[0usize; 3]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes {
            return Err(Error::LabelOutOfRange(p, classes));
        }
        if t >= classes {
            return Err(Error::LabelOutOfRange(t, classes));
        }
        if p == t {
            counts[p][0] += 1;
        } else {
            counts[p][1] += 1;
            counts[t][2] += 1;
        }
    }
    Ok(counts)
}

fn div_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Unweighted mean of per-class precision, recall, and F1. Classes with an
/// empty denominator contribute 0.
pub fn macro_prf1(pred: &[usize], truth: &[usize], classes: usize) -> Result<Prf1> {
    let counts = confusion(pred, truth, classes)?;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    for [tp, fp, fn_] in &counts {
        let p = div_or_zero(*tp as f64, (tp + fp) as f64);
        let r = div_or_zero(*tp as f64, (tp + fn_) as f64);
        p_sum += p;
        r_sum += r;
        f_sum += div_or_zero(2.0 * p * r, p + r);
    }
    let c = classes as f64;
    Ok(Prf1 {
        precision: p_sum / c,
        recall: r_sum / c,
        f1: f_sum / c,
    })
}

/// Pooled precision, recall, and F1 over all classes. For single-label
/// classification all three equal plain accuracy.
pub fn micro_prf1(pred: &[usize], truth: &[usize], classes: usize) -> Result<Prf1> {
    let counts = confusion(pred, truth, classes)?;
    let tp: usize = counts.iter().map(|c| c[0]).sum();
    let fp: usize = counts.iter().map(|c| c[1]).sum();
    let fn_: usize = counts.iter().map(|c| c[2]).sum();
    let p = div_or_zero(tp as f64, (tp + fp) as f64);
    let r = div_or_zero(tp as f64, (tp + fn_) as f64);
    Ok(Prf1 {
        precision: p,
        recall: r,
        f1: div_or_zero(2.0 * p * r, p + r),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Affinity {
    /// effect of one localization step on the typing loss
    pub rcl_to_fti: f64,
    /// effect of one typing step on the localization loss
    pub fti_to_rcl: f64,
}

fn component_losses(model: &Model, batch: &[&FailureSample]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let losses = model.batch_losses(&mut tape, &bound, batch)?;
    Ok((tape.scalar(losses.rcl), tape.scalar(losses.fti)))
}

fn stepped_model(
    model: &Model,
    batch: &[&FailureSample],
    source_rcl: bool,
    lr: f64,
) -> Result<Model> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let losses = model.batch_losses(&mut tape, &bound, batch)?;
    let source = if source_rcl { losses.rcl } else { losses.fti };
    let grads = tape.backward(source, &model.params);
    let mut stepped = model.clone();
    for idx in model.shared_param_indices() {
        stepped.params.tensors[idx] = &stepped.params.tensors[idx] - &(&grads[idx] * lr);
    }
    Ok(stepped)
}

/// `Z(T1 -> T2) = 1 - L_T2(after one shared-parameter step on L_T1) / L_T2`.
/// Positive values mean the step on T1 also lowered the T2 loss. A plain
/// gradient step (no momentum) keeps the probe a pure curvature measurement.
pub fn inter_task_affinity(
    model: &Model,
    batch: &[&FailureSample],
    lr: f64,
) -> Result<Affinity> {
    let (rcl_before, fti_before) = component_losses(model, batch)?;
    if rcl_before == 0.0 || fti_before == 0.0 {
        return Err(Error::ZeroLoss);
    }
    let after_rcl_step = stepped_model(model, batch, true, lr)?;
    let (_, fti_after) = component_losses(&after_rcl_step, batch)?;
    let after_fti_step = stepped_model(model, batch, false, lr)?;
    let (rcl_after, _) = component_losses(&after_fti_step, batch)?;
    Ok(Affinity {
        rcl_to_fti: 1.0 - fti_after / fti_before,
        fti_to_rcl: 1.0 - rcl_after / rcl_before,
    })
}
