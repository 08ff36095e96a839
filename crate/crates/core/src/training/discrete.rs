//! Exact evaluation of the classifier-based information bound on a finite
//! joint distribution of classes and observations.

use crate::error::{Error, Result};

fn check(prior: &[f64], lik: &[Vec<f64>]) -> Result<usize> {
    if prior.is_empty() || lik.len() != prior.len() {
        return Err(Error::dim("one likelihood row per class is required"));
    }
    let nx = lik[0].len();
    if nx == 0 || lik.iter().any(|r| r.len() != nx) {
        return Err(Error::dim("likelihood rows must share a positive length"));
    }
    let ok = |v: &[f64]| v.iter().all(|&p| p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if !ok(prior) || !lik.iter().all(|r| ok(r)) {
        return Err(Error::Domain(
            "prior and likelihood rows must be distributions".into(),
        ));
    }
    Ok(nx)
}

/// `p(c|x)` by Bayes' rule, indexed `[x][c]`. Observations with zero
/// evidence get a uniform posterior.
pub fn bayes_posterior(prior: &[f64], lik: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let nx = check(prior, lik)?;
    Ok((0..nx)
        .map(|x| {
            let joint: Vec<f64> = prior.iter().zip(lik).map(|(p, r)| p * r[x]).collect();
            let ev: f64 = joint.iter().sum();
            if ev > 0.0 {
                joint.iter().map(|j| j / ev).collect()
            } else {
                vec![1.0 / prior.len() as f64; prior.len()]
            }
        })
        .collect())
}

/// `E_{c ~ p(c), x ~ p(x|c)}[log r(c|x)]` with `r` indexed `[x][c]`.
/// Pairs of zero probability are skipped.
pub fn expected_log_posterior(prior: &[f64], lik: &[Vec<f64>], r: &[Vec<f64>]) -> Result<f64> {
    let nx = check(prior, lik)?;
    if r.len() != nx || r.iter().any(|row| row.len() != prior.len()) {
        return Err(Error::dim(
            "classifier table must be [observations][classes]",
        ));
    }
    let mut total = 0.0;
    for (c, (&pc, row)) in prior.iter().zip(lik).enumerate() {
        for (x, &px) in row.iter().enumerate() {
            let w = pc * px;
            if w > 0.0 {
                total += w * r[x][c].ln();
            }
        }
    }
    Ok(total)
}
