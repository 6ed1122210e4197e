use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use super::TrainError;
use crate::seed::stage_rng;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln sigmoid(pos - neg)` over the batch; zero for an empty batch.
pub fn bpr_loss(pos: &[f64], neg: &[f64]) -> f64 {
    bpr_loss_grad(pos, neg).0
}

/// BPR loss and its derivative with respect to each positive score. The
/// derivative with respect to the negative score is the negation.
pub fn bpr_loss_grad(pos: &[f64], neg: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pos.len(), neg.len(), "score lists differ in length");
    if pos.is_empty() {
        return (0.0, Vec::new());
    }
    let b = pos.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pos.len());
    for (p, n) in pos.iter().zip(neg) {
        let x = p - n;
        loss += softplus(-x);
        grad.push(-sigmoid(-x) / b);
    }
    (loss / b, grad)
}

/// Number of entities drawn per round: `ceil(n * q)`, clamped to `1..=n`.
/// A small tolerance keeps products such as `30 * 0.1` from rounding up.
pub fn subset_size(n: usize, q: f64) -> usize {
    let k = (n as f64 * q - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// `rounds` independent draws of `subset_size` distinct entries of
/// `candidates`, each without replacement.
pub fn sample_rounds(
    candidates: &[usize],
    q: f64,
    rounds: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    if candidates.is_empty() {
        return vec![Vec::new(); rounds];
    }
    let k = subset_size(candidates.len(), q);
    (0..rounds)
        .map(|_| {
            sample(rng, candidates.len(), k)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        })
        .collect()
}

fn normalized_rows(m: &Array2<f64>, idx: &[usize]) -> Result<(Array2<f64>, Vec<f64>), TrainError> {
    let d = m.ncols();
    let mut out = Array2::zeros((idx.len(), d));
    let mut norms = Vec::with_capacity(idx.len());
    for (a, &i) in idx.iter().enumerate() {
        let row = m.row(i);
        let n = row.dot(&row).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(TrainError::DegenerateRow(i));
        }
        out.row_mut(a).assign(&(&row / n));
        norms.push(n);
    }
    Ok((out, norms))
}

/// Matching loss over pre-drawn index sets, with gradients with respect to
/// both inputs. Each round compares the cosine-similarity Gram matrices of
/// the two views on its subset; the result is the summed squared Frobenius
/// distance divided by `R * K^2`.
pub fn matching_loss_grad(
    z: &Array2<f64>,
    p: &Array2<f64>,
    rounds: &[Vec<usize>],
) -> Result<(f64, Array2<f64>, Array2<f64>), TrainError> {
    let mut dz = Array2::zeros(z.raw_dim());
    let mut dp = Array2::zeros(p.raw_dim());
    let nonempty = rounds.iter().filter(|r| !r.is_empty()).count();
    if nonempty == 0 {
        return Ok((0.0, dz, dp));
    }
    let mut loss = 0.0;
    for idx in rounds.iter().filter(|r| !r.is_empty()) {
        let k = idx.len() as f64;
        let scale = 1.0 / (rounds.len() as f64 * k * k);
        let (zh, zn) = normalized_rows(z, idx)?;
        let (ph, pn) = normalized_rows(p, idx)?;
        let diff = zh.dot(&zh.t()) - ph.dot(&ph.t());
        loss += diff.iter().map(|v| v * v).sum::<f64>() * scale;
        let dzh = diff.dot(&zh) * (4.0 * scale);
        let dph = diff.dot(&ph) * (-4.0 * scale);
        for (a, &i) in idx.iter().enumerate() {
            for (hat, dhat, norm, target) in
                [(&zh, &dzh, zn[a], &mut dz), (&ph, &dph, pn[a], &mut dp)]
            {
                let h = hat.row(a);
                let g = dhat.row(a);
                let proj = h.dot(&g);
                let mut t = target.row_mut(i);
                t.scaled_add(1.0 / norm, &g);
                t.scaled_add(-proj / norm, &h);
            }
        }
    }
    Ok((loss, dz, dp))
}

/// Sampled pairwise matching loss over all rows, drawing `R` rounds of
/// `ceil(N q)` distinct rows from a generator seeded by `seed`.
pub fn pairwise_matching_loss(
    z: &Array2<f64>,
    p: &Array2<f64>,
    q: f64,
    rounds: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if z.dim() != p.dim() {
        return Err(TrainError::InvalidConfig(format!(
            "views differ in shape: {:?} vs {:?}",
            z.dim(),
            p.dim()
        )));
    }
    if !(q > 0.0 && q <= 1.0) || rounds == 0 {
        return Err(TrainError::InvalidConfig(
            "q must be in (0, 1] and R at least 1".into(),
        ));
    }
    let mut rng = stage_rng(seed, "pair-sample", 0);
    let all: Vec<usize> = (0..z.nrows()).collect();
    let idx = sample_rounds(&all, q, rounds, &mut rng);
    Ok(matching_loss_grad(z, p, &idx)?.0)
}
