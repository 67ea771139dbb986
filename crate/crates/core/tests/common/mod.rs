#![allow(dead_code)]

use pbkws_core::features::FeatureSequence;
use pbkws_core::label::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureSequence {
    let data = normals(rng, frames * dim).into_iter().map(|v| v as f32).collect();
    FeatureSequence::new(frames, dim, data).unwrap()
}

pub fn random_label(rng: &mut ChaCha8Rng) -> Label {
    Label::from_index(rng.random_range(0..11)).unwrap()
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` at `x` along each coordinate.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

/// Probability of every label sequence reachable in `frames` steps, found by
/// enumerating all alignments: collapse repeats, then drop blanks (index 0).
pub fn brute_force_ctc(logits: &[f64], inventory: usize) -> std::collections::HashMap<Vec<usize>, f64> {
    let frames = logits.len() / inventory;
    let probs: Vec<f64> = logits
        .chunks(inventory)
        .flat_map(|row| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(move |v| v.exp() / z).collect::<Vec<_>>()
        })
        .collect();
    let mut totals = std::collections::HashMap::new();
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &k in &path {
            if prev != Some(k) && k != 0 {
                collapsed.push(k);
            }
            prev = Some(k);
        }
        let p: f64 = path.iter().enumerate().map(|(t, &k)| probs[t * inventory + k]).product();
        *totals.entry(collapsed).or_insert(0.0) += p;
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == frames {
                return totals;
            }
            path[i] += 1;
            if path[i] < inventory {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Supervised contrastive loss written pair by pair, straight from its
/// definition, without any shared normalisation or log-sum-exp tricks.
pub fn brute_force_scl(embeddings: &[Vec<f64>], labels: &[Label], tau: f64) -> f64 {
    let unit: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            e.iter().map(|v| v / n).collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = 0.0;
    for i in 0..unit.len() {
        let positives: Vec<usize> = (0..unit.len()).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..unit.len())
            .filter(|&a| a != i)
            .map(|a| (dot(&unit[i], &unit[a]) / tau).exp())
            .sum();
        let mut term = 0.0;
        for &p in &positives {
            term += ((dot(&unit[i], &unit[p]) / tau).exp() / denom).ln();
        }
        loss += -term / positives.len() as f64;
    }
    loss
}
