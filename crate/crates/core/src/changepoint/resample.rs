//! Stratified optimal resampling (Fearnhead-Liu).
//!
//! Given N weighted particles and a budget of M survivors, every particle
//! whose normalized weight reaches the threshold `alpha` is kept with its
//! weight unchanged; the rest are thinned by a single stratified sweep in
//! which particle `i` survives with probability `w_i / alpha` and survivors
//! are reweighted to `alpha`. The scheme keeps exactly M particles and
//! preserves total weight in expectation.

use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// A particle kept by the resampler: input index plus (possibly adjusted)
/// weight on the input scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Survivor {
    pub index: usize,
    pub weight: f64,
}

/// Reduce `weights` to at most `m` survivors. Inputs of size `<= m` are
/// returned unchanged. Deterministic in `seed`.
pub fn stratified_optimal_resample(
    weights: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<Survivor>> {
    if m == 0 {
        return Err(Error::Resample("survivor budget must be >= 1".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Resample("weights must be finite and >= 0".into()));
    }
    if weights.len() <= m {
        return Ok(weights
            .iter()
            .enumerate()
            .map(|(index, &weight)| Survivor { index, weight })
            .collect());
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Resample("all weights are zero".into()));
    }

    // Find the threshold: kappa with sum_i min(w_i/kappa, 1) = m. Particles
    // with normalized weight >= kappa are kept outright.
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        weights[j]
            .partial_cmp(&weights[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut kept = 0usize;
    let mut rest = 1.0f64;
    while kept < m {
        let w = weights[order[kept]] / total;
        if w * (m - kept) as f64 >= rest {
            rest -= w;
            kept += 1;
        } else {
            break;
        }
    }
    let target = m - kept;
    let kappa = if target > 0 {
        rest / target as f64
    } else {
        f64::INFINITY
    };

    let mut survivors: Vec<Survivor> = order[..kept]
        .iter()
        .map(|&index| Survivor {
            index,
            weight: weights[index],
        })
        .collect();

    // Stratified sweep over the remaining mass in original index order.
    let mut smalls: Vec<usize> = order[kept..].to_vec();
    smalls.sort_unstable();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut picked = vec![false; smalls.len()];
    let mut n_picked = 0usize;
    if target > 0 {
        let mut u = rng.gen_range(0.0..kappa);
        let mut cum = 0.0;
        for (slot, &index) in smalls.iter().enumerate() {
            cum += weights[index] / total;
            if u < cum && n_picked < target {
                picked[slot] = true;
                n_picked += 1;
                u += kappa;
            }
        }
    }
    // Floating-point rounding can leave the sweep one short; top up with the
    // heaviest unpicked smalls, deterministically.
    if n_picked < target {
        let mut spare: Vec<usize> = (0..smalls.len()).filter(|&s| !picked[s]).collect();
        spare.sort_by(|&a, &b| {
            weights[smalls[b]]
                .partial_cmp(&weights[smalls[a]])
                .unwrap()
                .then(smalls[a].cmp(&smalls[b]))
        });
        for &s in spare.iter().take(target - n_picked) {
            picked[s] = true;
        }
    }
    for (slot, &index) in smalls.iter().enumerate() {
        if picked[slot] {
            survivors.push(Survivor {
                index,
                weight: kappa * total,
            });
        }
    }

    survivors.sort_by_key(|s| s.index);
    debug_assert_eq!(survivors.len(), m);
    Ok(survivors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_op_when_under_budget() {
        let w = [0.4, 0.1, 0.5];
        let out = stratified_optimal_resample(&w, 3, 1).unwrap();
        assert_eq!(out.len(), 3);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.index, i);
            assert_eq!(s.weight, w[i]);
        }
        assert_eq!(stratified_optimal_resample(&w, 5, 1).unwrap().len(), 3);
    }

    #[test]
    fn exact_survivor_count() {
        let w: Vec<f64> = (1..=57).map(|i| i as f64).collect();
        for m in [1, 3, 10, 42, 56] {
            let out = stratified_optimal_resample(&w, m, 99).unwrap();
            assert_eq!(out.len(), m, "m={m}");
            // No duplicates.
            let mut idx: Vec<usize> = out.iter().map(|s| s.index).collect();
            idx.dedup();
            assert_eq!(idx.len(), m);
        }
    }

    #[test]
    fn dominant_weight_always_kept() {
        // With any budget above one, the threshold test keeps a 0.99-weight
        // particle outright, weight unchanged.
        let mut w = vec![0.01 / 99.0; 100];
        w[37] = 0.99;
        for seed in 0..200 {
            let out = stratified_optimal_resample(&w, 2, seed).unwrap();
            assert_eq!(out.len(), 2);
            let dom = out.iter().find(|s| s.index == 37).expect("dominant kept");
            assert_eq!(dom.weight, 0.99);
        }
        // At m = 1 unbiasedness forbids certain retention, but the dominant
        // particle survives the stratified draw in all but ~1% of trials.
        let mut hits = 0;
        for seed in 0..2000 {
            if stratified_optimal_resample(&w, 1, seed).unwrap()[0].index == 37 {
                hits += 1;
            }
        }
        assert!(hits >= 1950, "dominant retention {hits}/2000");
    }

    #[test]
    fn uniform_weights_survival_rate() {
        // N = 2M uniform particles: each survives with probability 1/2.
        let n = 40;
        let m = 20;
        let w = vec![1.0; n];
        let trials = 10_000;
        let mut counts = vec![0usize; n];
        for seed in 0..trials {
            for s in stratified_optimal_resample(&w, m, seed).unwrap() {
                counts[s.index] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let rate = c as f64 / trials as f64;
            assert!(
                (rate - 0.5).abs() < 0.02,
                "particle {i} survival rate {rate}"
            );
        }
    }

    #[test]
    fn expected_total_weight_preserved() {
        let w: Vec<f64> = (0..60).map(|i| ((i * 37 + 11) % 23) as f64 + 0.5).collect();
        let total: f64 = w.iter().sum();
        let trials = 10_000;
        let mut acc = 0.0;
        for seed in 0..trials {
            acc += stratified_optimal_resample(&w, 15, seed)
                .unwrap()
                .iter()
                .map(|s| s.weight)
                .sum::<f64>();
        }
        let mean = acc / trials as f64;
        assert!(
            (mean - total).abs() / total < 0.01,
            "mean survivor weight {mean} vs total {total}"
        );
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(stratified_optimal_resample(&[0.0, 0.0, 0.0], 2, 1).is_err());
        assert!(stratified_optimal_resample(&[1.0, f64::NAN], 1, 1).is_err());
        assert!(stratified_optimal_resample(&[1.0, 2.0], 0, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let w: Vec<f64> = (0..50).map(|i| 1.0 + (i % 7) as f64).collect();
        let a = stratified_optimal_resample(&w, 12, 5).unwrap();
        let b = stratified_optimal_resample(&w, 12, 5).unwrap();
        assert_eq!(a, b);
    }
}
