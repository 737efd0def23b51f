#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcross_core::dataset::{CrossedDataset, Observation};

/// Random ragged crossed dataset: every word and model used, cell counts in
/// `0..=max_k`, at least one replicated cell.
#[allow(clippy::needless_range_loop)]
pub fn ragged(seed: u64, ni: usize, nj: usize, max_k: usize) -> CrossedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let tau: Vec<f64> = (0..ni).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let beta: Vec<f64> = (0..nj).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut obs = Vec::new();
        for i in 0..ni {
            for j in 0..nj {
                let k = rng.random_range(0..=max_k);
                let iota = rng.random::<f64>() - 0.5;
                for r in 0..k {
                    obs.push(Observation {
                        word: i as u32,
                        model: j as u32,
                        rep: r as u32 + 1,
                        value: 3.0 + tau[i] + beta[j] + iota + rng.random::<f64>() * 2.0 - 1.0,
                    });
                }
            }
        }
        let words = (0..ni).map(|i| format!("w{i}")).collect();
        let models = (0..nj).map(|j| format!("m{j}")).collect();
        let mut counts = std::collections::HashMap::new();
        for o in &obs {
            *counts.entry((o.word, o.model)).or_insert(0) += 1;
        }
        if counts.values().all(|c| *c < 2) {
            continue;
        }
        if let Ok(d) = CrossedDataset::new("t", words, models, obs) {
            return d;
        }
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
