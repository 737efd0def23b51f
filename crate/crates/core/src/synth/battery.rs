//! A multi-norm battery: one crossed dataset per norm over a shared word
//! list and model set, plus deterministic (single-response) ratings and
//! human reference norms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{model_label, word_label, FingerprintSpec};
use crate::dataset::{CrossedDataset, Observation};
use crate::error::{Error, Result};
use crate::lmm::Components;
use crate::rng::{domain, normals, stream_id};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub n_words: usize,
    pub n_models: usize,
    pub reps: usize,
    pub norms: Vec<String>,
    pub sigma2: Components<f64>,
    /// Correlation of a word's trait effect between any two norms.
    pub trait_correlation: f64,
    /// Structure of the interaction, rescaled to variance `sigma2.iota`.
    /// The shared and model-specific word factors are common to all norms,
    /// which is what makes one norm's interactions predictable from another's.
    pub iota: FingerprintSpec,
    pub human_noise_sd: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl BatteryConfig {
    /// Trait-dominated defaults over `norms`.
    pub fn new(n_words: usize, n_models: usize, reps: usize, norms: Vec<String>, seed: u64) -> Self {
        BatteryConfig {
            n_words,
            n_models,
            reps,
            norms,
            sigma2: Components::new(1.0, 0.25, 0.5, 1.0),
            trait_correlation: 0.8,
            iota: FingerprintSpec::new(1.0, 1.0),
            human_noise_sd: 0.5,
            missing_rate: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicRating {
    pub word: String,
    pub model: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub datasets: Vec<CrossedDataset>,
    pub deterministic: Vec<Vec<DeterministicRating>>,
    pub human: Vec<BTreeMap<String, f64>>,
}

pub fn generate_battery(config: &BatteryConfig) -> Result<Battery> {
    let (ni, nj, nk) = (config.n_words, config.n_models, config.reps);
    if ni < 2 || nj < 2 || nk < 1 || config.norms.is_empty() {
        return Err(Error::InvalidInput("battery needs ≥ 2 words, ≥ 2 models, ≥ 1 rep and a norm".into()));
    }
    if !(0.0..=1.0).contains(&config.trait_correlation) || !(0.0..0.5).contains(&config.missing_rate) {
        return Err(Error::InvalidInput("trait_correlation or missing_rate out of range".into()));
    }
    let s2 = config.sigma2;
    let words: Vec<String> = (0..ni).map(|i| word_label(i, ni)).collect();
    let models: Vec<String> = (0..nj).map(|j| model_label(j, nj)).collect();

    let mut g = normals(config.seed, stream_id(domain::WORD_EFFECTS, 0, 0));
    let common_trait: Vec<f64> = (0..ni).map(|_| g.standard()).collect();
    let mut g = normals(config.seed, stream_id(domain::FINGERPRINT_SHARED, 0, 0));
    let shared: Vec<f64> = (0..ni).map(|_| g.standard()).collect();
    let own: Vec<Vec<f64>> = (0..nj)
        .map(|j| {
            let mut g = normals(config.seed, stream_id(domain::FINGERPRINT_SELF, j as u32, 0));
            (0..ni).map(|_| g.standard()).collect()
        })
        .collect();
    let spec = config.iota;
    let iota_scale = {
        let raw = spec.w_shared.powi(2) + spec.w_self.powi(2) + spec.noise_sd.powi(2);
        if raw > 0.0 {
            (s2.iota / raw).sqrt()
        } else {
            0.0
        }
    };
    let rho = config.trait_correlation;

    let mut battery = Battery {
        datasets: Vec::with_capacity(config.norms.len()),
        deterministic: Vec::with_capacity(config.norms.len()),
        human: Vec::with_capacity(config.norms.len()),
    };
    for (n, norm) in config.norms.iter().enumerate() {
        let mut g = normals(config.seed, stream_id(domain::BATTERY_NORM, n as u32, 0));
        let mut det = normals(config.seed, stream_id(domain::BATTERY_DETERMINISTIC, n as u32, 0));
        let mut hum = normals(config.seed, stream_id(domain::BATTERY_HUMAN, n as u32, 0));
        let mut miss = normals(config.seed, stream_id(domain::MISSING, n as u32, 0));
        let mu = 5.0;
        // alternate loadings so neighbouring norms are not all positively related
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let tau: Vec<f64> =
            common_trait.iter().map(|c| s2.tau.sqrt() * (rho.sqrt() * c + (1.0 - rho).sqrt() * g.standard())).collect();
        let beta: Vec<f64> = (0..nj).map(|_| g.normal(s2.beta)).collect();
        let mut observations = Vec::with_capacity(ni * nj * nk);
        let mut deterministic = Vec::with_capacity(ni * nj);
        for i in 0..ni {
            for j in 0..nj {
                let iota = sign
                    * iota_scale
                    * (spec.w_shared * shared[i] + spec.w_self * own[j][i] + spec.noise_sd * g.standard());
                let mean = mu + tau[i] + beta[j] + iota;
                let drop = config.missing_rate > 0.0 && miss.uniform() < config.missing_rate && i > 0 && j > 0;
                for k in 0..nk {
                    let e = g.normal(s2.residual);
                    if !drop {
                        observations.push(Observation {
                            word: i as u32,
                            model: j as u32,
                            rep: k as u32 + 1,
                            value: mean + e,
                        });
                    }
                }
                deterministic.push(DeterministicRating {
                    word: words[i].clone(),
                    model: models[j].clone(),
                    value: mean + det.normal(s2.residual),
                });
            }
        }
        let human = words
            .iter()
            .zip(&tau)
            .map(|(w, t)| (w.clone(), 4.0 + 1.5 * t + config.human_noise_sd * hum.standard()))
            .collect();
        battery.datasets.push(CrossedDataset::new(norm.clone(), words.clone(), models.clone(), observations)?);
        battery.deterministic.push(deterministic);
        battery.human.push(human);
    }
    Ok(battery)
}
