//! Word × norm interaction matrices with a planted model-specific factor.

use serde::{Deserialize, Serialize};

use super::{model_label, word_label, GeneratorConfig};
use crate::error::{Error, Result};
use crate::rng::{domain, normals, stream_id};

/// `ι_{word, model, norm} = w_shared·c_word + w_self·s_{word, model} + noise_sd·e`
/// with independent standard normal `c`, `s` and `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSpec {
    pub w_shared: f64,
    pub w_self: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_noise_sd() -> f64 {
    0.5
}

impl FingerprintSpec {
    pub fn new(w_shared: f64, w_self: f64) -> Self {
        FingerprintSpec { w_shared, w_self, noise_sd: default_noise_sd() }
    }
}

/// Population R² of the best linear predictor of one norm from the other
/// `n_norms − 1`, for the model's own matrix and for another model's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedSpecificity {
    pub within_r2: f64,
    pub cross_r2: f64,
    /// `within / cross`; absent when the cross-model R² is zero.
    pub ratio: Option<f64>,
}

impl ExpectedSpecificity {
    pub fn of(spec: &FingerprintSpec, n_norms: usize) -> Self {
        let shared = spec.w_shared * spec.w_shared;
        let signal = shared + spec.w_self * spec.w_self;
        let noise = spec.noise_sd * spec.noise_sd;
        let predictors = (n_norms - 1) as f64;
        let denom = (signal + noise / predictors) * (signal + noise);
        let within_r2 = if denom > 0.0 { signal * signal / denom } else { 0.0 };
        let cross_r2 = if denom > 0.0 { shared * shared / denom } else { 0.0 };
        ExpectedSpecificity { within_r2, cross_r2, ratio: (cross_r2 > 0.0).then(|| within_r2 / cross_r2) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSet {
    pub words: Vec<String>,
    pub models: Vec<String>,
    pub norms: Vec<String>,
    /// `values[model][norm][word]`
    pub values: Vec<Vec<Vec<f64>>>,
    pub expected: ExpectedSpecificity,
}

pub fn norm_label(n: usize, count: usize) -> String {
    format!("norm{:0width$}", n, width = count.saturating_sub(1).to_string().len())
}

/// One BLUP-like matrix per (model, norm) over `config.i` words and
/// `config.j` models, following `config.fingerprint`.
pub fn generate_fingerprints(config: &GeneratorConfig, n_norms: usize) -> Result<FingerprintSet> {
    let spec =
        config.fingerprint.ok_or_else(|| Error::InvalidInput("generator config has no fingerprint spec".into()))?;
    if n_norms < 2 {
        return Err(Error::InvalidInput("need at least two norms".into()));
    }
    if config.i < 2 || config.j < 2 {
        return Err(Error::InvalidInput("need at least two words and two models".into()));
    }
    let (ni, nj) = (config.i, config.j);
    let mut g = normals(config.seed, stream_id(domain::FINGERPRINT_SHARED, 0, 0));
    let shared: Vec<f64> = (0..ni).map(|_| g.standard()).collect();
    let mut values = Vec::with_capacity(nj);
    for j in 0..nj {
        let mut g = normals(config.seed, stream_id(domain::FINGERPRINT_SELF, j as u32, 0));
        let own: Vec<f64> = (0..ni).map(|_| g.standard()).collect();
        let per_norm: Vec<Vec<f64>> = (0..n_norms)
            .map(|n| {
                let mut e = normals(config.seed, stream_id(domain::FINGERPRINT_NOISE, j as u32, n as u16));
                (0..ni)
                    .map(|i| spec.w_shared * shared[i] + spec.w_self * own[i] + spec.noise_sd * e.standard())
                    .collect()
            })
            .collect();
        values.push(per_norm);
    }
    Ok(FingerprintSet {
        words: (0..ni).map(|i| word_label(i, ni)).collect(),
        models: (0..nj).map(|j| model_label(j, nj)).collect(),
        norms: (0..n_norms).map(|n| norm_label(n, n_norms)).collect(),
        values,
        expected: ExpectedSpecificity::of(&spec, n_norms),
    })
}

impl FingerprintSet {
    /// The set as `model → norm → word → value`.
    pub fn scores(&self) -> crate::specificity::WordScores {
        let mut out = crate::specificity::WordScores::new();
        for (j, model) in self.models.iter().enumerate() {
            let by_norm = out.entry(model.clone()).or_default();
            for (n, norm) in self.norms.iter().enumerate() {
                by_norm
                    .insert(norm.clone(), self.words.iter().cloned().zip(self.values[j][n].iter().copied()).collect());
            }
        }
        out
    }
}
