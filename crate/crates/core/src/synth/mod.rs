//! Synthetic crossed designs with known variance components.

mod battery;
mod fingerprint;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CrossedDataset, Observation};
use crate::error::{Error, Result};
use crate::lmm::{variance_proportions, Components};
use crate::rng::{domain, normals, stream_id, NORMAL_GENERATOR_VERSION};

pub use battery::{generate_battery, Battery, BatteryConfig, DeterministicRating};
pub use fingerprint::{generate_fingerprints, ExpectedSpecificity, FingerprintSet, FingerprintSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub sigma2: Components<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub missing_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub fingerprint: Option<FingerprintSpec>,
    #[serde(default = "default_norm")]
    pub norm: String,
}

fn default_norm() -> String {
    "synthetic".into()
}

impl GeneratorConfig {
    pub fn new(i: usize, j: usize, k: usize, sigma2: [f64; 4], seed: u64) -> Self {
        GeneratorConfig {
            i,
            j,
            k,
            sigma2: Components::from_array(sigma2),
            mu: 0.0,
            missing_rate: 0.0,
            seed,
            fingerprint: None,
            norm: default_norm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.i < 2 || self.j < 2 || self.k < 1 {
            return bad(format!("need I ≥ 2, J ≥ 2, K ≥ 1; got {} × {} × {}", self.i, self.j, self.k));
        }
        if self.i > u32::MAX as usize || self.j > u32::MAX as usize {
            return bad("level counts exceed u32".into());
        }
        if !(self.sigma2.residual > 0.0) {
            return bad("residual variance must be positive".into());
        }
        if self.sigma2.to_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("variance components must be finite and non-negative".into());
        }
        if !(0.0..0.5).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} outside [0, 0.5)", self.missing_rate));
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        Ok(())
    }
}

/// Realized draws behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: GeneratorConfig,
    pub generator_version: u32,
    /// Sample variances (n − 1 divisor) of the realized effects on the
    /// retained design.
    pub realized_sigma2: Components<f64>,
    pub realized_proportions: Components<f64>,
    pub n_obs: usize,
    pub n_cells: usize,
    pub deleted_cells: usize,
    pub tau: Vec<f64>,
    pub beta: Vec<f64>,
    /// Row-major word × model grid, including deleted cells.
    #[serde(skip)]
    pub iota: Vec<f64>,
}

impl Truth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

pub fn word_label(i: usize, n: usize) -> String {
    format!("w{:0width$}", i, width = n.saturating_sub(1).to_string().len())
}

pub fn model_label(j: usize, n: usize) -> String {
    format!("m{:0width$}", j, width = n.saturating_sub(1).to_string().len())
}

struct WordBlock {
    obs: Vec<Observation>,
    iota: Vec<f64>,
    eps: Vec<f64>,
    deleted: usize,
}

/// Draw a dataset from `y = μ + τ_i + β_j + ι_ij + ε_ijk`.
///
/// Word effects, model effects and each word's cells come from separate
/// streams, so the draws for a cell do not depend on the missingness
/// pattern or on parallel scheduling. A word or model left without any
/// cell has one deleted cell restored.
pub fn generate(config: &GeneratorConfig) -> Result<(CrossedDataset, Truth)> {
    config.validate()?;
    let (ni, nj, nk) = (config.i, config.j, config.k);
    let s2 = config.sigma2;
    let mut g = normals(config.seed, stream_id(domain::WORD_EFFECTS, 0, 0));
    let tau: Vec<f64> = (0..ni).map(|_| g.normal(s2.tau)).collect();
    let mut g = normals(config.seed, stream_id(domain::MODEL_EFFECTS, 0, 0));
    let beta: Vec<f64> = (0..nj).map(|_| g.normal(s2.beta)).collect();

    let mut blocks: Vec<WordBlock> = (0..ni)
        .into_par_iter()
        .map(|i| {
            let mut cells = normals(config.seed, stream_id(domain::CELLS, i as u32, 0));
            let mut miss = normals(config.seed, stream_id(domain::MISSING, i as u32, 0));
            let mut block = WordBlock {
                obs: Vec::with_capacity(nj * nk),
                iota: Vec::with_capacity(nj),
                eps: Vec::with_capacity(nj * nk),
                deleted: 0,
            };
            for (j, b) in beta.iter().enumerate() {
                let iota = cells.normal(s2.iota);
                block.iota.push(iota);
                let drop = config.missing_rate > 0.0 && miss.uniform() < config.missing_rate;
                for k in 0..nk {
                    let e = cells.normal(s2.residual);
                    if !drop {
                        block.eps.push(e);
                        block.obs.push(Observation {
                            word: i as u32,
                            model: j as u32,
                            rep: k as u32 + 1,
                            value: config.mu + tau[i] + b + iota + e,
                        });
                    }
                }
                if drop {
                    block.deleted += 1;
                }
            }
            block
        })
        .collect();

    restore_empty_levels(config, &tau, &beta, &mut blocks);

    let iota_grid: Vec<f64> = blocks.iter().flat_map(|b| b.iota.iter().copied()).collect();
    let deleted_cells = blocks.iter().map(|b| b.deleted).sum();
    let retained_iota: Vec<f64> = blocks
        .iter()
        .flat_map(|b| {
            let mut seen = Vec::new();
            let mut last = None;
            for o in &b.obs {
                if last != Some(o.model) {
                    seen.push(b.iota[o.model as usize]);
                    last = Some(o.model);
                }
            }
            seen
        })
        .collect();
    let realized_sigma2 = Components::new(
        sample_variance(tau.iter().copied()),
        sample_variance(beta.iter().copied()),
        sample_variance(retained_iota.iter().copied()),
        sample_variance(blocks.iter().flat_map(|b| b.eps.iter().copied())),
    );
    let observations: Vec<Observation> = blocks.into_iter().flat_map(|b| b.obs).collect();
    let n_obs = observations.len();
    let data = CrossedDataset::new(
        config.norm.clone(),
        (0..ni).map(|i| word_label(i, ni)).collect(),
        (0..nj).map(|j| model_label(j, nj)).collect(),
        observations,
    )?;
    let truth = Truth {
        config: config.clone(),
        generator_version: NORMAL_GENERATOR_VERSION,
        realized_proportions: variance_proportions(&realized_sigma2).unwrap_or(Components::new(0.0, 0.0, 0.0, 1.0)),
        realized_sigma2,
        n_obs,
        n_cells: retained_iota.len(),
        deleted_cells,
        tau,
        beta,
        iota: iota_grid,
    };
    Ok((data, truth))
}

/// Undo deletions that would leave a factor level unobserved. The restored
/// cell reuses its originally drawn interaction and fresh residuals from a
/// dedicated stream.
fn restore_empty_levels(config: &GeneratorConfig, tau: &[f64], beta: &[f64], blocks: &mut [WordBlock]) {
    if config.missing_rate == 0.0 {
        return;
    }
    let restore = |i: usize, j: usize, block: &mut WordBlock| {
        let mut g = normals(config.seed, stream_id(domain::MISSING, i as u32, 1 + j as u16));
        let mut new_obs: Vec<Observation> = (0..config.k)
            .map(|k| {
                let e = g.normal(config.sigma2.residual);
                block.eps.push(e);
                Observation {
                    word: i as u32,
                    model: j as u32,
                    rep: k as u32 + 1,
                    value: config.mu + tau[i] + beta[j] + block.iota[j] + e,
                }
            })
            .collect();
        block.obs.append(&mut new_obs);
        block.obs.sort_by_key(|o| (o.model, o.rep));
        block.deleted -= 1;
    };
    for (i, block) in blocks.iter_mut().enumerate() {
        if block.obs.is_empty() {
            restore(i, 0, block);
        }
    }
    for j in 0..config.j {
        if !blocks.iter().any(|b| b.obs.iter().any(|o| o.model == j as u32)) {
            restore(0, j, &mut blocks[0]);
        }
    }
}
