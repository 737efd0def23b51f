//! End-to-end run on a synthetic battery.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DimensionGrouping, NullSummary, ReportBundle};
use crate::alignment::{align_models, HumanNormTable, NormRatings};
use crate::dataset::CrossedDataset;
use crate::error::{Error, Result};
use crate::lmm::{blups, fit, BlupTable, FitOptions, VarianceFit};
use crate::nullsim::{run_null_test, NullOptions};
use crate::rng::{derive_seed, domain};
use crate::specificity::{
    raw_rating_specificity, scores_from_blups, specificity_analysis, MeanRatings, RidgeOptions, MIN_SHARED_WORDS,
};
use crate::synth::{generate_battery, Battery, BatteryConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Its `seed` is replaced by one derived from `root_seed`.
    pub battery: BatteryConfig,
    pub null_iterations: usize,
    pub folds: usize,
    pub root_seed: u64,
    pub workers: usize,
}

impl PipelineConfig {
    pub fn new(battery: BatteryConfig, root_seed: u64) -> Self {
        PipelineConfig { battery, null_iterations: 100, folds: 5, root_seed, workers: 1 }
    }
}

/// Everything the run produced, for callers that write per-step files.
pub struct PipelineOutput {
    pub battery: Battery,
    pub fits: Vec<VarianceFit<f64>>,
    pub blups: Vec<BlupTable<f64>>,
    pub bundle: ReportBundle,
}

fn mean_ratings(d: &CrossedDataset) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: MeanRatings = BTreeMap::new();
    for m in d.cell_means() {
        out.entry(m.model).or_default().insert(m.word, m.mean);
    }
    out
}

/// simulate → fit → null test → BLUPs → specificity → alignment → report.
///
/// Every random draw comes from streams derived from `root_seed`, and
/// results are gathered in norm and model order, so the bundle does not
/// depend on `workers`.
pub fn run_synthetic(config: &PipelineConfig) -> Result<PipelineOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(config))
}

fn run_inner(config: &PipelineConfig) -> Result<PipelineOutput> {
    let root = config.root_seed;
    let mut battery_config = config.battery.clone();
    battery_config.seed = derive_seed(root, domain::WORD_EFFECTS, 0);
    let battery = generate_battery(&battery_config)?;
    let opts = FitOptions::<f64>::default();

    let fits: Vec<VarianceFit<f64>> = battery.datasets.par_iter().map(|d| fit(d, &opts)).collect::<Result<_>>()?;

    let null_opts = NullOptions { workers: config.workers.max(1), ..NullOptions::default() };
    let mut null_tests = Vec::new();
    if config.null_iterations > 0 {
        for (n, (d, f)) in battery.datasets.iter().zip(&fits).enumerate() {
            let seed = derive_seed(root, domain::NULL_SIMULATION, n as u32);
            let r = run_null_test(d, f, config.null_iterations, seed, &null_opts)?;
            null_tests.push(NullSummary::of(&r));
        }
    }

    let tables: Vec<BlupTable<f64>> =
        battery.datasets.iter().zip(&fits).map(|(d, f)| blups(d, f)).collect::<Result<_>>()?;

    let ridge =
        RidgeOptions { folds: config.folds, seed: derive_seed(root, domain::FOLDS, 0), ..RidgeOptions::default() };
    let (specificity, specificity_raw) = if battery.datasets.len() >= 2 && battery_config.n_words >= MIN_SHARED_WORDS {
        let from_blups = specificity_analysis::<f64>(&scores_from_blups(&tables), &ridge)?;
        let raw: BTreeMap<String, MeanRatings> =
            battery.datasets.iter().map(|d| (d.norm().to_string(), mean_ratings(d))).collect();
        (from_blups, raw_rating_specificity::<f64>(&raw, &ridge)?)
    } else {
        log::warn!("specificity skipped: needs ≥ 2 norms and ≥ {MIN_SHARED_WORDS} words");
        (Vec::new(), Vec::new())
    };

    let mut ratings = BTreeMap::new();
    let mut humans = Vec::new();
    for ((d, det), human) in battery.datasets.iter().zip(&battery.deterministic).zip(&battery.human) {
        let mut deterministic: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for r in det {
            deterministic.entry(r.model.clone()).or_default().insert(r.word.clone(), r.value);
        }
        ratings.insert(d.norm().to_string(), NormRatings { stochastic: mean_ratings(d), deterministic });
        humans.push(HumanNormTable::new(d.norm(), human.iter().map(|(w, v)| (w.clone(), *v)))?);
    }
    let alignment = align_models::<f64>(&ratings, &humans, &BTreeMap::new())?;

    let mut bundle = ReportBundle::empty(Some(root));
    bundle.fits = fits.clone();
    bundle.null_tests = null_tests;
    bundle.specificity = specificity;
    bundle.specificity_raw = specificity_raw;
    bundle.alignment = alignment;
    bundle.aggregate(&DimensionGrouping::standard(&battery_config.norms));
    Ok(PipelineOutput { battery, fits, blups: tables, bundle })
}
