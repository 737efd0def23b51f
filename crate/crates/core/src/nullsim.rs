//! Parametric bootstrap of the interaction variance under a no-interaction
//! null.
//!
//! Each iteration draws fresh word and model effects and residuals from
//! the fitted variances on the observed design (same cells, same
//! repetition counts), refits the full model from the default start, and
//! records the null interaction variance. Iteration `k`, attempt `a` draws
//! from stream `stream_id(NULL_SIMULATION, k, a)` of the root seed, so the
//! output does not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CrossedDataset;
use crate::error::{Error, Result};
use crate::lmm::{fit_design, Design, FitOptions, VarianceFit};
use crate::rng::{domain, normals, stream_id};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullOptions<T> {
    pub workers: usize,
    /// Report `(k + 1) / (N + 1)` instead of the plain proportion `k / N`.
    pub conservative: bool,
    pub fit: FitOptions<T>,
}

impl<T: Real> Default for NullOptions<T> {
    fn default() -> Self {
        NullOptions { workers: 1, conservative: false, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTestResult<T> {
    pub norm: String,
    pub n_iter: usize,
    pub observed: T,
    pub p_value: T,
    #[serde(default)]
    pub conservative: bool,
    /// Null interaction variances of the successful iterations, by index.
    pub null_values: Vec<T>,
    /// Null interaction variance as a share of each null fit's total.
    pub null_proportions: Vec<T>,
    pub root_seed: u64,
    /// Indices excluded after a failed retry.
    pub failed_iterations: Vec<usize>,
}

impl<T: Real> NullTestResult<T> {
    pub fn n_ok(&self) -> usize {
        self.null_values.len()
    }

    /// Number of null values at or above the observed one.
    pub fn exceedances(&self) -> usize {
        self.null_values.iter().filter(|v| **v >= self.observed).count()
    }
}

/// `#{null ≥ observed} / N`, or `(k + 1) / (N + 1)` when conservative.
pub fn p_value<T: Real>(observed: T, null: &[T], conservative: bool) -> Result<T> {
    if null.is_empty() {
        return Err(Error::Numerical("no successful null iterations".into()));
    }
    let k = null.iter().filter(|v| **v >= observed).count();
    Ok(if conservative {
        T::of_usize(k + 1) / T::of_usize(null.len() + 1)
    } else {
        T::of_usize(k) / T::of_usize(null.len())
    })
}

/// Observed cell layout shared by all iterations.
struct Layout {
    n_words: usize,
    n_models: usize,
    cells: Vec<(u32, u32, u32)>,
}

impl Layout {
    fn of(data: &CrossedDataset) -> Self {
        Layout {
            n_words: data.n_words(),
            n_models: data.n_models(),
            cells: data.cells().into_iter().map(|((i, j), n)| (i, j, n as u32)).collect(),
        }
    }

    /// One null draw, reduced to cell sums and the within-cell SS.
    fn simulate<T: Real>(&self, fit: &VarianceFit<T>, root_seed: u64, index: usize, attempt: u16) -> Design<T> {
        let mut g = normals(root_seed, stream_id(domain::NULL_SIMULATION, index as u32, attempt));
        let s2 = fit.sigma2.map(|v| v.to_f64_lossy().max(0.0));
        let mu = fit.mu_hat.to_f64_lossy();
        let tau: Vec<f64> = (0..self.n_words).map(|_| g.normal(s2.tau)).collect();
        let beta: Vec<f64> = (0..self.n_models).map(|_| g.normal(s2.beta)).collect();
        let mut sums = Vec::with_capacity(self.cells.len());
        let mut within = 0.0f64;
        let mut buf = Vec::new();
        for &(i, j, n) in &self.cells {
            let mean = mu + tau[i as usize] + beta[j as usize];
            buf.clear();
            buf.extend((0..n).map(|_| mean + g.normal(s2.residual)));
            let sum: f64 = buf.iter().sum();
            let cell_mean = sum / n as f64;
            within += buf.iter().map(|y| (y - cell_mean) * (y - cell_mean)).sum::<f64>();
            sums.push(T::of(sum));
        }
        Design::from_cell_totals(self.n_words, self.n_models, &self.cells, &sums, T::of(within))
    }
}

enum Outcome<T> {
    Ok { iota: T, proportion: T },
    Failed,
}

fn iteration<T: Real>(
    layout: &Layout,
    fit: &VarianceFit<T>,
    seed: u64,
    index: usize,
    opts: &FitOptions<T>,
) -> Outcome<T> {
    for attempt in 0..2u16 {
        let design = layout.simulate(fit, seed, index, attempt);
        match fit_design(&design, opts) {
            Ok(core) if core.converged => {
                let total = core.sigma2.total();
                let proportion = if total > T::zero() { core.sigma2.iota / total } else { T::zero() };
                return Outcome::Ok { iota: core.sigma2.iota, proportion };
            }
            Ok(_) => log::warn!("null iteration {index} attempt {attempt}: refit did not converge"),
            Err(e) => log::warn!("null iteration {index} attempt {attempt}: {e}"),
        }
    }
    Outcome::Failed
}

/// Run `n_iter` null iterations against the observed interaction variance.
pub fn run_null_test<T: Real>(
    data: &CrossedDataset,
    fit: &VarianceFit<T>,
    n_iter: usize,
    root_seed: u64,
    opts: &NullOptions<T>,
) -> Result<NullTestResult<T>> {
    if n_iter == 0 {
        return Err(Error::InvalidInput("n_iter must be at least 1".into()));
    }
    if n_iter > u32::MAX as usize {
        return Err(Error::InvalidInput("n_iter exceeds the stream index range".into()));
    }
    if fit.norm != data.norm() || fit.n_obs != data.n_obs() {
        return Err(Error::InvalidInput(format!(
            "fit for `{}` ({} obs) does not describe dataset `{}` ({} obs)",
            fit.norm,
            fit.n_obs,
            data.norm(),
            data.n_obs()
        )));
    }
    if !fit.converged {
        log::warn!("null test for `{}` uses a fit that did not converge", fit.norm);
    }
    let layout = Layout::of(data);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Outcome<T>> = pool
        .install(|| (0..n_iter).into_par_iter().map(|k| iteration(&layout, fit, root_seed, k, &opts.fit)).collect());
    let mut null_values = Vec::with_capacity(n_iter);
    let mut null_proportions = Vec::with_capacity(n_iter);
    let mut failed_iterations = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Ok { iota, proportion } => {
                null_values.push(iota);
                null_proportions.push(proportion);
            }
            Outcome::Failed => failed_iterations.push(k),
        }
    }
    if !failed_iterations.is_empty() {
        log::warn!("{} of {n_iter} null iterations failed and were excluded", failed_iterations.len());
    }
    let observed = fit.sigma2.iota;
    let p = p_value(observed, &null_values, opts.conservative)?;
    Ok(NullTestResult {
        norm: fit.norm.clone(),
        n_iter,
        observed,
        p_value: p,
        conservative: opts.conservative,
        null_values,
        null_proportions,
        root_seed,
        failed_iterations,
    })
}
