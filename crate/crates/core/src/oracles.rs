//! Brute-force references for validating the sparse fitter: an explicit
//! dense-covariance REML/GLS/BLUP evaluator and the balanced two-way
//! ANOVA method-of-moments estimator.

use crate::dataset::CrossedDataset;
use crate::error::{Error, Result};
use crate::lmm::Components;
use crate::scalar::Real;

/// Largest problem the dense evaluator accepts.
pub const DENSE_MAX_OBS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOracleResult<T> {
    /// `log|V| + log|1'V⁻¹1| + r'V⁻¹r + (n−1)·log 2π`
    pub reml_deviance: T,
    /// `log|V| + r'V⁻¹r + n·log 2π`, with μ at its GLS estimate.
    pub ml_deviance: T,
    pub mu_gls: T,
    pub tau: Vec<T>,
    pub beta: Vec<T>,
    /// One entry per observed cell, in (word, model) order.
    pub iota: Vec<((u32, u32), T)>,
}

/// Lower Cholesky factor of a dense symmetric matrix stored row-major.
fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve `L L' x = b`.
fn solve<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[k * n + i] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    z
}

/// Evaluate the REML deviance, GLS intercept and BLUPs from the explicit
/// marginal covariance `V = ZGZ' + σ²_ε I`.
pub fn dense_reml<T: Real>(data: &CrossedDataset, sigma2: &Components<T>) -> Result<DenseOracleResult<T>> {
    let obs = data.observations();
    let n = obs.len();
    if n > DENSE_MAX_OBS {
        return Err(Error::InvalidInput(format!("dense oracle limited to {DENSE_MAX_OBS} observations, got {n}")));
    }
    let mut v = vec![T::zero(); n * n];
    for (p, a) in obs.iter().enumerate() {
        for (q, b) in obs.iter().enumerate() {
            let mut x = T::zero();
            if a.word == b.word {
                x += sigma2.tau;
            }
            if a.model == b.model {
                x += sigma2.beta;
            }
            if a.word == b.word && a.model == b.model {
                x += sigma2.iota;
            }
            if p == q {
                x += sigma2.residual;
            }
            v[p * n + q] = x;
        }
    }
    let l = cholesky(&v, n).ok_or_else(|| Error::Numerical("marginal covariance V is singular".into()))?;
    let logdet_v = (0..n).map(|i| l[i * n + i].ln()).sum::<T>() * T::of(2.0);
    let y: Vec<T> = obs.iter().map(|o| T::of(o.value)).collect();
    let vinv_one = solve(&l, n, &vec![T::one(); n]);
    let vinv_y = solve(&l, n, &y);
    let one_vinv_one: T = vinv_one.iter().copied().sum();
    let mu = vinv_y.iter().copied().sum::<T>() / one_vinv_one;
    let r: Vec<T> = y.iter().map(|&yi| yi - mu).collect();
    let vinv_r = solve(&l, n, &r);
    let quad: T = r.iter().zip(&vinv_r).map(|(a, b)| *a * *b).sum();
    let ln_2pi = T::TAU().ln();
    let reml_deviance = logdet_v + one_vinv_one.ln() + quad + T::of_usize(n - 1) * ln_2pi;
    let ml_deviance = logdet_v + quad + T::of_usize(n) * ln_2pi;

    let mut tau = vec![T::zero(); data.n_words()];
    let mut beta = vec![T::zero(); data.n_models()];
    let mut iota: Vec<((u32, u32), T)> = Vec::new();
    for (o, w) in obs.iter().zip(&vinv_r) {
        tau[o.word as usize] += sigma2.tau * *w;
        beta[o.model as usize] += sigma2.beta * *w;
        match iota.last_mut() {
            Some((key, acc)) if *key == (o.word, o.model) => *acc += sigma2.iota * *w,
            _ => iota.push(((o.word, o.model), sigma2.iota * *w)),
        }
    }
    Ok(DenseOracleResult { reml_deviance, ml_deviance, mu_gls: mu, tau, beta, iota })
}

/// Sums of squares of the balanced two-way layout with replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaTable<T> {
    pub ss_words: T,
    pub ss_models: T,
    pub ss_interaction: T,
    pub ss_error: T,
    pub ss_total: T,
    pub ms_words: T,
    pub ms_models: T,
    pub ms_interaction: T,
    pub ms_error: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaEstimates<T> {
    /// Untruncated: components may be negative.
    pub sigma2: Components<T>,
    pub table: AnovaTable<T>,
}

impl<T: Real> AnovaEstimates<T> {
    /// All four estimates strictly positive.
    pub fn is_interior(&self) -> bool {
        self.sigma2.to_array().iter().all(|v| *v > T::zero())
    }
}

/// Expected-mean-squares estimator for a balanced design with K ≥ 2
/// replicates in every cell.
pub fn anova_mom<T: Real>(data: &CrossedDataset) -> Result<AnovaEstimates<T>> {
    let k = data
        .balanced_reps()
        .ok_or_else(|| Error::InvalidInput("ANOVA estimator needs a fully balanced design".into()))?;
    if k < 2 {
        return Err(Error::InvalidInput("ANOVA estimator needs at least 2 replicates per cell".into()));
    }
    let (ni, nj) = (data.n_words(), data.n_models());
    let (fi, fj, fk) = (T::of_usize(ni), T::of_usize(nj), T::of_usize(k));
    let obs = data.observations();
    let grand = obs.iter().map(|o| T::of(o.value)).sum::<T>() / T::of_usize(obs.len());
    let mut cell = vec![T::zero(); ni * nj];
    for o in obs {
        cell[o.word as usize * nj + o.model as usize] += T::of(o.value) - grand;
    }
    cell.iter_mut().for_each(|c| *c /= fk);
    let mut row = vec![T::zero(); ni];
    let mut col = vec![T::zero(); nj];
    for i in 0..ni {
        for j in 0..nj {
            row[i] += cell[i * nj + j] / fj;
            col[j] += cell[i * nj + j] / fi;
        }
    }
    // means are of centred data, so the grand mean is zero up to rounding
    let centre = row.iter().copied().sum::<T>() / fi;
    let ss_words = fj * fk * row.iter().map(|r| (*r - centre) * (*r - centre)).sum::<T>();
    let ss_models = fi * fk * col.iter().map(|c| (*c - centre) * (*c - centre)).sum::<T>();
    let mut ss_interaction = T::zero();
    for i in 0..ni {
        for j in 0..nj {
            let d = cell[i * nj + j] - row[i] - col[j] + centre;
            ss_interaction += d * d;
        }
    }
    ss_interaction *= fk;
    let mut ss_error = T::zero();
    let mut ss_total = T::zero();
    for o in obs {
        let y = T::of(o.value) - grand;
        let d = y - cell[o.word as usize * nj + o.model as usize];
        ss_error += d * d;
        ss_total += (y - centre) * (y - centre);
    }
    let one = T::one();
    let ms_words = ss_words / (fi - one);
    let ms_models = ss_models / (fj - one);
    let ms_interaction = ss_interaction / ((fi - one) * (fj - one));
    let ms_error = ss_error / (fi * fj * (fk - one));
    Ok(AnovaEstimates {
        sigma2: Components::new(
            (ms_words - ms_interaction) / (fk * fj),
            (ms_models - ms_interaction) / (fk * fi),
            (ms_interaction - ms_error) / fk,
            ms_error,
        ),
        table: AnovaTable {
            ss_words,
            ss_models,
            ss_interaction,
            ss_error,
            ss_total,
            ms_words,
            ms_models,
            ms_interaction,
            ms_error,
        },
    })
}
