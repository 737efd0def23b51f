//! Cross-norm specificity of per-word interaction fingerprints.
//!
//! For each model and held-out norm, the held-out values are predicted from
//! the remaining norms by cross-validated ridge regression, once from the
//! model's own matrix (within) and once from every other model's matrix
//! (cross). The ratio of within to mean cross R² measures how
//! model-specific the fingerprints are.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::read_cell_means;
use crate::error::{Error, Result};
use crate::lmm::{read_iota, BlupTable};
use crate::rng::{domain, normals, stream_id};
use crate::scalar::Real;

/// `model → norm → word → value`.
pub type WordScores = BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>;

/// Fewest shared words a (model, model) comparison needs.
pub const MIN_SHARED_WORDS: usize = 50;

/// 13 log-spaced penalties from 1e-3 to 1e3.
pub fn lambda_grid<T: Real>() -> Vec<T> {
    (0..13).map(|k| T::of(10f64.powf(-3.0 + 0.5 * k as f64))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions { folds: 5, inner_folds: 5, seed: 0 }
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged predictor rows".into()));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Running sums over a set of rows.
#[derive(Debug, Clone)]
struct Moments<T> {
    n: usize,
    sx: Vec<T>,
    sxx: Vec<T>,
    sy: T,
    sxy: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn zero(p: usize) -> Self {
        Moments { n: 0, sx: vec![T::zero(); p], sxx: vec![T::zero(); p * p], sy: T::zero(), sxy: vec![T::zero(); p] }
    }

    fn add_row(&mut self, x: &[T], y: T) {
        let p = x.len();
        self.n += 1;
        self.sy += y;
        for a in 0..p {
            self.sx[a] += x[a];
            self.sxy[a] += x[a] * y;
            for b in a..p {
                self.sxx[a * p + b] += x[a] * x[b];
            }
        }
    }

    fn minus(&self, other: &Self) -> Self {
        let sub = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| *x - *y).collect::<Vec<T>>();
        Moments {
            n: self.n - other.n,
            sx: sub(&self.sx, &other.sx),
            sxx: sub(&self.sxx, &other.sxx),
            sy: self.sy - other.sy,
            sxy: sub(&self.sxy, &other.sxy),
        }
    }

    fn plus(&self, other: &Self) -> Self {
        let add = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| *x + *y).collect::<Vec<T>>();
        Moments {
            n: self.n + other.n,
            sx: add(&self.sx, &other.sx),
            sxx: add(&self.sxx, &other.sxx),
            sy: self.sy + other.sy,
            sxy: add(&self.sxy, &other.sxy),
        }
    }
}

/// Ridge fit on z-scored predictors from training moments. Predicts
/// `ȳ + Σ b_k (x_k − x̄_k) / s_k`; z-scoring the target as well would
/// rescale `b` by `s_y` and leave predictions unchanged.
struct RidgeModel<T> {
    mean_x: Vec<T>,
    inv_sd: Vec<T>,
    mean_y: T,
    coef: Vec<T>,
}

impl<T: Real> RidgeModel<T> {
    fn fit(m: &Moments<T>, lambda: T) -> Self {
        let p = m.sx.len();
        let n = T::of_usize(m.n);
        let mean_x: Vec<T> = m.sx.iter().map(|s| *s / n).collect();
        let mean_y = m.sy / n;
        let cov = |a: usize, b: usize| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            m.sxx[lo * p + hi] - n * mean_x[a] * mean_x[b]
        };
        let inv_sd: Vec<T> = (0..p)
            .map(|a| {
                let v = cov(a, a) / n;
                if v > T::epsilon() * T::of(16.0) * (T::one() + mean_x[a] * mean_x[a]) {
                    T::one() / v.sqrt()
                } else {
                    T::zero()
                }
            })
            .collect();
        let mut g = vec![T::zero(); p * p];
        let mut r = vec![T::zero(); p];
        for a in 0..p {
            r[a] = (m.sxy[a] - n * mean_x[a] * mean_y) * inv_sd[a];
            for b in 0..p {
                g[a * p + b] = cov(a, b) * inv_sd[a] * inv_sd[b];
            }
            g[a * p + a] += lambda;
        }
        let coef = solve_spd(&mut g, &r, p);
        RidgeModel { mean_x, inv_sd, mean_y, coef }
    }

    fn predict(&self, x: &[T]) -> T {
        let mut v = self.mean_y;
        for k in 0..x.len() {
            v += self.coef[k] * (x[k] - self.mean_x[k]) * self.inv_sd[k];
        }
        v
    }
}

/// Cholesky solve of a symmetric positive definite system in place.
fn solve_spd<T: Real>(a: &mut [T], b: &[T], p: usize) -> Vec<T> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        let d = d.max(T::min_positive_value()).sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            z[i] = z[i] - a[i * p + k] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] = z[i] - a[k * p + i] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    z
}

/// Fold of each row: rows are ordered by `keys`, shuffled with the seed,
/// and dealt round-robin.
pub fn fold_assignment<K: Ord>(keys: &[K], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|a, b| keys[*a].cmp(&keys[*b]));
    normals(seed, stream_id(domain::FOLDS, 0, 0)).shuffle(&mut order);
    let mut fold = vec![0; keys.len()];
    for (pos, row) in order.into_iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

/// Pooled out-of-sample R² of ridge regression under nested
/// cross-validation.
///
/// `fold[r]` is the outer fold of row `r`. Within each outer training split
/// the penalty is chosen from [`lambda_grid`] by `inner_folds`-fold CV over
/// contiguous blocks of the training rows (ties go to the larger penalty).
/// The result is `1 − SSE / SST`, with SST taken about each fold's training
/// mean of the target.
pub fn ridge_cv_r2_with_folds<T: Real>(
    targets: &[T],
    predictors: &Matrix<T>,
    fold: &[usize],
    folds: usize,
    inner_folds: usize,
) -> Result<T> {
    let n = targets.len();
    if predictors.rows != n || fold.len() != n {
        return Err(Error::InvalidInput("targets, predictors and folds differ in length".into()));
    }
    if folds < 2 || inner_folds < 2 {
        return Err(Error::InvalidInput("need at least 2 outer and 2 inner folds".into()));
    }
    let mean = targets.iter().copied().sum::<T>() / T::of_usize(n.max(1));
    if n < 2 || targets.iter().all(|t| *t == targets[0]) {
        return Err(Error::Undefined("target has zero variance; R² is undefined".into()));
    }
    let p = predictors.cols;
    // shift by global means so moment differences do not cancel
    let col_mean: Vec<T> = (0..p).map(|k| (0..n).map(|r| predictors.row(r)[k]).sum::<T>() / T::of_usize(n)).collect();
    let xs: Vec<Vec<T>> =
        (0..n).map(|r| predictors.row(r).iter().zip(&col_mean).map(|(x, m)| *x - *m).collect()).collect();
    let ys: Vec<T> = targets.iter().map(|y| *y - mean).collect();
    let grid = lambda_grid::<T>();

    let mut sse = T::zero();
    let mut sst = T::zero();
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&r| fold[r] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&r| fold[r] == f).collect();
        if test.is_empty() {
            continue;
        }
        if train.len() < inner_folds {
            return Err(Error::InvalidInput(format!("fold {f} leaves too few training rows")));
        }
        // inner blocks over the training rows in order
        let block_of = |pos: usize| pos * inner_folds / train.len();
        let mut blocks = vec![Moments::zero(p); inner_folds];
        for (pos, &r) in train.iter().enumerate() {
            blocks[block_of(pos)].add_row(&xs[r], ys[r]);
        }
        let total = blocks.iter().skip(1).fold(blocks[0].clone(), |acc, b| acc.plus(b));
        let mut best = (T::infinity(), grid[0]);
        for &lambda in &grid {
            let mut err = T::zero();
            for (b, block) in blocks.iter().enumerate() {
                let model = RidgeModel::fit(&total.minus(block), lambda);
                for (pos, &r) in train.iter().enumerate() {
                    if block_of(pos) == b {
                        let d = ys[r] - model.predict(&xs[r]);
                        err += d * d;
                    }
                }
            }
            if err <= best.0 {
                best = (err, lambda);
            }
        }
        let model = RidgeModel::fit(&total, best.1);
        let train_mean = total.sy / T::of_usize(total.n);
        for &r in &test {
            let d = ys[r] - model.predict(&xs[r]);
            sse += d * d;
            let c = ys[r] - train_mean;
            sst += c * c;
        }
    }
    if !(sst > T::zero()) {
        return Err(Error::Undefined("held-out targets have zero spread about the training means".into()));
    }
    Ok(T::one() - sse / sst)
}

/// [`ridge_cv_r2_with_folds`] with folds drawn from the seed over the
/// sorted word keys.
pub fn ridge_cv_r2<T: Real>(words: &[String], targets: &[T], predictors: &Matrix<T>, opts: &RidgeOptions) -> Result<T> {
    if words.len() < MIN_SHARED_WORDS {
        return Err(Error::InvalidInput(format!(
            "ridge CV needs at least {MIN_SHARED_WORDS} words, got {}",
            words.len()
        )));
    }
    let fold = fold_assignment(words, opts.folds, opts.seed);
    ridge_cv_r2_with_folds(targets, predictors, &fold, opts.folds, opts.inner_folds)
}

/// A model's word × norm matrix over the words present on every norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMatrix<T> {
    pub model: String,
    pub norms: Vec<String>,
    pub words: Vec<String>,
    /// `values[word][norm]`
    pub values: Vec<Vec<T>>,
}

impl<T: Real> FingerprintMatrix<T> {
    pub fn build(model: &str, per_norm: &BTreeMap<String, BTreeMap<String, f64>>, norms: &[String]) -> Result<Self> {
        let mut vocab: Option<BTreeSet<&String>> = None;
        for norm in norms {
            let words = per_norm
                .get(norm)
                .ok_or_else(|| Error::InvalidInput(format!("model `{model}` has no values for norm `{norm}`")))?;
            let set: BTreeSet<&String> = words.keys().collect();
            vocab = Some(match vocab {
                None => set,
                Some(v) => v.intersection(&set).copied().collect(),
            });
        }
        let words: Vec<String> = vocab.unwrap_or_default().into_iter().cloned().collect();
        let values = words.iter().map(|w| norms.iter().map(|n| T::of(per_norm[n][w])).collect()).collect();
        Ok(FingerprintMatrix { model: model.to_string(), norms: norms.to_vec(), words, values })
    }

    fn word_index(&self) -> BTreeMap<&str, usize> {
        self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpecificity<T> {
    pub norm: String,
    pub within_r2: T,
    pub cross_r2: BTreeMap<String, T>,
    /// `within / mean(cross)`; absent unless the mean cross R² is positive.
    pub ratio: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityResult<T> {
    pub model: String,
    pub per_norm: Vec<NormSpecificity<T>>,
    /// Mean of the defined per-norm ratios.
    pub mean_ratio: Option<T>,
    pub vocab_size: usize,
}

/// Within- and cross-model R² for every (model, held-out norm).
pub fn specificity_analysis<T: Real>(scores: &WordScores, opts: &RidgeOptions) -> Result<Vec<SpecificityResult<T>>> {
    let norms: Vec<String> =
        scores.values().flat_map(|m| m.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    if norms.len() < 2 {
        return Err(Error::InvalidInput("need at least two norms".into()));
    }
    if scores.len() < 2 {
        return Err(Error::InvalidInput("need at least two models".into()));
    }
    let mut matrices: Vec<FingerprintMatrix<T>> = scores
        .iter()
        .map(|(model, per_norm)| FingerprintMatrix::build(model, per_norm, &norms))
        .collect::<Result<_>>()?;
    matrices.retain(|m| {
        let keep = m.words.len() >= MIN_SHARED_WORDS;
        if !keep {
            log::warn!("model `{}` left out: {} words on every norm (need {MIN_SHARED_WORDS})", m.model, m.words.len());
        }
        keep
    });
    if matrices.is_empty() {
        return Err(Error::InvalidInput(format!("no model has {MIN_SHARED_WORDS} words on every norm")));
    }
    let tasks: Vec<(usize, usize)> = (0..matrices.len()).flat_map(|m| (0..norms.len()).map(move |k| (m, k))).collect();
    let cells: Vec<Result<NormSpecificity<T>>> =
        tasks.par_iter().map(|&(m, k)| held_out(&matrices, m, k, opts)).collect();
    let mut out = Vec::with_capacity(matrices.len());
    let mut cells = cells.into_iter();
    for mat in &matrices {
        let per_norm: Vec<NormSpecificity<T>> =
            (0..norms.len()).map(|_| cells.next().expect("one task per model and norm")).collect::<Result<_>>()?;
        let ratios: Vec<T> = per_norm.iter().filter_map(|r| r.ratio).collect();
        let mean_ratio = (!ratios.is_empty()).then(|| ratios.iter().copied().sum::<T>() / T::of_usize(ratios.len()));
        out.push(SpecificityResult { model: mat.model.clone(), per_norm, mean_ratio, vocab_size: mat.words.len() });
    }
    Ok(out)
}

fn split_columns<T: Real>(rows: &[&Vec<T>], k: usize) -> (Vec<T>, Matrix<T>) {
    let targets = rows.iter().map(|r| r[k]).collect();
    let p = rows.first().map_or(0, |r| r.len() - 1);
    let mut data = Vec::with_capacity(rows.len() * p);
    for r in rows {
        data.extend(r.iter().enumerate().filter(|(c, _)| *c != k).map(|(_, v)| *v));
    }
    (targets, Matrix { rows: rows.len(), cols: p, data })
}

fn held_out<T: Real>(
    matrices: &[FingerprintMatrix<T>],
    m: usize,
    k: usize,
    opts: &RidgeOptions,
) -> Result<NormSpecificity<T>> {
    let own = &matrices[m];
    let norm = own.norms[k].clone();
    let rows: Vec<&Vec<T>> = own.values.iter().collect();
    let (targets, x) = split_columns(&rows, k);
    let within_r2 = ridge_cv_r2(&own.words, &targets, &x, opts)?;

    let own_index = own.word_index();
    let mut cross_r2 = BTreeMap::new();
    for (o, other) in matrices.iter().enumerate() {
        if o == m {
            continue;
        }
        let other_index = other.word_index();
        let shared: Vec<(&str, usize, usize)> =
            own_index.iter().filter_map(|(w, &a)| other_index.get(w).map(|&b| (*w, a, b))).collect();
        if shared.len() < MIN_SHARED_WORDS {
            log::warn!("skipping {} → {} on `{norm}`: {} shared words", other.model, own.model, shared.len());
            continue;
        }
        let words: Vec<String> = shared.iter().map(|s| s.0.to_string()).collect();
        let targets: Vec<T> = shared.iter().map(|s| own.values[s.1][k]).collect();
        let other_rows: Vec<&Vec<T>> = shared.iter().map(|s| &other.values[s.2]).collect();
        let (_, x) = split_columns(&other_rows, k);
        cross_r2.insert(other.model.clone(), ridge_cv_r2(&words, &targets, &x, opts)?);
    }
    let ratio = if cross_r2.is_empty() {
        None
    } else {
        let mean = cross_r2.values().copied().sum::<T>() / T::of_usize(cross_r2.len());
        (mean > T::zero()).then(|| within_r2 / mean)
    };
    Ok(NormSpecificity { norm, within_r2, cross_r2, ratio })
}

/// Per-word mean ratings: `model → word → mean` for one norm, as consumed
/// by [`raw_rating_specificity`].
pub type MeanRatings = BTreeMap<String, BTreeMap<String, f64>>;

/// The same analysis on raw per-word mean ratings instead of interaction
/// BLUPs. `ratings` is `norm → model → word → mean`.
pub fn raw_rating_specificity<T: Real>(
    ratings: &BTreeMap<String, MeanRatings>,
    opts: &RidgeOptions,
) -> Result<Vec<SpecificityResult<T>>> {
    let mut scores: WordScores = BTreeMap::new();
    for (norm, by_model) in ratings {
        for (model, words) in by_model {
            scores.entry(model.clone()).or_default().insert(norm.clone(), words.clone());
        }
    }
    specificity_analysis(&scores, opts)
}

/// Interaction BLUPs of several norms as `model → norm → word → ι̂`.
pub fn scores_from_blups<T: Real>(tables: &[BlupTable<T>]) -> WordScores {
    let mut scores: WordScores = BTreeMap::new();
    for t in tables {
        for c in &t.iota {
            scores
                .entry(t.models[c.model as usize].clone())
                .or_default()
                .entry(t.norm.clone())
                .or_default()
                .insert(t.words[c.word as usize].clone(), c.value.to_f64_lossy());
        }
    }
    scores
}

fn norm_files(dir: &Path, suffix: &str) -> Result<Vec<(String, std::path::PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(norm) = name.strip_suffix(suffix) {
            out.push((norm.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Read every `{norm}_iota.csv` in `dir`.
pub fn load_blup_scores(dir: &Path) -> Result<WordScores> {
    let mut scores: WordScores = BTreeMap::new();
    let files = norm_files(dir, "_iota.csv")?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no *_iota.csv files in {}", dir.display())));
    }
    for (norm, path) in files {
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        for row in read_iota(std::io::BufReader::new(file))? {
            scores.entry(row.model).or_default().entry(norm.clone()).or_default().insert(row.word, row.iota_hat);
        }
    }
    Ok(scores)
}

/// Read every `{norm}_means.csv` (columns `word,model,mean,n`) in `dir`.
pub fn load_mean_ratings(dir: &Path) -> Result<BTreeMap<String, MeanRatings>> {
    let mut out = BTreeMap::new();
    let files = norm_files(dir, "_means.csv")?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no *_means.csv files in {}", dir.display())));
    }
    for (norm, path) in files {
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut by_model: MeanRatings = BTreeMap::new();
        for m in read_cell_means(std::io::BufReader::new(file))? {
            by_model.entry(m.model).or_default().insert(m.word, m.mean);
        }
        out.insert(norm, by_model);
    }
    Ok(out)
}
