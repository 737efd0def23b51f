//! Agreement between model ratings and published human norms.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::dataset::{read_cell_means, Transform};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Matching key for a word: NFC, then lowercase.
pub fn word_key(word: &str) -> String {
    word.nfc().collect::<String>().to_lowercase()
}

/// Word-indexed series keyed by [`word_key`]. Two inputs that collide after
/// normalization are rejected.
pub fn keyed<T: Copy>(label: &str, pairs: impl IntoIterator<Item = (String, T)>) -> Result<BTreeMap<String, T>> {
    let mut out = BTreeMap::new();
    for (word, v) in pairs {
        let key = word_key(&word);
        if out.insert(key.clone(), v).is_some() {
            return Err(Error::InvalidInput(format!("{label}: more than one entry for word `{key}`")));
        }
    }
    Ok(out)
}

/// Human mean rating per word for one norm, on the original study scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanNormTable {
    pub norm: String,
    pub entries: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct HumanRow {
    word: String,
    value: f64,
}

impl HumanNormTable {
    pub fn new(norm: impl Into<String>, pairs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let norm = norm.into();
        let entries = keyed(&norm, pairs)?;
        if entries.values().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{norm}: non-finite human rating")));
        }
        Ok(HumanNormTable { norm, entries })
    }

    /// CSV with header `word,value`.
    pub fn read_csv<R: Read>(norm: &str, reader: R) -> Result<Self> {
        let rows: Vec<HumanRow> =
            csv::Reader::from_reader(reader).deserialize().collect::<std::result::Result<_, _>>()?;
        Self::new(norm, rows.into_iter().map(|r| (r.word, r.value)))
    }

    /// `{norm}.csv`; the norm is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let norm = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad human norm path {}", path.display())))?;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(norm, std::io::BufReader::new(file))
    }
}

/// Pearson correlation of paired slices.
pub fn pearson_slices<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("series differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("correlation needs at least 3 pairs, got {}", x.len())));
    }
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (*a - mx, *b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::Undefined("constant series; correlation is undefined".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Pearson r over the words both series share, with the overlap size.
pub fn pearson<T: Real>(x: &BTreeMap<String, T>, y: &BTreeMap<String, T>) -> Result<(T, usize)> {
    let (a, b): (Vec<T>, Vec<T>) = x.iter().filter_map(|(w, v)| y.get(w).map(|u| (*v, *u))).unzip();
    Ok((pearson_slices(&a, &b)?, a.len()))
}

/// `tanh(mean(atanh r))`.
pub fn fisher_aggregate<T: Real>(rs: &[T]) -> Result<T> {
    if rs.is_empty() {
        return Err(Error::InvalidInput("nothing to aggregate".into()));
    }
    if let Some(r) = rs.iter().find(|r| !(r.abs() < T::one())) {
        return Err(Error::Undefined(format!("|r| = {} has no finite Fisher z", r.to_f64_lossy())));
    }
    if rs.len() == 1 {
        return Ok(rs[0]);
    }
    // summed in sorted order so the result ignores input order
    let mut zs: Vec<T> = rs.iter().map(|r| r.atanh()).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let z = zs.into_iter().sum::<T>() / T::of_usize(rs.len());
    Ok(z.tanh())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormAlignment<T> {
    pub norm: String,
    pub r_stochastic: T,
    pub r_deterministic: T,
    pub delta_r: T,
    pub overlap_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport<T> {
    pub model: String,
    pub per_norm: Vec<NormAlignment<T>>,
    /// Fisher-z mean of the stochastic correlations.
    pub r_bar: Option<T>,
}

/// Correlations of the stochastic-mean and deterministic series with the
/// human norm, over the words present in all three.
///
/// `transform` is applied to both model series first. Pass the norm's
/// transform when the series are on the elicitation scale; cleaned datasets
/// are already on the analysis scale.
pub fn stochastic_advantage<T: Real>(
    stochastic: &BTreeMap<String, T>,
    deterministic: &BTreeMap<String, T>,
    human: &HumanNormTable,
    transform: Option<&Transform>,
) -> Result<NormAlignment<T>> {
    let recode = |v: T| match transform {
        Some(t) => T::of(t.apply_f64(v.to_f64_lossy())),
        None => v,
    };
    let mut s = Vec::new();
    let mut d = Vec::new();
    let mut h = Vec::new();
    for (w, v) in stochastic {
        if let (Some(dv), Some(hv)) = (deterministic.get(w), human.entries.get(w)) {
            s.push(recode(*v));
            d.push(recode(*dv));
            h.push(T::of(*hv));
        }
    }
    let r_stochastic = pearson_slices(&s, &h)?;
    let r_deterministic = pearson_slices(&d, &h)?;
    Ok(NormAlignment {
        norm: human.norm.clone(),
        r_stochastic,
        r_deterministic,
        delta_r: r_stochastic - r_deterministic,
        overlap_n: s.len(),
    })
}

/// Per-word model ratings for one norm: `model → word → value` for each
/// decode mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormRatings {
    pub stochastic: BTreeMap<String, BTreeMap<String, f64>>,
    pub deterministic: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Alignment for every model over the norms that have a human table.
/// A (model, norm) lacking either decode mode is skipped with a warning.
pub fn align_models<T: Real>(
    ratings: &BTreeMap<String, NormRatings>,
    humans: &[HumanNormTable],
    transforms: &BTreeMap<String, Transform>,
) -> Result<Vec<AlignmentReport<T>>> {
    let mut by_model: BTreeMap<String, Vec<NormAlignment<T>>> = BTreeMap::new();
    for human in humans {
        let Some(norm) = ratings.get(&human.norm) else {
            log::warn!("no model ratings for human norm `{}`", human.norm);
            continue;
        };
        let models: std::collections::BTreeSet<&String> =
            norm.stochastic.keys().chain(norm.deterministic.keys()).collect();
        for model in models {
            let (Some(s), Some(d)) = (norm.stochastic.get(model), norm.deterministic.get(model)) else {
                log::warn!("{model} on `{}`: missing a decode mode, skipped", human.norm);
                continue;
            };
            let conv = |m: &BTreeMap<String, f64>, mode: &str| {
                keyed(&format!("{model}/{}/{mode}", human.norm), m.iter().map(|(w, v)| (w.clone(), T::of(*v))))
            };
            let row = stochastic_advantage(
                &conv(s, "stochastic")?,
                &conv(d, "deterministic")?,
                human,
                transforms.get(&human.norm),
            )?;
            by_model.entry(model.clone()).or_default().push(row);
        }
    }
    by_model
        .into_iter()
        .map(|(model, per_norm)| {
            let rs: Vec<T> = per_norm.iter().map(|r| r.r_stochastic).collect();
            let r_bar = if rs.is_empty() { None } else { Some(fisher_aggregate(&rs)?) };
            Ok(AlignmentReport { model, per_norm, r_bar })
        })
        .collect()
}

fn read_means(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for m in read_cell_means(std::io::BufReader::new(file))? {
        out.entry(m.model).or_default().insert(m.word, m.mean);
    }
    Ok(out)
}

/// Read `{norm}_means.csv` (stochastic) and `{norm}_deterministic.csv`
/// from `dir`.
pub fn load_norm_ratings(dir: &Path) -> Result<BTreeMap<String, NormRatings>> {
    let mut out: BTreeMap<String, NormRatings> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(norm) = name.strip_suffix("_means.csv") {
            out.entry(norm.to_string()).or_default().stochastic = read_means(&path)?;
        } else if let Some(norm) = name.strip_suffix("_deterministic.csv") {
            out.entry(norm.to_string()).or_default().deterministic = read_means(&path)?;
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no rating means in {}", dir.display())));
    }
    Ok(out)
}

/// Every `*.csv` in `dir` as a human norm table.
pub fn load_human_norms(dir: &Path) -> Result<Vec<HumanNormTable>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no human norm CSVs in {}", dir.display())));
    }
    paths.iter().map(|p| HumanNormTable::load(p)).collect()
}
