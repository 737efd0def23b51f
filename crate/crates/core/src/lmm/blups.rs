//! Conditional modes of the random effects.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::design::Design;
use super::fit::{theta_of, Components, VarianceFit};
use super::pls::Workspace;
use crate::dataset::{format_value, CrossedDataset};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBlup<T> {
    pub word: u32,
    pub model: u32,
    pub value: T,
}

/// Per-word τ̂, per-model β̂ and per-observed-cell ι̂. Unobserved cells have
/// no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BlupTable<T> {
    pub norm: String,
    pub words: Vec<String>,
    pub models: Vec<String>,
    pub mu_hat: T,
    pub tau: Vec<T>,
    pub beta: Vec<T>,
    pub iota: Vec<CellBlup<T>>,
}

/// BLUPs at the fitted variance components.
pub fn blups<T: Real>(data: &CrossedDataset, fit: &VarianceFit<T>) -> Result<BlupTable<T>> {
    if fit.norm != data.norm() || fit.n_obs != data.n_obs() {
        return Err(Error::InvalidInput(format!(
            "fit for `{}` ({} obs) does not describe dataset `{}` ({} obs)",
            fit.norm,
            fit.n_obs,
            data.norm(),
            data.n_obs()
        )));
    }
    blups_at(data, &fit.sigma2)
}

/// BLUPs at explicit variance components. All-zero random-effect variances
/// (or a zero residual variance) give exactly zero predictions.
pub fn blups_at<T: Real>(data: &CrossedDataset, sigma2: &Components<T>) -> Result<BlupTable<T>> {
    let design = Design::from_dataset(data);
    let cells = data.cells();
    let mut table = BlupTable {
        norm: data.norm().to_string(),
        words: data.words().to_vec(),
        models: data.models().to_vec(),
        mu_hat: design.center(),
        tau: vec![T::zero(); data.n_words()],
        beta: vec![T::zero(); data.n_models()],
        iota: cells.iter().map(|&((word, model), _)| CellBlup { word, model, value: T::zero() }).collect(),
    };
    if sigma2.residual == T::zero() && [sigma2.tau, sigma2.beta, sigma2.iota].iter().all(|v| *v == T::zero()) {
        return Ok(table);
    }
    let theta = theta_of(sigma2)?;
    let mut ws = Workspace::new(&design);
    let modes = ws.modes(&design, theta).ok_or_else(|| Error::Numerical("factorization failed".into()))?;
    table.mu_hat = modes.mu + design.center();
    table.tau = modes.tau;
    table.beta = modes.beta;
    for (cell, value) in table.iota.iter_mut().zip(modes.iota) {
        cell.value = value;
    }
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize)]
struct IotaRow {
    word: String,
    model: String,
    iota_hat: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TauRow {
    word: String,
    tau_hat: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BetaRow {
    model: String,
    beta_hat: String,
}

/// Paths of the three BLUP files for `norm` inside `dir`.
pub fn blup_paths(dir: &Path, norm: &str) -> [PathBuf; 3] {
    [dir.join(format!("{norm}_iota.csv")), dir.join(format!("{norm}_tau.csv")), dir.join(format!("{norm}_beta.csv"))]
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<blup csv>", e))
}

impl<T: Real> BlupTable<T> {
    pub fn write_iota<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for c in &self.iota {
            w.serialize(IotaRow {
                word: self.words[c.word as usize].clone(),
                model: self.models[c.model as usize].clone(),
                iota_hat: format_value(c.value.to_f64_lossy()),
            })?;
        }
        flush(w)
    }

    pub fn write_tau<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (word, v) in self.words.iter().zip(&self.tau) {
            w.serialize(TauRow { word: word.clone(), tau_hat: format_value(v.to_f64_lossy()) })?;
        }
        flush(w)
    }

    pub fn write_beta<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (model, v) in self.models.iter().zip(&self.beta) {
            w.serialize(BetaRow { model: model.clone(), beta_hat: format_value(v.to_f64_lossy()) })?;
        }
        flush(w)
    }

    /// Write `{norm}_iota.csv`, `{norm}_tau.csv` and `{norm}_beta.csv`.
    pub fn save(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        let paths = blup_paths(dir, &self.norm);
        let open = |p: &Path| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?))
        };
        self.write_iota(open(&paths[0])?)?;
        self.write_tau(open(&paths[1])?)?;
        self.write_beta(open(&paths[2])?)?;
        Ok(paths)
    }

    pub fn iota_for(&self, word: u32, model: u32) -> Option<T> {
        self.iota.binary_search_by_key(&(word, model), |c| (c.word, c.model)).ok().map(|k| self.iota[k].value)
    }
}

/// One row of an iota file.
#[derive(Debug, Clone, PartialEq)]
pub struct IotaEntry {
    pub word: String,
    pub model: String,
    pub iota_hat: f64,
}

pub fn read_iota<R: Read>(reader: R) -> Result<Vec<IotaEntry>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<IotaRow>() {
        let row = row?;
        let iota_hat =
            row.iota_hat.parse().map_err(|_| Error::InvalidInput(format!("bad iota_hat `{}`", row.iota_hat)))?;
        out.push(IotaEntry { word: row.word, model: row.model, iota_hat });
    }
    Ok(out)
}
