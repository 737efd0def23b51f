//! Cell-level sufficient statistics of a crossed design.

use crate::dataset::CrossedDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Everything the profiled criterion needs: per-cell counts and centred
/// sums, grouped by word, plus the pooled within-cell sum of squares.
#[derive(Debug, Clone)]
pub struct Design<T> {
    pub(crate) n_words: usize,
    pub(crate) n_models: usize,
    /// Cells of word `i` are `word_ptr[i]..word_ptr[i + 1]`, models ascending.
    pub(crate) word_ptr: Vec<usize>,
    pub(crate) cell_model: Vec<u32>,
    pub(crate) cell_count: Vec<u32>,
    pub(crate) cell_sum: Vec<T>,
    pub(crate) within_ss: T,
    pub(crate) total_ss: T,
    pub(crate) center: T,
    pub(crate) n_obs: usize,
    pub(crate) max_count: u32,
}

impl<T: Real> Design<T> {
    pub fn from_dataset(data: &CrossedDataset) -> Self {
        let obs = data.observations();
        let n = obs.len();
        let center = obs.iter().map(|o| T::of(o.value)).sum::<T>() / T::of_usize(n);
        let mut word_ptr = Vec::with_capacity(data.n_words() + 1);
        let mut cell_model = Vec::new();
        let mut cell_count = Vec::new();
        let mut cell_sum = Vec::new();
        let mut within_ss = T::zero();
        let mut total_ss = T::zero();
        let mut start = 0;
        word_ptr.push(0);
        let mut current_word = 0u32;
        while start < n {
            let (w, m) = (obs[start].word, obs[start].model);
            let mut end = start;
            while end < n && obs[end].word == w && obs[end].model == m {
                end += 1;
            }
            while current_word < w {
                word_ptr.push(cell_model.len());
                current_word += 1;
            }
            let cell = &obs[start..end];
            let count = T::of_usize(cell.len());
            let sum: T = cell.iter().map(|o| T::of(o.value) - center).sum();
            let mean = sum / count;
            within_ss += cell
                .iter()
                .map(|o| {
                    let d = T::of(o.value) - center - mean;
                    d * d
                })
                .sum::<T>();
            total_ss += cell
                .iter()
                .map(|o| {
                    let d = T::of(o.value) - center;
                    d * d
                })
                .sum::<T>();
            cell_model.push(m);
            cell_count.push(cell.len() as u32);
            cell_sum.push(sum);
            start = end;
        }
        word_ptr.push(cell_model.len());
        let max_count = cell_count.iter().copied().max().unwrap_or(0);
        Design {
            n_words: data.n_words(),
            n_models: data.n_models(),
            word_ptr,
            cell_model,
            cell_count,
            cell_sum,
            within_ss,
            total_ss,
            center,
            n_obs: n,
            max_count,
        }
    }

    /// Build from raw (uncentred) cell totals. `cells` lists
    /// `(word, model, count)` sorted by word then model; `within_ss` is the
    /// pooled within-cell sum of squares.
    pub(crate) fn from_cell_totals(
        n_words: usize,
        n_models: usize,
        cells: &[(u32, u32, u32)],
        raw_sums: &[T],
        within_ss: T,
    ) -> Self {
        debug_assert_eq!(cells.len(), raw_sums.len());
        let n_obs: usize = cells.iter().map(|c| c.2 as usize).sum();
        let center = raw_sums.iter().copied().sum::<T>() / T::of_usize(n_obs);
        let mut word_ptr = Vec::with_capacity(n_words + 1);
        word_ptr.push(0);
        let mut current = 0u32;
        let mut cell_sum = Vec::with_capacity(cells.len());
        let mut between = T::zero();
        for (k, &(w, _, count)) in cells.iter().enumerate() {
            while current < w {
                word_ptr.push(k);
                current += 1;
            }
            let s = raw_sums[k] - T::of(count as f64) * center;
            between += s * s / T::of(count as f64);
            cell_sum.push(s);
        }
        while word_ptr.len() <= n_words {
            word_ptr.push(cells.len());
        }
        Design {
            n_words,
            n_models,
            word_ptr,
            cell_model: cells.iter().map(|c| c.1).collect(),
            cell_count: cells.iter().map(|c| c.2).collect(),
            cell_sum,
            within_ss,
            total_ss: within_ss + between,
            center,
            n_obs,
            max_count: cells.iter().map(|c| c.2).max().unwrap_or(0),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_cells(&self) -> usize {
        self.cell_count.len()
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    /// Sample mean the response was centred on.
    pub fn center(&self) -> T {
        self.center
    }

    pub fn is_constant(&self) -> bool {
        self.total_ss == T::zero()
    }

    /// The fit needs two levels of each factor and at least one replicated
    /// cell; otherwise residual and interaction variance are confounded.
    pub fn check_identifiable(&self) -> Result<()> {
        if self.n_words < 2 || self.n_models < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 words and 2 models, got {} × {}",
                self.n_words, self.n_models
            )));
        }
        if self.max_count < 2 {
            return Err(Error::Confounded(format!(
                "all {} cells have a single repetition; the word×model interaction cannot be \
                 separated from residual noise",
                self.n_cells()
            )));
        }
        Ok(())
    }
}
