//! The immutable long-format table every analysis module consumes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::norm::{rational_to_f64, NormSpec};
use super::records::{DecodeMode, Flag, RatingRecord, MAX_STOCHASTIC_REPETITIONS};
use crate::error::{Error, Result};

/// One rating `y_ijk` on the analysis scale. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub word: u32,
    pub model: u32,
    pub rep: u32,
    pub value: f64,
}

/// Validated crossed word × model table with dense level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossedDataset {
    norm: String,
    words: Vec<String>,
    models: Vec<String>,
    observations: Vec<Observation>,
}

impl CrossedDataset {
    /// Assemble and validate. Observations are stored sorted by
    /// (word, model, repetition); every level must be used, repetitions
    /// start at 1 and are unique within a cell, and values must be finite.
    pub fn new(
        norm: impl Into<String>,
        words: Vec<String>,
        models: Vec<String>,
        mut observations: Vec<Observation>,
    ) -> Result<Self> {
        let norm = norm.into();
        let fail = |reason: String| Error::Ingest { norm: norm.clone(), reason };
        if observations.is_empty() {
            return Err(fail("no observations".into()));
        }
        for (kind, levels) in [("word", &words), ("model", &models)] {
            let distinct: BTreeSet<&String> = levels.iter().collect();
            if distinct.len() != levels.len() {
                return Err(fail(format!("duplicate {kind} labels")));
            }
        }
        let mut word_used = vec![false; words.len()];
        let mut model_used = vec![false; models.len()];
        for o in &observations {
            if o.word as usize >= words.len() || o.model as usize >= models.len() {
                return Err(fail(format!(
                    "observation index ({}, {}) outside {} words × {} models",
                    o.word,
                    o.model,
                    words.len(),
                    models.len()
                )));
            }
            if o.rep == 0 {
                return Err(fail("repetition numbers start at 1".into()));
            }
            if !o.value.is_finite() {
                return Err(fail(format!("non-finite value {}", o.value)));
            }
            word_used[o.word as usize] = true;
            model_used[o.model as usize] = true;
        }
        if let Some(i) = word_used.iter().position(|u| !u) {
            return Err(fail(format!("word level `{}` has no observations", words[i])));
        }
        if let Some(j) = model_used.iter().position(|u| !u) {
            return Err(fail(format!("model level `{}` has no observations", models[j])));
        }
        observations.sort_by_key(|o| (o.word, o.model, o.rep));
        if let Some(w) =
            observations.windows(2).find(|w| (w[0].word, w[0].model, w[0].rep) == (w[1].word, w[1].model, w[1].rep))
        {
            return Err(fail(format!(
                "duplicate observation for word `{}`, model `{}`, repetition {}",
                words[w[0].word as usize], models[w[0].model as usize], w[0].rep
            )));
        }
        Ok(Self { norm, words, models, observations })
    }

    pub fn norm(&self) -> &str {
        &self.norm
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.value)
    }

    /// Observed cells in (word, model) order with their repetition counts.
    pub fn cells(&self) -> Vec<((u32, u32), usize)> {
        let mut out: Vec<((u32, u32), usize)> = Vec::new();
        for o in &self.observations {
            match out.last_mut() {
                Some((key, n)) if *key == (o.word, o.model) => *n += 1,
                _ => out.push(((o.word, o.model), 1)),
            }
        }
        out
    }

    /// Perfectly balanced: every word × model cell present with the same
    /// number of repetitions. Returns that number.
    pub fn balanced_reps(&self) -> Option<usize> {
        let cells = self.cells();
        if cells.len() != self.words.len() * self.models.len() {
            return None;
        }
        let k = cells[0].1;
        cells.iter().all(|(_, n)| *n == k).then_some(k)
    }

    /// Same data with every value mapped through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.value = f(o.value);
        }
        out
    }

    /// Cell means per (word label, model label).
    pub fn cell_means(&self) -> Vec<CellMean> {
        let mut out: Vec<CellMean> = Vec::new();
        let mut start = 0;
        for ((i, j), n) in self.cells() {
            let sum: f64 = self.observations[start..start + n].iter().map(|o| o.value).sum();
            start += n;
            out.push(CellMean {
                word: self.words[i as usize].clone(),
                model: self.models[j as usize].clone(),
                mean: sum / n as f64,
                n,
            });
        }
        out
    }

    pub fn meta(&self, exclusion: Option<ExclusionReport>) -> DatasetMeta {
        DatasetMeta { norm: self.norm.clone(), words: self.words.clone(), models: self.models.clone(), exclusion }
    }

    /// Write the clean CSV `norm,word_idx,model_idx,repetition,value`.
    pub fn write_clean_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["norm", "word_idx", "model_idx", "repetition", "value"])?;
        for o in &self.observations {
            w.write_record([
                self.norm.as_str(),
                &o.word.to_string(),
                &o.model.to_string(),
                &o.rep.to_string(),
                &format_value(o.value),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<clean csv>", e))?;
        Ok(())
    }

    /// Rebuild from a clean CSV and its sidecar level maps.
    pub fn read_clean_csv<R: Read>(reader: R, meta: &DatasetMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["norm", "word_idx", "model_idx", "repetition", "value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::InvalidInput(format!("clean CSV header must be `{}`", expected.join(","))));
        }
        let mut observations = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row[0] != meta.norm {
                return Err(Error::InvalidInput(format!(
                    "clean CSV row for norm `{}` but sidecar describes `{}`",
                    &row[0], meta.norm
                )));
            }
            let field = |k: usize| -> Result<u32> {
                row[k]
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad integer `{}` in column {}", &row[k], expected[k])))
            };
            let value: f64 = row[4].parse().map_err(|_| Error::InvalidInput(format!("bad value `{}`", &row[4])))?;
            observations.push(Observation { word: field(1)?, model: field(2)?, rep: field(3)?, value });
        }
        Self::new(meta.norm.clone(), meta.words.clone(), meta.models.clone(), observations)
    }

    pub fn save(&self, csv_path: &Path, exclusion: Option<ExclusionReport>) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_clean_csv(std::io::BufWriter::new(file))?;
        let meta_path = sidecar_path(csv_path);
        let json = serde_json::to_string_pretty(&self.meta(exclusion))?;
        std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
    }

    /// Load a clean CSV together with its `.json` sidecar.
    pub fn load(csv_path: &Path) -> Result<(Self, DatasetMeta)> {
        let meta_path = sidecar_path(csv_path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let data = Self::read_clean_csv(std::io::BufReader::new(file), &meta)?;
        Ok((data, meta))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub word: String,
    pub model: String,
    pub mean: f64,
    pub n: usize,
}

pub fn write_cell_means<W: Write>(writer: W, means: &[CellMean]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for m in means {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io("<means csv>", e))?;
    Ok(())
}

pub fn read_cell_means<R: Read>(reader: R) -> Result<Vec<CellMean>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Level maps and exclusion report stored next to a clean CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub norm: String,
    pub words: Vec<String>,
    pub models: Vec<String>,
    #[serde(default)]
    pub exclusion: Option<ExclusionReport>,
}

/// Per-flag exclusion counts. Each excluded record is counted once, under
/// its earliest pipeline flag, so `n_valid + Σ counts = n_input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub norm: String,
    pub n_input: usize,
    pub n_valid: usize,
    pub unparseable: usize,
    pub refusal: usize,
    pub out_of_range: usize,
    pub over_cap: usize,
    pub invalid_rate: f64,
}

impl ExclusionReport {
    pub fn tally(norm: &str, records: &[RatingRecord]) -> Self {
        let mut counts: BTreeMap<Flag, usize> = BTreeMap::new();
        let mut n_valid = 0;
        for r in records {
            if r.effectively_valid() {
                n_valid += 1;
            } else {
                // a record with a value but no flags cannot exist; an
                // invalid record without flags came from an invalid pair
                let flag = r.flags.primary().unwrap_or(Flag::Unparseable);
                *counts.entry(flag).or_default() += 1;
            }
        }
        let n_input = records.len();
        ExclusionReport {
            norm: norm.to_string(),
            n_input,
            n_valid,
            unparseable: counts.get(&Flag::Unparseable).copied().unwrap_or(0),
            refusal: counts.get(&Flag::Refusal).copied().unwrap_or(0),
            out_of_range: counts.get(&Flag::OutOfRange).copied().unwrap_or(0),
            over_cap: counts.get(&Flag::OverCap).copied().unwrap_or(0),
            invalid_rate: if n_input == 0 { 0.0 } else { (n_input - n_valid) as f64 / n_input as f64 },
        }
    }

    pub fn n_excluded(&self) -> usize {
        self.unparseable + self.refusal + self.out_of_range + self.over_cap
    }
}

/// Build the analysis table for one norm and one decode mode from
/// postprocessed records. Only effectively valid records enter; values are
/// mapped to the analysis scale. Within a cell, records keep their input
/// order and are renumbered 1..n.
pub fn build_dataset(records: &[RatingRecord], spec: &NormSpec) -> Result<(CrossedDataset, ExclusionReport)> {
    let fail = |reason: String| Error::Ingest { norm: spec.norm_id.clone(), reason };
    if let Some(r) = records.iter().find(|r| r.norm != spec.norm_id) {
        return Err(fail(format!("record for norm `{}` in this batch", r.norm)));
    }
    let modes: BTreeSet<DecodeMode> = records.iter().map(|r| r.decode_mode).collect();
    if modes.len() > 1 {
        return Err(fail("stochastic and deterministic records must be built separately".into()));
    }
    let report = ExclusionReport::tally(&spec.norm_id, records);
    let valid: Vec<&RatingRecord> = records.iter().filter(|r| r.effectively_valid()).collect();
    if valid.is_empty() {
        return Err(fail(format!("no effectively valid records among {} inputs", records.len())));
    }
    let words: Vec<String> = valid.iter().map(|r| r.word.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let models: Vec<String> = valid.iter().map(|r| r.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let word_idx: HashMap<&str, u32> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let model_idx: HashMap<&str, u32> = models.iter().enumerate().map(|(j, m)| (m.as_str(), j as u32)).collect();
    let (lo, hi) = spec.analysis_bounds();
    let mut cell_counts: HashMap<(u32, u32), u32> = HashMap::new();
    let mut observations = Vec::with_capacity(valid.len());
    for r in valid {
        let value = rational_to_f64(&spec.to_analysis(r.parsed_value.as_ref().expect("valid")));
        if !(lo..=hi).contains(&value) {
            return Err(fail(format!("value {value} outside analysis scale [{lo}, {hi}]")));
        }
        let i = word_idx[r.word.as_str()];
        let j = model_idx[r.model.as_str()];
        let k = cell_counts.entry((i, j)).or_default();
        *k += 1;
        if r.decode_mode == DecodeMode::Stochastic && *k as usize > MAX_STOCHASTIC_REPETITIONS {
            return Err(fail(format!(
                "more than {MAX_STOCHASTIC_REPETITIONS} valid repetitions for word `{}`, model `{}`; cap repetitions first",
                r.word, r.model
            )));
        }
        observations.push(Observation { word: i, model: j, rep: *k, value });
    }
    let data = CrossedDataset::new(spec.norm_id.clone(), words, models, observations)?;
    Ok((data, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::norm::builtin_spec;
    use crate::dataset::parse::RefusalPatterns;
    use crate::dataset::records::{cap_repetitions, RawResponse};
    use proptest::prelude::*;

    fn record(norm: &str, word: &str, model: &str, rep: u32, text: &str) -> RatingRecord {
        let spec = builtin_spec(norm).unwrap();
        RatingRecord::from_raw(
            RawResponse {
                norm: norm.into(),
                word: word.into(),
                model: model.into(),
                repetition: rep,
                decode_mode: DecodeMode::Stochastic,
                raw_text: text.into(),
            },
            &spec,
            &RefusalPatterns::default(),
        )
    }

    #[test]
    fn two_percent_unparseable() {
        let mut records = Vec::new();
        for w in 0..20 {
            for m in 0..5 {
                let text = if w == 0 && m < 2 { "n/a" } else { "3" };
                records.push(record("humor", &format!("w{w}"), &format!("m{m}"), 1, text));
            }
        }
        let (data, report) = build_dataset(&records, &builtin_spec("humor").unwrap()).unwrap();
        assert_eq!(data.n_obs(), 98);
        assert_eq!(report.n_input, 100);
        assert_eq!(report.unparseable, 2);
        assert!((report.invalid_rate - 0.02).abs() < 1e-15);
    }

    #[test]
    fn all_valid_has_zero_rate() {
        let records: Vec<_> = (1..=3).map(|k| record("humor", "a", "m", k, "2")).collect();
        let (_, report) = build_dataset(&records, &builtin_spec("humor").unwrap()).unwrap();
        assert_eq!(report.invalid_rate, 0.0);
        assert_eq!(report.n_excluded(), 0);
    }

    #[test]
    fn empty_valid_set_is_fatal() {
        let records = vec![record("humor", "a", "m", 1, "I cannot")];
        let err = build_dataset(&records, &builtin_spec("humor").unwrap()).unwrap_err();
        assert!(matches!(err, Error::Ingest { .. }));
    }

    #[test]
    fn transform_applies_at_build() {
        let records = vec![record("arousal", "a", "m", 1, "2")];
        let (data, _) = build_dataset(&records, &builtin_spec("arousal").unwrap()).unwrap();
        assert_eq!(data.observations()[0].value, 8.0);
    }

    #[test]
    fn mixed_norms_and_modes_rejected() {
        let spec = builtin_spec("humor").unwrap();
        let mut records = vec![record("humor", "a", "m", 1, "2")];
        let mut det = records[0].clone();
        det.decode_mode = DecodeMode::Deterministic;
        records.push(det);
        assert!(build_dataset(&records, &spec).is_err());
        let other = vec![record("humor", "a", "m", 1, "2"), record("morality", "a", "m", 1, "2")];
        assert!(build_dataset(&other, &spec).is_err());
    }

    #[test]
    fn uncapped_input_rejected() {
        let records: Vec<_> = (1..=6).map(|k| record("humor", "a", "m", k, "2")).collect();
        let spec = builtin_spec("humor").unwrap();
        assert!(build_dataset(&records, &spec).is_err());
        let (data, report) = build_dataset(&cap_repetitions(records), &spec).unwrap();
        assert_eq!(data.n_obs(), 5);
        assert_eq!(report.over_cap, 1);
    }

    #[test]
    fn dense_levels_required() {
        let obs = vec![Observation { word: 0, model: 0, rep: 1, value: 1.0 }];
        assert!(CrossedDataset::new("x", vec!["a".into(), "b".into()], vec!["m".into()], obs).is_err());
    }

    #[test]
    fn balanced_detection() {
        let mut obs = Vec::new();
        for w in 0..2 {
            for m in 0..2 {
                for k in 1..=2 {
                    obs.push(Observation { word: w, model: m, rep: k, value: 0.0 });
                }
            }
        }
        let names = |p: &str| vec![format!("{p}0"), format!("{p}1")];
        let d = CrossedDataset::new("x", names("w"), names("m"), obs.clone()).unwrap();
        assert_eq!(d.balanced_reps(), Some(2));
        obs.pop();
        let d = CrossedDataset::new("x", names("w"), names("m"), obs).unwrap();
        assert_eq!(d.balanced_reps(), None);
    }

    fn dataset_strategy() -> impl Strategy<Value = CrossedDataset> {
        (1usize..5, 1usize..4).prop_flat_map(|(i, j)| {
            proptest::collection::vec((0u32..3, -1.0e6f64..1.0e6), i * j).prop_map(move |cells| {
                let mut obs = Vec::new();
                for (c, (extra, v)) in cells.into_iter().enumerate() {
                    for k in 0..=extra {
                        obs.push(Observation {
                            word: (c / j) as u32,
                            model: (c % j) as u32,
                            rep: k + 1,
                            value: v * (k as f64 + 0.1),
                        });
                    }
                }
                let words = (0..i).map(|x| format!("w{x}")).collect();
                let models = (0..j).map(|x| format!("m{x}")).collect();
                CrossedDataset::new("p", words, models, obs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn clean_csv_rebuild_is_identical(data in dataset_strategy()) {
            let mut buf = Vec::new();
            data.write_clean_csv(&mut buf).unwrap();
            let rebuilt = CrossedDataset::read_clean_csv(buf.as_slice(), &data.meta(None)).unwrap();
            prop_assert_eq!(rebuilt, data);
        }

        #[test]
        fn report_partitions_input(texts in proptest::collection::vec(
            prop_oneof![Just("3"), Just("9"), Just("x"), Just("I cannot")], 1..40)) {
            let records: Vec<_> = texts
                .iter()
                .enumerate()
                .map(|(n, t)| record("humor", &format!("w{}", n % 3), "m", (n / 3) as u32 + 1, t))
                .collect();
            let records = cap_repetitions(records);
            let report = ExclusionReport::tally("humor", &records);
            prop_assert_eq!(report.n_valid + report.n_excluded(), report.n_input);
        }
    }
}
