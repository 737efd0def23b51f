//! Rating records and the postprocessing steps that run before the
//! dataset is assembled.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Sub;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::norm::{NormSpec, Rational};
use super::parse::{parse_response, ParseOutcome, RefusalPatterns};
use crate::error::{Error, Result};

pub const MAX_STOCHASTIC_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Stochastic,
    Deterministic,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Stochastic => "stochastic",
            DecodeMode::Deterministic => "deterministic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Unparseable,
    OutOfRange,
    Refusal,
    OverCap,
}

impl Flag {
    /// Attribution order for the exclusion report: a record carrying
    /// several flags is counted under the earliest pipeline step.
    pub const PRECEDENCE: [Flag; 4] = [Flag::Unparseable, Flag::Refusal, Flag::OutOfRange, Flag::OverCap];

    fn bit(self) -> u8 {
        match self {
            Flag::Unparseable => 1,
            Flag::OutOfRange => 2,
            Flag::Refusal => 4,
            Flag::OverCap => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub fn empty() -> Self {
        Flags(0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, flag: Flag) -> bool {
        self.0 & flag.bit() != 0
    }

    pub fn insert(&mut self, flag: Flag) {
        self.0 |= flag.bit();
    }

    pub fn union(self, other: Flags) -> Flags {
        Flags(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::PRECEDENCE.into_iter().filter(move |f| self.contains(*f))
    }

    pub fn primary(self) -> Option<Flag> {
        self.iter().next()
    }
}

impl From<Flag> for Flags {
    fn from(flag: Flag) -> Self {
        Flags(flag.bit())
    }
}

/// One raw response row as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub norm: String,
    pub word: String,
    pub model: String,
    pub repetition: u32,
    pub decode_mode: DecodeMode,
    pub raw_text: String,
}

/// One elicited response after parsing and validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub norm: String,
    pub word: String,
    pub model: String,
    pub repetition: u32,
    pub decode_mode: DecodeMode,
    pub raw_text: String,
    pub parsed_value: Option<Rational>,
    pub flags: Flags,
}

impl RatingRecord {
    pub fn from_raw(raw: RawResponse, spec: &NormSpec, refusals: &RefusalPatterns) -> Self {
        let outcome = parse_response(&raw.raw_text, spec, refusals);
        Self::from_outcome(raw, outcome)
    }

    pub fn from_outcome(raw: RawResponse, outcome: ParseOutcome) -> Self {
        let (parsed_value, flags) = match outcome {
            ParseOutcome::Valid(v) => (Some(v), Flags::empty()),
            ParseOutcome::OutOfRange(v) => (Some(v), Flag::OutOfRange.into()),
            ParseOutcome::Unparseable => (None, Flag::Unparseable.into()),
            ParseOutcome::Refusal => (None, Flag::Refusal.into()),
        };
        RatingRecord {
            norm: raw.norm,
            word: raw.word,
            model: raw.model,
            repetition: raw.repetition,
            decode_mode: raw.decode_mode,
            raw_text: raw.raw_text,
            parsed_value,
            flags,
        }
    }

    /// Parsed, within scale, and not excluded by any later step.
    pub fn effectively_valid(&self) -> bool {
        self.parsed_value.is_some() && self.flags.is_empty()
    }

    pub fn to_raw(&self) -> RawResponse {
        RawResponse {
            norm: self.norm.clone(),
            word: self.word.clone(),
            model: self.model.clone(),
            repetition: self.repetition,
            decode_mode: self.decode_mode,
            raw_text: self.raw_text.clone(),
        }
    }
}

/// Bipolar valence: positive minus negative rating.
pub fn combine_valence<P: Sub<N>, N>(pos: P, neg: N) -> P::Output {
    pos - neg
}

type PairKey = (String, String, u32, DecodeMode);

fn pair_key(r: &RatingRecord) -> PairKey {
    (r.model.clone(), r.word.clone(), r.repetition, r.decode_mode)
}

/// Pair `<norm>_pos` and `<norm>_neg` records per (model, word, repetition,
/// decode mode) and emit one composite record per pair. A composite is
/// invalid whenever either side is, and carries the union of their flags.
pub fn combine_valence_records(
    composite_norm: &str,
    positive: &[RatingRecord],
    negative: &[RatingRecord],
) -> Result<Vec<RatingRecord>> {
    let mut neg_by_key: HashMap<PairKey, &RatingRecord> = HashMap::with_capacity(negative.len());
    for r in negative {
        if neg_by_key.insert(pair_key(r), r).is_some() {
            return Err(Error::Pairing(format!(
                "duplicate negative record for model `{}`, word `{}`, repetition {} ({})",
                r.model, r.word, r.repetition, r.decode_mode
            )));
        }
    }
    let mut out = Vec::with_capacity(positive.len());
    let mut seen = std::collections::HashSet::with_capacity(positive.len());
    for pos in positive {
        let key = pair_key(pos);
        if !seen.insert(key.clone()) {
            return Err(Error::Pairing(format!(
                "duplicate positive record for model `{}`, word `{}`, repetition {} ({})",
                pos.model, pos.word, pos.repetition, pos.decode_mode
            )));
        }
        let neg = neg_by_key.remove(&key).ok_or_else(|| {
            Error::Pairing(format!(
                "no negative rating pairs with model `{}`, word `{}`, repetition {} ({})",
                pos.model, pos.word, pos.repetition, pos.decode_mode
            ))
        })?;
        let flags = pos.flags.union(neg.flags);
        let parsed_value = match (&pos.parsed_value, &neg.parsed_value) {
            (Some(p), Some(n)) if flags.is_empty() => Some(combine_valence(p, n)),
            _ => None,
        };
        out.push(RatingRecord {
            norm: composite_norm.to_string(),
            word: pos.word.clone(),
            model: pos.model.clone(),
            repetition: pos.repetition,
            decode_mode: pos.decode_mode,
            raw_text: format!("{} | {}", pos.raw_text, neg.raw_text),
            parsed_value,
            flags,
        });
    }
    if let Some(((model, word, rep, mode), _)) = neg_by_key.into_iter().min_by(|a, b| a.0.cmp(&b.0)) {
        return Err(Error::Pairing(format!(
            "no positive rating pairs with model `{model}`, word `{word}`, repetition {rep} ({mode})"
        )));
    }
    Ok(out)
}

/// Keep the first five stochastic records per (model, norm, word) in the
/// given order and flag the rest `over_cap`. Deterministic records pass
/// through untouched.
pub fn cap_repetitions(mut records: Vec<RatingRecord>) -> Vec<RatingRecord> {
    let mut counts: HashMap<(String, String, String), usize> = HashMap::new();
    for r in records.iter_mut() {
        if r.decode_mode != DecodeMode::Stochastic {
            continue;
        }
        let n = counts.entry((r.model.clone(), r.norm.clone(), r.word.clone())).or_default();
        *n += 1;
        if *n > MAX_STOCHASTIC_REPETITIONS {
            r.flags.insert(Flag::OverCap);
        }
    }
    records
}

/// Parse, combine bipolar composites, and cap repetitions, grouping the
/// result by analysis norm. Raw rows for norms without a spec are an error.
pub fn postprocess(
    raw: Vec<RawResponse>,
    specs: &BTreeMap<String, NormSpec>,
    refusals: &RefusalPatterns,
) -> Result<BTreeMap<String, Vec<RatingRecord>>> {
    if let Some(r) = raw.iter().find(|r| !specs.contains_key(&r.norm)) {
        return Err(Error::InvalidInput(format!("no norm spec for `{}`", r.norm)));
    }
    let parsed: Vec<RatingRecord> = raw
        .into_par_iter()
        .map(|r| {
            let spec = &specs[&r.norm];
            RatingRecord::from_raw(r, spec, refusals)
        })
        .collect();
    let mut by_norm: BTreeMap<String, Vec<RatingRecord>> = BTreeMap::new();
    for r in parsed {
        by_norm.entry(r.norm.clone()).or_default().push(r);
    }
    for spec in specs.values().filter(|s| s.is_bipolar_composite) {
        let (pos_id, neg_id) = spec.component_ids().expect("bipolar spec");
        match (by_norm.remove(&pos_id), by_norm.remove(&neg_id)) {
            (None, None) => {}
            (pos, neg) => {
                let combined =
                    combine_valence_records(&spec.norm_id, &pos.unwrap_or_default(), &neg.unwrap_or_default())?;
                by_norm.entry(spec.norm_id.clone()).or_default().extend(combined);
            }
        }
    }
    Ok(by_norm.into_iter().map(|(norm, records)| (norm, cap_repetitions(records))).collect())
}

pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawResponse>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["norm", "word", "model", "repetition", "decode_mode", "raw_text"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidInput(format!(
            "raw response header must be `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: RawResponse = row?;
        if row.repetition == 0 {
            return Err(Error::InvalidInput(format!(
                "repetition must be >= 1 (norm `{}`, word `{}`)",
                row.norm, row.word
            )));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_raw_csv<W: Write>(writer: W, rows: &[RawResponse]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<raw csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::norm::builtin_specs;
    use proptest::prelude::*;

    fn raw(norm: &str, word: &str, model: &str, rep: u32, text: &str) -> RawResponse {
        RawResponse {
            norm: norm.into(),
            word: word.into(),
            model: model.into(),
            repetition: rep,
            decode_mode: DecodeMode::Stochastic,
            raw_text: text.into(),
        }
    }

    fn specs() -> BTreeMap<String, NormSpec> {
        builtin_specs().into_iter().map(|s| (s.norm_id.clone(), s)).collect()
    }

    #[test]
    fn valence_examples() {
        assert_eq!(combine_valence(3, 0), 3);
        assert_eq!(combine_valence(2, 2), 0);
        assert_eq!(combine_valence(0, 3), -3);
    }

    proptest! {
        #[test]
        fn valence_antisymmetry(p in 0i32..=3, n in 0i32..=3) {
            prop_assert_eq!(combine_valence(p, n), -combine_valence(n, p));
        }
    }

    #[test]
    fn cap_keeps_first_five_in_arrival_order() {
        let spec = &specs()["humor"];
        let p = RefusalPatterns::default();
        let records: Vec<_> =
            (1..=7).map(|k| RatingRecord::from_raw(raw("humor", "cat", "m", k, "3"), spec, &p)).collect();
        let capped = cap_repetitions(records);
        let flagged: Vec<u32> =
            capped.iter().filter(|r| r.flags.contains(Flag::OverCap)).map(|r| r.repetition).collect();
        assert_eq!(flagged, vec![6, 7]);
        assert_eq!(capped.iter().filter(|r| r.effectively_valid()).count(), 5);

        let three: Vec<_> =
            (1..=3).map(|k| RatingRecord::from_raw(raw("humor", "cat", "m", k, "3"), spec, &p)).collect();
        assert!(cap_repetitions(three).iter().all(|r| r.effectively_valid()));
        assert!(cap_repetitions(Vec::new()).is_empty());
    }

    #[test]
    fn cap_ignores_deterministic_records() {
        let spec = &specs()["humor"];
        let p = RefusalPatterns::default();
        let records: Vec<_> = (1..=7)
            .map(|_| {
                let mut r = raw("humor", "cat", "m", 1, "3");
                r.decode_mode = DecodeMode::Deterministic;
                RatingRecord::from_raw(r, spec, &p)
            })
            .collect();
        assert!(cap_repetitions(records).iter().all(|r| r.flags.is_empty()));
    }

    #[test]
    fn valence_pairing_and_propagation() {
        let s = specs();
        let p = RefusalPatterns::default();
        let pos = vec![
            RatingRecord::from_raw(raw("valence_pos", "sun", "m", 1, "3"), &s["valence_pos"], &p),
            RatingRecord::from_raw(raw("valence_pos", "sun", "m", 2, "x"), &s["valence_pos"], &p),
        ];
        let neg = vec![
            RatingRecord::from_raw(raw("valence_neg", "sun", "m", 2, "1"), &s["valence_neg"], &p),
            RatingRecord::from_raw(raw("valence_neg", "sun", "m", 1, "1"), &s["valence_neg"], &p),
        ];
        let out = combine_valence_records("valence", &pos, &neg).unwrap();
        assert_eq!(out[0].parsed_value, Some(Rational::from_integer(2.into())));
        assert!(out[0].effectively_valid());
        assert!(!out[1].effectively_valid());
        assert!(out[1].flags.contains(Flag::Unparseable));
        assert_eq!(out[1].parsed_value, None);

        let err = combine_valence_records("valence", &pos, &neg[..1]).unwrap_err();
        assert!(matches!(err, Error::Pairing(_)), "{err}");
        let err = combine_valence_records("valence", &pos[..1], &neg).unwrap_err();
        assert!(matches!(err, Error::Pairing(_)), "{err}");
    }

    #[test]
    fn postprocess_groups_and_combines() {
        let rows = vec![
            raw("valence_pos", "sun", "m", 1, "3"),
            raw("valence_neg", "sun", "m", 1, "0"),
            raw("arousal", "sun", "m", 1, "2"),
        ];
        let out = postprocess(rows, &specs(), &RefusalPatterns::default()).unwrap();
        assert_eq!(out.keys().collect::<Vec<_>>(), ["arousal", "valence"]);
        assert_eq!(out["valence"][0].parsed_value, Some(Rational::from_integer(3.into())));
    }

    #[test]
    fn postprocess_rejects_unknown_norm() {
        let rows = vec![raw("nope", "sun", "m", 1, "3")];
        assert!(postprocess(rows, &specs(), &RefusalPatterns::default()).is_err());
    }

    #[test]
    fn raw_csv_round_trip_with_quoting() {
        let rows = vec![raw("humor", "cat", "m1", 1, "3"), raw("humor", "a, \"quoted\" word", "m1", 2, "line\nbreak")];
        let mut buf = Vec::new();
        write_raw_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("norm,word,model,repetition,decode_mode,raw_text\n"));
        assert_eq!(read_raw_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn raw_csv_rejects_wrong_header() {
        let text = "norm,word,model,rep,decode_mode,raw_text\n";
        assert!(read_raw_csv(text.as_bytes()).is_err());
    }
}
