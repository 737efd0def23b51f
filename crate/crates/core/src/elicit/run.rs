//! Batch runs from a job manifest with a resumable transcript.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::machine::{drive, Attempt, ElicitationJob, Outcome, Responder, RetryPolicy, Sleeper, Stage};
use super::templates::Template;
use crate::dataset::{DecodeMode, NormSpec, RawResponse};
use crate::error::{Error, Result};

/// One manifest row: `norm,word,temperature,repetitions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub norm: String,
    pub word: String,
    pub temperature: f64,
    pub repetitions: u32,
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestRow>> {
    let rows: Vec<ManifestRow> =
        csv::Reader::from_reader(reader).deserialize().collect::<std::result::Result<_, _>>()?;
    for (k, r) in rows.iter().enumerate() {
        if !(r.temperature >= 0.0) || r.repetitions == 0 {
            return Err(Error::InvalidInput(format!(
                "manifest row {}: temperature must be ≥ 0 and repetitions ≥ 1",
                k + 1
            )));
        }
    }
    Ok(rows)
}

pub fn write_manifest<W: Write>(writer: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobKey {
    pub model: String,
    pub norm: String,
    pub word: String,
    pub repetition: u32,
    pub decode_mode: DecodeMode,
}

/// One transcript line: a single responder call within a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    #[serde(flatten)]
    pub key: JobKey,
    pub step: usize,
    pub stage: Stage,
    pub prompt: String,
    pub temperature: f64,
    pub raw_response: String,
    pub outcome: Outcome,
    /// Set on the job's last attempt.
    #[serde(rename = "final")]
    pub is_final: bool,
}

impl TranscriptLine {
    fn of(key: &JobKey, step: usize, a: &Attempt, is_final: bool) -> Self {
        TranscriptLine {
            key: key.clone(),
            step,
            stage: a.stage,
            prompt: a.prompt.clone(),
            temperature: a.temperature,
            raw_response: a.raw_response.clone(),
            outcome: a.outcome,
            is_final,
        }
    }
}

/// Final responses of completed jobs. Lines that fail to parse (a torn
/// write at the end of an interrupted run) are skipped.
pub fn read_transcript<R: Read>(reader: R) -> Result<HashMap<JobKey, String>> {
    let mut done = HashMap::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<transcript>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TranscriptLine>(&line) {
            Ok(t) if t.is_final => {
                done.insert(t.key, t.raw_response);
            }
            Ok(_) => {}
            Err(e) => log::warn!("transcript line {}: {e}; ignored", k + 1),
        }
    }
    Ok(done)
}

pub struct RunContext<'a, R: ?Sized> {
    pub model: String,
    pub templates: &'a BTreeMap<String, Template>,
    pub specs: &'a BTreeMap<String, NormSpec>,
    pub policy: &'a RetryPolicy,
    pub responder: &'a R,
    pub sleeper: &'a dyn Sleeper,
    pub workers: usize,
}

/// Expand the manifest into jobs, in manifest order.
pub fn expand_jobs<R: ?Sized>(rows: &[ManifestRow], ctx: &RunContext<'_, R>) -> Result<Vec<ElicitationJob>> {
    let mut jobs = Vec::new();
    for row in rows {
        let template = ctx
            .templates
            .get(&row.norm)
            .ok_or_else(|| Error::Template(format!("no template for norm `{}`", row.norm)))?;
        let spec =
            ctx.specs.get(&row.norm).ok_or_else(|| Error::InvalidInput(format!("no scale for norm `{}`", row.norm)))?;
        for repetition in 1..=row.repetitions {
            jobs.push(ElicitationJob {
                model: ctx.model.clone(),
                template: template.clone(),
                word: row.word.clone(),
                spec: spec.clone(),
                temperature: row.temperature,
                repetition,
            });
        }
    }
    Ok(jobs)
}

fn key_of(job: &ElicitationJob) -> JobKey {
    JobKey {
        model: job.model.clone(),
        norm: job.spec.norm_id.clone(),
        word: job.word.clone(),
        repetition: job.repetition,
        decode_mode: job.decode_mode(),
    }
}

/// Run every manifest job not already completed in `transcript`, appending
/// each finished job's attempts as it completes. Returns one response per
/// job in manifest order.
pub fn run_manifest<R: Responder + ?Sized>(
    rows: &[ManifestRow],
    ctx: &RunContext<'_, R>,
    transcript: &Path,
) -> Result<Vec<RawResponse>> {
    let jobs = expand_jobs(rows, ctx)?;
    let done = if transcript.exists() {
        let f = std::fs::File::open(transcript).map_err(|e| Error::io(transcript, e))?;
        read_transcript(f)?
    } else {
        HashMap::new()
    };
    let log = OpenOptions::new().create(true).append(true).open(transcript).map_err(|e| Error::io(transcript, e))?;
    let log = Mutex::new(log);
    let pending: Vec<&ElicitationJob> = jobs.iter().filter(|j| !done.contains_key(&key_of(j))).collect();
    log::info!("{} of {} jobs already complete", jobs.len() - pending.len(), jobs.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let finished: Vec<(JobKey, String)> = pool.install(|| {
        pending
            .par_iter()
            .map(|job| {
                let out = drive(job, ctx.responder, ctx.policy, ctx.sleeper)?;
                let key = key_of(job);
                let n = out.attempts.len();
                let mut text = String::new();
                for (step, a) in out.attempts.iter().enumerate() {
                    text.push_str(&serde_json::to_string(&TranscriptLine::of(&key, step, a, step + 1 == n))?);
                    text.push('\n');
                }
                let mut f = log.lock().expect("transcript lock");
                f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(transcript, e))?;
                Ok((key, out.record.raw_text))
            })
            .collect::<Result<_>>()
    })?;
    let mut all: HashMap<JobKey, String> = done;
    all.extend(finished);
    Ok(jobs
        .iter()
        .map(|job| {
            let key = key_of(job);
            RawResponse {
                raw_text: all[&key].clone(),
                norm: key.norm,
                word: key.word,
                model: key.model,
                repetition: key.repetition,
                decode_mode: key.decode_mode,
            }
        })
        .collect())
}
