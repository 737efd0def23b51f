//! Rating elicitation: prompt templates, the retry state machine and
//! resumable batch runs against any [`Responder`].

mod machine;
mod run;
mod templates;

pub use machine::{
    drive, scale_reminder, Attempt, Backoff, ElicitationJob, Elicited, Outcome, Responder, RetryPolicy, Sleeper, Stage,
    ThreadSleeper, TransportError, GENERIC_PREAMBLE, SAFETY_KEYWORDS, SAFETY_PREAMBLE,
};
pub use run::{
    expand_jobs, read_manifest, read_transcript, run_manifest, write_manifest, JobKey, ManifestRow, RunContext,
    TranscriptLine,
};
pub use templates::{builtin_templates, load_templates, render_prompt, Template, PLACEHOLDER};
