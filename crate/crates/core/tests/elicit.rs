use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use varcross_core::dataset::{builtin_spec, read_raw_csv, write_raw_csv, DecodeMode, Flag, NormSpec};
use varcross_core::elicit::*;

/// Replays a script; the last entry repeats once the script runs out.
struct Scripted {
    script: Vec<&'static str>,
    calls: Mutex<Vec<(String, f64)>>,
}

impl Scripted {
    fn new(script: &[&'static str]) -> Self {
        Scripted { script: script.to_vec(), calls: Mutex::new(Vec::new()) }
    }
}

impl Responder for Scripted {
    fn respond(&self, prompt: &str, temperature: f64) -> Result<String, TransportError> {
        let mut calls = self.calls.lock().unwrap();
        let k = calls.len().min(self.script.len() - 1);
        calls.push((prompt.to_string(), temperature));
        Ok(self.script[k].to_string())
    }
}

#[derive(Default)]
struct Recorder(Mutex<Vec<Duration>>);

impl Sleeper for Recorder {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

fn arousal_job(temperature: f64) -> ElicitationJob {
    ElicitationJob {
        model: "m".into(),
        template: builtin_templates()["arousal"].clone(),
        word: "storm".into(),
        spec: NormSpec::new("arousal", 1, 9).unwrap(),
        temperature,
        repetition: 1,
    }
}

#[test]
fn render_prompt_examples() {
    assert_eq!(render_prompt("Word: \"{word}\"", "cat").unwrap(), "Word: \"cat\"");
    assert!(render_prompt("Word:", "cat").is_err());
    assert!(render_prompt("{word} {word}", "cat").is_err());
    assert_eq!(render_prompt("{word}", "{word}").unwrap(), "{word}");
}

#[test]
fn arousal_template_renders_in_full() {
    let t = &builtin_templates()["arousal"];
    let p = render_prompt(&t.text, "storm").unwrap();
    assert!(p.starts_with("You are invited to take part in a study that is investigating emotion,"));
    assert!(p.contains("\n\nWord: \"storm\"\n\nYour response MUST start with a single number from 1 to 9 and contain\nnothing else.\nRating:"));
    assert!(p.ends_with("Rating:"));
    assert!(!p.contains("{word}"));
}

#[test]
fn bundled_templates_cover_every_elicited_scale() {
    let all = builtin_templates();
    assert_eq!(all.len(), 15);
    for (norm, t) in &all {
        assert!(builtin_spec(norm).is_some(), "{norm}");
        let expected = if norm.starts_with("valence") { 5 } else { 1 };
        assert_eq!(t.placeholders(), expected, "{norm}");
        assert!(!t.render("x").contains(PLACEHOLDER));
    }
    assert!(all["haptic"].text.contains("through touch"));
}

#[test]
fn templates_load_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.txt"), "Rate \"{word}\".\n").unwrap();
    std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let t = load_templates(dir.path()).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t["toy"].render("cat"), "Rate \"cat\".");
    std::fs::write(dir.path().join("bad.txt"), "no placeholder").unwrap();
    assert!(load_templates(dir.path()).is_err());
}

#[test]
fn valid_first_answer_needs_no_retry() {
    let r = Scripted::new(&["5"]);
    let out = drive(&arousal_job(1.0), &r, &RetryPolicy::default(), &Recorder::default()).unwrap();
    assert_eq!(out.attempts.len(), 1);
    assert_eq!(out.attempts[0].stage, Stage::Initial);
    assert!(out.record.effectively_valid());
    assert_eq!(out.record.raw_text, "5");
}

#[test]
fn out_of_range_triggers_scale_reminder() {
    let r = Scripted::new(&["12", "7"]);
    let job = arousal_job(1.0);
    let out = drive(&job, &r, &RetryPolicy::default(), &Recorder::default()).unwrap();
    let stages: Vec<Stage> = out.attempts.iter().map(|a| a.stage).collect();
    assert_eq!(stages, [Stage::Initial, Stage::Scale]);
    assert!(out.attempts[1]
        .prompt
        .ends_with("\n\nYour previous answer was invalid. Please output a single number between 1 and 9."));
    assert_eq!(out.record.parsed_value.as_ref().unwrap().to_string(), "7");
    assert!(out.record.effectively_valid());
}

#[test]
fn persistent_refusal_exhausts_the_budget() {
    let r = Scripted::new(&["I cannot rate that."]);
    let out = drive(&arousal_job(1.0), &r, &RetryPolicy::default(), &Recorder::default()).unwrap();
    let stages: Vec<Stage> = out.attempts.iter().map(|a| a.stage).collect();
    assert_eq!(stages, [Stage::Initial, Stage::Parse, Stage::Temperature, Stage::Refusal]);
    assert!(out.record.flags.contains(Flag::Refusal));
    assert!(out.attempts[3].prompt.starts_with(GENERIC_PREAMBLE));
    assert!((out.attempts[2].temperature - 1.1).abs() < 1e-12);
    assert_eq!(out.attempts[3].temperature, 1.0);
}

#[test]
fn safety_refusals_get_the_scientific_framing() {
    let r = Scripted::new(&["As an AI I cannot rate offensive words", "I cannot", "as an AI, that is harmful", "4"]);
    let out = drive(&arousal_job(0.0), &r, &RetryPolicy::default(), &Recorder::default()).unwrap();
    let last = out.attempts.last().unwrap();
    assert_eq!(last.stage, Stage::Refusal);
    assert!(last.prompt.starts_with(SAFETY_PREAMBLE));
    assert_eq!(out.record.decode_mode, DecodeMode::Deterministic);
    assert!(out.record.effectively_valid());
}

/// Expected stage sequence for a scripted run, written directly from the
/// stage rules rather than from the implementation.
fn expected_stages(outcomes: &[Outcome]) -> Vec<Stage> {
    let mut stages = vec![Stage::Initial];
    let mut k = 0;
    let mut last = outcomes[0];
    let eligible = |s: Stage, o: Outcome| match s {
        Stage::Scale => o == Outcome::OutOfRange,
        Stage::Parse => o == Outcome::Unparseable || o == Outcome::Refusal,
        Stage::Temperature => o != Outcome::Valid,
        Stage::Refusal => o == Outcome::Refusal,
        Stage::Initial => false,
    };
    for s in [Stage::Scale, Stage::Parse, Stage::Temperature, Stage::Refusal] {
        if last == Outcome::Valid || stages.len() == 4 {
            break;
        }
        if eligible(s, last) {
            stages.push(s);
            k += 1;
            last = outcomes[k.min(outcomes.len() - 1)];
        }
    }
    stages
}

#[test]
fn every_four_step_trace_obeys_the_stage_rules() {
    let text = |o: Outcome| match o {
        Outcome::Valid => "5",
        Outcome::OutOfRange => "42",
        Outcome::Unparseable => "hmm",
        Outcome::Refusal => "I cannot",
    };
    let all = [Outcome::Valid, Outcome::OutOfRange, Outcome::Unparseable, Outcome::Refusal];
    let mut traces = 0;
    for code in 0..4usize.pow(4) {
        let outcomes: Vec<Outcome> = (0..4).map(|d| all[(code / 4usize.pow(d)) % 4]).collect();
        let script: Vec<&'static str> = outcomes.iter().map(|o| text(*o)).collect();
        let r = Scripted::new(&script);
        let out = drive(&arousal_job(1.0), &r, &RetryPolicy::default(), &Recorder::default()).unwrap();
        let stages: Vec<Stage> = out.attempts.iter().map(|a| a.stage).collect();
        assert_eq!(stages, expected_stages(&outcomes), "{outcomes:?}");
        assert!(stages.len() <= 4);
        assert!(stages.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.calls.lock().unwrap().len(), stages.len());
        let last = out.attempts.last().unwrap().outcome;
        assert_eq!(out.record.effectively_valid(), last == Outcome::Valid);
        traces += 1;
    }
    assert_eq!(traces, 256);
}

#[test]
fn transport_errors_back_off_then_fail() {
    let failures = Mutex::new(0);
    let flaky = |_: &str, _: f64| -> Result<String, TransportError> {
        let mut n = failures.lock().unwrap();
        *n += 1;
        if *n <= 3 {
            Err(TransportError("engine restarted".into()))
        } else {
            Ok("3".into())
        }
    };
    let sleeper = Recorder::default();
    let out = drive(&arousal_job(1.0), &flaky, &RetryPolicy::default(), &sleeper).unwrap();
    assert_eq!(out.attempts.len(), 1);
    assert_eq!(*sleeper.0.lock().unwrap(), [2, 4, 8].map(Duration::from_secs));

    let down = |_: &str, _: f64| -> Result<String, TransportError> { Err(TransportError("down".into())) };
    let sleeper = Recorder::default();
    let err = drive(&arousal_job(1.0), &down, &RetryPolicy::default(), &sleeper).unwrap_err();
    assert!(matches!(err, varcross_core::Error::Transport { attempts: 6, .. }), "{err}");
    assert_eq!(sleeper.0.lock().unwrap().len(), 5);
    assert_eq!(sleeper.0.lock().unwrap()[4], Duration::from_secs(32));
}

#[test]
fn drive_is_deterministic() {
    let a = drive(&arousal_job(1.0), &Scripted::new(&["x", "12", "6"]), &RetryPolicy::default(), &Recorder::default())
        .unwrap();
    let b = drive(&arousal_job(1.0), &Scripted::new(&["x", "12", "6"]), &RetryPolicy::default(), &Recorder::default())
        .unwrap();
    assert_eq!(a, b);
}

fn context_parts() -> (BTreeMap<String, Template>, BTreeMap<String, NormSpec>) {
    let templates = builtin_templates();
    let specs = ["arousal", "concreteness"].iter().map(|n| (n.to_string(), builtin_spec(n).unwrap())).collect();
    (templates, specs)
}

#[test]
fn manifest_runs_resume_without_repeating_work() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = "norm,word,temperature,repetitions\narousal,storm,1.0,3\nconcreteness,stone,0.0,1\n";
    let rows = read_manifest(manifest.as_bytes()).unwrap();
    let (templates, specs) = context_parts();
    let policy = RetryPolicy::default();
    let sleeper = Recorder::default();
    let transcript = dir.path().join("t.jsonl");

    let counting = Mutex::new(0usize);
    let responder = |p: &str, _: f64| -> Result<String, TransportError> {
        *counting.lock().unwrap() += 1;
        Ok(if p.contains("concreteness") { "4".into() } else { "6".into() })
    };
    let ctx = RunContext {
        model: "m1".into(),
        templates: &templates,
        specs: &specs,
        policy: &policy,
        responder: &responder,
        sleeper: &sleeper,
        workers: 2,
    };
    let first = run_manifest(&rows, &ctx, &transcript).unwrap();
    assert_eq!(first.len(), 4);
    assert_eq!(*counting.lock().unwrap(), 4);
    assert_eq!(first[3].decode_mode, DecodeMode::Deterministic);
    assert_eq!(first.iter().map(|r| r.repetition).collect::<Vec<_>>(), [1, 2, 3, 1]);

    // a torn trailing line is ignored on resume
    let mut f = std::fs::OpenOptions::new().append(true).open(&transcript).unwrap();
    std::io::Write::write_all(&mut f, b"{\"model\":\"m1\",\"nor").unwrap();
    drop(f);
    let second = run_manifest(&rows, &ctx, &transcript).unwrap();
    assert_eq!(*counting.lock().unwrap(), 4);
    assert_eq!(first, second);

    let mut csv = Vec::new();
    write_raw_csv(&mut csv, &second).unwrap();
    assert_eq!(read_raw_csv(csv.as_slice()).unwrap(), second);
}

#[test]
fn transcript_lines_are_one_attempt_each() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![ManifestRow { norm: "arousal".into(), word: "calm".into(), temperature: 1.0, repetitions: 1 }];
    let (templates, specs) = context_parts();
    let policy = RetryPolicy::default();
    let sleeper = Recorder::default();
    let r = Scripted::new(&["15", "nope", "8"]);
    let ctx = RunContext {
        model: "m".into(),
        templates: &templates,
        specs: &specs,
        policy: &policy,
        responder: &r,
        sleeper: &sleeper,
        workers: 1,
    };
    let path = dir.path().join("t.jsonl");
    run_manifest(&rows, &ctx, &path).unwrap();
    let lines: Vec<TranscriptLine> =
        std::fs::read_to_string(&path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let stages: Vec<Stage> = lines.iter().map(|l| l.stage).collect();
    assert_eq!(stages, [Stage::Initial, Stage::Scale, Stage::Parse]);
    assert_eq!(lines.iter().filter(|l| l.is_final).count(), 1);
    assert!(lines[2].is_final);
    let v: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
    for key in ["model", "norm", "word", "repetition", "decode_mode", "stage", "prompt", "raw_response", "final"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn manifest_validation() {
    assert!(read_manifest("norm,word,temperature,repetitions\na,b,-1,1\n".as_bytes()).is_err());
    assert!(read_manifest("norm,word,temperature,repetitions\na,b,1,0\n".as_bytes()).is_err());
    let rows = vec![ManifestRow { norm: "a".into(), word: "b, c".into(), temperature: 0.5, repetitions: 2 }];
    let mut buf = Vec::new();
    write_manifest(&mut buf, &rows).unwrap();
    assert_eq!(read_manifest(buf.as_slice()).unwrap(), rows);
}
