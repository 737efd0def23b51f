//! Leading-number extraction and response classification.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use super::norm::{parse_decimal, NormSpec, Rational};
use crate::error::{Error, Result};

static LEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([+-]?[0-9]+(?:\.[0-9]+)?)").expect("static regex"));

/// Case-insensitive substrings that mark a refusal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalPatterns {
    patterns: Vec<String>,
}

impl Default for RefusalPatterns {
    fn default() -> Self {
        Self::new(["as an AI", "I cannot"])
    }
}

impl RefusalPatterns {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            patterns: patterns
                .into_iter()
                .map(|p| p.as_ref().trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    /// One pattern per line; blank lines and `#` comments are ignored.
    pub fn from_lines(text: &str) -> Self {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(&text))
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }
}

/// Classification of one raw response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Valid(Rational),
    /// A number was extracted but lies off the scale or outside the
    /// allowed set.
    OutOfRange(Rational),
    Unparseable,
    Refusal,
}

impl ParseOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, ParseOutcome::Valid(_))
    }

    pub fn value(&self) -> Option<&Rational> {
        match self {
            ParseOutcome::Valid(v) | ParseOutcome::OutOfRange(v) => Some(v),
            _ => None,
        }
    }
}

/// The decimal literal at the start of `raw` after leading whitespace, if any.
pub fn leading_number(raw: &str) -> Option<Rational> {
    let caps = LEADING_NUMBER.captures(raw)?;
    parse_decimal(caps.get(1)?.as_str())
}

/// Classify a raw response against a norm's scale. Total: every string
/// maps to exactly one outcome.
pub fn parse_response(raw: &str, spec: &NormSpec, refusals: &RefusalPatterns) -> ParseOutcome {
    match leading_number(raw) {
        Some(v) if spec.accepts(&v) => ParseOutcome::Valid(v),
        _ if refusals.matches(raw) => ParseOutcome::Refusal,
        Some(v) => ParseOutcome::OutOfRange(v),
        None => ParseOutcome::Unparseable,
    }
}
