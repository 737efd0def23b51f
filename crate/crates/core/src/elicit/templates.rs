//! Prompt templates stored as data files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{word}";

/// Substitute `word` for the single `{word}` placeholder.
pub fn render_prompt(template: &str, word: &str) -> Result<String> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(template.replacen(PLACEHOLDER, word, 1)),
        0 => Err(Error::Template("template has no {word} placeholder".into())),
        n => Err(Error::Template(format!("template has {n} {{word}} placeholders, expected one"))),
    }
}

/// A named template. Some scales repeat the word in every anchor line, so
/// the placeholder count is recorded on load and every occurrence is
/// replaced when rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub norm: String,
    pub text: String,
    placeholders: usize,
}

impl Template {
    pub fn new(norm: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let norm = norm.into();
        let text = text.into();
        let placeholders = text.matches(PLACEHOLDER).count();
        if placeholders == 0 {
            return Err(Error::Template(format!("template `{norm}` has no {{word}} placeholder")));
        }
        Ok(Template { norm, text, placeholders })
    }

    pub fn placeholders(&self) -> usize {
        self.placeholders
    }

    pub fn render(&self, word: &str) -> String {
        self.text.replace(PLACEHOLDER, word)
    }

    /// `{norm}.txt`; a single trailing newline is dropped.
    pub fn load(path: &Path) -> Result<Self> {
        let norm = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Template(format!("bad template path {}", path.display())))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(norm, strip_newline(&text))
    }
}

fn strip_newline(text: &str) -> &str {
    text.strip_suffix('\n').map(|t| t.strip_suffix('\r').unwrap_or(t)).unwrap_or(text)
}

macro_rules! bundled {
    ($($norm:literal),* $(,)?) => {
        &[$(($norm, include_str!(concat!("../../templates/", $norm, ".txt")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled!(
    "arousal",
    "concreteness",
    "valence_pos",
    "valence_neg",
    "visual",
    "auditory",
    "gustatory",
    "olfactory",
    "haptic",
    "aoa_kuperman",
    "aoa_brysbaert",
    "morality",
    "gender",
    "humor",
    "socialness",
);

/// The fifteen elicited scales (valence is asked as two unipolar halves).
pub fn builtin_templates() -> BTreeMap<String, Template> {
    BUNDLED
        .iter()
        .map(|(norm, text)| (norm.to_string(), Template::new(*norm, strip_newline(text)).expect("bundled template")))
        .collect()
}

/// Every `*.txt` in `dir`, keyed by file stem.
pub fn load_templates(dir: &Path) -> Result<BTreeMap<String, Template>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "txt") {
            let t = Template::load(&path)?;
            out.insert(t.norm.clone(), t);
        }
    }
    Ok(out)
}
