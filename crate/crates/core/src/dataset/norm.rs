//! Per-norm rating scales.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exact scale value. Parsed responses and scale bounds are compared exactly.
pub type Rational = BigRational;

/// Parse `"7"`, `"-3"`, `"3.25"` or `"7/2"` into an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num: BigInt = num.trim().parse().ok()?;
        let den: BigInt = den.trim().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(Rational::new(num, den));
    }
    parse_decimal(text)
}

/// Exact value of a decimal literal `[+-]?digits(.digits)?`.
pub fn parse_decimal(text: &str) -> Option<Rational> {
    let (negative, body) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if body.contains('.') && (frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut mantissa: BigInt = digits.parse().ok()?;
    if negative {
        mantissa = -mantissa;
    }
    let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(Rational::new(mantissa, scale))
}

/// Render a rational the way a person would type it: integers bare,
/// terminating decimals in decimal notation, anything else as `p/q`.
pub fn format_rational(value: &Rational) -> String {
    if value.is_integer() {
        return value.to_integer().to_string();
    }
    let mut den = value.denom().clone();
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    let (mut twos, mut fives) = (0u32, 0u32);
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return format!("{}/{}", value.numer(), value.denom());
    }
    let places = twos.max(fives);
    let scaled = value * Rational::from_integer(BigInt::from(10u32).pow(places));
    let digits = scaled.to_integer().abs().to_string();
    let padded = format!("{digits:0>width$}", width = places as usize + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - places as usize);
    let sign = if value.is_negative() { "-" } else { "" };
    format!("{sign}{int_part}.{frac_part}")
}

pub fn rational_to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

fn rational_from_toml(value: &toml::Value) -> Option<Rational> {
    match value {
        toml::Value::Integer(i) => Some(Rational::from_integer(BigInt::from(*i))),
        toml::Value::Float(f) => parse_decimal(&f.to_string()),
        toml::Value::String(s) => parse_rational(s),
        _ => None,
    }
}

mod rational_serde {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).ok_or_else(|| serde::de::Error::custom(format!("not a rational: {text:?}")))
    }
}

/// Affine recoding applied at analysis time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `x ↦ a − x`
    Reflect {
        #[serde(with = "rational_serde")]
        a: Rational,
    },
    /// `x ↦ a + b·x`, `b ≠ 0`
    Affine {
        #[serde(with = "rational_serde")]
        a: Rational,
        #[serde(with = "rational_serde")]
        b: Rational,
    },
}

impl Transform {
    pub fn apply(&self, x: &Rational) -> Rational {
        match self {
            Transform::Reflect { a } => a - x,
            Transform::Affine { a, b } => a + b * x,
        }
    }

    pub fn apply_f64(&self, x: f64) -> f64 {
        match self {
            Transform::Reflect { a } => rational_to_f64(a) - x,
            Transform::Affine { a, b } => rational_to_f64(a) + rational_to_f64(b) * x,
        }
    }

    pub fn inverse(&self) -> Transform {
        match self {
            Transform::Reflect { a } => Transform::Reflect { a: a.clone() },
            Transform::Affine { a, b } => {
                let inv_b = b.recip();
                Transform::Affine { a: -(a * &inv_b), b: inv_b }
            }
        }
    }

    pub fn is_invertible(&self) -> bool {
        match self {
            Transform::Reflect { .. } => true,
            Transform::Affine { b, .. } => !b.is_zero(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Reflect { a } => write!(f, "{} - x", format_rational(a)),
            Transform::Affine { a, b } => {
                write!(f, "{} + {}*x", format_rational(a), format_rational(b))
            }
        }
    }
}

/// Scale definition for one norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormSpec {
    pub norm_id: String,
    pub scale_min: Rational,
    pub scale_max: Rational,
    /// Closed response set, e.g. school grades.
    pub allowed_values: Option<BTreeSet<Rational>>,
    pub transform: Option<Transform>,
    /// Valence-style composite built as `<norm>_pos − <norm>_neg`.
    pub is_bipolar_composite: bool,
}

impl NormSpec {
    pub fn new(norm_id: impl Into<String>, min: i64, max: i64) -> Result<Self> {
        Self::builder(norm_id, Rational::from_integer(min.into()), Rational::from_integer(max.into())).build()
    }

    pub fn builder(norm_id: impl Into<String>, min: Rational, max: Rational) -> NormSpecBuilder {
        NormSpecBuilder {
            spec: NormSpec {
                norm_id: norm_id.into(),
                scale_min: min,
                scale_max: max,
                allowed_values: None,
                transform: None,
                is_bipolar_composite: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::NormSpec { norm: self.norm_id.clone(), reason });
        if self.norm_id.trim().is_empty() {
            return fail("empty norm id".into());
        }
        if self.scale_min >= self.scale_max {
            return fail(format!(
                "scale_min {} must be below scale_max {}",
                format_rational(&self.scale_min),
                format_rational(&self.scale_max)
            ));
        }
        if let Some(allowed) = &self.allowed_values {
            if allowed.is_empty() {
                return fail("allowed_values is empty".into());
            }
            if let Some(v) = allowed.iter().find(|v| !self.in_range(v)) {
                return fail(format!("allowed value {} outside the scale", format_rational(v)));
            }
        }
        if let Some(t) = &self.transform {
            if !t.is_invertible() {
                return fail(format!("transform `{t}` is not invertible"));
            }
        }
        Ok(())
    }

    pub fn in_range(&self, value: &Rational) -> bool {
        *value >= self.scale_min && *value <= self.scale_max
    }

    /// Response-scale validity: within bounds and, if a closed set is
    /// declared, a member of it.
    pub fn accepts(&self, value: &Rational) -> bool {
        self.in_range(value) && self.allowed_values.as_ref().is_none_or(|allowed| allowed.contains(value))
    }

    /// Value on the analysis scale.
    pub fn to_analysis(&self, value: &Rational) -> Rational {
        match &self.transform {
            Some(t) => t.apply(value),
            None => value.clone(),
        }
    }

    /// Bounds of the analysis scale, ordered.
    pub fn analysis_bounds(&self) -> (f64, f64) {
        let a = rational_to_f64(&self.to_analysis(&self.scale_min));
        let b = rational_to_f64(&self.to_analysis(&self.scale_max));
        (a.min(b), a.max(b))
    }

    /// Component norm ids of a bipolar composite.
    pub fn component_ids(&self) -> Option<(String, String)> {
        self.is_bipolar_composite.then(|| (format!("{}_pos", self.norm_id), format!("{}_neg", self.norm_id)))
    }

    /// Parse a key-value TOML spec.
    ///
    /// ```toml
    /// norm_id = "arousal"
    /// scale_min = 1
    /// scale_max = 9
    /// allowed_values = [4, 6, "12.5"]   # optional
    /// bipolar = false                   # optional
    /// [transform]                       # optional
    /// kind = "reflect"
    /// a = 10
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let norm_id = table
            .get("norm_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::NormSpec { norm: "?".into(), reason: "missing string key `norm_id`".into() })?
            .to_string();
        let fail = |reason: String| Error::NormSpec { norm: norm_id.clone(), reason };
        let rational_key = |key: &str| -> Result<Rational> {
            let v = table.get(key).ok_or_else(|| fail(format!("missing key `{key}`")))?;
            rational_from_toml(v).ok_or_else(|| fail(format!("`{key}` is not a number: {v}")))
        };
        let scale_min = rational_key("scale_min")?;
        let scale_max = rational_key("scale_max")?;
        let allowed_values = match table.get("allowed_values") {
            None => None,
            Some(toml::Value::Array(items)) => Some(
                items
                    .iter()
                    .map(|v| rational_from_toml(v).ok_or_else(|| fail(format!("allowed value is not a number: {v}"))))
                    .collect::<Result<BTreeSet<_>>>()?,
            ),
            Some(other) => return Err(fail(format!("allowed_values must be an array, got {other}"))),
        };
        let transform = match table.get("transform") {
            None => None,
            Some(toml::Value::Table(t)) => {
                let coef = |key: &str| -> Result<Rational> {
                    let v = t.get(key).ok_or_else(|| fail(format!("transform is missing `{key}`")))?;
                    rational_from_toml(v).ok_or_else(|| fail(format!("transform `{key}` is not a number: {v}")))
                };
                match t.get("kind").and_then(|k| k.as_str()) {
                    Some("reflect") => Some(Transform::Reflect { a: coef("a")? }),
                    Some("affine") => Some(Transform::Affine { a: coef("a")?, b: coef("b")? }),
                    other => return Err(fail(format!("transform kind must be `reflect` or `affine`, got {other:?}"))),
                }
            }
            Some(other) => return Err(fail(format!("transform must be a table, got {other}"))),
        };
        let is_bipolar_composite = match table.get("bipolar") {
            None => false,
            Some(v) => v.as_bool().ok_or_else(|| fail("`bipolar` must be a boolean".into()))?,
        };
        let spec = NormSpec {
            norm_id: norm_id.clone(),
            scale_min,
            scale_max,
            allowed_values,
            transform,
            is_bipolar_composite,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = format!(
            "norm_id = {:?}\nscale_min = {:?}\nscale_max = {:?}\n",
            self.norm_id,
            format_rational(&self.scale_min),
            format_rational(&self.scale_max)
        );
        if let Some(allowed) = &self.allowed_values {
            let items: Vec<String> = allowed.iter().map(|v| format!("{:?}", format_rational(v))).collect();
            out.push_str(&format!("allowed_values = [{}]\n", items.join(", ")));
        }
        if self.is_bipolar_composite {
            out.push_str("bipolar = true\n");
        }
        match &self.transform {
            Some(Transform::Reflect { a }) => {
                out.push_str(&format!("\n[transform]\nkind = \"reflect\"\na = {:?}\n", format_rational(a)))
            }
            Some(Transform::Affine { a, b }) => out.push_str(&format!(
                "\n[transform]\nkind = \"affine\"\na = {:?}\nb = {:?}\n",
                format_rational(a),
                format_rational(b)
            )),
            None => {}
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

pub struct NormSpecBuilder {
    spec: NormSpec,
}

impl NormSpecBuilder {
    pub fn allowed<I: IntoIterator<Item = i64>>(mut self, values: I) -> Self {
        self.spec.allowed_values = Some(values.into_iter().map(|v| Rational::from_integer(v.into())).collect());
        self
    }

    pub fn reflect(mut self, a: i64) -> Self {
        self.spec.transform = Some(Transform::Reflect { a: Rational::from_integer(a.into()) });
        self
    }

    pub fn transform(mut self, t: Transform) -> Self {
        self.spec.transform = Some(t);
        self
    }

    pub fn bipolar(mut self) -> Self {
        self.spec.is_bipolar_composite = true;
        self
    }

    pub fn build(self) -> Result<NormSpec> {
        self.spec.validate()?;
        Ok(self.spec)
    }
}

/// Load every `*.toml` spec in a directory, keyed by norm id.
pub fn load_spec_dir(dir: &Path) -> Result<std::collections::BTreeMap<String, NormSpec>> {
    let mut specs = std::collections::BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for path in paths {
        let spec = NormSpec::load(&path)?;
        if specs.insert(spec.norm_id.clone(), spec).is_some() {
            return Err(Error::InvalidInput(format!("duplicate norm id in {}", path.display())));
        }
    }
    Ok(specs)
}

/// Ids of the fourteen analysed norms, in reporting order.
pub const ANALYSIS_NORMS: [&str; 14] = [
    "arousal",
    "concreteness",
    "valence",
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
];

/// Built-in scales for the fourteen norms plus the two unipolar valence
/// components they are assembled from.
pub fn builtin_specs() -> Vec<NormSpec> {
    let plain = |id: &str, min: i64, max: i64| NormSpec::new(id, min, max).expect("valid builtin");
    let mut specs = vec![
        NormSpec::builder("arousal", 1.into_r(), 9.into_r()).reflect(10).build().expect("valid builtin"),
        plain("concreteness", 1, 5),
        NormSpec::builder("valence", (-3).into_r(), 3.into_r()).bipolar().build().expect("valid builtin"),
        plain("valence_pos", 0, 3),
        plain("valence_neg", 0, 3),
    ];
    for sense in ["visual", "auditory", "gustatory", "olfactory", "haptic"] {
        specs.push(plain(sense, 0, 5));
    }
    specs.push(plain("aoa_kuperman", 1, 25));
    specs.push(
        NormSpec::builder("aoa_brysbaert", 4.into_r(), 16.into_r())
            .allowed([4, 6, 8, 10, 12, 13, 16])
            .build()
            .expect("valid builtin"),
    );
    specs.push(plain("morality", 1, 7));
    specs.push(plain("gender", 1, 7));
    specs.push(plain("humor", 1, 5));
    specs.push(plain("socialness", 1, 7));
    specs
}

trait IntoRational {
    fn into_r(self) -> Rational;
}

impl IntoRational for i64 {
    fn into_r(self) -> Rational {
        Rational::from_integer(self.into())
    }
}

pub fn builtin_spec(norm_id: &str) -> Option<NormSpec> {
    builtin_specs().into_iter().find(|s| s.norm_id == norm_id)
}
