//! Report assembly: dimension aggregation, the JSON bundle, an aligned
//! text summary and plot-ready CSV files.

mod pipeline;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pipeline::{run_synthetic, PipelineConfig, PipelineOutput};
pub use text::{format_p, render_text};

use crate::alignment::AlignmentReport;
use crate::error::{Error, Result};
use crate::lmm::{Components, VarianceFit};
use crate::nullsim::NullTestResult;
use crate::scalar::Real;
use crate::specificity::SpecificityResult;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// JSON schema the bundle conforms to.
pub const BUNDLE_SCHEMA: &str = include_str!("../../schema/report_bundle.schema.json");

pub const SENSORY_NORMS: [&str; 5] = ["visual", "auditory", "gustatory", "olfactory", "haptic"];
pub const AOA_NORMS: [&str; 2] = ["aoa_kuperman", "aoa_brysbaert"];

/// Named groups of norms; every norm belongs to exactly one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionGrouping {
    pub groups: BTreeMap<String, Vec<String>>,
}

impl DimensionGrouping {
    pub fn new(groups: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, members) in &groups {
            if members.is_empty() {
                return Err(Error::InvalidInput(format!("group `{name}` has no members")));
            }
            for m in members {
                if !seen.insert(m.clone()) {
                    return Err(Error::InvalidInput(format!("norm `{m}` is in more than one group")));
                }
            }
        }
        Ok(DimensionGrouping { groups })
    }

    /// The five sensory norms become "Sensory Norms", the two
    /// age-of-acquisition norms "Age of Acquisition", and every other norm
    /// stands alone under its own id.
    pub fn standard<S: AsRef<str>>(norms: &[S]) -> Self {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for n in norms {
            let n = n.as_ref();
            let name = if SENSORY_NORMS.contains(&n) {
                "Sensory Norms"
            } else if AOA_NORMS.contains(&n) {
                "Age of Acquisition"
            } else {
                n
            };
            groups.entry(name.to_string()).or_default().push(n.to_string());
        }
        for members in groups.values_mut() {
            members.sort();
            members.dedup();
        }
        DimensionGrouping { groups }
    }

    pub fn group_of(&self, norm: &str) -> Option<&str> {
        self.groups.iter().find(|(_, m)| m.iter().any(|x| x == norm)).map(|(g, _)| g.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProportions<T> {
    pub group: String,
    pub members: Vec<String>,
    pub proportions: Components<T>,
}

/// Unweighted mean of each component's proportion over a group's members.
/// A group with an unfitted member is left out.
pub fn aggregate_dimensions<T: Real>(
    proportions: &BTreeMap<String, Components<T>>,
    grouping: &DimensionGrouping,
) -> Vec<GroupProportions<T>> {
    let mut out = Vec::new();
    for (group, members) in &grouping.groups {
        let found: Vec<&Components<T>> = members.iter().filter_map(|m| proportions.get(m)).collect();
        if found.len() != members.len() {
            let missing: Vec<&String> = members.iter().filter(|m| !proportions.contains_key(*m)).collect();
            log::warn!("group `{group}` omitted: no proportions for {missing:?}");
            continue;
        }
        let n = T::of_usize(found.len());
        let mut sum = [T::zero(); 4];
        for p in &found {
            for (s, v) in sum.iter_mut().zip(p.to_array()) {
                *s += v;
            }
        }
        out.push(GroupProportions {
            group: group.clone(),
            members: members.clone(),
            proportions: Components::from_array(sum.map(|s| s / n)),
        });
    }
    out
}

/// Null-test outcome without the per-iteration draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub norm: String,
    pub n_iter: usize,
    pub n_ok: usize,
    pub exceedances: usize,
    pub observed: f64,
    pub p_value: f64,
    pub conservative: bool,
    /// Largest interaction share of total variance among the null refits.
    pub max_null_proportion: Option<f64>,
    pub display: String,
}

impl NullSummary {
    pub fn of(r: &NullTestResult<f64>) -> Self {
        NullSummary {
            norm: r.norm.clone(),
            n_iter: r.n_iter,
            n_ok: r.n_ok(),
            exceedances: r.exceedances(),
            observed: r.observed,
            p_value: r.p_value,
            conservative: r.conservative,
            max_null_proportion: r.null_proportions.iter().copied().reduce(f64::max),
            display: format_p(r.p_value, r.n_ok(), r.exceedances()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format_version: u32,
    pub root_seed: Option<u64>,
    #[serde(default)]
    pub fits: Vec<VarianceFit<f64>>,
    #[serde(default)]
    pub dimensions: Vec<GroupProportions<f64>>,
    #[serde(default)]
    pub null_tests: Vec<NullSummary>,
    #[serde(default)]
    pub specificity: Vec<SpecificityResult<f64>>,
    /// The same analysis on raw per-word means.
    #[serde(default)]
    pub specificity_raw: Vec<SpecificityResult<f64>>,
    #[serde(default)]
    pub alignment: Vec<AlignmentReport<f64>>,
}

impl ReportBundle {
    pub fn empty(root_seed: Option<u64>) -> Self {
        ReportBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            root_seed,
            fits: Vec::new(),
            dimensions: Vec::new(),
            null_tests: Vec::new(),
            specificity: Vec::new(),
            specificity_raw: Vec::new(),
            alignment: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
            && self.null_tests.is_empty()
            && self.specificity.is_empty()
            && self.specificity_raw.is_empty()
            && self.alignment.is_empty()
    }

    /// Fill `dimensions` from the fits' proportions.
    pub fn aggregate(&mut self, grouping: &DimensionGrouping) {
        let props: BTreeMap<String, Components<f64>> =
            self.fits.iter().filter_map(|f| f.proportions.map(|p| (f.norm.clone(), p))).collect();
        self.dimensions = aggregate_dimensions(&props, grouping);
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// JSON bundle and text summary.
pub fn render_report(bundle: &ReportBundle) -> Result<(String, String)> {
    if bundle.is_empty() {
        return Err(Error::InvalidInput("nothing to report".into()));
    }
    Ok((bundle.to_json()?, render_text(bundle)))
}

/// Write `report.json`, `report.txt` and the plot CSVs into `dir`.
pub fn write_report(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    let (json, text) = render_report(bundle)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    put("report.json", &json)?;
    put("report.txt", &text)?;
    write_plot_data(dir, bundle)
}

fn csv_file(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    let p = dir.join(name);
    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Long-format CSVs for plotting. Files for absent sections are not written.
pub fn write_plot_data(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    use crate::lmm::COMPONENT_NAMES;
    let finish = |mut w: csv::Writer<std::fs::File>| w.flush().map_err(|e| Error::io(dir, e));
    if !bundle.fits.is_empty() {
        let mut w = csv_file(dir, "variance_proportions.csv")?;
        w.write_record(["norm", "component", "sigma2", "proportion"])?;
        for f in &bundle.fits {
            let props = f.proportions.map(|p| p.to_array());
            for (c, name) in COMPONENT_NAMES.iter().enumerate() {
                let p = props.map(|p| p[c].to_string()).unwrap_or_default();
                w.write_record([f.norm.as_str(), name, &f.sigma2.to_array()[c].to_string(), &p])?;
            }
        }
        finish(w)?;
    }
    if !bundle.dimensions.is_empty() {
        let mut w = csv_file(dir, "dimension_proportions.csv")?;
        w.write_record(["group", "component", "proportion"])?;
        for g in &bundle.dimensions {
            for (name, v) in COMPONENT_NAMES.iter().zip(g.proportions.to_array()) {
                w.write_record([g.group.as_str(), name, &v.to_string()])?;
            }
        }
        finish(w)?;
    }
    for (file, results) in
        [("specificity_ratios.csv", &bundle.specificity), ("specificity_raw_ratios.csv", &bundle.specificity_raw)]
    {
        if results.is_empty() {
            continue;
        }
        let mut w = csv_file(dir, file)?;
        w.write_record(["model", "norm", "within_r2", "mean_cross_r2", "ratio"])?;
        for r in results {
            for n in &r.per_norm {
                let mean_cross = if n.cross_r2.is_empty() {
                    String::new()
                } else {
                    (n.cross_r2.values().sum::<f64>() / n.cross_r2.len() as f64).to_string()
                };
                let ratio = n.ratio.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([r.model.as_str(), &n.norm, &n.within_r2.to_string(), &mean_cross, &ratio])?;
            }
        }
        finish(w)?;
    }
    if !bundle.alignment.is_empty() {
        let mut w = csv_file(dir, "alignment.csv")?;
        w.write_record(["model", "norm", "r_stochastic", "r_deterministic", "delta_r", "overlap_n"])?;
        for a in &bundle.alignment {
            for n in &a.per_norm {
                w.write_record([
                    a.model.as_str(),
                    &n.norm,
                    &n.r_stochastic.to_string(),
                    &n.r_deterministic.to_string(),
                    &n.delta_r.to_string(),
                    &n.overlap_n.to_string(),
                ])?;
            }
        }
        finish(w)?;
    }
    Ok(())
}
