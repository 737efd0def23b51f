use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use varcross_core::alignment::{align_models, load_human_norms, load_norm_ratings};
use varcross_core::dataset::{
    build_dataset, builtin_specs, load_spec_dir, postprocess, read_raw_csv, write_cell_means, CrossedDataset,
    DecodeMode, RefusalPatterns,
};
use varcross_core::lmm::{blups, fit, Criterion, FitOptions, VarianceFit};
use varcross_core::nullsim::{run_null_test, NullOptions, NullTestResult};
use varcross_core::report::{
    run_synthetic, write_report, DimensionGrouping, NullSummary, PipelineConfig, ReportBundle,
};
use varcross_core::specificity::{
    load_blup_scores, load_mean_ratings, raw_rating_specificity, specificity_analysis, RidgeOptions, SpecificityResult,
};
use varcross_core::synth::{generate, BatteryConfig, GeneratorConfig};

use crate::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] varcross_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(varcross_core::Error::Numerical(_) | varcross_core::Error::Undefined(_)) => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(varcross_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(varcross_core::Error::from)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| io(&cli.out_dir, e))?;
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit_cmd(cli, a),
        Command::Bootstrap(a) => bootstrap(cli, a),
        Command::Blups(a) => blups_cmd(cli, a),
        Command::Specificity(a) => specificity(cli, a),
        Command::Align(a) => align(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn ingest(cli: &Cli, a: &crate::IngestArgs) -> Result<()> {
    let specs = match &a.specs {
        Some(dir) => load_spec_dir(dir)?,
        None => builtin_specs().into_iter().map(|s| (s.norm_id.clone(), s)).collect(),
    };
    let refusals = match &a.refusals {
        Some(p) => RefusalPatterns::load(p)?,
        None => RefusalPatterns::default(),
    };
    let file = std::fs::File::open(&a.raw).map_err(|e| io(&a.raw, e))?;
    let raw = read_raw_csv(std::io::BufReader::new(file))?;
    let by_norm = postprocess(raw, &specs, &refusals)?;
    let data_dir = cli.out_dir.join("data");
    let ratings_dir = cli.out_dir.join("ratings");
    for d in [&data_dir, &ratings_dir] {
        std::fs::create_dir_all(d).map_err(|e| io(d, e))?;
    }
    for (norm, records) in by_norm {
        let spec = &specs[&norm];
        for mode in [DecodeMode::Stochastic, DecodeMode::Deterministic] {
            let subset: Vec<_> = records.iter().filter(|r| r.decode_mode == mode).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            let (data, report) = build_dataset(&subset, spec)?;
            let means_name = match mode {
                DecodeMode::Stochastic => {
                    data.save(&data_dir.join(format!("{norm}.csv")), Some(report.clone()))?;
                    format!("{norm}_means.csv")
                }
                DecodeMode::Deterministic => format!("{norm}_deterministic.csv"),
            };
            let path = ratings_dir.join(means_name);
            let f = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
            write_cell_means(std::io::BufWriter::new(f), &data.cell_means())?;
            println!(
                "{norm} ({mode}): {} of {} responses kept, {} words × {} models",
                data.n_obs(),
                subset.len(),
                data.n_words(),
                data.n_models()
            );
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, a: &crate::SimulateArgs) -> Result<()> {
    let s = &a.sigma2;
    if s.len() != 4 {
        return Err(CliError::Usage(format!("--sigma2 takes four values, got {}", s.len())));
    }
    let mut config = GeneratorConfig::new(a.i, a.j, a.k, [s[0], s[1], s[2], s[3]], cli.seed);
    config.missing_rate = a.missing;
    config.norm = a.norm.clone();
    let (data, truth) = generate(&config)?;
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("{}.csv", a.norm)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    data.save(&out, None)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    write(&out.with_file_name(format!("{stem}_truth.json")), &(truth.to_json()? + "\n"))?;
    println!("{} observations in {} cells written to {}", truth.n_obs, truth.n_cells, out.display());
    Ok(())
}

fn load_data(path: &Path) -> Result<CrossedDataset> {
    Ok(CrossedDataset::load(path)?.0)
}

fn fit_cmd(cli: &Cli, a: &crate::FitArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let opts =
        FitOptions::<f64> { criterion: if a.ml { Criterion::Ml } else { Criterion::Reml }, ..FitOptions::default() };
    let f = fit(&data, &opts)?;
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("{}_fit.json", f.norm)));
    write(&out, &f.to_json()?)?;
    match f.proportions {
        Some(p) => println!(
            "{}: trait {:.1}%  bias {:.1}%  idiosyncrasy {:.1}%  residual {:.1}%{}",
            f.norm,
            100.0 * p.tau,
            100.0 * p.beta,
            100.0 * p.iota,
            100.0 * p.residual,
            if f.converged { "" } else { "  (not converged)" }
        ),
        None => println!("{}: constant data, all components zero", f.norm),
    }
    Ok(())
}

fn bootstrap(cli: &Cli, a: &crate::BootstrapArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let f = VarianceFit::<f64>::load(&a.fit)?;
    let opts = NullOptions { workers: cli.workers.max(1), conservative: a.conservative, ..NullOptions::default() };
    let r = run_null_test(&data, &f, a.n, cli.seed, &opts)?;
    write(&cli.out_dir.join(format!("{}_null.json", r.norm)), &json(&r)?)?;
    println!("{}: {}", r.norm, NullSummary::of(&r).display);
    Ok(())
}

fn blups_cmd(cli: &Cli, a: &crate::BlupArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let f = VarianceFit::<f64>::load(&a.fit)?;
    let table = blups(&data, &f)?;
    let paths = table.save(&cli.out_dir)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn specificity(cli: &Cli, a: &crate::SpecificityArgs) -> Result<()> {
    let opts = RidgeOptions { folds: a.folds, seed: cli.seed, ..RidgeOptions::default() };
    let pool = rayon_pool(cli.workers)?;
    let results = pool.install(|| specificity_analysis::<f64>(&load_blup_scores(&a.blups)?, &opts))?;
    write(&cli.out_dir.join("specificity.json"), &json(&results)?)?;
    print_ratios("BLUPs", &results);
    if let Some(dir) = &a.raw_ratings {
        let raw = pool.install(|| raw_rating_specificity::<f64>(&load_mean_ratings(dir)?, &opts))?;
        write(&cli.out_dir.join("specificity_raw.json"), &json(&raw)?)?;
        print_ratios("raw means", &raw);
    }
    Ok(())
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn print_ratios(label: &str, results: &[SpecificityResult<f64>]) {
    for r in results {
        match r.mean_ratio {
            Some(m) => println!("{} ({label}): mean ratio {m:.2}", r.model),
            None => println!("{} ({label}): ratio undefined", r.model),
        }
    }
}

fn align(cli: &Cli, a: &crate::AlignArgs) -> Result<()> {
    let ratings = load_norm_ratings(&a.ratings)?;
    let humans = load_human_norms(&a.human)?;
    let reports = align_models::<f64>(&ratings, &humans, &BTreeMap::new())?;
    write(&cli.out_dir.join("alignment.json"), &json(&reports)?)?;
    for r in &reports {
        match r.r_bar {
            Some(x) => println!("{}: r_bar {x:.3} over {} norms", r.model, r.per_norm.len()),
            None => println!("{}: no norms", r.model),
        }
    }
    Ok(())
}

fn files_ending(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

fn report(cli: &Cli, a: &crate::ReportArgs) -> Result<()> {
    let bundle = if a.synthetic {
        let mut battery = BatteryConfig::new(a.words, a.models, a.reps, a.norms.clone(), 0);
        battery.missing_rate = a.missing;
        let config = PipelineConfig {
            null_iterations: a.null_iterations,
            workers: cli.workers,
            ..PipelineConfig::new(battery, cli.seed)
        };
        run_synthetic(&config)?.bundle
    } else {
        let dir = a.from.as_ref().ok_or_else(|| CliError::Usage("report needs --from <dir> or --synthetic".into()))?;
        let mut b = ReportBundle::empty(None);
        for p in files_ending(dir, "_fit.json")? {
            b.fits.push(VarianceFit::load(&p)?);
        }
        for p in files_ending(dir, "_null.json")? {
            let r: NullTestResult<f64> = read_json(&p)?;
            b.null_tests.push(NullSummary::of(&r));
        }
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        if let Some(p) = optional("specificity.json") {
            b.specificity = read_json(&p)?;
        }
        if let Some(p) = optional("specificity_raw.json") {
            b.specificity_raw = read_json(&p)?;
        }
        if let Some(p) = optional("alignment.json") {
            b.alignment = read_json(&p)?;
        }
        let norms: Vec<String> = b.fits.iter().map(|f| f.norm.clone()).collect();
        b.aggregate(&DimensionGrouping::standard(&norms));
        b
    };
    write_report(&cli.out_dir, &bundle)?;
    print!("{}", varcross_core::report::render_text(&bundle));
    Ok(())
}
