//! Profiled REML fit of the crossed model.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::design::Design;
use super::pls::{Criterion, Workspace};
use crate::dataset::CrossedDataset;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, projected_newton, NelderMeadOptions, NewtonOptions};
use crate::scalar::Real;

/// One value per variance component, in model order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components<V> {
    #[serde(rename = "trait")]
    pub tau: V,
    #[serde(rename = "bias")]
    pub beta: V,
    #[serde(rename = "idiosyncrasy")]
    pub iota: V,
    pub residual: V,
}

impl<V: Copy> Components<V> {
    pub fn new(tau: V, beta: V, iota: V, residual: V) -> Self {
        Components { tau, beta, iota, residual }
    }

    pub fn to_array(self) -> [V; 4] {
        [self.tau, self.beta, self.iota, self.residual]
    }

    pub fn from_array(a: [V; 4]) -> Self {
        Components::new(a[0], a[1], a[2], a[3])
    }

    pub fn map<W: Copy>(self, f: impl Fn(V) -> W) -> Components<W> {
        Components::new(f(self.tau), f(self.beta), f(self.iota), f(self.residual))
    }
}

impl<T: Real> Components<T> {
    pub fn total(&self) -> T {
        self.tau + self.beta + self.iota + self.residual
    }
}

pub const COMPONENT_NAMES: [&str; 4] = ["trait", "bias", "idiosyncrasy", "residual"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub criterion: Criterion,
    /// Budget of criterion evaluations across both optimizer phases.
    pub max_evals: usize,
    /// Relative tolerance on the squared relative standard deviations.
    pub xtol_rel: T,
    pub start: [T; 3],
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions { criterion: Criterion::Reml, max_evals: 500, xtol_rel: T::of(1e-8), start: [T::one(); 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit<T> {
    pub norm: String,
    pub n_obs: usize,
    pub n_words: usize,
    pub n_models: usize,
    pub n_cells: usize,
    pub mu_hat: T,
    pub sigma2: Components<T>,
    /// Absent when the total variance is zero.
    pub proportions: Option<Components<T>>,
    /// Minimized criterion; absent for constant data, where it is unbounded.
    pub reml_criterion: Option<T>,
    pub criterion: Criterion,
    pub converged: bool,
    pub boundary_flags: Components<bool>,
    /// Relative standard deviations σ_c / σ_ε at the optimum.
    pub theta: [T; 3],
    pub evaluations: usize,
}

/// Shares of the total variance.
pub fn variance_proportions<T: Real>(sigma2: &Components<T>) -> Result<Components<T>> {
    let total = sigma2.total();
    if !(total > T::zero()) || !total.is_finite() {
        return Err(Error::Undefined(format!("variance proportions need a positive total variance, got {total}")));
    }
    Ok(sigma2.map(|v| v / total))
}

pub(crate) struct CoreFit<T> {
    pub theta: [T; 3],
    pub sigma2: Components<T>,
    pub mu_hat: T,
    pub criterion_value: Option<T>,
    pub converged: bool,
    pub evaluations: usize,
}

/// Minimize the profiled criterion over θ.
pub(crate) fn fit_design<T: Real>(design: &Design<T>, opts: &FitOptions<T>) -> Result<CoreFit<T>> {
    design.check_identifiable()?;
    if design.is_constant() {
        return Ok(CoreFit {
            theta: [T::zero(); 3],
            sigma2: Components::new(T::zero(), T::zero(), T::zero(), T::zero()),
            mu_hat: design.center(),
            criterion_value: None,
            converged: true,
            evaluations: 0,
        });
    }
    let n = design.n_obs();
    if opts.criterion == Criterion::Reml && n < 2 {
        return Err(Error::InvalidInput("REML needs at least two observations".into()));
    }
    let mut ws = Workspace::new(design);
    let criterion = opts.criterion;

    // Nelder-Mead explores in θ from values alone; the Newton polish works
    // in φ = θ², where the criterion is smooth through the boundary, with
    // the analytic gradient.
    let lower = [T::zero(); 3];
    let coarse = {
        let mut in_theta = |th: &[T]| -> T {
            match ws.evaluate(design, [th[0].abs(), th[1].abs(), th[2].abs()]) {
                Some(e) if e.pwrss > T::zero() => e.profiled(n, criterion),
                _ => T::infinity(),
            }
        };
        nelder_mead(
            &mut in_theta,
            &opts.start,
            &lower,
            NelderMeadOptions {
                max_evals: opts.max_evals / 2,
                xtol_rel: T::of(1e-4),
                ftol_abs: T::of(1e-8),
                ftol_rel: T::of(1e-11),
                initial_step: T::of(0.5),
            },
        )
    };
    let phi0: Vec<T> = coarse.x.iter().map(|t| *t * *t).collect();
    let polish = {
        let mut fg = |phi: &[T]| -> Option<(T, Vec<T>)> {
            let (e, g) = ws.gradient(design, [phi[0], phi[1], phi[2]], criterion)?;
            Some((e.profiled(n, criterion), g.to_vec()))
        };
        projected_newton(
            &mut fg,
            &phi0,
            &lower,
            NewtonOptions {
                max_evals: opts.max_evals - coarse.evaluations,
                max_iter: 50,
                xtol_rel: opts.xtol_rel,
                xtol_floor: T::of(1e-2),
            },
        )
    };
    let tie = T::of(1024.0) * T::epsilon() * (T::one() + coarse.fx.abs());
    let (phi, converged) = if polish.fx.is_finite() && polish.fx <= coarse.fx + tie {
        (polish.x, polish.converged)
    } else {
        (phi0, false)
    };
    let evaluations = coarse.evaluations + polish.evaluations;
    let theta = [phi[0].sqrt(), phi[1].sqrt(), phi[2].sqrt()];
    let eval =
        ws.evaluate(design, theta).ok_or_else(|| Error::Numerical("factorization failed at the optimum".into()))?;
    let s2e = eval.sigma2_residual(n, criterion);
    let value = eval.profiled(n, criterion);
    if !value.is_finite() || !s2e.is_finite() {
        return Err(Error::Numerical(format!("non-finite criterion {value} at θ = {theta:?}")));
    }
    let modes =
        ws.modes(design, theta).ok_or_else(|| Error::Numerical("factorization failed at the optimum".into()))?;
    Ok(CoreFit {
        theta,
        sigma2: Components::new(phi[0] * s2e, phi[1] * s2e, phi[2] * s2e, s2e),
        mu_hat: modes.mu + design.center(),
        criterion_value: Some(value),
        converged,
        evaluations,
    })
}

/// Fit the crossed model to one norm's dataset.
pub fn fit<T: Real>(data: &CrossedDataset, opts: &FitOptions<T>) -> Result<VarianceFit<T>> {
    let design = Design::from_dataset(data);
    let core = fit_design(&design, opts)?;
    Ok(VarianceFit {
        norm: data.norm().to_string(),
        n_obs: data.n_obs(),
        n_words: data.n_words(),
        n_models: data.n_models(),
        n_cells: design.n_cells(),
        mu_hat: core.mu_hat,
        sigma2: core.sigma2,
        proportions: variance_proportions(&core.sigma2).ok(),
        reml_criterion: core.criterion_value,
        criterion: opts.criterion,
        converged: core.converged,
        boundary_flags: core.sigma2.map(|v| v == T::zero()),
        theta: core.theta,
        evaluations: core.evaluations,
    })
}

pub(crate) fn theta_of<T: Real>(sigma2: &Components<T>) -> Result<[T; 3]> {
    let s2e = sigma2.residual;
    if !(s2e > T::zero()) {
        return Err(Error::InvalidInput("residual variance must be positive".into()));
    }
    for v in [sigma2.tau, sigma2.beta, sigma2.iota] {
        if !(v >= T::zero()) {
            return Err(Error::InvalidInput(format!("negative variance component {v}")));
        }
    }
    Ok([(sigma2.tau / s2e).sqrt(), (sigma2.beta / s2e).sqrt(), (sigma2.iota / s2e).sqrt()])
}

/// The criterion (−2 log restricted likelihood under REML) at explicit
/// variance components, with μ at its GLS estimate.
pub fn deviance_at<T: Real>(data: &CrossedDataset, sigma2: &Components<T>, criterion: Criterion) -> Result<T> {
    let design = Design::from_dataset(data);
    let theta = theta_of(sigma2)?;
    let mut ws = Workspace::new(&design);
    let eval = ws.evaluate(&design, theta).ok_or_else(|| Error::Numerical("factorization failed".into()))?;
    Ok(eval.at_residual_variance(design.n_obs(), sigma2.residual, criterion))
}

/// Profiled criterion at a relative-SD vector θ.
pub fn profiled_criterion<T: Real>(data: &CrossedDataset, theta: [T; 3], criterion: Criterion) -> Result<T> {
    let design = Design::from_dataset(data);
    let mut ws = Workspace::new(&design);
    let eval = ws.evaluate(&design, theta).ok_or_else(|| Error::Numerical("factorization failed".into()))?;
    Ok(eval.profiled(design.n_obs(), criterion))
}

impl<T: Real + Serialize> VarianceFit<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_json(std::io::BufWriter::new(file))
    }
}

impl<T: Real + for<'de> Deserialize<'de>> VarianceFit<T> {
    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(std::io::BufReader::new(file))
    }
}
