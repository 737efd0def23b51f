//! Derivative-free minimization under lower bounds.
//!
//! [`nelder_mead`] locates the basin from function values alone;
//! [`projected_newton`] then refines the point using gradients, holding
//! coordinates at their bound when the derivative there is non-negative.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub fx: T,
    pub evaluations: usize,
    pub converged: bool,
}

/// Counts evaluations and enforces the budget. Non-finite values are
/// treated as +∞ so the search backs away from them.
struct Counted<'a, T, F> {
    f: &'a mut F,
    evals: usize,
    budget: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real, F: FnMut(&[T]) -> T> Counted<'_, T, F> {
    fn call(&mut self, x: &[T]) -> Option<T> {
        if self.evals >= self.budget {
            return None;
        }
        self.evals += 1;
        let v = (self.f)(x);
        Some(if v.is_finite() { v } else { T::infinity() })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions<T> {
    pub max_evals: usize,
    /// Stop when every vertex lies within `xtol_rel · (1 + |x_best|)` of the
    /// best vertex in every coordinate.
    pub xtol_rel: T,
    /// ... and the vertex values span less than `ftol_abs + ftol_rel·|f_best|`.
    pub ftol_abs: T,
    pub ftol_rel: T,
    pub initial_step: T,
}

impl<T: Real> Default for NelderMeadOptions<T> {
    fn default() -> Self {
        Self {
            max_evals: 400,
            xtol_rel: T::of(1e-6),
            ftol_abs: T::of(1e-8),
            ftol_rel: T::of(1e-12),
            initial_step: T::of(0.5),
        }
    }
}

fn clamp_to<T: Real>(x: &mut [T], lower: &[T]) {
    for (v, lo) in x.iter_mut().zip(lower) {
        if *v < *lo {
            *v = *lo;
        }
    }
}

/// Nelder-Mead with standard coefficients; trial points are projected onto
/// the feasible box `x ≥ lower`.
pub fn nelder_mead<T: Real, F: FnMut(&[T]) -> T>(
    f: &mut F,
    x0: &[T],
    lower: &[T],
    opts: NelderMeadOptions<T>,
) -> Minimum<T> {
    let n = x0.len();
    let mut fc = Counted { f, evals: 0, budget: opts.max_evals, _marker: std::marker::PhantomData };
    let mut start = x0.to_vec();
    clamp_to(&mut start, lower);
    let mut simplex: Vec<Vec<T>> = vec![start.clone()];
    for k in 0..n {
        let mut v = start.clone();
        let step = opts.initial_step * T::one().max(v[k].abs());
        v[k] += step;
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        match fc.call(v) {
            Some(fx) => values.push(fx),
            None => {
                return Minimum {
                    x: start,
                    fx: values.first().copied().unwrap_or(T::infinity()),
                    evaluations: fc.evals,
                    converged: false,
                }
            }
        }
    }
    let (alpha, gamma, rho, sigma) = (T::one(), T::of(2.0), T::of(0.5), T::of(0.5));
    let mut converged = false;
    'outer: loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();

        let best = &simplex[0];
        let x_spread_ok = simplex[1..]
            .iter()
            .all(|v| v.iter().zip(best).all(|(a, b)| (*a - *b).abs() <= opts.xtol_rel * (T::one() + b.abs())));
        if x_spread_ok && values[n] - values[0] <= opts.ftol_abs + opts.ftol_rel * values[0].abs() {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += *x;
            }
        }
        let inv_n = T::one() / T::of_usize(n);
        centroid.iter_mut().for_each(|c| *c *= inv_n);
        let worst = simplex[n].clone();
        let along = |coef: T| -> Vec<T> {
            let mut p: Vec<T> = centroid.iter().zip(&worst).map(|(c, w)| *c + coef * (*c - *w)).collect();
            clamp_to(&mut p, lower);
            p
        };

        let reflected = along(alpha);
        let Some(fr) = fc.call(&reflected) else { break };
        if fr < values[0] {
            let expanded = along(gamma);
            let Some(fe) = fc.call(&expanded) else {
                simplex[n] = reflected;
                values[n] = fr;
                break;
            };
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fcon) = if fr < values[n] {
            let p = along(rho);
            let Some(v) = fc.call(&p) else { break };
            (p, v)
        } else {
            let p = along(-rho);
            let Some(v) = fc.call(&p) else { break };
            (p, v)
        };
        if fcon < fr.min(values[n]) {
            simplex[n] = contracted;
            values[n] = fcon;
            continue;
        }
        for k in 1..=n {
            let shrunk: Vec<T> = simplex[0].iter().zip(&simplex[k]).map(|(b, x)| *b + sigma * (*x - *b)).collect();
            let Some(v) = fc.call(&shrunk) else { break 'outer };
            simplex[k] = shrunk;
            values[k] = v;
        }
    }
    let best =
        (0..=n).min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal)).unwrap_or(0);
    Minimum { x: simplex[best].clone(), fx: values[best], evaluations: fc.evals, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T> {
    pub max_evals: usize,
    pub max_iter: usize,
    /// Converged once a full step moves every coordinate by less than
    /// `xtol_rel · (|x| + xtol_floor)`.
    pub xtol_rel: T,
    pub xtol_floor: T,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self { max_evals: 150, max_iter: 50, xtol_rel: T::of(1e-10), xtol_floor: T::of(1e-2) }
    }
}

/// Solve `h p = -g` for a small symmetric system, adding a growing ridge
/// until the Cholesky factorization succeeds.
fn damped_newton_step<T: Real>(h: &[Vec<T>], g: &[T]) -> Option<Vec<T>> {
    let n = g.len();
    let scale = (0..n).map(|i| h[i][i].abs()).fold(T::zero(), T::max).max(T::of(1e-12));
    let mut ridge = T::zero();
    for _ in 0..40 {
        let mut l = vec![vec![T::zero(); n]; n];
        let mut ok = true;
        'fact: for i in 0..n {
            for j in 0..=i {
                let mut s = h[i][j] + if i == j { ridge } else { T::zero() };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > T::zero()) {
                        ok = false;
                        break 'fact;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut z = vec![T::zero(); n];
            for i in 0..n {
                let mut s = -g[i];
                for k in 0..i {
                    s -= l[i][k] * z[k];
                }
                z[i] = s / l[i][i];
            }
            let mut p = vec![T::zero(); n];
            for i in (0..n).rev() {
                let mut s = z[i];
                for k in i + 1..n {
                    s -= l[k][i] * p[k];
                }
                p[i] = s / l[i][i];
            }
            return Some(p);
        }
        ridge = if ridge == T::zero() { scale * T::of(1e-8) } else { ridge * T::of(10.0) };
    }
    None
}

/// Refine a point of a smooth function on `x ≥ lower` given its value and
/// gradient. The Hessian of the free coordinates is built from forward
/// differences of the gradient; a coordinate on its bound with a
/// non-negative derivative is held fixed. `fg` returns `None` where the
/// function is undefined.
pub fn projected_newton<T: Real, F: FnMut(&[T]) -> Option<(T, Vec<T>)>>(
    fg: &mut F,
    x0: &[T],
    lower: &[T],
    opts: NewtonOptions<T>,
) -> Minimum<T> {
    let n = x0.len();
    let mut evals = 0usize;
    let mut call = |x: &[T], evals: &mut usize| -> Option<Option<(T, Vec<T>)>> {
        if *evals >= opts.max_evals {
            return None;
        }
        *evals += 1;
        Some(fg(x).filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite())))
    };
    let mut x = x0.to_vec();
    clamp_to(&mut x, lower);
    let Some(Some((mut fx, mut gx))) = call(&x, &mut evals) else {
        return Minimum { x, fx: T::infinity(), evaluations: evals, converged: false };
    };
    // a large criterion is only known to a few hundred ulps; changes below
    // that are ties and are decided by the gradient
    let noise = |f: T| T::of(1024.0) * T::epsilon() * (T::one() + f.abs());
    let mut converged = false;
    'iter: for _ in 0..opts.max_iter {
        let free: Vec<usize> = (0..n).filter(|&c| !(x[c] <= lower[c] && gx[c] >= T::zero())).collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let nf = free.len();
        let mut hess = vec![vec![T::zero(); nf]; nf];
        for (a, &c) in free.iter().enumerate() {
            let h = T::of(1e-6) * x[c].abs().max(T::of(1e-4));
            let mut xp = x.clone();
            xp[c] += h;
            let Some(res) = call(&xp, &mut evals) else { break 'iter };
            let Some((_, gp)) = res else { break 'iter };
            for (b, &r) in free.iter().enumerate() {
                hess[b][a] = (gp[r] - gx[r]) / h;
            }
        }
        for a in 0..nf {
            for b in a + 1..nf {
                let v = (hess[a][b] + hess[b][a]) * T::of(0.5);
                hess[a][b] = v;
                hess[b][a] = v;
            }
        }
        let g: Vec<T> = free.iter().map(|&c| gx[c]).collect();
        let Some(p) = damped_newton_step(&hess, &g) else { break };
        let full_small = free.iter().zip(&p).all(|(&c, pc)| pc.abs() <= opts.xtol_rel * (x[c].abs() + opts.xtol_floor));
        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = x.clone();
            for (k, &c) in free.iter().enumerate() {
                trial[c] += alpha * p[k];
            }
            clamp_to(&mut trial, lower);
            let Some(res) = call(&trial, &mut evals) else { break 'iter };
            if let Some((ft, gt)) = res {
                // descent, or a tie in f with a smaller projected gradient
                let pg = |x: &[T], g: &[T]| -> T {
                    (0..n)
                        .map(|c| if x[c] <= lower[c] { g[c].min(T::zero()).abs() } else { g[c].abs() })
                        .fold(T::zero(), T::max)
                };
                let better = ft < fx - noise(fx) || (ft <= fx + noise(fx) && pg(&trial, &gt) <= pg(&x, &gx));
                if better {
                    x = trial;
                    fx = ft;
                    gx = gt;
                    accepted = true;
                    break;
                }
            }
            alpha *= T::of(0.5);
        }
        if full_small {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    Minimum { x, fx, evaluations: evals, converged }
}
