//! Penalized least squares for the crossed model at fixed relative
//! standard deviations θ = (σ_τ, σ_β, σ_ι) / σ_ε.
//!
//! The system `[Λ'Z'ZΛ + I, Λ'Z'1; 1'ZΛ, n]` augmented with the response is
//! eliminated block by block: interaction cells first (diagonal), then words
//! (diagonal after the first step), leaving a dense (J + 2)² block over the
//! model effects, the intercept and the response. That elimination order is
//! the fill-reducing permutation: fill is confined to the small dense block.

use crate::scalar::Real;

use super::design::Design;

/// Factorization summary at one θ.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Evaluation<T> {
    /// `log det(Λ'Z'ZΛ + I)`
    pub logdet: T,
    /// Squared Schur complement of the intercept.
    pub rx2: T,
    /// Penalized residual sum of squares.
    pub pwrss: T,
}

/// Conditional modes in response units. `mu` is on the centred scale.
#[derive(Debug, Clone)]
pub(crate) struct Modes<T> {
    pub mu: T,
    pub tau: Vec<T>,
    pub beta: Vec<T>,
    pub iota: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Reml,
    Ml,
}

impl<T: Real> Evaluation<T> {
    /// Criterion with σ²_ε profiled out.
    pub fn profiled(&self, n: usize, criterion: Criterion) -> T {
        let two_pi = T::TAU();
        match criterion {
            Criterion::Reml => {
                let df = T::of_usize(n - 1);
                self.logdet + self.rx2.ln() + df * (T::one() + (two_pi * self.pwrss / df).ln())
            }
            Criterion::Ml => {
                let nn = T::of_usize(n);
                self.logdet + nn * (T::one() + (two_pi * self.pwrss / nn).ln())
            }
        }
    }

    /// Criterion at an explicit residual variance.
    pub fn at_residual_variance(&self, n: usize, sigma2_e: T, criterion: Criterion) -> T {
        let ln_2pi = T::TAU().ln();
        match criterion {
            Criterion::Reml => {
                let df = T::of_usize(n - 1);
                self.logdet + self.rx2.ln() + df * sigma2_e.ln() + self.pwrss / sigma2_e + df * ln_2pi
            }
            Criterion::Ml => {
                let nn = T::of_usize(n);
                self.logdet + nn * sigma2_e.ln() + self.pwrss / sigma2_e + nn * ln_2pi
            }
        }
    }

    /// Profiled residual variance.
    pub fn sigma2_residual(&self, n: usize, criterion: Criterion) -> T {
        match criterion {
            Criterion::Reml => self.pwrss / T::of_usize(n - 1),
            Criterion::Ml => self.pwrss / T::of_usize(n),
        }
    }
}

/// Reusable buffers for repeated evaluations on one design.
#[derive(Debug, Clone)]
pub(crate) struct Workspace<T> {
    dim: usize,
    block: Vec<T>,
    inv_d: Vec<T>,
    a: Vec<T>,
    count_hist: Vec<usize>,
    idx: Vec<usize>,
    w: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new(design: &Design<T>) -> Self {
        let dim = design.n_models + 2;
        let mut count_hist = vec![0usize; design.max_count as usize + 1];
        for &c in &design.cell_count {
            count_hist[c as usize] += 1;
        }
        Workspace {
            dim,
            block: vec![T::zero(); dim * dim],
            inv_d: vec![T::zero(); design.max_count as usize + 1],
            a: vec![T::zero(); design.max_count as usize + 1],
            count_hist,
            idx: vec![0; dim],
            w: vec![T::zero(); dim],
        }
    }

    /// Eliminate cells and words at `theta`, leaving the Cholesky factor of
    /// the dense block in `self.block` (upper triangle). Returns the log
    /// determinant contributed by cells and words.
    fn eliminate(&mut self, design: &Design<T>, theta: [T; 3]) -> Option<T> {
        let [t, b, g] = theta;
        let j_models = design.n_models;
        let dim = self.dim;
        let (mu, y) = (j_models, j_models + 1);
        let one = T::one();
        let g2 = g * g;
        let mut logdet = T::zero();
        for m in 1..self.inv_d.len() {
            let count = T::of_usize(m);
            let d = g2 * count + one;
            self.inv_d[m] = one / d;
            self.a[m] = count / d;
            if self.count_hist[m] > 0 {
                logdet += T::of_usize(self.count_hist[m]) * d.ln();
            }
        }
        let block = &mut self.block;
        block.iter_mut().for_each(|v| *v = T::zero());
        let (mut mumu, mut muy, mut yy) = (T::zero(), T::zero(), design.within_ss);
        let tb = t * b;
        let t2 = t * t;
        let b2 = b * b;
        for i in 0..design.n_words {
            let range = design.word_ptr[i]..design.word_ptr[i + 1];
            let mut sa = T::zero();
            let mut se = T::zero();
            let mut k = 0;
            for c in range {
                let m = design.cell_count[c] as usize;
                let a = self.a[m];
                let s = design.cell_sum[c];
                let e = s * self.inv_d[m];
                sa += a;
                se += e;
                let j = design.cell_model[c] as usize;
                block[j * dim + j] += b2 * a;
                block[j * dim + mu] += b * a;
                block[j * dim + y] += b * e;
                mumu += a;
                muy += e;
                yy += e * s / T::of_usize(m);
                self.idx[k] = j;
                self.w[k] = tb * a;
                k += 1;
            }
            if k == 0 {
                continue;
            }
            let d_tau = one + t2 * sa;
            logdet += d_tau.ln();
            self.idx[k] = mu;
            self.w[k] = t * sa;
            self.idx[k + 1] = y;
            self.w[k + 1] = t * se;
            let inv = one / d_tau;
            for p in 0..k + 2 {
                let wp = self.w[p] * inv;
                let row = self.idx[p] * dim;
                for q in p..k + 2 {
                    block[row + self.idx[q]] -= wp * self.w[q];
                }
            }
        }
        for j in 0..j_models {
            block[j * dim + j] += one;
        }
        block[mu * dim + mu] += mumu;
        block[mu * dim + y] += muy;
        block[y * dim + y] += yy;

        // in-place upper Cholesky of the leading (J + 1) block, carrying the
        // response column along as the forward-solved right-hand side
        for k in 0..=mu {
            let mut s = block[k * dim + k];
            for p in 0..k {
                let u = block[p * dim + k];
                s -= u * u;
            }
            if !(s > T::zero()) || !s.is_finite() {
                return None;
            }
            let ukk = s.sqrt();
            block[k * dim + k] = ukk;
            for col in k + 1..dim {
                let mut v = block[k * dim + col];
                for p in 0..k {
                    v -= block[p * dim + k] * block[p * dim + col];
                }
                block[k * dim + col] = v / ukk;
            }
        }
        Some(logdet)
    }

    pub fn evaluate(&mut self, design: &Design<T>, theta: [T; 3]) -> Option<Evaluation<T>> {
        let mut logdet = self.eliminate(design, theta)?;
        let dim = self.dim;
        let (mu, y) = (design.n_models, design.n_models + 1);
        let block = &self.block;
        for k in 0..mu {
            logdet += T::of(2.0) * block[k * dim + k].ln();
        }
        let umu = block[mu * dim + mu];
        let mut pwrss = block[y * dim + y];
        for k in 0..=mu {
            let z = block[k * dim + y];
            pwrss -= z * z;
        }
        let pwrss = pwrss.max(T::zero());
        Some(Evaluation { logdet, rx2: umu * umu, pwrss })
    }

    pub fn modes(&mut self, design: &Design<T>, theta: [T; 3]) -> Option<Modes<T>> {
        self.eliminate(design, theta)?;
        Some(self.back_substitute(design, theta))
    }

    /// Conditional modes from the factor left by `eliminate`.
    fn back_substitute(&self, design: &Design<T>, theta: [T; 3]) -> Modes<T> {
        let [t, b, g] = theta;
        let dim = self.dim;
        let (mu, y) = (design.n_models, design.n_models + 1);
        let block = &self.block;
        let mut x = vec![T::zero(); mu + 1];
        for k in (0..=mu).rev() {
            let mut v = block[k * dim + y];
            for p in k + 1..=mu {
                v -= block[k * dim + p] * x[p];
            }
            x[k] = v / block[k * dim + k];
        }
        let mu_hat = x[mu];
        let beta: Vec<T> = x[..mu].iter().map(|&u| b * u).collect();
        let one = T::one();
        let g2 = g * g;
        let mut tau = vec![T::zero(); design.n_words];
        let mut iota = vec![T::zero(); design.n_cells()];
        for (i, tau_i) in tau.iter_mut().enumerate() {
            let range = design.word_ptr[i]..design.word_ptr[i + 1];
            let mut sa = T::zero();
            let mut se = T::zero();
            let mut coupled = T::zero();
            for c in range.clone() {
                let m = design.cell_count[c] as usize;
                let a = self.a[m];
                sa += a;
                se += design.cell_sum[c] * self.inv_d[m];
                coupled += a * x[design.cell_model[c] as usize];
            }
            let d_tau = one + t * t * sa;
            let u_tau = (t * se - t * b * coupled - t * sa * mu_hat) / d_tau;
            *tau_i = t * u_tau;
            for c in range {
                let m = design.cell_count[c] as usize;
                let fitted = T::of_usize(m) * (mu_hat + *tau_i + beta[design.cell_model[c] as usize]);
                iota[c] = g2 * self.inv_d[m] * (design.cell_sum[c] - fitted);
            }
        }
        Modes { mu: mu_hat, tau, beta, iota }
    }

    /// Criterion and its gradient with respect to φ = θ².
    ///
    /// The gradient is `tr(P Z_c Z_c') − df · |Z_c' P y|² / pwrss` per
    /// component, with `df = n − 1` (REML) or `n` (ML), where
    /// `P = V⁻¹ − V⁻¹1(1'V⁻¹1)⁻¹1'V⁻¹` (REML) or `V⁻¹` (ML) for the relative
    /// covariance `V = I + Z Φ Z'`. `Z_c' P y` is the vector of group sums of
    /// conditional residuals, and the trace equals `(q_c − tr Σ_cc) / φ_c`
    /// with `Σ` the inverse of the penalized system, whose diagonal is
    /// recovered by selected inversion along the elimination order. The
    /// trace is evaluated with φ_c floored at `PHI_FLOOR` to avoid dividing
    /// by zero on the boundary.
    pub fn gradient(
        &mut self,
        design: &Design<T>,
        phi: [T; 3],
        criterion: Criterion,
    ) -> Option<(Evaluation<T>, [T; 3])> {
        let floor = T::of(PHI_FLOOR);
        let theta = phi.map(|p| p.max(T::zero()).sqrt());
        let eval = self.evaluate(design, theta)?;
        if !(eval.pwrss > T::zero()) {
            return None;
        }
        let modes = self.back_substitute(design, theta);
        let n = design.n_obs;
        let df = match criterion {
            Criterion::Reml => T::of_usize(n - 1),
            Criterion::Ml => T::of_usize(n),
        };

        // conditional residual sums per word, model and cell
        let mut quad = [T::zero(); 3];
        let mut model_resid = vec![T::zero(); design.n_models];
        for i in 0..design.n_words {
            let mut word_resid = T::zero();
            for c in design.word_ptr[i]..design.word_ptr[i + 1] {
                let j = design.cell_model[c] as usize;
                let m = T::of(design.cell_count[c] as f64);
                let r = design.cell_sum[c] - m * (modes.mu + modes.tau[i] + modes.beta[j] + modes.iota[c]);
                word_resid += r;
                model_resid[j] += r;
                quad[2] += r * r;
            }
            quad[0] += word_resid * word_resid;
        }
        quad[1] = model_resid.iter().map(|r| *r * *r).sum();

        // traces: refactor at the floored φ when any component sits below it
        let phi_t = phi.map(|p| p.max(floor));
        let traces = if phi_t == phi {
            self.inverse_traces(design, theta, criterion)?
        } else {
            let theta_t = phi_t.map(|p| p.sqrt());
            self.eliminate(design, theta_t)?;
            self.inverse_traces(design, theta_t, criterion)?
        };
        let q = [T::of_usize(design.n_words), T::of_usize(design.n_models), T::of_usize(design.n_cells())];
        let mut grad = [T::zero(); 3];
        for c in 0..3 {
            grad[c] = (q[c] - traces[c]) / phi_t[c] - df * quad[c] / eval.pwrss;
        }
        Some((eval, grad))
    }

    /// Sum of the diagonal of the inverse penalized system over each
    /// random-effect block, after a successful `eliminate` at `theta`.
    /// Under ML the intercept is conditioned out of the inverse.
    fn inverse_traces(&self, design: &Design<T>, theta: [T; 3], criterion: Criterion) -> Option<[T; 3]> {
        let [t, b, g] = theta;
        let jm = design.n_models;
        let dim = self.dim;
        let nd = jm + 1;
        let one = T::one();
        // Σ_DD = (U'U)⁻¹ from the upper factor of the dense block
        let mut uinv = vec![T::zero(); nd * nd];
        for k in 0..nd {
            uinv[k * nd + k] = one / self.block[k * dim + k];
            for col in k + 1..nd {
                let mut s = T::zero();
                for p in k..col {
                    s += uinv[k * nd + p] * self.block[p * dim + col];
                }
                uinv[k * nd + col] = -s / self.block[col * dim + col];
            }
        }
        let mut sig = vec![T::zero(); nd * nd];
        for r in 0..nd {
            for c in r..nd {
                let mut s = T::zero();
                for p in c..nd {
                    s += uinv[r * nd + p] * uinv[c * nd + p];
                }
                sig[r * nd + c] = s;
                sig[c * nd + r] = s;
            }
        }
        let mu = jm;
        let smumu = sig[mu * nd + mu];
        let ml = criterion == Criterion::Ml;
        // diagonal entry of the inverse with the intercept conditioned out
        let cond = |d: T, with_mu: T| if ml { d - with_mu * with_mu / smumu } else { d };

        let mut tr_beta = T::zero();
        for j in 0..jm {
            tr_beta += cond(sig[j * nd + j], sig[j * nd + mu]);
        }

        let mut tr_tau = T::zero();
        let mut tr_iota = T::zero();
        let mut kvec = vec![T::zero(); nd];
        let mut swd = vec![T::zero(); nd];
        let (tb, gt, gb) = (t * b, g * t, g * b);
        for i in 0..design.n_words {
            let range = design.word_ptr[i]..design.word_ptr[i + 1];
            let mut sa = T::zero();
            kvec.iter_mut().for_each(|v| *v = T::zero());
            for c in range.clone() {
                let a = self.a[design.cell_count[c] as usize];
                sa += a;
                kvec[design.cell_model[c] as usize] = tb * a;
            }
            kvec[mu] = t * sa;
            let d_tau = one + t * t * sa;
            // Σ_{w,D} = −Σ_DD k / d_τ and Σ_ww = 1/d_τ − k'Σ_{w,D}/d_τ
            for r in 0..nd {
                let mut s = sig[r * nd + mu] * kvec[mu];
                for c in range.clone() {
                    let j = design.cell_model[c] as usize;
                    s += sig[r * nd + j] * kvec[j];
                }
                swd[r] = -s / d_tau;
            }
            let mut kw = kvec[mu] * swd[mu];
            for c in range.clone() {
                let j = design.cell_model[c] as usize;
                kw += kvec[j] * swd[j];
            }
            let sww = (one - kw) / d_tau;
            tr_tau += cond(sww, swd[mu]);
            // cells: coupling h = (g t m, g b m, g m) to (word, model, intercept)
            for c in range {
                let m = design.cell_count[c] as usize;
                let mm = T::of_usize(m);
                let j = design.cell_model[c] as usize;
                let h = [gt * mm, gb * mm, g * mm];
                let s3 = [
                    [sww, swd[j], swd[mu]],
                    [swd[j], sig[j * nd + j], sig[j * nd + mu]],
                    [swd[mu], sig[j * nd + mu], smumu],
                ];
                let mut quadform = T::zero();
                let mut with_mu = T::zero();
                for r in 0..3 {
                    with_mu += h[r] * s3[r][2];
                    for cc in 0..3 {
                        quadform += h[r] * s3[r][cc] * h[cc];
                    }
                }
                let inv_d = self.inv_d[m];
                let scc = inv_d + inv_d * inv_d * quadform;
                tr_iota += cond(scc, -inv_d * with_mu);
            }
        }
        Some([tr_tau, tr_beta, tr_iota])
    }
}

/// Smallest φ used in the trace part of the gradient.
pub(crate) const PHI_FLOOR: f64 = 1e-8;
