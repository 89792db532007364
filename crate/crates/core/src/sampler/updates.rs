//! The per-block conditional updates.
//!
//! Every Gaussian block exposes its conditional (precision-times-mean,
//! precision) pair through a `moments_*` method so tests can compare it to
//! the gradient and negative Hessian of the joint log-density; the update
//! itself draws through the shared precision-form sampler. Scalar
//! conjugate updates expose their (shape, rate) pairs the same way.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::mh::mh_move;
use super::wishart::sample_inverse_wishart;
use super::{Chain, ChiUpdateScheme, FaultInjection, VRescale};
use crate::covariance::{sample_gaussian_precision_factored, FactoredMatrix};
use crate::model::{column_centered, future_residual, ln_gamma_pdf, trace_product_sym, CovMatrix};
use crate::{Error, Result};

impl Chain {
    fn n(&self) -> usize {
        self.data.n_sites()
    }

    fn m(&self) -> usize {
        self.data.n_models()
    }

    fn draw_gaussian(&mut self, v: &DVector<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
        let f = FactoredMatrix::factor(q)?;
        Ok(sample_gaussian_precision_factored(v, &f, &mut self.rng))
    }

    fn draw_gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
            return Err(Error::domain(format!(
                "gamma draw needs positive shape/rate, got ({shape}, {rate})"
            )));
        }
        let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?;
        Ok(g.sample(&mut self.rng))
    }

    fn draw_inv_gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        Ok(1.0 / self.draw_gamma(shape, rate)?)
    }

    // --- Expected/actual climate block -------------------------------------

    /// Precision form of y_Fa | rest: white noise around y_F.
    pub fn moments_y_fa(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let q = DMatrix::identity(n, n) * self.params.phi_fa;
        let v = &self.state.y_f * self.params.phi_fa;
        (v, q)
    }

    /// y_Ha | rest combines natural variability with all N observations.
    pub fn moments_y_ha(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let n_obs = self.data.n_obs() as f64;
        let prec = self.params.phi_ha + n_obs * self.params.tau_w;
        let q = DMatrix::identity(n, n) * prec;
        let mut v = &self.state.y_h * self.params.phi_ha;
        for w in self.data.obs() {
            v += w * self.params.tau_w;
        }
        (v, q)
    }

    /// y_F | rest: spatial prior around mu_F + beta (y_H - mu_H) plus the
    /// white-noise link to y_Fa.
    pub fn moments_y_f(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let p = &self.params;
        let coef = p.tau_f / p.kappa;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_f.add_scaled_inverse(coef, &mut q);
        for i in 0..n {
            q[(i, i)] += p.phi_fa;
        }
        let target = &self.state.mu_f + (&self.state.y_h - &self.state.mu_h) * p.beta;
        let v = self.bundle.sigma_f.solve(&target) * coef + &self.state.y_fa * p.phi_fa;
        (v, q)
    }

    /// y_H | rest: both spatial layers (beta couples it to y_F) plus the
    /// white-noise link to y_Ha.
    pub fn moments_y_h(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let p = &self.params;
        let coef_f = p.tau_f * p.beta * p.beta / p.kappa;
        let coef_h = p.tau_h / p.kappa;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_f.add_scaled_inverse(coef_f, &mut q);
        self.bundle.sigma_h.add_scaled_inverse(coef_h, &mut q);
        for i in 0..n {
            q[(i, i)] += p.phi_ha;
        }
        let target_f = &self.state.y_f - &self.state.mu_f + &self.state.mu_h * p.beta;
        let v = self.bundle.sigma_f.solve(&target_f) * (p.tau_f * p.beta / p.kappa)
            + self.bundle.sigma_h.solve(&self.state.mu_h) * coef_h
            + &self.state.y_ha * p.phi_ha;
        (v, q)
    }

    pub fn update_expected_and_actual(&mut self) -> Result<()> {
        let (v, q) = self.moments_y_fa();
        self.state.y_fa = self.draw_gaussian(&v, &q)?;
        let (v, q) = self.moments_y_ha();
        self.state.y_ha = self.draw_gaussian(&v, &q)?;
        let (v, q) = self.moments_y_f();
        self.state.y_f = self.draw_gaussian(&v, &q)?;
        let (v, q) = self.moments_y_h();
        self.state.y_h = self.draw_gaussian(&v, &q)?;
        Ok(())
    }

    // --- Model-mean block ---------------------------------------------------

    fn conditioning_set(&self, model: usize) -> Vec<usize> {
        match self.config.chi_scheme {
            ChiUpdateScheme::SequentialPartition => (0..model).collect(),
            ChiUpdateScheme::FullConditional => (0..self.m()).filter(|&k| k != model).collect(),
        }
    }

    /// Weights V_CC^{-1} V_Cm and the Schur complement of V for `model`
    /// against the conditioning set.
    fn v_partition(&self, model: usize, set: &[usize]) -> Result<(DVector<f64>, f64)> {
        let v = &self.params.v;
        if set.is_empty() {
            return Ok((DVector::zeros(0), v[(model, model)]));
        }
        let k = set.len();
        let v_cc = DMatrix::from_fn(k, k, |i, j| v[(set[i], set[j])]);
        let v_cm = DVector::from_fn(k, |i, _| v[(set[i], model)]);
        let f = FactoredMatrix::factor(&v_cc)?;
        let weights = f.solve(&v_cm);
        let schur = v[(model, model)] - v_cm.dot(&weights);
        if schur <= 0.0 {
            return Err(Error::domain(format!(
                "non-positive Schur complement {schur} for model {model}"
            )));
        }
        Ok((weights, schur))
    }

    /// E[:, set] * w.
    fn weighted_residual(e: &DMatrix<f64>, set: &[usize], w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(e.nrows());
        for (k, &c) in set.iter().enumerate() {
            out += e.column(c) * w[k];
        }
        out
    }

    pub fn moments_x_fm(&self, model: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n();
        let p = &self.params;
        let set = self.conditioning_set(model);
        let (w, schur) = self.v_partition(model, &set)?;
        let e_f = future_residual(&self.state, p.beta);
        let cond_mean = &self.state.mu_f
            + (self.state.x_h.column(model) - &self.state.mu_h) * p.beta
            + Self::weighted_residual(&e_f, &set, &w);

        let r_fm = self.data.runs_f(model).len() as f64;
        let prior_coef = p.tau_f / schur;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_fm[model].add_scaled_inverse(r_fm * p.phi_fm[model], &mut q);
        self.bundle.sigma_f.add_scaled_inverse(prior_coef, &mut q);
        let v = self.bundle.sigma_fm[model].solve(&self.run_sums_f[model]) * p.phi_fm[model]
            + self.bundle.sigma_f.solve(&cond_mean) * prior_coef;
        Ok((v, q))
    }

    pub fn moments_x_hm(&self, model: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n();
        let p = &self.params;
        let set = self.conditioning_set(model);
        let (w, schur) = self.v_partition(model, &set)?;

        let e_h = column_centered(&self.state.x_h, &self.state.mu_h);
        let cond_mean_h = &self.state.mu_h + Self::weighted_residual(&e_h, &set, &w);

        // The future layer sees x_Hm through its own residual column; the
        // set columns contribute the conditional center c_f.
        let e_f = future_residual(&self.state, p.beta);
        let c_f = Self::weighted_residual(&e_f, &set, &w);
        let f_target =
            self.state.x_f.column(model) - &self.state.mu_f + &self.state.mu_h * p.beta - c_f;

        let r_hm = self.data.runs_h(model).len() as f64;
        let coef_h = p.tau_h / schur;
        let coef_f = p.tau_f / schur;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_hm[model].add_scaled_inverse(r_hm * p.phi_hm[model], &mut q);
        self.bundle.sigma_h.add_scaled_inverse(coef_h, &mut q);
        self.bundle.sigma_f.add_scaled_inverse(p.beta * p.beta * coef_f, &mut q);
        let v = self.bundle.sigma_hm[model].solve(&self.run_sums_h[model]) * p.phi_hm[model]
            + self.bundle.sigma_h.solve(&cond_mean_h) * coef_h
            + self.bundle.sigma_f.solve(&f_target) * (p.beta * coef_f);
        Ok((v, q))
    }

    /// Sweep the model-mean columns in index order, future column first,
    /// then the historical column given the fresh future draw.
    pub fn update_model_means(&mut self) -> Result<()> {
        for model in 0..self.m() {
            let (v, q) = self.moments_x_fm(model)?;
            let draw = self.draw_gaussian(&v, &q)?;
            self.state.x_f.set_column(model, &draw);
            let (v, q) = self.moments_x_hm(model)?;
            let draw = self.draw_gaussian(&v, &q)?;
            self.state.x_h.set_column(model, &draw);
        }
        Ok(())
    }

    // --- Consensus block ------------------------------------------------------

    /// 1^T V^{-1} 1 and V^{-1} 1.
    fn v_row_weights(&self) -> (f64, DVector<f64>) {
        let ones = DVector::from_element(self.m(), 1.0);
        let wv = &self.v_inv * &ones;
        (wv.sum(), wv)
    }

    pub fn moments_mu_f(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let p = &self.params;
        let (w1, wv) = self.v_row_weights();
        let coef_y = p.tau_f / p.kappa;
        let coef_chi = p.tau_f * w1;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_f.add_scaled_inverse(coef_y + coef_chi, &mut q);
        let prior_prec = self.priors.gaussian_prior_precision();
        for i in 0..n {
            q[(i, i)] += prior_prec;
        }

        let y_target = &self.state.y_f - (&self.state.y_h - &self.state.mu_h) * p.beta;
        let xv = &self.state.x_f * &wv - (&self.state.x_h * &wv) * p.beta;
        let chi_target = &self.state.mu_h * (p.beta * w1) + xv;
        let v = self.bundle.sigma_f.solve(&y_target) * coef_y
            + self.bundle.sigma_f.solve(&chi_target) * p.tau_f;
        (v, q)
    }

    pub fn moments_mu_h(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let p = &self.params;
        let (w1, wv) = self.v_row_weights();
        let coef_yh = p.tau_h / p.kappa;
        let coef_yf = p.tau_f * p.beta * p.beta / p.kappa;
        let coef_chi_h = p.tau_h * w1;
        let coef_chi_f = p.tau_f * p.beta * p.beta * w1;
        let mut q = DMatrix::zeros(n, n);
        self.bundle.sigma_h.add_scaled_inverse(coef_yh + coef_chi_h, &mut q);
        self.bundle.sigma_f.add_scaled_inverse(coef_yf + coef_chi_f, &mut q);
        let prior_prec = self.priors.gaussian_prior_precision();
        for i in 0..n {
            q[(i, i)] += prior_prec;
        }

        let yf_target = &self.state.mu_f + &self.state.y_h * p.beta - &self.state.y_f;
        let xv = &self.state.x_f * &wv - (&self.state.x_h * &wv) * p.beta;
        let chi_f_target = &self.state.mu_f * w1 - xv;
        let v = self.bundle.sigma_h.solve(&self.state.y_h) * coef_yh
            + self.bundle.sigma_f.solve(&yf_target) * (p.tau_f * p.beta / p.kappa)
            + self.bundle.sigma_h.solve(&(&self.state.x_h * &wv)) * p.tau_h
            + self.bundle.sigma_f.solve(&chi_f_target) * (p.tau_f * p.beta);
        (v, q)
    }

    pub fn update_consensus(&mut self) -> Result<()> {
        let (v, q) = self.moments_mu_f();
        self.state.mu_f = self.draw_gaussian(&v, &q)?;
        let (v, q) = self.moments_mu_h();
        self.state.mu_h = self.draw_gaussian(&v, &q)?;
        Ok(())
    }

    // --- Conjugate scale updates -----------------------------------------------

    /// (shape, rate) of tau_W | rest.
    pub fn tau_w_conditional(&self) -> (f64, f64) {
        let n = self.n() as f64;
        let n_obs = self.data.n_obs() as f64;
        let shape = 0.5 * n_obs * n + self.priors.gamma_shape;
        let mut rate = self.priors.gamma_rate;
        for w in self.data.obs() {
            rate += 0.5 * (&self.state.y_ha - w).norm_squared();
        }
        (shape, rate)
    }

    pub fn update_tau_w(&mut self) -> Result<()> {
        let (shape, mut rate) = self.tau_w_conditional();
        if self.fault == FaultInjection::HalveTauWRate {
            rate *= 0.5;
        }
        self.params.tau_w = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn phi_ha_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let shape = 0.5 * self.n() as f64 + p.nu_h / (2.0 * p.kappa);
        let rate = 0.5 * (&self.state.y_ha - &self.state.y_h).norm_squared()
            + p.nu_h / (2.0 * p.kappa * p.phi_h);
        (shape, rate)
    }

    pub fn update_phi_ha(&mut self) -> Result<()> {
        let (shape, rate) = self.phi_ha_conditional();
        self.params.phi_ha = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn phi_fa_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let shape = 0.5 * self.n() as f64 + p.nu_f / (2.0 * p.kappa);
        let rate = 0.5 * (&self.state.y_fa - &self.state.y_f).norm_squared()
            + p.nu_f / (2.0 * p.kappa * p.phi_f);
        (shape, rate)
    }

    pub fn update_phi_fa(&mut self) -> Result<()> {
        let (shape, rate) = self.phi_fa_conditional();
        self.params.phi_fa = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    /// (shape, rate) of the inverse-Gamma conditional of phi_H | rest.
    pub fn phi_h_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let m = self.m() as f64;
        let shape = self.priors.inv_gamma_shape + 0.5 * p.nu_h * m + p.nu_h / (2.0 * p.kappa);
        let rate = self.priors.inv_gamma_rate
            + 0.5 * p.nu_h * p.phi_hm.iter().sum::<f64>()
            + p.nu_h * p.phi_ha / (2.0 * p.kappa);
        (shape, rate)
    }

    pub fn update_phi_h(&mut self) -> Result<()> {
        let (shape, rate) = self.phi_h_conditional();
        self.params.phi_h = self.draw_inv_gamma(shape, rate)?;
        Ok(())
    }

    pub fn phi_f_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let m = self.m() as f64;
        let shape = self.priors.inv_gamma_shape + 0.5 * p.nu_f * m + p.nu_f / (2.0 * p.kappa);
        let rate = self.priors.inv_gamma_rate
            + 0.5 * p.nu_f * p.phi_fm.iter().sum::<f64>()
            + p.nu_f * p.phi_fa / (2.0 * p.kappa);
        (shape, rate)
    }

    pub fn update_phi_f(&mut self) -> Result<()> {
        let (shape, rate) = self.phi_f_conditional();
        self.params.phi_f = self.draw_inv_gamma(shape, rate)?;
        Ok(())
    }

    pub fn tau_h_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let n = self.n() as f64;
        let m = self.m() as f64;
        let shape = 0.5 * (m + 1.0) * n + self.priors.gamma_shape;
        let r_h = &self.state.y_h - &self.state.mu_h;
        let e_h = column_centered(&self.state.x_h, &self.state.mu_h);
        let rate = self.priors.gamma_rate
            + self.bundle.sigma_h.quad_form(&r_h) / (2.0 * p.kappa)
            + 0.5 * trace_product_sym(&self.v_inv, &self.bundle.sigma_h.gram_inverse(&e_h));
        (shape, rate)
    }

    pub fn update_tau_h(&mut self) -> Result<()> {
        let (shape, rate) = self.tau_h_conditional();
        self.params.tau_h = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn tau_f_conditional(&self) -> (f64, f64) {
        let p = &self.params;
        let n = self.n() as f64;
        let m = self.m() as f64;
        let shape = 0.5 * (m + 1.0) * n + self.priors.gamma_shape;
        let r_f =
            &self.state.y_f - &self.state.mu_f - (&self.state.y_h - &self.state.mu_h) * p.beta;
        let e_f = future_residual(&self.state, p.beta);
        let rate = self.priors.gamma_rate
            + self.bundle.sigma_f.quad_form(&r_f) / (2.0 * p.kappa)
            + 0.5 * trace_product_sym(&self.v_inv, &self.bundle.sigma_f.gram_inverse(&e_f));
        (shape, rate)
    }

    pub fn update_tau_f(&mut self) -> Result<()> {
        let (shape, rate) = self.tau_f_conditional();
        self.params.tau_f = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn phi_hm_conditional(&self, model: usize) -> (f64, f64) {
        let p = &self.params;
        let runs = self.data.runs_h(model);
        let shape = 0.5 * (self.n() as f64 * runs.len() as f64 + p.nu_h);
        let x_hm = self.state.x_h.column(model).into_owned();
        let mut quad = 0.0;
        for r in runs {
            quad += self.bundle.sigma_hm[model].quad_form(&(r - &x_hm));
        }
        let rate = 0.5 * (quad + p.nu_h / p.phi_h);
        (shape, rate)
    }

    pub fn update_phi_hm(&mut self, model: usize) -> Result<()> {
        let (shape, rate) = self.phi_hm_conditional(model);
        self.params.phi_hm[model] = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn phi_fm_conditional(&self, model: usize) -> (f64, f64) {
        let p = &self.params;
        let runs = self.data.runs_f(model);
        let shape = 0.5 * (self.n() as f64 * runs.len() as f64 + p.nu_f);
        let x_fm = self.state.x_f.column(model).into_owned();
        let mut quad = 0.0;
        for r in runs {
            quad += self.bundle.sigma_fm[model].quad_form(&(r - &x_fm));
        }
        let rate = 0.5 * (quad + p.nu_f / p.phi_f);
        (shape, rate)
    }

    pub fn update_phi_fm(&mut self, model: usize) -> Result<()> {
        let (shape, rate) = self.phi_fm_conditional(model);
        self.params.phi_fm[model] = self.draw_gamma(shape, rate)?;
        Ok(())
    }

    pub fn update_conjugate_scales(&mut self) -> Result<()> {
        self.update_tau_w()?;
        self.update_phi_ha()?;
        self.update_phi_fa()?;
        self.update_phi_h()?;
        self.update_phi_f()?;
        self.update_tau_h()?;
        self.update_tau_f()?;
        for model in 0..self.m() {
            self.update_phi_hm(model)?;
        }
        for model in 0..self.m() {
            self.update_phi_fm(model)?;
        }
        Ok(())
    }

    // --- Inter-model dependence matrix ---------------------------------------

    /// Scale matrix and degrees of freedom of the inverse-Wishart
    /// conditional of V.
    pub fn v_conditional(&self) -> (DMatrix<f64>, f64) {
        let p = &self.params;
        let d = self.priors.v_prior_d as f64;
        let e_h = column_centered(&self.state.x_h, &self.state.mu_h);
        let e_f = future_residual(&self.state, p.beta);
        let mut scale = self.priors.v_tilde(self.m()) * d;
        scale += self.bundle.sigma_h.gram_inverse(&e_h) * p.tau_h;
        scale += self.bundle.sigma_f.gram_inverse(&e_f) * p.tau_f;
        // Quadratic forms are symmetric only up to roundoff; make it exact.
        for i in 0..self.m() {
            for j in 0..i {
                let avg = 0.5 * (scale[(i, j)] + scale[(j, i)]);
                scale[(i, j)] = avg;
                scale[(j, i)] = avg;
            }
        }
        let df = 2.0 * self.n() as f64 + self.m() as f64 + d + 1.0;
        (scale, df)
    }

    /// Draw V from its inverse-Wishart conditional. Under
    /// `VRescale::InKernel` the state itself is normalized to V[0][0] = 1
    /// with tau_H and tau_F divided by the same factor (covariance
    /// products unchanged); otherwise normalization happens at snapshot
    /// time only and the kernel stays the exact Gibbs sweep.
    pub fn update_v(&mut self) -> Result<()> {
        if !self.config.variant.has_model_dependence() {
            return Ok(());
        }
        let (scale, df) = self.v_conditional();
        let drawn = sample_inverse_wishart(&scale, df, &mut self.rng)?;
        if self.config.v_rescale == VRescale::InKernel {
            let c = drawn[(0, 0)];
            self.params.v = drawn / c;
            self.params.tau_h /= c;
            self.params.tau_f /= c;
        } else {
            self.params.v = drawn;
        }
        self.v_factor = FactoredMatrix::factor(&self.params.v)?;
        self.v_inv = self.v_factor.inverse();
        Ok(())
    }

    // --- Emergent-relationship coefficient -------------------------------------

    /// (precision-times-mean, precision) of beta | rest.
    pub fn moments_beta(&self) -> (f64, f64) {
        let p = &self.params;
        let r_h = &self.state.y_h - &self.state.mu_h;
        let r_f = &self.state.y_f - &self.state.mu_f;
        let b = column_centered(&self.state.x_h, &self.state.mu_h);
        let a = column_centered(&self.state.x_f, &self.state.mu_f);

        let sf_inv_rh = self.bundle.sigma_f.solve(&r_h);
        let q = p.tau_f / p.kappa * r_h.dot(&sf_inv_rh)
            + p.tau_f * trace_product_sym(&self.v_inv, &self.bundle.sigma_f.gram_inverse(&b))
            + self.priors.gaussian_prior_precision();

        let cross = b.transpose() * self.bundle.sigma_f.solve_mat(&a);
        let v = p.tau_f / p.kappa * sf_inv_rh.dot(&r_f)
            + p.tau_f * trace_product_sym(&self.v_inv, &cross);
        (v, q)
    }

    pub fn update_beta(&mut self) -> Result<()> {
        let (v, q) = self.moments_beta();
        let vv = DVector::from_element(1, v);
        let qq = DMatrix::from_element(1, 1, q);
        self.params.beta = self.draw_gaussian(&vv, &qq)?[0];
        Ok(())
    }

    // --- Metropolis-Hastings range updates ---------------------------------------

    /// Log conditional of the consensus-layer range for one period, as a
    /// function of a candidate correlation factor.
    fn consensus_range_log_cond(&self, factor: &FactoredMatrix, historical: bool) -> f64 {
        let p = &self.params;
        let m = self.m() as f64;
        let (tau, resid, e) = if historical {
            (
                p.tau_h,
                &self.state.y_h - &self.state.mu_h,
                column_centered(&self.state.x_h, &self.state.mu_h),
            )
        } else {
            (
                p.tau_f,
                &self.state.y_f - &self.state.mu_f
                    + (&self.state.mu_h - &self.state.y_h) * p.beta,
                future_residual(&self.state, p.beta),
            )
        };
        let half_e = factor.solve_lower_mat(&e);
        let gram = half_e.transpose() * &half_e;
        -0.5 * (m + 1.0) * factor.log_det()
            - tau / (2.0 * p.kappa) * factor.quad_form(&resid)
            - 0.5 * tau * trace_product_sym(&self.v_inv, &gram)
    }

    /// Log conditional of a run-layer range for one model and period.
    fn run_range_log_cond(&self, factor: &FactoredMatrix, model: usize, historical: bool) -> f64 {
        let p = &self.params;
        let (runs, x_m, phi) = if historical {
            (self.data.runs_h(model), self.state.x_h.column(model).into_owned(), p.phi_hm[model])
        } else {
            (self.data.runs_f(model), self.state.x_f.column(model).into_owned(), p.phi_fm[model])
        };
        let mut quad = 0.0;
        for r in runs {
            quad += factor.quad_form(&(r - &x_m));
        }
        -0.5 * runs.len() as f64 * factor.log_det() - 0.5 * phi * quad
    }

    /// Propose a new range on the log scale; returns the accepted
    /// candidate matrix, or None on rejection. A candidate whose
    /// factorization fails even after the jitter ladder is treated as
    /// outside the numerically representable support.
    fn propose_range(&mut self, current: f64, which: RangeParam) -> Result<Option<(f64, CovMatrix)>> {
        let adapting = self.adapting();
        let (lo, hi) = self.priors.gamma_support();
        let step_size = self.range_step(which).step();

        let z: f64 = self.rng.sample(StandardNormal);
        let proposal = (current.ln() + step_size * z).exp();
        if !(proposal > lo && proposal <= hi && proposal.is_finite()) {
            self.range_step_mut(which).record(false, adapting);
            return Ok(None);
        }
        let candidate = match CovMatrix::from_kernel(self.data.grid(), proposal) {
            Ok(c) => c,
            Err(Error::NotPositiveDefinite { .. }) => {
                self.range_step_mut(which).record(false, adapting);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let cand_factor = candidate.factor().expect("dense candidate has a factor");

        let (prop_lc, cur_lc) = match which {
            RangeParam::GammaH => (
                self.consensus_range_log_cond(cand_factor, true),
                self.consensus_range_log_cond(self.current_factor(which), true),
            ),
            RangeParam::GammaF => (
                self.consensus_range_log_cond(cand_factor, false),
                self.consensus_range_log_cond(self.current_factor(which), false),
            ),
            RangeParam::GammaHm(model) => (
                self.run_range_log_cond(cand_factor, model, true),
                self.run_range_log_cond(self.current_factor(which), model, true),
            ),
            RangeParam::GammaFm(model) => (
                self.run_range_log_cond(cand_factor, model, false),
                self.run_range_log_cond(self.current_factor(which), model, false),
            ),
        };
        let log_alpha = prop_lc - cur_lc + proposal.ln() - current.ln();
        let u: f64 = self.rng.gen();
        let accepted = u.ln() < log_alpha;
        self.range_step_mut(which).record(accepted, adapting);
        Ok(if accepted { Some((proposal, candidate)) } else { None })
    }

    fn current_factor(&self, which: RangeParam) -> &FactoredMatrix {
        let cov = match which {
            RangeParam::GammaH => &self.bundle.sigma_h,
            RangeParam::GammaF => &self.bundle.sigma_f,
            RangeParam::GammaHm(m) => &self.bundle.sigma_hm[m],
            RangeParam::GammaFm(m) => &self.bundle.sigma_fm[m],
        };
        cov.factor().expect("spatial variants keep dense correlation matrices")
    }

    fn range_step(&self, which: RangeParam) -> &super::AdaptiveStep {
        match which {
            RangeParam::GammaH => &self.steps.gamma_h,
            RangeParam::GammaF => &self.steps.gamma_f,
            RangeParam::GammaHm(m) => &self.steps.gamma_hm[m],
            RangeParam::GammaFm(m) => &self.steps.gamma_fm[m],
        }
    }

    fn range_step_mut(&mut self, which: RangeParam) -> &mut super::AdaptiveStep {
        match which {
            RangeParam::GammaH => &mut self.steps.gamma_h,
            RangeParam::GammaF => &mut self.steps.gamma_f,
            RangeParam::GammaHm(m) => &mut self.steps.gamma_hm[m],
            RangeParam::GammaFm(m) => &mut self.steps.gamma_fm[m],
        }
    }

    pub fn update_gamma_h(&mut self) -> Result<()> {
        let current = self.params.gamma_h;
        if let Some((accepted, cov)) = self.propose_range(current, RangeParam::GammaH)? {
            self.params.gamma_h = accepted;
            self.bundle.sigma_h = cov;
        }
        Ok(())
    }

    pub fn update_gamma_f(&mut self) -> Result<()> {
        let current = self.params.gamma_f;
        if let Some((accepted, cov)) = self.propose_range(current, RangeParam::GammaF)? {
            self.params.gamma_f = accepted;
            self.bundle.sigma_f = cov;
        }
        Ok(())
    }

    pub fn update_gamma_hm(&mut self, model: usize) -> Result<()> {
        let current = self.params.gamma_hm[model];
        if let Some((accepted, cov)) = self.propose_range(current, RangeParam::GammaHm(model))? {
            self.params.gamma_hm[model] = accepted;
            self.bundle.sigma_hm[model] = cov;
        }
        Ok(())
    }

    pub fn update_gamma_fm(&mut self, model: usize) -> Result<()> {
        let current = self.params.gamma_fm[model];
        if let Some((accepted, cov)) = self.propose_range(current, RangeParam::GammaFm(model))? {
            self.params.gamma_fm[model] = accepted;
            self.bundle.sigma_fm[model] = cov;
        }
        Ok(())
    }

    pub fn update_ranges_mh(&mut self) -> Result<()> {
        if !self.config.variant.has_spatial_correlation() {
            return Ok(());
        }
        self.update_gamma_h()?;
        self.update_gamma_f()?;
        for model in 0..self.m() {
            self.update_gamma_hm(model)?;
        }
        for model in 0..self.m() {
            self.update_gamma_fm(model)?;
        }
        Ok(())
    }

    // --- Metropolis-Hastings shape updates -----------------------------------------

    /// Log conditional of nu for one period: the Gamma hyper-law of the M
    /// run precisions, the kappa-scaled natural-variability precision, and
    /// the Gamma prior.
    pub fn nu_log_cond(&self, nu: f64, historical: bool) -> f64 {
        let p = &self.params;
        let (phis, phi_a, phi_scale) = if historical {
            (&p.phi_hm, p.phi_ha, p.phi_h)
        } else {
            (&p.phi_fm, p.phi_fa, p.phi_f)
        };
        nu_log_conditional(
            nu,
            phis,
            phi_a,
            phi_scale,
            p.kappa,
            self.priors.gamma_shape,
            self.priors.gamma_rate,
        )
    }

    pub fn update_nu_h(&mut self) -> Result<()> {
        let adapting = self.adapting();
        let current = self.params.nu_h;
        let phis = self.params.phi_hm.clone();
        let (phi_a, phi_scale, kappa) = (self.params.phi_ha, self.params.phi_h, self.params.kappa);
        let (a, b) = (self.priors.gamma_shape, self.priors.gamma_rate);
        let target = |nu: f64| nu_log_conditional(nu, &phis, phi_a, phi_scale, kappa, a, b);
        let cur_lt = target(current);
        let (new, _) =
            mh_move(current, cur_lt, &mut self.steps.nu_h, adapting, &mut self.rng, target);
        self.params.nu_h = new;
        Ok(())
    }

    pub fn update_nu_f(&mut self) -> Result<()> {
        let adapting = self.adapting();
        let current = self.params.nu_f;
        let phis = self.params.phi_fm.clone();
        let (phi_a, phi_scale, kappa) = (self.params.phi_fa, self.params.phi_f, self.params.kappa);
        let (a, b) = (self.priors.gamma_shape, self.priors.gamma_rate);
        let target = |nu: f64| nu_log_conditional(nu, &phis, phi_a, phi_scale, kappa, a, b);
        let cur_lt = target(current);
        let (new, _) =
            mh_move(current, cur_lt, &mut self.steps.nu_f, adapting, &mut self.rng, target);
        self.params.nu_f = new;
        Ok(())
    }

    pub fn update_shapes_mh(&mut self) -> Result<()> {
        self.update_nu_h()?;
        self.update_nu_f()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum RangeParam {
    GammaH,
    GammaF,
    GammaHm(usize),
    GammaFm(usize),
}

fn nu_log_conditional(
    nu: f64,
    phis: &[f64],
    phi_a: f64,
    phi_scale: f64,
    kappa: f64,
    prior_shape: f64,
    prior_rate: f64,
) -> f64 {
    if !(nu.is_finite() && nu > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = (prior_shape - 1.0) * nu.ln() - prior_rate * nu;
    for &phi in phis {
        lp += ln_gamma_pdf(phi, nu / 2.0, nu / (2.0 * phi_scale));
    }
    lp += ln_gamma_pdf(phi_a, nu / (2.0 * kappa), nu / (2.0 * kappa * phi_scale));
    lp
}
