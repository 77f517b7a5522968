//! Gaussian single-target densities and the linear-Gaussian operations the
//! filters are built from: Kalman prediction and update, predictive
//! likelihoods, the Gaussian KL divergence and mixture moment matching.
//!
//! Covariances are symmetrised after every operation that produces one and
//! positive definiteness is verified with a Cholesky factorisation. A failed
//! factorisation is reported as an error; nothing is silently regularised.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Relative tolerance for the covariance symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-9;

const INLINE_OBS_DIM: usize = 4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDensity {
    /// Builds a density after checking dimensions, symmetry and positive
    /// definiteness of `cov`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("covariance rows", mean.len(), cov.nrows())?;
        check_dim("covariance columns", mean.len(), cov.ncols())?;
        check_symmetric("covariance", &cov)?;
        if cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("covariance"));
        }
        Ok(Self { mean, cov })
    }

    /// Like [`GaussianDensity::new`] but symmetrises `cov` first.
    pub(crate) fn from_symmetrised(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        context: &'static str,
    ) -> Result<Self> {
        let cov = symmetrise(cov);
        if cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(context));
        }
        Ok(Self { mean, cov })
    }

    /// One-dimensional density `N(mean, var)`.
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    /// Zero mean, identity covariance.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("density evaluation point", self.dim(), x.len())?;
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("covariance"))?;
        let diff = x - &self.mean;
        let maha = diff.dot(&chol.solve(&diff));
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + log_det(&chol) + maha))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }
}

/// Linear-Gaussian motion and measurement model:
/// `x' = F x + w, w ~ N(0, Q)` and `z = H x + v, v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub obs: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(
        transition: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        obs: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = transition.nrows();
        check_dim("transition columns", nx, transition.ncols())?;
        check_dim("process noise rows", nx, process_noise.nrows())?;
        check_dim("process noise columns", nx, process_noise.ncols())?;
        check_dim("observation columns", nx, obs.ncols())?;
        let nz = obs.nrows();
        check_dim("observation noise rows", nz, obs_noise.nrows())?;
        check_dim("observation noise columns", nz, obs_noise.ncols())?;
        check_symmetric("process noise", &process_noise)?;
        check_symmetric("observation noise", &obs_noise)?;
        let eig = SymmetricEigen::new(process_noise.clone());
        let scale = process_noise.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
            return Err(Error::NotPositiveDefinite("process noise is not PSD"));
        }
        if obs_noise.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("observation noise"));
        }
        Ok(Self {
            transition,
            process_noise,
            obs,
            obs_noise,
        })
    }

    /// Nearly-constant-velocity model on the state `[p_x, v_x, p_y, v_y]`
    /// with position measurements and unit measurement noise.
    pub fn constant_velocity(sampling_time: f64, q: f64) -> Self {
        let t = sampling_time;
        let i2 = DMatrix::<f64>::identity(2, 2);
        let f1 = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
        let q1 = DMatrix::from_row_slice(
            2,
            2,
            &[t.powi(3) / 3.0, t.powi(2) / 2.0, t.powi(2) / 2.0, t],
        );
        let h1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        Self {
            transition: i2.kronecker(&f1),
            process_noise: i2.kronecker(&q1) * q,
            obs: i2.kronecker(&h1),
            obs_noise: i2,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.nrows()
    }
}

/// Everything about a Kalman update that does not depend on the measurement
/// value. Built once per prior density and reused for every measurement.
#[derive(Debug, Clone)]
pub struct KalmanGain {
    prior_mean: DVector<f64>,
    predicted_obs: DVector<f64>,
    innovation_chol: Cholesky<f64, Dyn>,
    log_norm: f64,
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
}

impl KalmanGain {
    pub fn new(d: &GaussianDensity, m: &LinearGaussianModel) -> Result<Self> {
        check_dim("kalman update state", m.state_dim(), d.dim())?;
        let ph_t = &d.cov * m.obs.transpose();
        let s = symmetrise(&m.obs * &ph_t + &m.obs_noise);
        let innovation_chol = s
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
        let gain = innovation_chol.solve(&ph_t.transpose()).transpose();
        let posterior_cov = symmetrise(&d.cov - &gain * &m.obs * &d.cov);
        if posterior_cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("updated covariance"));
        }
        let log_norm = -0.5 * (m.obs_dim() as f64 * LN_2PI + log_det(&innovation_chol));
        Ok(Self {
            predicted_obs: &m.obs * &d.mean,
            prior_mean: d.mean.clone(),
            innovation_chol,
            log_norm,
            gain,
            posterior_cov,
        })
    }

    pub fn predicted_obs(&self) -> &DVector<f64> {
        &self.predicted_obs
    }

    /// Squared Mahalanobis distance of the innovation `z - H x`.
    pub fn mahalanobis_sq(&self, z: &DVector<f64>) -> Result<f64> {
        check_dim("measurement", self.predicted_obs.len(), z.len())?;
        let n = z.len();
        if n > INLINE_OBS_DIM {
            let v = z - &self.predicted_obs;
            return Ok(v.dot(&self.innovation_chol.solve(&v)));
        }
        // |L^-1 v|^2 by forward substitution, without allocating.
        let l = self.innovation_chol.l_dirty();
        let mut y = [0.0; INLINE_OBS_DIM];
        let mut total = 0.0;
        for i in 0..n {
            let mut acc = z[i] - self.predicted_obs[i];
            for k in 0..i {
                acc -= l[(i, k)] * y[k];
            }
            y[i] = acc / l[(i, i)];
            total += y[i] * y[i];
        }
        Ok(total)
    }

    /// `log N(z; H x, S)`.
    pub fn log_likelihood(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(self.log_norm - 0.5 * self.mahalanobis_sq(z)?)
    }

    /// Log-likelihood for a precomputed squared Mahalanobis distance.
    pub fn log_likelihood_from_mahalanobis(&self, maha_sq: f64) -> f64 {
        self.log_norm - 0.5 * maha_sq
    }

    pub fn posterior(&self, z: &DVector<f64>) -> Result<GaussianDensity> {
        check_dim("measurement", self.predicted_obs.len(), z.len())?;
        let mean = &self.prior_mean + &self.gain * (z - &self.predicted_obs);
        Ok(GaussianDensity {
            mean,
            cov: self.posterior_cov.clone(),
        })
    }

    /// Moment-matched mixture of the posteriors for `measurements` with the
    /// given weights. The posteriors share one covariance, so only the spread
    /// of the innovations has to be accumulated.
    pub(crate) fn posterior_mixture(&self, weights: &[f64], measurements: &[DVector<f64>]) -> Result<GaussianDensity> {
        check_dim("mixture weights", measurements.len(), weights.len())?;
        let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::contract("mixture has no positive weight"));
        }
        let mut innovations = Vec::with_capacity(measurements.len());
        let mut mean_innovation = DVector::zeros(self.predicted_obs.len());
        for (&w, z) in weights.iter().zip(measurements) {
            if w > 0.0 {
                check_dim("measurement", self.predicted_obs.len(), z.len())?;
                let v = z - &self.predicted_obs;
                mean_innovation.axpy(w / total, &v, 1.0);
                innovations.push((w / total, v));
            }
        }
        let mut spread = DMatrix::zeros(mean_innovation.len(), mean_innovation.len());
        for (w, v) in &innovations {
            let d = v - &mean_innovation;
            spread.ger(*w, &d, &d, 1.0);
        }
        let mean = &self.prior_mean + &self.gain * mean_innovation;
        let cov = &self.posterior_cov + &self.gain * spread * self.gain.transpose();
        GaussianDensity::from_symmetrised(mean, cov, "moment-matched covariance")
    }
}

pub fn kalman_predict(d: &GaussianDensity, m: &LinearGaussianModel) -> Result<GaussianDensity> {
    check_dim("kalman prediction state", m.state_dim(), d.dim())?;
    let mean = &m.transition * &d.mean;
    let cov = &m.transition * &d.cov * m.transition.transpose() + &m.process_noise;
    GaussianDensity::from_symmetrised(mean, cov, "predicted covariance")
}

/// Kalman update of `d` with measurement `z`. Returns the posterior and the
/// predictive likelihood `N(z; H mean, H P H^T + R)`.
pub fn kalman_update(
    d: &GaussianDensity,
    m: &LinearGaussianModel,
    z: &DVector<f64>,
) -> Result<(GaussianDensity, f64)> {
    let gain = KalmanGain::new(d, m)?;
    let posterior = gain.posterior(z)?;
    let likelihood = gain.log_likelihood(z)?.exp();
    Ok((posterior, likelihood))
}

/// Gaussian density with its inverse covariance and log-determinant cached,
/// for repeated KL divergence evaluations.
#[derive(Debug, Clone)]
pub(crate) struct PreparedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub inv_cov: DMatrix<f64>,
    pub log_det: f64,
}

impl PreparedGaussian {
    pub fn new(d: &GaussianDensity) -> Result<Self> {
        let chol = d
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("covariance"))?;
        Ok(Self {
            mean: d.mean.clone(),
            cov: d.cov.clone(),
            inv_cov: chol.inverse(),
            log_det: log_det(&chol),
        })
    }

    /// `D(self || q)`.
    pub fn kld_to(&self, q: &PreparedGaussian) -> f64 {
        let n = self.mean.len() as f64;
        // tr(Pq^-1 Pf) with Pf symmetric.
        let trace = q.inv_cov.component_mul(&self.cov).sum();
        let diff = &q.mean - &self.mean;
        let maha = diff.dot(&(&q.inv_cov * &diff));
        0.5 * (trace - (self.log_det - q.log_det) - n + maha)
    }
}

/// Kullback-Leibler divergence `D(f || q)` between two Gaussians.
pub fn gaussian_kld(f: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    check_dim("kl divergence", f.dim(), q.dim())?;
    Ok(PreparedGaussian::new(f)?.kld_to(&PreparedGaussian::new(q)?))
}

/// Moment matching of a normalised Gaussian mixture: the single Gaussian
/// with the mixture's mean and covariance.
pub fn moment_match(weights: &[f64], components: &[GaussianDensity]) -> Result<GaussianDensity> {
    if components.is_empty() {
        return Err(Error::contract("moment_match needs at least one component"));
    }
    check_dim("moment match weights", components.len(), weights.len())?;
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::contract("moment_match weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "moment_match weights sum to {total}, expected 1"
        )));
    }
    let dim = components[0].dim();
    for c in components {
        check_dim("moment match component", dim, c.dim())?;
    }
    mix(weights.iter().copied().zip(components))
}

/// Moment matching for non-negative weights that need not be normalised.
/// The caller guarantees a positive total weight and equal dimensions.
pub(crate) fn mix<'a, I>(pairs: I) -> Result<GaussianDensity>
where
    I: IntoIterator<Item = (f64, &'a GaussianDensity)>,
{
    let pairs: Vec<(f64, &GaussianDensity)> = pairs.into_iter().filter(|(w, _)| *w > 0.0).collect();
    let total: f64 = pairs.iter().map(|(w, _)| w).sum();
    if pairs.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::contract("mixture has no positive weight"));
    }
    if pairs.len() == 1 {
        return Ok(pairs[0].1.clone());
    }
    let dim = pairs[0].1.dim();
    let mut mean = DVector::zeros(dim);
    for (w, c) in &pairs {
        mean.axpy(*w / total, &c.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (w, c) in &pairs {
        let w = *w / total;
        let d = &c.mean - &mean;
        cov += (&c.cov + &d * d.transpose()) * w;
    }
    GaussianDensity::from_symmetrised(mean, cov, "moment-matched covariance")
}

pub(crate) fn symmetrise(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn check_symmetric(context: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { context, asymmetry });
    }
    Ok(())
}
