//! Gaussian-process surrogate over the joint (θ, s) space.
//!
//! Constant prior mean, homoscedastic Gaussian likelihood and an anisotropic
//! squared-exponential kernel. Inputs are mapped to the unit box and targets
//! standardized before fitting; hyperparameters live in that normalized space
//! and are estimated by maximum a-posteriori search under smooth-box
//! hyper-priors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TargetSelector};
use crate::error::GpError;
use crate::linalg::{Cholesky, Matrix};
use crate::optim::{minimize_box, MinimizeOptions};
use crate::rng::rng_for;
use crate::scalar::{dot, Real};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Latent posterior at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub mean: T,
    pub std: T,
}

/// Latent posterior with gradients with respect to the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad<T> {
    pub mean: T,
    pub std: T,
    pub d_mean: Vec<T>,
    pub d_std: Vec<T>,
}

/// Anything that yields normally distributed predictions over (θ, s).
///
/// The acquisition and smoothing code only talk to this trait, so analytic
/// test posteriors can stand in for fitted models.
pub trait Posterior<T: Real>: Sync {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[T]) -> Prediction<T>;

    fn predict_with_grad(&self, x: &[T]) -> PredictionGrad<T>;

    /// Observation noise variance in target units.
    fn noise_variance(&self) -> T;

    /// Predictive spread of a new noisy observation.
    fn predict_noisy_std(&self, x: &[T]) -> T {
        let p = self.predict(x);
        (p.std * p.std + self.noise_variance()).sqrt()
    }

    /// Typical magnitude of target variation; used to normalize penalties.
    fn target_scale(&self) -> T {
        T::one()
    }
}

/// Posterior given by closed-form mean and spread functions.
///
/// Gradients are taken by central differences.
pub struct FnPosterior<T> {
    dim: usize,
    mean: Box<dyn Fn(&[T]) -> T + Send + Sync>,
    std: Box<dyn Fn(&[T]) -> T + Send + Sync>,
    noise_variance: T,
}

impl<T: Real> FnPosterior<T> {
    pub fn new(
        dim: usize,
        mean: impl Fn(&[T]) -> T + Send + Sync + 'static,
        std: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        FnPosterior { dim, mean: Box::new(mean), std: Box::new(std), noise_variance: T::zero() }
    }

    pub fn with_noise_variance(mut self, noise_variance: T) -> Self {
        self.noise_variance = noise_variance;
        self
    }
}

impl<T: Real> std::fmt::Debug for FnPosterior<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnPosterior").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl<T: Real> Posterior<T> for FnPosterior<T> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[T]) -> Prediction<T> {
        Prediction { mean: (self.mean)(x), std: (self.std)(x).max(T::zero()) }
    }

    fn predict_with_grad(&self, x: &[T]) -> PredictionGrad<T> {
        let h = T::lit(1e-6);
        let mut d_mean = vec![T::zero(); x.len()];
        let mut d_std = vec![T::zero(); x.len()];
        let mut xp = x.to_vec();
        for k in 0..x.len() {
            xp[k] = x[k] + h;
            let a = self.predict(&xp);
            xp[k] = x[k] - h;
            let b = self.predict(&xp);
            xp[k] = x[k];
            d_mean[k] = (a.mean - b.mean) / (h + h);
            d_std[k] = (a.std - b.std) / (h + h);
        }
        let p = self.predict(x);
        PredictionGrad { mean: p.mean, std: p.std, d_mean, d_std }
    }

    fn noise_variance(&self) -> T {
        self.noise_variance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct GpHyperparams<T> {
    pub signal_variance: T,
    pub length_scales: Vec<T>,
    pub noise_variance: T,
    pub prior_mean: T,
}

impl<T: Real> GpHyperparams<T> {
    fn validate(&self) -> Result<(), GpError> {
        let ok = self.signal_variance > T::zero()
            && self.signal_variance.is_finite()
            && self.noise_variance >= T::zero()
            && self.noise_variance.is_finite()
            && self.prior_mean.is_finite()
            && self.length_scales.iter().all(|l| *l > T::zero() && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidHyperparams(format!("{self:?}")))
        }
    }

    fn to_log_params(&self) -> Vec<T> {
        let mut p: Vec<T> = self.length_scales.iter().map(|l| l.ln()).collect();
        p.push(self.signal_variance.ln());
        p.push(self.noise_variance.ln());
        p
    }

    fn from_log_params(p: &[T], prior_mean: T) -> Self {
        let d = p.len() - 2;
        GpHyperparams {
            length_scales: p[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: p[d].exp(),
            noise_variance: p[d + 1].exp(),
            prior_mean,
        }
    }
}

/// Hyper-priors in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperPrior {
    /// Flat region for length scales on the unit box.
    pub length_scale_box: (f64, f64),
    /// Width (log space) of the Gaussian shoulders outside the box.
    pub length_scale_softness: f64,
    /// Log-normal spread of the signal variance around one.
    pub signal_log_sd: f64,
    /// Flat region for the noise variance (standardized targets).
    pub noise_box: (f64, f64),
    pub noise_softness: f64,
    pub noise_floor: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            length_scale_box: (0.05, 2.0),
            length_scale_softness: 0.35,
            signal_log_sd: 1.5,
            noise_box: (1e-6, 1.0),
            noise_softness: 1.0,
            noise_floor: 1e-8,
        }
    }
}

fn smooth_box_log_density(u: f64, lo: f64, hi: f64, w: f64) -> (f64, f64) {
    if u < lo {
        let z = (lo - u) / w;
        (-0.5 * z * z, z / w)
    } else if u > hi {
        let z = (u - hi) / w;
        (-0.5 * z * z, -z / w)
    } else {
        (0.0, 0.0)
    }
}

impl HyperPrior {
    /// Log prior density (up to a constant) and its gradient in log parameters.
    fn log_density(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let d = p.len() - 2;
        let mut grad = vec![0.0; p.len()];
        let mut lp = 0.0;
        let (a, b) = (self.length_scale_box.0.ln(), self.length_scale_box.1.ln());
        for k in 0..d {
            let (v, g) = smooth_box_log_density(p[k], a, b, self.length_scale_softness);
            lp += v;
            grad[k] = g;
        }
        let s = p[d] / self.signal_log_sd;
        lp += -0.5 * s * s;
        grad[d] = -s / self.signal_log_sd;
        let (v, g) = smooth_box_log_density(p[d + 1], self.noise_box.0.ln(), self.noise_box.1.ln(), self.noise_softness);
        lp += v;
        grad[d + 1] = g;
        (lp, grad)
    }

    fn hard_bounds(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![(self.length_scale_box.0 * 0.1).ln(); d];
        let mut hi = vec![(self.length_scale_box.1 * 10.0).ln(); d];
        lo.push(1e-3f64.ln());
        hi.push(1e3f64.ln());
        lo.push(self.noise_floor.max(1e-300).ln());
        hi.push(10f64.ln());
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub prior: HyperPrior,
    /// Random starting points for the MAP search.
    pub n_restarts: usize,
    /// How many of the best screened starts receive local quasi-Newton refinement.
    pub n_refine: usize,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { prior: HyperPrior::default(), n_restarts: 8, n_refine: 2, max_iter: 60 }
    }
}

/// Affine map from raw values to the normalized space: `z = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineScaling<T> {
    pub offset: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> AffineScaling<T> {
    pub fn identity(d: usize) -> Self {
        AffineScaling { offset: vec![T::zero(); d], scale: vec![T::one(); d] }
    }

    fn from_bounds(bounds: &[(T, T)]) -> Self {
        let offset = bounds.iter().map(|b| b.0).collect();
        let scale = bounds.iter().map(|b| positive_or_one(b.1 - b.0)).collect();
        AffineScaling { offset, scale }
    }

    fn from_data(x: &[Vec<T>]) -> Self {
        let d = x[0].len();
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for row in x {
            for k in 0..d {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        let scale = lo.iter().zip(&hi).map(|(&a, &b)| positive_or_one(b - a)).collect();
        AffineScaling { offset: lo, scale }
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(self.offset.iter().zip(&self.scale)).map(|(&v, (&o, &s))| (v - o) / s).collect()
    }
}

fn positive_or_one<T: Real>(w: T) -> T {
    if w > T::zero() && w.is_finite() {
        w
    } else {
        T::one()
    }
}

/// Fitted Gaussian-process posterior. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel<T> {
    hyper: GpHyperparams<T>,
    input_scaling: AffineScaling<T>,
    target_offset: T,
    target_scale: T,
    x: Matrix<T>,
    y: Vec<T>,
    chol: Cholesky<T>,
    alpha: Vec<T>,
    jitter: T,
}

fn kernel_matrix<T: Real>(x: &Matrix<T>, inv_ls2: &[T], signal: T) -> Matrix<T> {
    let n = x.nrows();
    let half = T::lit(0.5);
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = signal;
        let xi = x.row(i);
        for j in 0..i {
            let xj = x.row(j);
            let mut r2 = T::zero();
            for d in 0..xi.len() {
                let diff = xi[d] - xj[d];
                r2 += diff * diff * inv_ls2[d];
            }
            let v = signal * (-half * r2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky with jitter escalation. Returns the factor and the jitter used.
fn factorize<T: Real>(k: &Matrix<T>) -> Option<(Cholesky<T>, T)> {
    if let Some(c) = Cholesky::new(k) {
        return Some((c, T::zero()));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut kj = k.clone();
        kj.add_diagonal(T::lit(jitter));
        if let Some(c) = Cholesky::new(&kj) {
            return Some((c, T::lit(jitter)));
        }
        jitter *= 10.0;
    }
    None
}

struct Evaluation<T> {
    value: T,
    grad: Option<Vec<T>>,
}

/// Log marginal likelihood of centered targets `y` under log-parameters `p`,
/// optionally with its gradient.
fn log_marginal<T: Real>(x: &Matrix<T>, y: &[T], p: &[T], with_grad: bool) -> Option<Evaluation<T>> {
    let n = x.nrows();
    let d = p.len() - 2;
    let signal = p[d].exp();
    let noise = p[d + 1].exp();
    let inv_ls2: Vec<T> = p[..d].iter().map(|v| (-(*v + *v)).exp()).collect();
    let kf = kernel_matrix(x, &inv_ls2, signal);
    let mut k = kf.clone();
    k.add_diagonal(noise);
    let (chol, _) = factorize(&k)?;
    let alpha = chol.solve(y);
    let half = T::lit(0.5);
    let value = -half * dot(y, &alpha) - half * chol.log_det() - half * T::from_usize_lossy(n) * T::lit(LN_2PI);
    if !value.is_finite() {
        return None;
    }
    if !with_grad {
        return Some(Evaluation { value, grad: None });
    }
    // W = α αᵀ − K⁻¹; ∂L/∂p = ½ Σ_ij W_ij ∂K_ij.
    let kinv = chol.inverse();
    let mut grad = vec![T::zero(); p.len()];
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let mult = if i == j { half } else { T::one() };
            let kij = kf[(i, j)];
            let xj = x.row(j);
            for dd in 0..d {
                let diff = xi[dd] - xj[dd];
                grad[dd] += mult * w * kij * diff * diff * inv_ls2[dd];
            }
            grad[d] += mult * w * kij;
            if i == j {
                grad[d + 1] += mult * w * noise;
            }
        }
    }
    Some(Evaluation { value, grad: Some(grad) })
}

impl<T: Real> GpModel<T> {
    /// Conditions a GP on raw data with fixed hyperparameters and no
    /// normalization (identity input map, unit target scale).
    pub fn condition(inputs: &[Vec<T>], targets: &[T], hyper: GpHyperparams<T>) -> Result<Self, GpError> {
        check_data(inputs, targets)?;
        hyper.validate()?;
        let d = inputs[0].len();
        if hyper.length_scales.len() != d {
            return Err(GpError::InvalidHyperparams(format!("{} length scales for {d} inputs", hyper.length_scales.len())));
        }
        Self::build(AffineScaling::identity(d), T::zero(), T::one(), inputs, targets, hyper)
    }

    fn build(
        input_scaling: AffineScaling<T>,
        target_offset: T,
        target_scale: T,
        inputs: &[Vec<T>],
        targets: &[T],
        hyper: GpHyperparams<T>,
    ) -> Result<Self, GpError> {
        let rows: Vec<Vec<T>> = inputs.iter().map(|x| input_scaling.apply(x)).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<T> = targets.iter().map(|&t| (t - target_offset) / target_scale).collect();
        let inv_ls2: Vec<T> = hyper.length_scales.iter().map(|l| T::one() / (*l * *l)).collect();
        let mut k = kernel_matrix(&x, &inv_ls2, hyper.signal_variance);
        k.add_diagonal(hyper.noise_variance);
        let Some((chol, jitter)) = factorize(&k) else {
            return Err(GpError::IllConditioned {
                n: rows.len(),
                length_scales: hyper.length_scales.iter().map(|l| l.to_f64_lossy()).collect(),
                max_jitter: JITTER_MAX,
            });
        };
        let centered: Vec<T> = y.iter().map(|&v| v - hyper.prior_mean).collect();
        let alpha = chol.solve(&centered);
        Ok(GpModel { hyper, input_scaling, target_offset, target_scale, x, y, chol, alpha, jitter })
    }

    /// MAP fit on raw data. `bounds` fixes the input normalization (the
    /// search box); without it the data range is used. `warm_start` adds the
    /// given normalized hyperparameters as an extra starting point.
    pub fn fit(
        inputs: &[Vec<T>],
        targets: &[T],
        bounds: Option<&[(T, T)]>,
        config: &GpConfig,
        warm_start: Option<&GpHyperparams<T>>,
        seed: u64,
    ) -> Result<Self, GpError> {
        check_data(inputs, targets)?;
        let (input_scaling, mean, target_scale) = normalization(inputs, targets, bounds);
        let x = Matrix::from_rows(&inputs.iter().map(|r| input_scaling.apply(r)).collect::<Vec<_>>());
        let y: Vec<T> = targets.iter().map(|&t| (t - mean) / target_scale).collect();

        let best = map_search(&x, &y, config, warm_start, seed)
            .ok_or_else(|| GpError::IllConditioned { n: targets.len(), length_scales: vec![], max_jitter: JITTER_MAX })?;
        let hyper = GpHyperparams::from_log_params(&best, T::zero());
        Self::build(input_scaling, mean, target_scale, inputs, targets, hyper)
    }

    /// Conditions on raw data with the same normalization as [`GpModel::fit`]
    /// but fixed normalized hyperparameters.
    pub fn with_hyperparams(
        inputs: &[Vec<T>],
        targets: &[T],
        bounds: Option<&[(T, T)]>,
        hyper: GpHyperparams<T>,
    ) -> Result<Self, GpError> {
        check_data(inputs, targets)?;
        hyper.validate()?;
        let (input_scaling, mean, target_scale) = normalization(inputs, targets, bounds);
        Self::build(input_scaling, mean, target_scale, inputs, targets, hyper)
    }

    /// Fits to one target of a dataset over the joint (θ, s) box.
    pub fn fit_dataset(
        dataset: &Dataset<T>,
        selector: TargetSelector,
        bounds: &[(T, T)],
        config: &GpConfig,
        warm_start: Option<&GpHyperparams<T>>,
        seed: u64,
    ) -> Result<Self, GpError> {
        if dataset.is_empty() {
            return Err(GpError::EmptyDataset);
        }
        Self::fit(&dataset.inputs(), dataset.targets(selector), Some(bounds), config, warm_start, seed)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Hyperparameters in normalized units.
    pub fn hyperparams(&self) -> &GpHyperparams<T> {
        &self.hyper
    }

    pub fn input_scaling(&self) -> &AffineScaling<T> {
        &self.input_scaling
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Constant prior mean in target units.
    pub fn prior_mean(&self) -> T {
        self.target_offset + self.target_scale * self.hyper.prior_mean
    }

    /// Prior signal variance in target units.
    pub fn signal_variance(&self) -> T {
        self.target_scale * self.target_scale * self.hyper.signal_variance
    }

    /// Log marginal likelihood of the model's own data, and its gradient
    /// with respect to `(ln ℓ_1..ln ℓ_d, ln σ_f², ln σ_n²)`, at `hyper`.
    pub fn log_marginal_likelihood_at(&self, hyper: &GpHyperparams<T>) -> Option<(T, Vec<T>)> {
        let y: Vec<T> = self.y.iter().map(|&v| v - hyper.prior_mean).collect();
        let e = log_marginal(&self.x, &y, &hyper.to_log_params(), true)?;
        Some((e.value, e.grad.unwrap_or_default()))
    }

    pub fn log_marginal_likelihood(&self) -> T {
        self.log_marginal_likelihood_at(&self.hyper).map_or(T::neg_infinity(), |e| e.0)
    }

    fn cross_kernel(&self, z: &[T]) -> Vec<T> {
        let half = T::lit(0.5);
        let ls = &self.hyper.length_scales;
        (0..self.x.nrows())
            .map(|i| {
                let xi = self.x.row(i);
                let mut r2 = T::zero();
                for d in 0..z.len() {
                    let u = (z[d] - xi[d]) / ls[d];
                    r2 += u * u;
                }
                self.hyper.signal_variance * (-half * r2).exp()
            })
            .collect()
    }

    fn assert_input(&self, x: &[T]) {
        assert_eq!(x.len(), self.x.ncols(), "query dimension mismatch");
        assert!(x.iter().all(|v| v.is_finite()), "non-finite query point {x:?}");
    }
}

fn normalization<T: Real>(inputs: &[Vec<T>], targets: &[T], bounds: Option<&[(T, T)]>) -> (AffineScaling<T>, T, T) {
    let input_scaling = match bounds {
        Some(b) => {
            assert_eq!(b.len(), inputs[0].len(), "bounds dimension mismatch");
            AffineScaling::from_bounds(b)
        }
        None => AffineScaling::from_data(inputs),
    };
    let n = T::from_usize_lossy(targets.len());
    let mean = targets.iter().copied().sum::<T>() / n;
    let var = targets.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let target_scale = if std > T::lit(1e-12) * (T::one() + mean.abs()) { std } else { T::one() };
    (input_scaling, mean, target_scale)
}

fn check_data<T: Real>(inputs: &[Vec<T>], targets: &[T]) -> Result<(), GpError> {
    if inputs.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(GpError::LengthMismatch { inputs: inputs.len(), targets: targets.len() });
    }
    let d = inputs[0].len();
    for (row, (x, t)) in inputs.iter().zip(targets).enumerate() {
        if x.len() != d || !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFiniteData { row });
        }
    }
    Ok(())
}

/// Multi-start MAP search in log-parameter space. Every start is screened by
/// its penalized likelihood; the best `n_refine` are refined with projected
/// L-BFGS.
fn map_search<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    config: &GpConfig,
    warm_start: Option<&GpHyperparams<T>>,
    seed: u64,
) -> Option<Vec<T>> {
    let d = x.ncols();
    let prior = &config.prior;
    let (lo, hi) = prior.hard_bounds(d);
    let lo_t: Vec<T> = lo.iter().map(|&v| T::lit(v)).collect();
    let hi_t: Vec<T> = hi.iter().map(|&v| T::lit(v)).collect();

    let objective = |p: &[T], with_grad: bool| -> Option<(T, Vec<T>)> {
        let e = log_marginal(x, y, p, with_grad)?;
        let pf: Vec<f64> = p.iter().map(|v| v.to_f64_lossy()).collect();
        let (lp, lg) = prior.log_density(&pf);
        let value = -(e.value + T::lit(lp));
        let grad = e
            .grad
            .map(|g| g.iter().zip(&lg).map(|(&a, &b)| -(a + T::lit(b))).collect())
            .unwrap_or_default();
        Some((value, grad))
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut default = vec![0.3f64.ln(); d];
    default.push(0.0);
    default.push(1e-2f64.ln());
    starts.push(default);
    if let Some(w) = warm_start {
        if w.length_scales.len() == d {
            starts.push(w.to_log_params().iter().map(|v| v.to_f64_lossy()).collect());
        }
    }
    let mut rng = rng_for(seed, "gp-restarts", 0);
    let (la, lb) = (prior.length_scale_box.0.ln(), prior.length_scale_box.1.ln());
    for _ in 0..config.n_restarts {
        let mut p: Vec<f64> = (0..d).map(|_| rng.gen_range(la..lb)).collect();
        p.push(rng.gen_range(0.1f64.ln()..3f64.ln()));
        p.push(rng.gen_range(1e-4f64.ln()..0.3f64.ln()));
        starts.push(p);
    }

    let mut screened: Vec<(T, Vec<T>)> = starts
        .into_iter()
        .map(|p| {
            let mut pt: Vec<T> = p.iter().map(|&v| T::lit(v)).collect();
            for k in 0..pt.len() {
                pt[k] = pt[k].max(lo_t[k]).min(hi_t[k]);
            }
            let v = objective(&pt, false).map_or(T::infinity(), |e| e.0);
            (v, pt)
        })
        .collect();
    // Stable sort keeps start order on ties, so the search is deterministic.
    screened.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let opts = MinimizeOptions { max_iter: config.max_iter, grad_tol: T::lit(1e-5), rel_tol: T::lit(1e-9), ..Default::default() };
    let mut best: Option<(T, Vec<T>)> = None;
    for (v0, p0) in screened.iter().take(config.n_refine.max(1)) {
        if !v0.is_finite() {
            continue;
        }
        let m = minimize_box(
            |p: &[T], g: &mut [T]| match objective(p, true) {
                Some((v, gr)) => {
                    g.copy_from_slice(&gr);
                    v
                }
                None => T::infinity(),
            },
            p0,
            &lo_t,
            &hi_t,
            &opts,
        );
        if m.value.is_finite() && best.as_ref().map_or(true, |b| m.value < b.0) {
            best = Some((m.value, m.x));
        }
    }
    best.map(|b| b.1)
}

impl<T: Real> Posterior<T> for GpModel<T> {
    fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    fn predict(&self, x: &[T]) -> Prediction<T> {
        self.assert_input(x);
        let z = self.input_scaling.apply(x);
        let mut kstar = self.cross_kernel(&z);
        let mean_n = self.hyper.prior_mean + dot(&kstar, &self.alpha);
        self.chol.solve_lower_in_place(&mut kstar);
        let var_n = (self.hyper.signal_variance - dot(&kstar, &kstar)).max(T::zero());
        Prediction { mean: self.target_offset + self.target_scale * mean_n, std: self.target_scale * var_n.sqrt() }
    }

    fn predict_with_grad(&self, x: &[T]) -> PredictionGrad<T> {
        self.assert_input(x);
        let d = x.len();
        let z = self.input_scaling.apply(x);
        let kstar = self.cross_kernel(&z);
        let mean_n = self.hyper.prior_mean + dot(&kstar, &self.alpha);
        let mut v = kstar.clone();
        self.chol.solve_lower_in_place(&mut v);
        let var_n = (self.hyper.signal_variance - dot(&v, &v)).max(T::zero());
        let mut w = v;
        self.chol.solve_upper_in_place(&mut w);

        let mut dmean = vec![T::zero(); d];
        let mut dvar = vec![T::zero(); d];
        for i in 0..kstar.len() {
            let xi = self.x.row(i);
            for k in 0..d {
                let l = self.hyper.length_scales[k];
                let dk = -kstar[i] * (z[k] - xi[k]) / (l * l);
                dmean[k] += self.alpha[i] * dk;
                dvar[k] -= T::lit(2.0) * w[i] * dk;
            }
        }
        let std_n = var_n.sqrt();
        let ts = self.target_scale;
        let d_mean = (0..d).map(|k| ts * dmean[k] / self.input_scaling.scale[k]).collect();
        let d_std = (0..d)
            .map(|k| if std_n > T::zero() { ts * dvar[k] / (T::lit(2.0) * std_n) / self.input_scaling.scale[k] } else { T::zero() })
            .collect();
        PredictionGrad { mean: self.target_offset + ts * mean_n, std: ts * std_n, d_mean, d_std }
    }

    fn noise_variance(&self) -> T {
        self.target_scale * self.target_scale * self.hyper.noise_variance
    }

    fn target_scale(&self) -> T {
        self.target_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hyper(ls: &[f64], signal: f64, noise: f64, mean: f64) -> GpHyperparams<f64> {
        GpHyperparams { signal_variance: signal, length_scales: ls.to_vec(), noise_variance: noise, prior_mean: mean }
    }

    #[test]
    fn single_point_interpolates() {
        let m = GpModel::condition(&[vec![0.3, 0.7]], &[3.0], hyper(&[0.5, 0.5], 1.0, 1e-10, 0.0)).unwrap();
        let p = m.predict(&[0.3, 0.7]);
        assert_relative_eq!(p.mean, 3.0, epsilon = 1e-6);
        assert!(p.std < 1e-4);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let xs = vec![vec![0.0], vec![0.2], vec![0.5]];
        let m = GpModel::condition(&xs, &[1.0, -2.0, 0.5], hyper(&[0.1], 2.0, 1e-4, 0.7)).unwrap();
        let p = m.predict(&[10.0]);
        assert_relative_eq!(p.mean, 0.7, max_relative = 0.01);
        assert_relative_eq!(p.std * p.std, 2.0, max_relative = 0.01);
    }

    #[test]
    fn symmetric_points_average_at_midpoint() {
        let m = GpModel::condition(&[vec![-1.0], vec![1.0]], &[2.0, 6.0], hyper(&[0.8], 1.0, 1e-6, 4.0)).unwrap();
        assert_relative_eq!(m.predict(&[0.0]).mean, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn noisy_std_combines_latent_and_noise() {
        let m = GpModel::condition(&[vec![0.0], vec![1.0]], &[0.0, 1.0], hyper(&[0.5], 1.0, 0.04, 0.0)).unwrap();
        let q = [0.4];
        let p = m.predict(&q);
        assert_relative_eq!(m.predict_noisy_std(&q), (p.std * p.std + 0.04).sqrt(), epsilon = 1e-12);
        let m0 = GpModel::condition(&[vec![0.0], vec![1.0]], &[0.0, 1.0], hyper(&[0.5], 1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(m0.predict_noisy_std(&q), m0.predict(&q).std, epsilon = 1e-12);
    }

    #[test]
    fn densely_sampled_point_has_noise_floor_spread() {
        let xs = vec![vec![0.5]; 400];
        let ys = vec![1.0; 400];
        let m = GpModel::condition(&xs, &ys, hyper(&[0.3], 1.0, 0.01, 0.0)).unwrap();
        assert_relative_eq!(m.predict_noisy_std(&[0.5]), 0.1, max_relative = 0.01);
    }

    #[test]
    fn duplicate_inputs_without_noise_use_jitter() {
        let xs = vec![vec![0.5], vec![0.5]];
        let m = GpModel::condition(&xs, &[1.0, 1.0], hyper(&[0.3], 1.0, 0.0, 0.0)).unwrap();
        assert!(m.jitter() > 0.0);
        assert_relative_eq!(m.predict(&[0.5]).mean, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_empty_and_mismatched_data() {
        let h = hyper(&[1.0], 1.0, 0.1, 0.0);
        assert!(matches!(GpModel::<f64>::condition(&[], &[], h.clone()), Err(GpError::EmptyDataset)));
        assert!(matches!(GpModel::condition(&[vec![0.0]], &[1.0, 2.0], h), Err(GpError::LengthMismatch { .. })));
    }

    #[test]
    fn prediction_gradient_matches_finite_differences() {
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.15, (i * i % 5) as f64 * 0.2]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
        let m = GpModel::fit(&xs, &ys, Some(&[(0.0, 1.0), (0.0, 1.0)]), &GpConfig::default(), None, 3).unwrap();
        let q = [0.37, 0.52];
        let g = m.predict_with_grad(&q);
        let h = 1e-6;
        for k in 0..2 {
            let mut a = q;
            let mut b = q;
            a[k] += h;
            b[k] -= h;
            let (pa, pb) = (m.predict(&a), m.predict(&b));
            assert_relative_eq!(g.d_mean[k], (pa.mean - pb.mean) / (2.0 * h), epsilon = 1e-5, max_relative = 1e-4);
            assert_relative_eq!(g.d_std[k], (pa.std - pb.std) / (2.0 * h), epsilon = 1e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn fit_recovers_smooth_function() {
        let xs: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64 / 24.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let m = GpModel::fit(&xs, &ys, None, &GpConfig::default(), None, 11).unwrap();
        for q in [0.11, 0.52, 0.93] {
            assert!((m.predict(&[q]).mean - (6.0f64 * q).sin()).abs() < 0.02);
        }
        let ls = m.hyperparams().length_scales[0];
        assert!(ls > 0.05 && ls < 2.0, "length scale {ls}");
    }

    #[test]
    fn works_in_single_precision() {
        let xs: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32 / 9.0]).collect();
        let ys: Vec<f32> = xs.iter().map(|x| x[0] * x[0]).collect();
        let m = GpModel::fit(&xs, &ys, None, &GpConfig::default(), None, 1).unwrap();
        assert!((m.predict(&[0.5]).mean - 0.25).abs() < 0.02);
    }
}
