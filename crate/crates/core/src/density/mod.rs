//! Variational Bayesian Gaussian mixture over achieved-goal trajectory
//! features.
//!
//! The posterior family is the usual conjugate one: a Dirichlet over the
//! mixing weights and a Normal-Wishart per component (with a diagonal
//! covariance the Wishart factorizes into independent one-dimensional
//! Wisharts, i.e. Gamma distributions, one per feature). Fitting is
//! coordinate ascent on the evidence lower bound; after the first
//! convergence, component-deletion moves are proposed and kept only if they
//! raise the bound, which is what lets a generous `max_components` settle on
//! the number of clusters the data supports.
//!
//! Density prediction plugs the posterior-expected parameters into a plain
//! Gaussian mixture:
//! `ρ(x) = Σ_k c_k N(x | μ_k, Σ_k)`.

pub mod linalg;
pub mod special;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CdpError, Result};
use crate::mdp::Trajectory;
use crate::scalar::{log_sum_exp, Scalar};
use linalg::{cholesky, inverse_from_cholesky, inverse_quadratic_form, log_det_from_cholesky};
use special::{digamma, ln_gamma, ln_multi_gamma};

pub const MIXTURE_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Farthest-point seeding of centers from the data, then hard assignment.
    KmeansLike,
    /// Independent uniform responsibilities, row-normalized.
    RandomResponsibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgmmConfig<T> {
    pub max_components: usize,
    pub covariance_kind: CovarianceKind,
    /// Dirichlet concentration per component; `None` means `1 / K`.
    pub dirichlet_concentration: Option<T>,
    pub max_iterations: usize,
    /// Stop when the bound improves by less than this per sample.
    pub convergence_tol: T,
    /// Added to every plug-in covariance diagonal.
    pub covariance_floor: T,
    pub init_strategy: InitStrategy,
    pub seed: u64,
    /// Components with weight above this count as effective.
    pub prune_threshold: T,
    /// Lower clamp on predicted raw densities.
    pub density_floor: T,
    /// Propose component deletions after the first convergence.
    pub delete_moves: bool,
}

impl<T: Scalar> Default for VgmmConfig<T> {
    fn default() -> Self {
        Self {
            max_components: 3,
            covariance_kind: CovarianceKind::Diagonal,
            dirichlet_concentration: None,
            max_iterations: 100,
            convergence_tol: T::c(1e-3),
            covariance_floor: T::c(1e-6),
            init_strategy: InitStrategy::KmeansLike,
            seed: 0,
            prune_threshold: T::c(0.05),
            density_floor: T::density_floor(),
            delete_moves: true,
        }
    }
}

impl<T: Scalar> VgmmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CdpError::InvalidConfig(m.to_string()));
        if self.max_components == 0 {
            return bad("max_components must be >= 1");
        }
        if !(self.covariance_floor > T::zero()) {
            return bad("covariance_floor must be > 0");
        }
        if !(self.convergence_tol > T::zero()) {
            return bad("convergence_tol must be > 0");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if let Some(a) = self.dirichlet_concentration {
            if !(a > T::zero()) {
                return bad("dirichlet_concentration must be > 0");
            }
        }
        if !(self.density_floor > T::zero()) {
            return bad("density_floor must be > 0");
        }
        Ok(())
    }
}

/// Posterior hyperparameters of a fitted model.
///
/// `scale` holds the inverse Wishart scale `W_k⁻¹` per component, as a
/// row-major `D×D` matrix for full covariances or as its diagonal for the
/// factorized diagonal posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams<T> {
    pub dirichlet_counts: Vec<T>,
    pub mean_precision: Vec<T>,
    pub degrees_of_freedom: Vec<T>,
    pub scale: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<T> {
    /// Lower-bound values, one list per coordinate-ascent run (the initial
    /// run, then every accepted deletion move). Each list is one entry per
    /// iteration.
    pub bound_trace: Vec<Vec<T>>,
    pub lower_bound: T,
    pub iterations: usize,
    pub converged: bool,
    pub deleted_components: usize,
}

#[derive(Debug, Clone)]
struct ComponentCache<T> {
    log_norm: T,
    /// Inverse variances (diagonal) or the Cholesky factor of Σ (full).
    factor: Vec<T>,
}

/// A fitted mixture. Immutable once built.
#[derive(Debug, Clone)]
pub struct MixtureModel<T> {
    dim: usize,
    kind: CovarianceKind,
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    covariances: Vec<Vec<T>>,
    posterior: PosteriorParams<T>,
    effective_components: usize,
    prune_threshold: T,
    covariance_floor: T,
    density_floor: T,
    report: FitReport<T>,
    cache: Vec<ComponentCache<T>>,
}

/// Versioned on-disk form of [`MixtureModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureDocument<T> {
    pub version: u32,
    pub dim: usize,
    pub covariance_kind: CovarianceKind,
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub covariances: Vec<Vec<T>>,
    pub posterior: PosteriorParams<T>,
    pub effective_components: usize,
    pub prune_threshold: T,
    pub covariance_floor: T,
    pub density_floor: T,
    pub report: FitReport<T>,
}

impl<T: Scalar> MixtureModel<T> {
    /// Builds a model from explicit plug-in parameters; covariances are
    /// diagonals (`D` entries) or row-major `D×D` matrices according to `kind`.
    pub fn from_parameters(
        kind: CovarianceKind,
        weights: Vec<T>,
        means: Vec<Vec<T>>,
        covariances: Vec<Vec<T>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(CdpError::EmptyInput("mixture weights"));
        }
        check_dim(k, means.len())?;
        check_dim(k, covariances.len())?;
        let dim = means[0].len();
        let cov_len = match kind {
            CovarianceKind::Diagonal => dim,
            CovarianceKind::Full => dim * dim,
        };
        for (m, c) in means.iter().zip(&covariances) {
            check_dim(dim, m.len())?;
            check_dim(cov_len, c.len())?;
        }
        let total: T = weights.iter().copied().sum();
        let weights: Vec<T> = weights.into_iter().map(|w| w / total).collect();
        let prune_threshold = T::c(0.05);
        let posterior = PosteriorParams {
            dirichlet_counts: weights.clone(),
            mean_precision: vec![T::zero(); k],
            degrees_of_freedom: vec![T::zero(); k],
            scale: covariances.clone(),
        };
        let effective = weights.iter().filter(|&&w| w > prune_threshold).count();
        Self::assemble(MixtureDocument {
            version: MIXTURE_DOCUMENT_VERSION,
            dim,
            covariance_kind: kind,
            weights,
            means,
            covariances,
            posterior,
            effective_components: effective,
            prune_threshold,
            covariance_floor: T::zero(),
            density_floor: T::density_floor(),
            report: FitReport {
                bound_trace: vec![],
                lower_bound: T::nan(),
                iterations: 0,
                converged: true,
                deleted_components: 0,
            },
        })
    }

    fn assemble(doc: MixtureDocument<T>) -> Result<Self> {
        let dim = doc.dim;
        let half_log_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
        let mut cache = Vec::with_capacity(doc.weights.len());
        for cov in &doc.covariances {
            let entry = match doc.covariance_kind {
                CovarianceKind::Diagonal => {
                    if cov.iter().any(|&v| !(v > T::zero())) {
                        return Err(CdpError::NonFinite("non-positive variance".into()));
                    }
                    let log_det: T = cov.iter().map(|v| v.ln()).sum();
                    ComponentCache {
                        log_norm: -T::from_count(dim) * half_log_2pi - T::c(0.5) * log_det,
                        factor: cov.iter().map(|v| v.recip()).collect(),
                    }
                }
                CovarianceKind::Full => {
                    let l = cholesky(cov, dim)
                        .ok_or_else(|| CdpError::NonFinite("covariance not positive definite".into()))?;
                    ComponentCache {
                        log_norm: -T::from_count(dim) * half_log_2pi
                            - T::c(0.5) * log_det_from_cholesky(&l, dim),
                        factor: l,
                    }
                }
            };
            cache.push(entry);
        }
        Ok(Self {
            dim,
            kind: doc.covariance_kind,
            weights: doc.weights,
            means: doc.means,
            covariances: doc.covariances,
            posterior: doc.posterior,
            effective_components: doc.effective_components,
            prune_threshold: doc.prune_threshold,
            covariance_floor: doc.covariance_floor,
            density_floor: doc.density_floor,
            report: doc.report,
            cache,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<T>] {
        &self.covariances
    }

    pub fn posterior(&self) -> &PosteriorParams<T> {
        &self.posterior
    }

    pub fn effective_components(&self) -> usize {
        self.effective_components
    }

    pub fn density_floor(&self) -> T {
        self.density_floor
    }

    pub fn report(&self) -> &FitReport<T> {
        &self.report
    }

    /// `log Σ_k c_k N(x | μ_k, Σ_k)`, evaluated with log-sum-exp.
    pub fn log_density(&self, feature: &[T]) -> Result<T> {
        check_dim(self.dim, feature.len())?;
        let mut terms = Vec::with_capacity(self.weights.len());
        let mut scratch = vec![T::zero(); self.dim];
        for k in 0..self.weights.len() {
            if !(self.weights[k] > T::zero()) {
                continue;
            }
            let c = &self.cache[k];
            let mean = &self.means[k];
            let quad = match self.kind {
                CovarianceKind::Diagonal => feature
                    .iter()
                    .zip(mean)
                    .zip(&c.factor)
                    .map(|((&x, &m), &p)| (x - m) * (x - m) * p)
                    .sum::<T>(),
                CovarianceKind::Full => {
                    let diff: Vec<T> = feature.iter().zip(mean).map(|(&x, &m)| x - m).collect();
                    inverse_quadratic_form(&c.factor, self.dim, &diff, &mut scratch)
                }
            };
            terms.push(self.weights[k].ln() + c.log_norm - T::c(0.5) * quad);
        }
        Ok(log_sum_exp(&terms))
    }

    pub fn to_document(&self) -> MixtureDocument<T> {
        MixtureDocument {
            version: MIXTURE_DOCUMENT_VERSION,
            dim: self.dim,
            covariance_kind: self.kind,
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: self.covariances.clone(),
            posterior: self.posterior.clone(),
            effective_components: self.effective_components,
            prune_threshold: self.prune_threshold,
            covariance_floor: self.covariance_floor,
            density_floor: self.density_floor,
            report: self.report.clone(),
        }
    }

    pub fn from_document(doc: MixtureDocument<T>) -> Result<Self> {
        if doc.version != MIXTURE_DOCUMENT_VERSION {
            return Err(CdpError::UnsupportedVersion(doc.version));
        }
        Self::assemble(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

/// `log_density` as a free function.
pub fn log_density<T: Scalar>(model: &MixtureModel<T>, feature: &[T]) -> Result<T> {
    model.log_density(feature)
}

/// Raw trajectory density `ρ = exp(log_density)`, clamped into
/// `[density_floor, T::MAX]`.
pub fn predict_raw_density<T: Scalar>(model: &MixtureModel<T>, trajectory: &Trajectory<T>) -> Result<T> {
    let l = model.log_density(&trajectory.achieved_goal_feature)?;
    Ok(clamp_density(l.exp(), model.density_floor))
}

pub(crate) fn clamp_density<T: Scalar>(rho: T, floor: T) -> T {
    if rho.is_nan() {
        return floor;
    }
    rho.max(floor).min(T::max_value())
}

/// Owns a configuration and the most recent fit, if any.
#[derive(Debug, Clone)]
pub struct DensityEstimator<T> {
    config: VgmmConfig<T>,
    model: Option<MixtureModel<T>>,
}

impl<T: Scalar> DensityEstimator<T> {
    pub fn new(config: VgmmConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, model: None })
    }

    pub fn config(&self) -> &VgmmConfig<T> {
        &self.config
    }

    pub fn model(&self) -> Option<&MixtureModel<T>> {
        self.model.as_ref()
    }

    pub fn fit(&mut self, features: &[Vec<T>]) -> Result<&MixtureModel<T>> {
        let model = fit(features, &self.config)?;
        Ok(self.model.insert(model))
    }

    pub fn predict_raw_density(&self, trajectory: &Trajectory<T>) -> Result<T> {
        let model = self.model.as_ref().ok_or(CdpError::UnfittedModel)?;
        predict_raw_density(model, trajectory)
    }
}

struct Prior<T> {
    alpha0: T,
    beta0: T,
    mean0: Vec<T>,
    nu0: T,
    /// `W₀⁻¹`: diagonal or row-major matrix.
    scale0: Vec<T>,
    /// Precomputed `ln B(W₀, ν₀)` (summed over blocks for the diagonal case).
    log_b0: T,
}

#[derive(Clone)]
struct Posterior<T> {
    alpha: Vec<T>,
    beta: Vec<T>,
    means: Vec<Vec<T>>,
    nu: Vec<T>,
    scale: Vec<Vec<T>>,
    /// Per component: `E[ln |Λ|]` and a factor for quadratic forms
    /// (`W⁻¹` Cholesky for full, `1 / W⁻¹_dd` for diagonal).
    e_log_det: Vec<T>,
    quad_factor: Vec<Vec<T>>,
    /// `ln |W⁻¹|` (sum over dims for the diagonal case).
    log_det_scale: Vec<T>,
}

struct Run<T> {
    post: Posterior<T>,
    resp: Vec<T>,
    log_rho: Vec<T>,
    bound: T,
    trace: Vec<T>,
    converged: bool,
}

struct Fitter<'a, T> {
    data: &'a [Vec<T>],
    n: usize,
    d: usize,
    k: usize,
    kind: CovarianceKind,
    prior: Prior<T>,
    config: &'a VgmmConfig<T>,
}

/// Fits a variational Gaussian mixture to `features` (N vectors of equal
/// dimension D). If `N < K`, `K` is reduced to `N`.
pub fn fit<T: Scalar>(features: &[Vec<T>], config: &VgmmConfig<T>) -> Result<MixtureModel<T>> {
    config.validate()?;
    let n = features.len();
    if n == 0 {
        return Err(CdpError::EmptyInput("no features to fit"));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(CdpError::EmptyInput("zero-dimensional features"));
    }
    for f in features {
        check_dim(d, f.len())?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(CdpError::NonFinite("feature contains NaN or infinity".into()));
        }
    }
    let mut k = config.max_components;
    if n < k {
        log::warn!("only {n} samples for {k} components; reducing K to {n}");
        k = n;
    }
    let prior = build_prior(features, k, config);
    let fitter = Fitter {
        data: features,
        n,
        d,
        k,
        kind: config.covariance_kind,
        prior,
        config,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let resp = match config.init_strategy {
        InitStrategy::KmeansLike => farthest_point_responsibilities(features, k, &mut rng),
        InitStrategy::RandomResponsibility => random_responsibilities(n, k, &mut rng),
    };
    let mut active = vec![true; k];
    let mut best = fitter.coordinate_ascent(resp, &active);
    let mut trace = vec![best.trace.clone()];
    let mut iterations = best.trace.len();
    let mut deleted = 0;

    if config.delete_moves {
        loop {
            let counts = fitter.counts(&best.resp);
            let mut candidates: Vec<usize> = (0..k).filter(|&j| active[j]).collect();
            if candidates.len() < 2 {
                break;
            }
            candidates.sort_by(|&a, &b| counts[a].partial_cmp(&counts[b]).unwrap_or(std::cmp::Ordering::Equal));
            let mut accepted = false;
            for j in candidates {
                let mut trial_active = active.clone();
                trial_active[j] = false;
                let resp = fitter.e_step(&best.log_rho, &trial_active);
                let trial = fitter.coordinate_ascent(resp, &trial_active);
                iterations += trial.trace.len();
                let margin = best.bound.abs() * T::c(1e-10);
                if trial.bound > best.bound + margin {
                    active = trial_active;
                    trace.push(trial.trace.clone());
                    best = trial;
                    deleted += 1;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
    }
    Ok(fitter.into_model(best, trace, iterations, deleted))
}

fn build_prior<T: Scalar>(data: &[Vec<T>], k: usize, config: &VgmmConfig<T>) -> Prior<T> {
    let n = T::from_count(data.len());
    let d = data[0].len();
    let mut mean0 = vec![T::zero(); d];
    for x in data {
        for (m, &v) in mean0.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean0.iter_mut().for_each(|m| *m /= n);
    let alpha0 = config
        .dirichlet_concentration
        .unwrap_or_else(|| T::one() / T::from_count(k));
    let floor = config.covariance_floor;
    let half = T::c(0.5);
    let ln2 = T::LN_2();
    match config.covariance_kind {
        CovarianceKind::Diagonal => {
            // one-dimensional Wishart per feature, ν₀ = 1, E[λ_d] = 1 / var_d
            let nu0 = T::one();
            let mut scale0 = vec![T::zero(); d];
            for x in data {
                for j in 0..d {
                    let c = x[j] - mean0[j];
                    scale0[j] += c * c;
                }
            }
            scale0.iter_mut().for_each(|s| *s = nu0 * (*s / n + floor));
            let log_b0 = scale0
                .iter()
                .map(|&s| half * nu0 * s.ln() - half * nu0 * ln2 - ln_gamma(half * nu0))
                .sum();
            Prior {
                alpha0,
                beta0: T::one(),
                mean0,
                nu0,
                scale0,
                log_b0,
            }
        }
        CovarianceKind::Full => {
            let nu0 = T::from_count(d);
            let mut scale0 = vec![T::zero(); d * d];
            for x in data {
                for i in 0..d {
                    let ci = x[i] - mean0[i];
                    for j in 0..d {
                        scale0[i * d + j] += ci * (x[j] - mean0[j]);
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let mut v = scale0[i * d + j] / n;
                    if i == j {
                        v += floor;
                    }
                    scale0[i * d + j] = nu0 * v;
                }
            }
            let l = cholesky(&scale0, d).expect("floored covariance is positive definite");
            let log_det = log_det_from_cholesky(&l, d);
            let log_b0 = half * nu0 * log_det - half * nu0 * T::from_count(d) * ln2 - ln_multi_gamma(half * nu0, d);
            Prior {
                alpha0,
                beta0: T::one(),
                mean0,
                nu0,
                scale0,
                log_b0,
            }
        }
    }
}

fn farthest_point_responsibilities<T: Scalar>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = data.len();
    let dist2 = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<T> = data.iter().map(|x| dist2(x, &data[centers[0]])).collect();
    while centers.len() < k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        centers.push(best);
        for (i, x) in data.iter().enumerate() {
            let d = dist2(x, &data[best]);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    let mut resp = vec![T::zero(); n * k];
    for (i, x) in data.iter().enumerate() {
        let mut arg = 0;
        let mut best = dist2(x, &data[centers[0]]);
        for (c, &idx) in centers.iter().enumerate().skip(1) {
            let d = dist2(x, &data[idx]);
            if d < best {
                best = d;
                arg = c;
            }
        }
        resp[i * k + arg] = T::one();
    }
    resp
}

fn random_responsibilities<T: Scalar>(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut resp = vec![T::zero(); n * k];
    for row in resp.chunks_mut(k) {
        let mut total = T::zero();
        for r in row.iter_mut() {
            *r = T::c(rng.random::<f64>() + 1e-3);
            total += *r;
        }
        row.iter_mut().for_each(|r| *r /= total);
    }
    resp
}

impl<T: Scalar> Fitter<'_, T> {
    fn counts(&self, resp: &[T]) -> Vec<T> {
        let mut counts = vec![T::zero(); self.k];
        for row in resp.chunks(self.k) {
            for (c, &r) in counts.iter_mut().zip(row) {
                *c += r;
            }
        }
        counts
    }

    fn coordinate_ascent(&self, mut resp: Vec<T>, active: &[bool]) -> Run<T> {
        let mut trace = Vec::new();
        let tol = self.config.convergence_tol * T::from_count(self.n);
        let mut converged = false;
        loop {
            let post = self.m_step(&resp);
            let log_rho = self.log_rho(&post, active);
            let bound = self.lower_bound(&resp, &log_rho, &post);
            let done_improving = trace
                .last()
                .map(|&prev: &T| (bound - prev) < tol)
                .unwrap_or(false);
            trace.push(bound);
            if done_improving || trace.len() >= self.config.max_iterations {
                converged = converged || done_improving;
                return Run {
                    post,
                    resp,
                    log_rho,
                    bound,
                    trace,
                    converged,
                };
            }
            resp = self.e_step(&log_rho, active);
            converged = false;
        }
    }

    fn m_step(&self, resp: &[T]) -> Posterior<T> {
        let (k, d) = (self.k, self.d);
        let p = &self.prior;
        let counts = self.counts(resp);
        let mut sums = vec![vec![T::zero(); d]; k];
        for (x, row) in self.data.iter().zip(resp.chunks(k)) {
            for c in 0..k {
                let r = row[c];
                if r == T::zero() {
                    continue;
                }
                for (s, &v) in sums[c].iter_mut().zip(x) {
                    *s += r * v;
                }
            }
        }
        let xbar: Vec<Vec<T>> = (0..k)
            .map(|c| {
                if counts[c] > T::zero() {
                    sums[c].iter().map(|&s| s / counts[c]).collect()
                } else {
                    p.mean0.clone()
                }
            })
            .collect();
        let scatter_len = match self.kind {
            CovarianceKind::Diagonal => d,
            CovarianceKind::Full => d * d,
        };
        // N_k S_k
        let mut scatter = vec![vec![T::zero(); scatter_len]; k];
        let mut diff = vec![T::zero(); d];
        for (x, row) in self.data.iter().zip(resp.chunks(k)) {
            for c in 0..k {
                let r = row[c];
                if r == T::zero() {
                    continue;
                }
                for j in 0..d {
                    diff[j] = x[j] - xbar[c][j];
                }
                match self.kind {
                    CovarianceKind::Diagonal => {
                        for j in 0..d {
                            scatter[c][j] += r * diff[j] * diff[j];
                        }
                    }
                    CovarianceKind::Full => {
                        for i in 0..d {
                            let ri = r * diff[i];
                            for j in 0..=i {
                                scatter[c][i * d + j] += ri * diff[j];
                            }
                        }
                    }
                }
            }
        }
        if self.kind == CovarianceKind::Full {
            for s in scatter.iter_mut() {
                for i in 0..d {
                    for j in 0..i {
                        s[j * d + i] = s[i * d + j];
                    }
                }
            }
        }

        let mut post = Posterior {
            alpha: Vec::with_capacity(k),
            beta: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            nu: Vec::with_capacity(k),
            scale: Vec::with_capacity(k),
            e_log_det: Vec::with_capacity(k),
            quad_factor: Vec::with_capacity(k),
            log_det_scale: Vec::with_capacity(k),
        };
        let half = T::c(0.5);
        let ln2 = T::LN_2();
        for c in 0..k {
            let nk = counts[c];
            let beta = p.beta0 + nk;
            let mean: Vec<T> = (0..d)
                .map(|j| (p.beta0 * p.mean0[j] + nk * xbar[c][j]) / beta)
                .collect();
            let nu = p.nu0 + nk;
            let shrink = p.beta0 * nk / beta;
            let dm: Vec<T> = (0..d).map(|j| xbar[c][j] - p.mean0[j]).collect();
            let mut scale = p.scale0.clone();
            match self.kind {
                CovarianceKind::Diagonal => {
                    for j in 0..d {
                        scale[j] += scatter[c][j] + shrink * dm[j] * dm[j];
                    }
                    let psi = digamma(half * nu);
                    let mut e_log_det = T::zero();
                    let mut log_det = T::zero();
                    for &s in &scale {
                        let ls = s.ln();
                        e_log_det += psi + ln2 - ls;
                        log_det += ls;
                    }
                    post.e_log_det.push(e_log_det);
                    post.log_det_scale.push(log_det);
                    post.quad_factor.push(scale.iter().map(|s| s.recip()).collect());
                }
                CovarianceKind::Full => {
                    for i in 0..d {
                        for j in 0..d {
                            scale[i * d + j] += scatter[c][i * d + j] + shrink * dm[i] * dm[j];
                        }
                    }
                    let l = cholesky(&scale, d).expect("posterior scale is positive definite");
                    let log_det = log_det_from_cholesky(&l, d);
                    let mut e_log_det = T::from_count(d) * ln2 - log_det;
                    for i in 0..d {
                        e_log_det += digamma(half * (nu - T::from_count(i)));
                    }
                    post.e_log_det.push(e_log_det);
                    post.log_det_scale.push(log_det);
                    post.quad_factor.push(l);
                }
            }
            post.alpha.push(p.alpha0 + nk);
            post.beta.push(beta);
            post.means.push(mean);
            post.nu.push(nu);
            post.scale.push(scale);
        }
        post
    }

    /// `E[ln π_k] + E[ln N(x_n | μ_k, Λ_k⁻¹)]` per sample and component;
    /// inactive components get `-inf`.
    fn log_rho(&self, post: &Posterior<T>, active: &[bool]) -> Vec<T> {
        let (k, d) = (self.k, self.d);
        let half = T::c(0.5);
        let log_2pi = T::c((2.0 * std::f64::consts::PI).ln());
        let df = T::from_count(d);
        let alpha_total: T = post.alpha.iter().copied().sum();
        let psi_total = digamma(alpha_total);
        let consts: Vec<T> = (0..k)
            .map(|c| {
                digamma(post.alpha[c]) - psi_total + half * post.e_log_det[c]
                    - half * df * log_2pi
                    - half * df / post.beta[c]
            })
            .collect();
        let mut out = vec![T::neg_infinity(); self.n * k];
        let mut diff = vec![T::zero(); d];
        let mut scratch = vec![T::zero(); d];
        for (i, x) in self.data.iter().enumerate() {
            for c in 0..k {
                if !active[c] {
                    continue;
                }
                let m = &post.means[c];
                let f = &post.quad_factor[c];
                let quad = match self.kind {
                    CovarianceKind::Diagonal => {
                        let mut q = T::zero();
                        for j in 0..d {
                            let e = x[j] - m[j];
                            q += e * e * f[j];
                        }
                        q
                    }
                    CovarianceKind::Full => {
                        for j in 0..d {
                            diff[j] = x[j] - m[j];
                        }
                        inverse_quadratic_form(f, d, &diff, &mut scratch)
                    }
                };
                out[i * k + c] = consts[c] - half * post.nu[c] * quad;
            }
        }
        out
    }

    fn e_step(&self, log_rho: &[T], active: &[bool]) -> Vec<T> {
        let k = self.k;
        let mut resp = vec![T::zero(); log_rho.len()];
        let mut masked = vec![T::neg_infinity(); k];
        for (row, out) in log_rho.chunks(k).zip(resp.chunks_mut(k)) {
            for c in 0..k {
                if active[c] {
                    masked[c] = row[c];
                }
            }
            let norm = log_sum_exp(&masked);
            for c in 0..k {
                if active[c] {
                    out[c] = (row[c] - norm).exp();
                }
            }
        }
        resp
    }

    fn lower_bound(&self, resp: &[T], log_rho: &[T], post: &Posterior<T>) -> T {
        let (k, d) = (self.k, self.d);
        let p = &self.prior;
        let half = T::c(0.5);
        let ln2 = T::LN_2();
        let df = T::from_count(d);

        // E[ln p(X, Z | θ)] - E[ln q(Z)]
        let mut expected = T::zero();
        for (&r, &l) in resp.iter().zip(log_rho) {
            if r > T::zero() {
                expected += r * (l - r.ln());
            }
        }

        // KL(q(π) || p(π))
        let alpha_total: T = post.alpha.iter().copied().sum();
        let psi_total = digamma(alpha_total);
        let mut kl_dir = ln_gamma(alpha_total) - ln_gamma(T::from_count(k) * p.alpha0)
            + T::from_count(k) * ln_gamma(p.alpha0);
        for &a in &post.alpha {
            kl_dir += -ln_gamma(a) + (a - p.alpha0) * (digamma(a) - psi_total);
        }

        // Σ_k KL(q(μ_k, Λ_k) || p(μ_k, Λ_k))
        let mut kl_nw = T::zero();
        for c in 0..k {
            let beta = post.beta[c];
            let nu = post.nu[c];
            let ratio = p.beta0 / beta;
            let mean_term = match self.kind {
                CovarianceKind::Diagonal => (0..d)
                    .map(|j| {
                        let e = post.means[c][j] - p.mean0[j];
                        e * e * post.quad_factor[c][j]
                    })
                    .sum::<T>(),
                CovarianceKind::Full => {
                    let diff: Vec<T> = (0..d).map(|j| post.means[c][j] - p.mean0[j]).collect();
                    let mut scratch = vec![T::zero(); d];
                    inverse_quadratic_form(&post.quad_factor[c], d, &diff, &mut scratch)
                }
            };
            let normal_part = half * (df * ratio + p.beta0 * nu * mean_term - df - df * ratio.ln());
            let wishart_part = match self.kind {
                CovarianceKind::Diagonal => {
                    let log_b = half * nu * post.log_det_scale[c]
                        - df * (half * nu * ln2 + ln_gamma(half * nu));
                    let trace: T = (0..d).map(|j| p.scale0[j] * post.quad_factor[c][j]).sum();
                    log_b - p.log_b0 + half * (nu - p.nu0) * post.e_log_det[c] - half * nu * df
                        + half * nu * trace
                }
                CovarianceKind::Full => {
                    let log_b = half * nu * post.log_det_scale[c]
                        - half * nu * df * ln2
                        - ln_multi_gamma(half * nu, d);
                    let w = inverse_from_cholesky(&post.quad_factor[c], d);
                    let trace: T = (0..d * d).map(|i| p.scale0[i] * w[i]).sum();
                    log_b - p.log_b0 + half * (nu - p.nu0) * post.e_log_det[c] - half * nu * df
                        + half * nu * trace
                }
            };
            kl_nw += normal_part + wishart_part;
        }
        expected - kl_dir - kl_nw
    }

    fn into_model(self, run: Run<T>, trace: Vec<Vec<T>>, iterations: usize, deleted: usize) -> MixtureModel<T> {
        let post = run.post;
        let (k, d) = (self.k, self.d);
        let floor = self.config.covariance_floor;
        let alpha_total: T = post.alpha.iter().copied().sum();
        let weights: Vec<T> = post.alpha.iter().map(|&a| a / alpha_total).collect();
        let covariances: Vec<Vec<T>> = (0..k)
            .map(|c| {
                let nu = post.nu[c];
                match self.kind {
                    CovarianceKind::Diagonal => post.scale[c].iter().map(|&s| s / nu + floor).collect(),
                    CovarianceKind::Full => {
                        let mut m: Vec<T> = post.scale[c].iter().map(|&s| s / nu).collect();
                        for i in 0..d {
                            m[i * d + i] += floor;
                        }
                        m
                    }
                }
            })
            .collect();
        let effective = weights.iter().filter(|&&w| w > self.config.prune_threshold).count();
        let doc = MixtureDocument {
            version: MIXTURE_DOCUMENT_VERSION,
            dim: d,
            covariance_kind: self.kind,
            weights,
            means: post.means.clone(),
            covariances,
            posterior: PosteriorParams {
                dirichlet_counts: post.alpha.clone(),
                mean_precision: post.beta.clone(),
                degrees_of_freedom: post.nu.clone(),
                scale: post.scale.clone(),
            },
            effective_components: effective,
            prune_threshold: self.config.prune_threshold,
            covariance_floor: floor,
            density_floor: self.config.density_floor,
            report: FitReport {
                bound_trace: trace,
                lower_bound: run.bound,
                iterations,
                converged: run.converged,
                deleted_components: deleted,
            },
        };
        MixtureModel::assemble(doc).expect("fitted covariances are floored and positive definite")
    }
}

#[cfg(test)]
mod tests;
