//! Likelihood-free posterior machinery: comparison kernels, rejection and
//! MCMC samplers, and a population Monte Carlo sampler with an epsilon
//! schedule. These operate against any [`SimulatorModel`]; nothing here needs
//! an evaluable likelihood.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ObservationSet, ParamVector, SimulatorModel};
use crate::rng::{Rng, Stream};
use crate::stats::{log_sum_exp, normal_sample, std_normal_pdf, LN_2PI};

/// Default cap on proposals before a sampler declares epsilon unreachable.
pub const DEFAULT_STALL_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// Indicator of distance strictly below epsilon. Not scaled by epsilon,
    /// so its value is exactly one inside the window.
    Uniform,
    /// Gaussian density in the distance, scaled by 1/epsilon.
    Gaussian,
    /// Parabolic density on distance below epsilon, scaled by 1/epsilon.
    Epanechnikov,
}

/// Distance between summarized observation vectors.
#[derive(Clone)]
pub enum Distance {
    /// Euclidean norm divided by sqrt(dimension), so tolerances read per
    /// coordinate. Coincides with |y - x| in one dimension.
    RootMeanSquare,
    Euclidean,
    Custom(Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Distance::RootMeanSquare => write!(f, "RootMeanSquare"),
            Distance::Euclidean => write!(f, "Euclidean"),
            Distance::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Comparison kernel k_eps(y, x) weighting simulated data x against observed
/// data y, optionally through a summary map.
#[derive(Clone)]
pub struct AbcKernel {
    family: KernelFamily,
    epsilon: f64,
    summary: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    distance: Distance,
}

impl std::fmt::Debug for AbcKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AbcKernel")
            .field("family", &self.family)
            .field("epsilon", &self.epsilon)
            .field("summary", &self.summary.is_some())
            .field("distance", &self.distance)
            .finish()
    }
}

impl AbcKernel {
    pub fn new(family: KernelFamily, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!(
                "kernel epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(AbcKernel {
            family,
            epsilon,
            summary: None,
            distance: Distance::RootMeanSquare,
        })
    }

    pub fn uniform(epsilon: f64) -> Result<Self> {
        AbcKernel::new(KernelFamily::Uniform, epsilon)
    }

    pub fn with_summary(
        mut self,
        summary: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    ) -> Self {
        self.summary = Some(summary);
        self
    }

    pub fn with_distance(mut self, distance: Distance) -> Self {
        self.distance = distance;
        self
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut k = self.clone();
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!(
                "kernel epsilon must be positive and finite, got {epsilon}"
            )));
        }
        k.epsilon = epsilon;
        Ok(k)
    }

    fn summarize(&self, v: &[f64]) -> Vec<f64> {
        match &self.summary {
            Some(s) => s(v),
            None => v.to_vec(),
        }
    }

    pub fn distance(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let sy = self.summarize(y);
        let sx = self.summarize(x);
        if sy.len() != sx.len() {
            return Err(Error::Dimension {
                expected: sy.len(),
                got: sx.len(),
            });
        }
        let d = match &self.distance {
            Distance::RootMeanSquare => {
                let ss: f64 = sy.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum();
                (ss / sy.len() as f64).sqrt()
            }
            Distance::Euclidean => {
                let ss: f64 = sy.iter().zip(&sx).map(|(a, b)| (a - b) * (a - b)).sum();
                ss.sqrt()
            }
            Distance::Custom(f) => f(&sy, &sx),
        };
        Ok(d)
    }

    /// Kernel value at the distance between y and x.
    pub fn eval(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let t = self.distance(y, x)? / self.epsilon;
        let v = match self.family {
            KernelFamily::Uniform => {
                if t < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => std_normal_pdf(t) / self.epsilon,
            KernelFamily::Epanechnikov => {
                if t < 1.0 {
                    0.75 * (1.0 - t * t) / self.epsilon
                } else {
                    0.0
                }
            }
        };
        Ok(v)
    }

    /// Supremum of the kernel, attained at distance zero. Used by rejection
    /// samplers as the envelope constant.
    pub fn max_value(&self) -> f64 {
        match self.family {
            KernelFamily::Uniform => 1.0,
            KernelFamily::Gaussian => std_normal_pdf(0.0) / self.epsilon,
            KernelFamily::Epanechnikov => 0.75 / self.epsilon,
        }
    }
}

/// Strictly decreasing positive tolerance sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule(Vec<f64>);

impl EpsilonSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("epsilon schedule must be nonempty"));
        }
        for w in values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::config(format!(
                    "epsilon schedule must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(values[values.len() - 1] > 0.0) {
            return Err(Error::config("epsilon schedule must stay positive"));
        }
        Ok(EpsilonSchedule(values))
    }

    /// Multiples of a base scale, e.g. (16, 8, 4, 2, 1) times sigma.
    pub fn from_multiples(base: f64, multiples: &[f64]) -> Result<Self> {
        EpsilonSchedule::new(multiples.iter().map(|m| m * base).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn last(&self) -> f64 {
        *self.0.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Acceptance bookkeeping for one generation of a likelihood-free sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub epsilon: f64,
    pub accepted: usize,
    pub proposals: u64,
}

/// Weighted posterior sample over parameters.
#[derive(Debug, Clone)]
pub struct PosteriorParticleSet {
    thetas: Vec<ParamVector>,
    /// Normalized weights summing to one.
    weights: Vec<f64>,
    pub history: Vec<GenerationStats>,
}

impl PosteriorParticleSet {
    pub fn new(thetas: Vec<ParamVector>, raw_weights: Vec<f64>) -> Result<Self> {
        if thetas.len() != raw_weights.len() {
            return Err(Error::Dimension {
                expected: thetas.len(),
                got: raw_weights.len(),
            });
        }
        if thetas.is_empty() {
            return Err(Error::config("particle set must be nonempty"));
        }
        let total: f64 = raw_weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::WeightCollapse);
        }
        let weights = raw_weights.iter().map(|w| w / total).collect();
        Ok(PosteriorParticleSet {
            thetas,
            weights,
            history: Vec::new(),
        })
    }

    pub fn equal_weights(thetas: Vec<ParamVector>) -> Result<Self> {
        let n = thetas.len();
        PosteriorParticleSet::new(thetas, vec![1.0; n])
    }

    pub fn from_log_weights(thetas: Vec<ParamVector>, log_weights: &[f64]) -> Result<Self> {
        if thetas.len() != log_weights.len() {
            return Err(Error::Dimension {
                expected: thetas.len(),
                got: log_weights.len(),
            });
        }
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(Error::WeightCollapse);
        }
        let weights = log_weights.iter().map(|lw| (lw - lse).exp()).collect();
        Ok(PosteriorParticleSet {
            thetas,
            weights,
            history: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn theta_dim(&self) -> usize {
        self.thetas[0].dim()
    }

    pub fn thetas(&self) -> &[ParamVector] {
        &self.thetas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.theta_dim());
        for (t, w) in self.thetas.iter().zip(&self.weights) {
            m += &t.0 * *w;
        }
        m
    }

    pub fn weighted_covariance(&self) -> DMatrix<f64> {
        weighted_moments(&self.thetas, &self.weights).1
    }

    pub fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.weights.iter().copied())
            .map_err(|e| Error::config(format!("cannot sample particle index: {e}")))
    }

    /// Draw one particle by weight.
    pub fn draw(&self, idx: &WeightedIndex<f64>, rng: &mut Stream) -> &ParamVector {
        &self.thetas[idx.sample(rng)]
    }

    /// Writes `theta_1,..,theta_k,weight` rows at full precision.
    pub fn save(&self, path: &Path) -> Result<()> {
        let k = self.theta_dim();
        let mut out = String::new();
        for i in 1..=k {
            out.push_str(&format!("theta_{i},"));
        }
        out.push_str("weight\n");
        for (t, w) in self.thetas.iter().zip(&self.weights) {
            for v in t.as_slice() {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!("{w:?}\n"));
        }
        crate::pipeline::write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            detail: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"weight") || cols.len() < 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("unexpected header {header:?}"),
            });
        }
        let k = cols.len() - 1;
        let mut thetas = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 1 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    detail: format!("line {}: expected {} fields", lineno + 2, k + 1),
                });
            }
            let mut theta = Vec::with_capacity(k);
            for f in &fields[..k] {
                theta.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    detail: format!("line {}: {e}", lineno + 2),
                })?);
            }
            weights.push(fields[k].parse::<f64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", lineno + 2),
            })?);
            thetas.push(ParamVector::from_vec(theta));
        }
        PosteriorParticleSet::new(thetas, weights)
    }
}

/// Weighted mean and covariance of a parameter cloud. Weights are normalized
/// internally.
pub fn weighted_moments(thetas: &[ParamVector], weights: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let k = thetas[0].dim();
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(k);
    for (t, w) in thetas.iter().zip(weights) {
        mean += &t.0 * (*w / total);
    }
    let mut cov = DMatrix::zeros(k, k);
    for (t, w) in thetas.iter().zip(weights) {
        let c = &t.0 - &mean;
        cov += (&c * c.transpose()) * (*w / total);
    }
    (mean, cov)
}

/// Rejection sampler against the kernel envelope: propose theta from the
/// prior, simulate x at the observed design, accept with probability
/// k_eps(y, x) / max k_eps.
pub fn lf_rejection_sample(
    model: &dyn SimulatorModel,
    kernel: &AbcKernel,
    y: &ObservationSet,
    count: usize,
    stall_cap: u64,
    rng: &mut Stream,
) -> Result<PosteriorParticleSet> {
    let kmax = kernel.max_value();
    let mut thetas = Vec::with_capacity(count);
    let mut proposals: u64 = 0;
    while thetas.len() < count {
        if proposals >= stall_cap {
            return Err(Error::EpsilonTooTight { proposals });
        }
        proposals += 1;
        let theta = model.prior_sample(rng);
        let x = model.simulate(&theta, &y.at, rng);
        let kv = kernel.eval(&y.values, &x.values)?;
        let accept = if kernel.family() == KernelFamily::Uniform {
            kv > 0.0
        } else {
            kv > 0.0 && rng.random::<f64>() * kmax < kv
        };
        if accept {
            thetas.push(theta);
        }
    }
    let mut set = PosteriorParticleSet::equal_weights(thetas)?;
    set.history.push(GenerationStats {
        epsilon: kernel.epsilon(),
        accepted: count,
        proposals,
    });
    Ok(set)
}

/// State of a likelihood-free MCMC chain over parameters: the current theta
/// and its M pseudo-data replicates with their kernel mass.
#[derive(Debug, Clone)]
pub struct LfState {
    pub theta: ParamVector,
    pub pseudo: Vec<ObservationSet>,
    pub kernel_sum: f64,
}

impl LfState {
    /// Initializes by simulating replicates at the current theta.
    pub fn init(
        model: &dyn SimulatorModel,
        kernel: &AbcKernel,
        y: &ObservationSet,
        theta: ParamVector,
        m: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let pseudo: Vec<ObservationSet> =
            (0..m).map(|_| model.simulate(&theta, &y.at, rng)).collect();
        let kernel_sum = kernel_mass(kernel, y, &pseudo)?;
        Ok(LfState {
            theta,
            pseudo,
            kernel_sum,
        })
    }
}

pub fn kernel_mass(kernel: &AbcKernel, y: &ObservationSet, pseudo: &[ObservationSet]) -> Result<f64> {
    let mut s = 0.0;
    for x in pseudo {
        s += kernel.eval(&y.values, &x.values)?;
    }
    Ok(s)
}

/// Symmetric Gaussian random walk proposal on theta.
#[derive(Debug, Clone)]
pub struct ThetaWalk {
    kind: WalkKind,
}

#[derive(Debug, Clone)]
enum WalkKind {
    Diagonal(Vec<f64>),
    /// Lower-triangular factor L of the step covariance; steps are L z.
    Factor(DMatrix<f64>),
}

impl ThetaWalk {
    pub fn isotropic(dim: usize, scale: f64) -> Self {
        ThetaWalk {
            kind: WalkKind::Diagonal(vec![scale; dim]),
        }
    }

    pub fn diagonal(scales: Vec<f64>) -> Self {
        ThetaWalk {
            kind: WalkKind::Diagonal(scales),
        }
    }

    /// Walk with the given step covariance, for targets whose scales differ
    /// wildly across directions. The covariance must be positive definite.
    pub fn correlated(step_cov: &DMatrix<f64>) -> Result<Self> {
        let chol = step_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("walk covariance must be positive definite"))?;
        Ok(ThetaWalk {
            kind: WalkKind::Factor(chol.l()),
        })
    }

    pub fn propose(&self, from: &ParamVector, rng: &mut Stream) -> ParamVector {
        match &self.kind {
            WalkKind::Diagonal(scales) => {
                let v = from
                    .as_slice()
                    .iter()
                    .zip(scales)
                    .map(|(x, s)| normal_sample(*x, *s, rng))
                    .collect();
                ParamVector::from_vec(v)
            }
            WalkKind::Factor(l) => {
                let z = DVector::from_fn(l.nrows(), |_, _| {
                    normal_sample(0.0, 1.0, rng)
                });
                let step = l * z;
                let v = from
                    .as_slice()
                    .iter()
                    .zip(step.iter())
                    .map(|(x, s)| x + s)
                    .collect();
                ParamVector::from_vec(v)
            }
        }
    }
}

/// One Metropolis-Hastings step of the likelihood-free posterior chain. The
/// acceptance ratio replaces the likelihood with the kernel mass over M fresh
/// replicates; the symmetric walk density cancels.
pub fn lf_mcmc_step(
    state: &mut LfState,
    model: &dyn SimulatorModel,
    kernel: &AbcKernel,
    y: &ObservationSet,
    walk: &ThetaWalk,
    rng: &mut Stream,
) -> Result<bool> {
    let m = state.pseudo.len();
    let proposed = walk.propose(&state.theta, rng);
    let lp_new = model.prior_log_density(&proposed);
    if lp_new == f64::NEG_INFINITY {
        return Ok(false);
    }
    let pseudo: Vec<ObservationSet> = (0..m)
        .map(|_| model.simulate(&proposed, &y.at, rng))
        .collect();
    let ksum = kernel_mass(kernel, y, &pseudo)?;
    if ksum == 0.0 {
        return Ok(false);
    }
    let lp_old = model.prior_log_density(&state.theta);
    let accept = if state.kernel_sum == 0.0 {
        true
    } else {
        let log_alpha = ksum.ln() - state.kernel_sum.ln() + lp_new - lp_old;
        log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
    };
    if accept {
        state.theta = proposed;
        state.pseudo = pseudo;
        state.kernel_sum = ksum;
    }
    Ok(accept)
}

/// Output of [`lf_mcmc_run`].
#[derive(Debug, Clone)]
pub struct LfChainOutput {
    /// Thinned parameter draws.
    pub draws: Vec<ParamVector>,
    pub accepted: u64,
    pub iterations: u64,
}

impl LfChainOutput {
    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }
}

pub fn lf_mcmc_run(
    model: &dyn SimulatorModel,
    kernel: &AbcKernel,
    y: &ObservationSet,
    walk: &ThetaWalk,
    m: usize,
    iterations: u64,
    thin: u64,
    rng: &mut Stream,
) -> Result<LfChainOutput> {
    if m == 0 {
        return Err(Error::config("replicate count m must be at least 1"));
    }
    if thin == 0 {
        return Err(Error::config("thin must be at least 1"));
    }
    // Start inside the positive kernel set. A raw prior draw almost surely
    // has zero mass at tight tolerances and the zero-set rule would freeze
    // the chain there.
    let mut attempts: u64 = 0;
    let mut state = loop {
        attempts += 1;
        if attempts > DEFAULT_STALL_CAP {
            return Err(Error::EpsilonTooTight {
                proposals: attempts,
            });
        }
        let theta0 = model.prior_sample(rng);
        let candidate = LfState::init(model, kernel, y, theta0, m, rng)?;
        if candidate.kernel_sum > 0.0 {
            break candidate;
        }
    };
    let mut draws = Vec::new();
    let mut accepted = 0u64;
    for t in 0..iterations {
        if lf_mcmc_step(&mut state, model, kernel, y, walk, rng)? {
            accepted += 1;
        }
        if t % thin == 0 {
            draws.push(state.theta.clone());
        }
    }
    Ok(LfChainOutput {
        draws,
        accepted,
        iterations,
    })
}

/// Population Monte Carlo posterior sampler with a tolerance ladder.
///
/// Generation one is rejection sampling at the widest tolerance. Every later
/// generation perturbs weighted ancestors with a Gaussian whose covariance is
/// twice the weighted covariance of the previous population, resimulates
/// until the kernel fires, then reweights by prior over mixture density.
pub struct PmcConfig<'a> {
    pub model: &'a dyn SimulatorModel,
    pub kernel: AbcKernel,
    pub schedule: EpsilonSchedule,
    pub count: usize,
    pub stall_cap: u64,
    /// Worker threads for the quadratic reweighting pass.
    pub threads: usize,
}

pub fn abc_pmc_run(
    cfg: &PmcConfig<'_>,
    y: &ObservationSet,
    rng: &mut Stream,
) -> Result<PosteriorParticleSet> {
    if cfg.count == 0 {
        return Err(Error::config("particle count must be at least 1"));
    }
    let mut history = Vec::new();
    let first = cfg.kernel.with_epsilon(cfg.schedule.values()[0])?;
    let mut pop = lf_rejection_sample(cfg.model, &first, y, cfg.count, cfg.stall_cap, rng)
        .map_err(|e| match e {
            Error::EpsilonTooTight { proposals } => Error::ScheduleTooAggressive {
                generation: 1,
                proposals,
            },
            other => other,
        })?;
    history.append(&mut pop.history);

    for (g, eps) in cfg.schedule.values().iter().enumerate().skip(1) {
        let kernel = cfg.kernel.with_epsilon(*eps)?;
        let kmax = kernel.max_value();
        let (_, cov) = weighted_moments(pop.thetas(), pop.weights());
        let spread = perturbation_chol(&cov)?;
        let idx = pop.sampler()?;
        let mut thetas: Vec<ParamVector> = Vec::with_capacity(cfg.count);
        let mut proposals: u64 = 0;
        while thetas.len() < cfg.count {
            if proposals >= cfg.stall_cap {
                return Err(Error::ScheduleTooAggressive {
                    generation: g + 1,
                    proposals,
                });
            }
            proposals += 1;
            let ancestor = pop.draw(&idx, rng);
            let theta = perturb(ancestor, &spread, rng);
            if cfg.model.prior_log_density(&theta) == f64::NEG_INFINITY {
                continue;
            }
            let x = cfg.model.simulate(&theta, &y.at, rng);
            let kv = kernel.eval(&y.values, &x.values)?;
            let accept = if kernel.family() == KernelFamily::Uniform {
                kv > 0.0
            } else {
                kv > 0.0 && rng.random::<f64>() * kmax < kv
            };
            if accept {
                thetas.push(theta);
            }
        }
        let log_w = mixture_log_weights(
            cfg.model,
            &thetas,
            pop.thetas(),
            pop.weights(),
            &spread,
            cfg.threads,
        );
        let mut next = PosteriorParticleSet::from_log_weights(thetas, &log_w)?;
        history.push(GenerationStats {
            epsilon: *eps,
            accepted: cfg.count,
            proposals,
        });
        next.history = Vec::new();
        pop = next;
    }
    pop.history = history;
    Ok(pop)
}

/// Cholesky factor of twice the weighted covariance, jittered if the cloud
/// has collapsed onto a subspace.
fn perturbation_chol(cov: &DMatrix<f64>) -> Result<PerturbationSpread> {
    let k = cov.nrows();
    let doubled = cov * 2.0;
    let chol = match Cholesky::new(doubled.clone()) {
        Some(c) => c,
        None => {
            let jitter = 1e-12 * doubled.trace().max(1e-300);
            Cholesky::new(doubled + DMatrix::identity(k, k) * jitter)
                .ok_or(Error::NotPositiveDefinite)?
        }
    };
    let lower = chol.l();
    let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(PerturbationSpread {
        lower,
        inv: chol.inverse(),
        log_det,
    })
}

struct PerturbationSpread {
    lower: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
}

impl PerturbationSpread {
    fn log_density(&self, at: &DVector<f64>, center: &DVector<f64>) -> f64 {
        let d = at - center;
        let quad = (&self.inv * &d).dot(&d);
        -0.5 * (at.len() as f64 * LN_2PI + self.log_det + quad)
    }
}

fn perturb(center: &ParamVector, spread: &PerturbationSpread, rng: &mut Stream) -> ParamVector {
    let k = center.dim();
    let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
    ParamVector(&center.0 + &spread.lower * z)
}

/// log w_r = log prior(theta_r) - log sum_j W_j N(theta_r; theta_j, spread).
/// Quadratic in the population size; optionally chunked across threads.
fn mixture_log_weights(
    model: &dyn SimulatorModel,
    thetas: &[ParamVector],
    ancestors: &[ParamVector],
    ancestor_weights: &[f64],
    spread: &PerturbationSpread,
    threads: usize,
) -> Vec<f64> {
    let log_anc_w: Vec<f64> = ancestor_weights.iter().map(|w| w.ln()).collect();
    let log_anc_w = &log_anc_w;
    // Prior densities are cheap; evaluate them serially so the parallel part
    // only touches Sync data.
    let log_prior: Vec<f64> = thetas.iter().map(|t| model.prior_log_density(t)).collect();
    let mixture = |theta: &ParamVector| -> f64 {
        let mut terms = Vec::with_capacity(ancestors.len());
        for (anc, lw) in ancestors.iter().zip(log_anc_w) {
            terms.push(lw + spread.log_density(&theta.0, &anc.0));
        }
        log_sum_exp(&terms)
    };
    let mut out = vec![0.0; thetas.len()];
    if threads <= 1 || thetas.len() < 64 {
        for (o, t) in out.iter_mut().zip(thetas) {
            *o = -mixture(t);
        }
    } else {
        let chunk = thetas.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (slot, block) in out.chunks_mut(chunk).zip(thetas.chunks(chunk)) {
                let mixture = &mixture;
                scope.spawn(move || {
                    for (o, t) in slot.iter_mut().zip(block) {
                        *o = -mixture(t);
                    }
                });
            }
        });
    }
    for (o, lp) in out.iter_mut().zip(&log_prior) {
        *o += lp;
    }
    out
}
