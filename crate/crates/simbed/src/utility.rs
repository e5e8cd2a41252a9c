//! Block utilities u(z, d, theta), their positivity handling, and Monte Carlo
//! estimation of expected utility surfaces.
//!
//! Samplers treat the utility as an unnormalized density factor, so it must
//! be positive. The handling modes trade distortion against cost: resampling
//! until positive renormalizes within the positive part, shifting changes the
//! surface by a constant, and rejecting negative proposals targets the
//! positive part of the surface directly.

use crate::abc::{AbcKernel, PosteriorParticleSet};
use crate::error::{Error, Result};
use crate::model::{
    Design, GaussianLaw, LinearGaussianScenario, ObservationSet, ParamVector, SimulatorModel,
    UtilityCache,
};
use crate::rng::Stream;
use crate::stats::{mean_se, LN_2PI};

/// How nonpositive utility draws are handled when blocks are built.
#[derive(Debug, Clone, PartialEq)]
pub enum Positivity {
    /// Redraw (theta, z) until the utility is positive, up to the cap.
    /// Renormalizes the target within the positive region.
    ResampleUntilPositive { cap: usize },
    /// Add a constant once; error if the result is still nonpositive.
    Shift(f64),
    /// Keep the draw. Samplers reject proposals whose utility is nonpositive,
    /// which targets the positive part of the utility surface.
    RejectNegative,
}

impl Default for Positivity {
    fn default() -> Self {
        Positivity::ResampleUntilPositive { cap: 10_000 }
    }
}

/// A finished block draw after positivity handling.
#[derive(Debug, Clone)]
pub struct PositiveDraw {
    pub z: ObservationSet,
    pub theta: ParamVector,
    pub utility: f64,
    pub attempts: usize,
}

/// Runs the draw closure under the positivity mode. Degenerate particle
/// updates count as nonpositive draws for the resampling mode; any other
/// error propagates.
pub fn draw_positive(
    positivity: &Positivity,
    mut draw: impl FnMut() -> Result<(ObservationSet, ParamVector, f64)>,
) -> Result<PositiveDraw> {
    match positivity {
        Positivity::ResampleUntilPositive { cap } => {
            for attempt in 1..=*cap {
                match draw() {
                    Ok((z, theta, u)) if u > 0.0 => {
                        return Ok(PositiveDraw {
                            z,
                            theta,
                            utility: u,
                            attempts: attempt,
                        })
                    }
                    Ok(_) => {}
                    Err(Error::DegenerateParticleUpdate) => {}
                    Err(e) => return Err(e),
                }
            }
            Err(Error::PositivityUnreachable { attempts: *cap })
        }
        Positivity::Shift(c) => {
            let (z, theta, u) = draw()?;
            let shifted = u + c;
            if shifted > 0.0 {
                Ok(PositiveDraw {
                    z,
                    theta,
                    utility: shifted,
                    attempts: 1,
                })
            } else {
                Err(Error::PositivityUnreachable { attempts: 1 })
            }
        }
        Positivity::RejectNegative => {
            let (z, theta, u) = draw()?;
            Ok(PositiveDraw {
                z,
                theta,
                utility: u,
                attempts: 1,
            })
        }
    }
}

/// Baseline against which information gain is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KldBaseline {
    Prior,
    Posterior,
}

/// Summary turned into a scalar utility after a particle update.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryUtility {
    /// Negative trace of the weighted parameter covariance, so tighter
    /// posteriors score higher.
    TraceVariance,
    /// Weighted average simulated response at a probe design.
    PredictiveMean { probe: Vec<f64>, sims: usize },
}

/// A block utility family, instantiated per design via [`DesignUtility::context`].
pub enum DesignUtility<'a> {
    /// Shannon information gain read at theta: updated posterior log density
    /// minus prior log density. Its expectation is the expected gain in
    /// Shannon information of the design.
    ShannonLogRatio(&'a LinearGaussianScenario),
    /// Updated posterior log density at theta alone. Same expectation
    /// geometry as the log ratio up to a design-independent constant, with
    /// the prior entropy term removed.
    UpdatedLogDensity(&'a LinearGaussianScenario),
    /// Kullback-Leibler divergence from the updated posterior to a baseline.
    /// Ignores theta, which averages out the log ratio analytically and
    /// lowers the estimator variance; the utility is never negative against
    /// the prior baseline.
    Kld {
        scen: &'a LinearGaussianScenario,
        baseline: KldBaseline,
    },
    /// Likelihood-free utility: reweight a reference posterior cloud by the
    /// kernel mass of simulated replicates against z, then summarize.
    ParticleUpdate {
        model: &'a dyn SimulatorModel,
        reference: &'a PosteriorParticleSet,
        kernel: &'a AbcKernel,
        replicates: usize,
        summary: SummaryUtility,
    },
    Custom(&'a (dyn Fn(&ObservationSet, &ParamVector) -> f64 + Sync)),
}

impl<'a> DesignUtility<'a> {
    /// Fixes the design, caching whatever only depends on it.
    pub fn context(&'a self, design: &Design) -> Result<UtilityContext<'a>> {
        let inner = match self {
            DesignUtility::ShannonLogRatio(scen) => CtxInner::Conjugate {
                cache: scen.utility_cache(design)?,
                scen,
                flavor: ConjFlavor::LogRatio,
            },
            DesignUtility::UpdatedLogDensity(scen) => CtxInner::Conjugate {
                cache: scen.utility_cache(design)?,
                scen,
                flavor: ConjFlavor::UpdatedDensity,
            },
            DesignUtility::Kld { scen, baseline } => CtxInner::Conjugate {
                cache: scen.utility_cache(design)?,
                scen,
                flavor: ConjFlavor::Kld(*baseline),
            },
            DesignUtility::ParticleUpdate {
                model,
                reference,
                kernel,
                replicates,
                summary,
            } => {
                if *replicates == 0 {
                    return Err(Error::config("replicate count must be at least 1"));
                }
                CtxInner::Particle {
                    model: *model,
                    reference,
                    kernel,
                    replicates: *replicates,
                    summary: summary.clone(),
                }
            }
            DesignUtility::Custom(f) => CtxInner::Custom(*f),
        };
        Ok(UtilityContext {
            design: design.clone(),
            inner,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum ConjFlavor {
    LogRatio,
    UpdatedDensity,
    Kld(KldBaseline),
}

enum CtxInner<'a> {
    Conjugate {
        cache: UtilityCache<'a>,
        scen: &'a LinearGaussianScenario,
        flavor: ConjFlavor,
    },
    Particle {
        model: &'a dyn SimulatorModel,
        reference: &'a PosteriorParticleSet,
        kernel: &'a AbcKernel,
        replicates: usize,
        summary: SummaryUtility,
    },
    Custom(&'a (dyn Fn(&ObservationSet, &ParamVector) -> f64 + Sync)),
}

/// Utility evaluator bound to one design.
pub struct UtilityContext<'a> {
    design: Design,
    inner: CtxInner<'a>,
}

impl UtilityContext<'_> {
    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Raw utility of one simulated outcome, before positivity handling.
    pub fn raw(&self, values: &[f64], theta: &ParamVector, rng: &mut Stream) -> Result<f64> {
        match &self.inner {
            CtxInner::Conjugate {
                cache,
                scen,
                flavor,
            } => match flavor {
                ConjFlavor::LogRatio => Ok(cache.log_ratio(values, theta)),
                ConjFlavor::UpdatedDensity => Ok(cache.updated_log_density(values, theta)),
                ConjFlavor::Kld(baseline) => {
                    let updated = cache.updated_law(values)?;
                    let base = match baseline {
                        KldBaseline::Prior => scen.prior(),
                        KldBaseline::Posterior => scen.posterior(),
                    };
                    kld_gaussians(&updated, base)
                }
            },
            CtxInner::Particle {
                model,
                reference,
                kernel,
                replicates,
                summary,
            } => {
                let z = ObservationSet {
                    values: values.to_vec(),
                    at: self.design.clone(),
                };
                let updated =
                    update_posterior_particles(reference, &z, *model, kernel, *replicates, rng)?;
                particle_summary_utility(&updated, summary, *model, rng)
            }
            CtxInner::Custom(f) => {
                let z = ObservationSet {
                    values: values.to_vec(),
                    at: self.design.clone(),
                };
                Ok(f(&z, theta))
            }
        }
    }
}

/// Shannon information gain of one simulated outcome, the log ratio of
/// updated posterior to prior density at theta.
pub fn shannon_utility(
    scen: &LinearGaussianScenario,
    z: &ObservationSet,
    theta: &ParamVector,
) -> Result<f64> {
    Ok(scen.utility_cache(&z.at)?.log_ratio(&z.values, theta))
}

/// KL divergence KL(p || q) between Gaussian laws.
pub fn kld_gaussians(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    let k = p.dim();
    if q.dim() != k {
        return Err(Error::Dimension {
            expected: k,
            got: q.dim(),
        });
    }
    let trace = (q.precision() * p.covariance()).trace();
    let d = q.mean() - p.mean();
    let quad = (q.precision() * &d).dot(&d);
    Ok(0.5 * (trace + quad - k as f64 + q.log_det_cov() - p.log_det_cov()))
}

/// Cross entropy E_p[-log q] between Gaussian laws.
pub fn gaussian_cross_entropy(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    let k = p.dim();
    if q.dim() != k {
        return Err(Error::Dimension {
            expected: k,
            got: q.dim(),
        });
    }
    let trace = (q.precision() * p.covariance()).trace();
    let d = p.mean() - q.mean();
    let quad = (q.precision() * &d).dot(&d);
    Ok(0.5 * (k as f64 * LN_2PI + q.log_det_cov() + trace + quad))
}

/// Closed-form expectation of the Shannon log ratio utility at a design:
/// the updated-density expectation plus the cross entropy of the posterior
/// against the prior.
pub fn expected_log_ratio_utility(scen: &LinearGaussianScenario, design: &Design) -> Result<f64> {
    let base = scen.analytic_expected_utility(design)?;
    let ce = gaussian_cross_entropy(scen.posterior(), scen.prior())?;
    Ok(base + ce)
}

/// Plain Monte Carlo estimate of expected utility at a design: draw theta,
/// simulate z, average the raw utility. Returns the mean and its standard
/// error.
pub fn estimate_expected_utility(
    model: &dyn SimulatorModel,
    draw_theta: &mut dyn FnMut(&mut Stream) -> ParamVector,
    utility: &DesignUtility<'_>,
    design: &Design,
    samples: usize,
    rng: &mut Stream,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::config("need at least 2 samples for a standard error"));
    }
    let ctx = utility.context(design)?;
    let mut us = Vec::with_capacity(samples);
    for _ in 0..samples {
        let theta = draw_theta(rng);
        let z = model.simulate(&theta, design, rng);
        us.push(ctx.raw(&z.values, &theta, rng)?);
    }
    Ok(mean_se(&us))
}

/// Reweights a reference posterior cloud by simulated kernel mass against an
/// observation set. Errors when every particle goes to zero weight.
pub fn update_posterior_particles(
    reference: &PosteriorParticleSet,
    z: &ObservationSet,
    model: &dyn SimulatorModel,
    kernel: &AbcKernel,
    replicates: usize,
    rng: &mut Stream,
) -> Result<PosteriorParticleSet> {
    if replicates == 0 {
        return Err(Error::config("replicate count must be at least 1"));
    }
    let mut raw = Vec::with_capacity(reference.len());
    for (theta, w) in reference.thetas().iter().zip(reference.weights()) {
        let mut mass = 0.0;
        for _ in 0..replicates {
            let x = model.simulate(theta, &z.at, rng);
            mass += kernel.eval(&z.values, &x.values)?;
        }
        raw.push(w * mass / replicates as f64);
    }
    match PosteriorParticleSet::new(reference.thetas().to_vec(), raw) {
        Ok(set) => Ok(set),
        Err(Error::WeightCollapse) => Err(Error::DegenerateParticleUpdate),
        Err(e) => Err(e),
    }
}

/// Scalar summary of a posterior particle cloud.
pub fn particle_summary_utility(
    set: &PosteriorParticleSet,
    summary: &SummaryUtility,
    model: &dyn SimulatorModel,
    rng: &mut Stream,
) -> Result<f64> {
    match summary {
        SummaryUtility::TraceVariance => Ok(-set.weighted_covariance().trace()),
        SummaryUtility::PredictiveMean { probe, sims } => {
            if *sims == 0 {
                return Err(Error::config("predictive mean needs at least 1 simulation"));
            }
            let at = Design::unchecked(probe.clone());
            let mut total = 0.0;
            for (theta, w) in set.thetas().iter().zip(set.weights()) {
                let mut acc = 0.0;
                for _ in 0..*sims {
                    let x = model.simulate(theta, &at, rng);
                    acc += x.values.iter().sum::<f64>() / x.values.len() as f64;
                }
                total += w * acc / *sims as f64;
            }
            Ok(total)
        }
    }
}

/// Mean of the weighted covariance trace without building a law, used by
/// variance-style diagnostics.
pub fn posterior_spread(set: &PosteriorParticleSet) -> f64 {
    set.weighted_covariance().trace()
}
