//! Metropolis-Hastings samplers on the augmented space whose design marginal
//! is proportional to a power of expected utility.
//!
//! A state carries the design d and J blocks (theta_j, z_j). The invariant
//! target is
//!
//! ```text
//! h_J(d, ..) ~ mu(d) prod_j u(z_j, d, theta_j) p(z_j | theta_j, d) q(theta_j) c(theta_j)
//! ```
//!
//! with mu uniform over the region, q the parameter source the blocks are
//! proposed from, and c an optional correction factor. Because fresh blocks
//! are proposed exactly from p(z | theta, d) q(theta), those factors cancel
//! in the acceptance ratio, which reduces to utility ratios times the
//! correction and design-proposal ratios. Marginally the design then follows
//! U(d)^J up to the positivity handling; growing J sharpens the surface
//! around its maxima.
//!
//! Variants differ only in the block factors: prior-observation corrections
//! multiply in p(y | theta, xi) p(theta) / q(theta), and likelihood-free
//! runs append pseudo-data replicates whose kernel mass against the real
//! observations replaces the intractable correction.

use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;

use crate::abc::{kernel_mass, AbcKernel, PosteriorParticleSet};
use crate::error::{Error, Result};
use crate::model::{
    DensityModel, Design, DesignRegion, GaussianLaw, ObservationSet, ParamVector, SimulatorModel,
};
use crate::rng::{self, Rng, Stream};
use crate::stats::{log_sum_exp, normal_sample, LN_2PI};
use crate::utility::{draw_positive, DesignUtility, Positivity};

/// One augmented block: a parameter draw, data simulated under it at the
/// current design, the cached utility, and the cached log correction factor.
#[derive(Debug, Clone)]
pub struct Block {
    pub z: ObservationSet,
    pub theta: ParamVector,
    pub utility: f64,
    pub correction: f64,
}

/// Pseudo-data replicates attached to a block by likelihood-free runs.
#[derive(Debug, Clone)]
pub struct PseudoBlock {
    pub replicates: Vec<ObservationSet>,
    pub kernel_sum: f64,
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub design: Design,
    pub blocks: Vec<Block>,
    pub pseudo: Option<Vec<PseudoBlock>>,
}

impl AugmentedState {
    pub fn j(&self) -> usize {
        self.blocks.len()
    }

    pub fn mean_utility(&self) -> f64 {
        self.blocks.iter().map(|b| b.utility).sum::<f64>() / self.blocks.len().max(1) as f64
    }

    /// Log of the state-dependent target factors: utilities, corrections,
    /// and kernel sums. Negative infinity marks an invalid state, which can
    /// only arise from initialization.
    pub fn log_target_terms(&self) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            if b.utility <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += b.utility.ln() + b.correction;
        }
        if let Some(ps) = &self.pseudo {
            for p in ps {
                if p.kernel_sum <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += p.kernel_sum.ln();
            }
        }
        total
    }

    pub fn is_valid(&self) -> bool {
        self.log_target_terms().is_finite()
    }
}

/// Design proposal kernels. All built-in kinds are symmetric, so their
/// forward/backward density ratio is one; [`DesignProposal::log_ratio`] keeps
/// the slot in the acceptance formula explicit.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignProposal {
    /// Fresh uniform draw over the region, independent of the current design.
    UniformIndependence,
    /// Per-coordinate Gaussian step; proposals leaving the region are
    /// rejected outright, which preserves detailed balance for a symmetric
    /// kernel.
    GaussianRandomWalk { step: f64 },
    /// Uniform restart with probability `uniform_weight`, else a random walk
    /// step. Both components are symmetric, hence so is the mixture.
    Mixture { uniform_weight: f64, step: f64 },
    /// Uniform draw from a finite design set.
    FiniteUniform(Vec<Vec<f64>>),
}

impl DesignProposal {
    pub fn validate(&self, region: &DesignRegion) -> Result<()> {
        match self {
            DesignProposal::UniformIndependence => Ok(()),
            DesignProposal::GaussianRandomWalk { step } => {
                if !(step > &0.0) {
                    return Err(Error::config(format!(
                        "random walk step must be positive, got {step}"
                    )));
                }
                Ok(())
            }
            DesignProposal::Mixture {
                uniform_weight,
                step,
            } => {
                if !(0.0..=1.0).contains(uniform_weight) {
                    return Err(Error::config(format!(
                        "mixture uniform weight must lie in [0, 1], got {uniform_weight}"
                    )));
                }
                if !(step > &0.0) {
                    return Err(Error::config(format!(
                        "random walk step must be positive, got {step}"
                    )));
                }
                Ok(())
            }
            DesignProposal::FiniteUniform(points) => {
                if points.is_empty() {
                    return Err(Error::config("finite proposal set must be nonempty"));
                }
                for p in points {
                    if !region.contains(p) {
                        return Err(Error::config(format!(
                            "finite proposal point {p:?} outside the design region"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Draws a candidate design. `None` means the step is rejected without
    /// further work (random walk left the region).
    pub fn propose(
        &self,
        current: &Design,
        region: &DesignRegion,
        rng: &mut Stream,
    ) -> Option<Design> {
        match self {
            DesignProposal::UniformIndependence => Some(region.sample(rng)),
            DesignProposal::GaussianRandomWalk { step } => {
                let coords: Vec<f64> = current
                    .coords()
                    .iter()
                    .map(|c| normal_sample(*c, *step, rng))
                    .collect();
                if region.contains(&coords) {
                    Some(Design::unchecked(coords))
                } else {
                    None
                }
            }
            DesignProposal::Mixture {
                uniform_weight,
                step,
            } => {
                if rng.random::<f64>() < *uniform_weight {
                    Some(region.sample(rng))
                } else {
                    DesignProposal::GaussianRandomWalk { step: *step }.propose(current, region, rng)
                }
            }
            DesignProposal::FiniteUniform(points) => {
                let i = rng.random_range(0..points.len());
                Some(Design::unchecked(points[i].clone()))
            }
        }
    }

    /// log g(from | to) - log g(to | from). Zero for every built-in kind
    /// since they are all symmetric.
    pub fn log_ratio(&self, _from: &Design, _to: &Design) -> f64 {
        0.0
    }

    /// Initial design consistent with the proposal support.
    fn initial_design(&self, region: &DesignRegion, rng: &mut Stream) -> Design {
        match self {
            DesignProposal::FiniteUniform(points) => {
                let i = rng.random_range(0..points.len());
                Design::unchecked(points[i].clone())
            }
            _ => region.sample(rng),
        }
    }
}

/// Block count schedule over iterations (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JSchedule {
    Fixed(usize),
    /// J(t) = min(max, 1 + floor(delta ln(1 + t))). Nondecreasing, grows
    /// without bound in t until capped.
    Logarithmic { delta: f64, max: usize },
}

impl JSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            JSchedule::Fixed(j) => {
                if *j == 0 {
                    return Err(Error::config("fixed block count must be at least 1"));
                }
            }
            JSchedule::Logarithmic { delta, max } => {
                if !(delta > &0.0) {
                    return Err(Error::config(format!(
                        "schedule delta must be positive, got {delta}"
                    )));
                }
                if *max == 0 {
                    return Err(Error::config("schedule cap must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> usize {
        match self {
            JSchedule::Fixed(j) => *j,
            JSchedule::Logarithmic { delta, max } => {
                let grown = 1 + (delta * ((1 + t) as f64).ln()).floor() as usize;
                grown.min(*max)
            }
        }
    }
}

/// Where block parameters are proposed from, with an optional correction
/// that reweights toward the posterior given prior observations.
pub struct ThetaSource<'a> {
    kind: SourceKind<'a>,
    correction: CorrectionMode<'a>,
}

enum SourceKind<'a> {
    Prior,
    Law(&'a GaussianLaw),
    Particles {
        set: &'a PosteriorParticleSet,
        index: WeightedIndex<f64>,
    },
}

enum CorrectionMode<'a> {
    None,
    /// Multiplies each block by p(y | theta, xi) p(theta) / q(theta) so the
    /// chain targets the posterior-weighted utility even though blocks are
    /// proposed from q.
    PriorObservations {
        model: &'a dyn DensityModel,
        y: &'a ObservationSet,
        kde: Option<KdeMixture>,
    },
}

impl<'a> ThetaSource<'a> {
    /// Draw from the model prior.
    pub fn prior() -> Self {
        ThetaSource {
            kind: SourceKind::Prior,
            correction: CorrectionMode::None,
        }
    }

    /// Draw from a closed-form law, treated as exact. With a conjugate
    /// posterior this needs no correction: the constant evidence factor
    /// cancels in every acceptance ratio.
    pub fn law(law: &'a GaussianLaw) -> Self {
        ThetaSource {
            kind: SourceKind::Law(law),
            correction: CorrectionMode::None,
        }
    }

    /// Draw from a weighted particle cloud, treated as exact.
    pub fn particles(set: &'a PosteriorParticleSet) -> Result<Self> {
        let index = set.sampler()?;
        Ok(ThetaSource {
            kind: SourceKind::Particles { set, index },
            correction: CorrectionMode::None,
        })
    }

    /// Switches on the prior-observation correction: blocks are still drawn
    /// from the source, but each contributes p(y | theta) p(theta) / q(theta)
    /// where q is the source density. For a particle source q is a Gaussian
    /// kernel density built over the cloud.
    pub fn with_prior_observations(
        mut self,
        model: &'a dyn DensityModel,
        y: &'a ObservationSet,
    ) -> Self {
        let kde = match &self.kind {
            SourceKind::Particles { set, .. } => Some(KdeMixture::from_particles(set)),
            _ => None,
        };
        self.correction = CorrectionMode::PriorObservations { model, y, kde };
        self
    }

    pub fn draw(&self, model: &dyn SimulatorModel, rng: &mut Stream) -> ParamVector {
        match &self.kind {
            SourceKind::Prior => model.prior_sample(rng),
            SourceKind::Law(law) => ParamVector(law.sample(rng)),
            SourceKind::Particles { set, index } => set.draw(index, rng).clone(),
        }
    }

    /// Log correction factor for a block at theta.
    pub fn correction(&self, theta: &ParamVector) -> f64 {
        match &self.correction {
            CorrectionMode::None => 0.0,
            CorrectionMode::PriorObservations { model, y, kde } => {
                let source_density = match &self.kind {
                    SourceKind::Prior => model.prior_log_density(theta),
                    SourceKind::Law(law) => law.log_density(&theta.0),
                    SourceKind::Particles { .. } => {
                        kde.as_ref().expect("kde built with correction").log_density(theta)
                    }
                };
                model.log_density(y, theta) + model.prior_log_density(theta) - source_density
            }
        }
    }

    /// Source density q(theta) when it is evaluable: always for the prior
    /// and closed-form laws, for particle clouds only when the kernel
    /// density stand-in was built by the correction mode.
    pub fn log_source_density(
        &self,
        model: &dyn SimulatorModel,
        theta: &ParamVector,
    ) -> Option<f64> {
        match &self.kind {
            SourceKind::Prior => Some(model.prior_log_density(theta)),
            SourceKind::Law(law) => Some(law.log_density(&theta.0)),
            SourceKind::Particles { .. } => match &self.correction {
                CorrectionMode::PriorObservations { kde: Some(k), .. } => {
                    Some(k.log_density(theta))
                }
                _ => None,
            },
        }
    }

    fn corrected(&self) -> bool {
        !matches!(self.correction, CorrectionMode::None)
    }

    fn is_prior(&self) -> bool {
        matches!(self.kind, SourceKind::Prior)
    }
}

/// Weighted Gaussian kernel density with diagonal bandwidth, used as the
/// evaluable stand-in for a particle source density.
pub struct KdeMixture {
    centers: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    inv_bandwidths: Vec<f64>,
    log_norm: f64,
}

impl KdeMixture {
    pub fn from_particles(set: &PosteriorParticleSet) -> Self {
        let dim = set.theta_dim();
        let cov = set.weighted_covariance();
        let n_eff = set.ess().max(2.0);
        let rate = n_eff.powf(-1.0 / (dim as f64 + 4.0));
        let bandwidths: Vec<f64> = (0..dim)
            .map(|i| (cov[(i, i)].sqrt() * rate).max(1e-12))
            .collect();
        let log_norm = -bandwidths.iter().map(|h| h.ln()).sum::<f64>()
            - 0.5 * dim as f64 * LN_2PI;
        KdeMixture {
            centers: set.thetas().iter().map(|t| t.as_slice().to_vec()).collect(),
            log_weights: set.weights().iter().map(|w| w.ln()).collect(),
            inv_bandwidths: bandwidths.iter().map(|h| 1.0 / h).collect(),
            log_norm,
        }
    }

    pub fn log_density(&self, theta: &ParamVector) -> f64 {
        let x = theta.as_slice();
        let mut terms = Vec::with_capacity(self.centers.len());
        for (c, lw) in self.centers.iter().zip(&self.log_weights) {
            let mut quad = 0.0;
            for ((xi, ci), ih) in x.iter().zip(c).zip(&self.inv_bandwidths) {
                let t = (xi - ci) * ih;
                quad += t * t;
            }
            terms.push(lw - 0.5 * quad);
        }
        log_sum_exp(&terms) + self.log_norm
    }
}

/// Likelihood-free augmentation: per block, `replicates` pseudo-data sets
/// simulated at the observed design and compared to the observations through
/// the kernel.
pub struct LfSetup<'a> {
    pub kernel: &'a AbcKernel,
    pub replicates: usize,
    pub y: &'a ObservationSet,
}

/// Everything a step needs besides the state and randomness.
pub struct SamplerSetup<'a> {
    pub model: &'a dyn SimulatorModel,
    pub utility: &'a DesignUtility<'a>,
    pub theta: &'a ThetaSource<'a>,
    pub positivity: Positivity,
    pub proposal: DesignProposal,
    pub region: &'a DesignRegion,
    pub lf: Option<LfSetup<'a>>,
}

impl SamplerSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        self.proposal.validate(self.region)?;
        if let Some(lf) = &self.lf {
            if lf.replicates == 0 {
                return Err(Error::config("replicate count must be at least 1"));
            }
            if !self.theta.is_prior() || self.theta.corrected() {
                return Err(Error::config(
                    "likelihood-free runs draw parameters from the prior; the kernel \
                     mass plays the role of the observation correction",
                ));
            }
        }
        Ok(())
    }
}

/// Paired streams for one chain: `main` drives designs, parameters, data,
/// and accept decisions; `aux` drives pseudo-data replicates. Keeping
/// replicates off the main stream makes runs with and without the
/// likelihood-free augmentation comparable draw for draw.
pub struct ChainRng {
    pub main: Stream,
    pub aux: Stream,
}

impl ChainRng {
    pub fn new(seed: u64) -> Self {
        ChainRng {
            main: rng::substream(seed, 0),
            aux: rng::substream(seed, 1),
        }
    }

    /// Independent pair under the same seed, for particle systems.
    pub fn slot(seed: u64, slot: u64) -> Self {
        ChainRng {
            main: rng::substream(seed, 2 * slot),
            aux: rng::substream(seed, 2 * slot + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Random walk proposal left the region; nothing else was drawn.
    pub oob: bool,
    pub positivity_attempts: u64,
}

impl StepOutcome {
    fn rejected_oob() -> Self {
        StepOutcome {
            accepted: false,
            oob: true,
            positivity_attempts: 0,
        }
    }
}

/// Draws an initial state at the given block count. The design comes from
/// the proposal support; blocks are forced positive so the chain starts from
/// a valid state even under the reject-negative mode. Likelihood-free kernel
/// sums may still start at zero, in which case the first valid proposal is
/// accepted unconditionally.
pub fn init_state(
    setup: &SamplerSetup<'_>,
    j: usize,
    rngs: &mut ChainRng,
) -> Result<AugmentedState> {
    setup.validate()?;
    if j == 0 {
        return Err(Error::config("block count must be at least 1"));
    }
    let design = setup.proposal.initial_design(setup.region, &mut rngs.main);
    let ctx = setup.utility.context(&design)?;
    let positivity = match &setup.positivity {
        Positivity::RejectNegative => Positivity::default(),
        other => other.clone(),
    };
    let mut blocks = Vec::with_capacity(j);
    for _ in 0..j {
        let drawn = draw_positive(&positivity, || {
            let theta = setup.theta.draw(setup.model, &mut rngs.main);
            let z = setup.model.simulate(&theta, &design, &mut rngs.main);
            let u = ctx.raw(&z.values, &theta, &mut rngs.main)?;
            Ok((z, theta, u))
        })?;
        blocks.push(Block {
            correction: setup.theta.correction(&drawn.theta),
            z: drawn.z,
            theta: drawn.theta,
            utility: drawn.utility,
        });
    }
    let pseudo = match &setup.lf {
        Some(lf) => Some(draw_pseudo(&blocks, lf, setup.model, &mut rngs.aux)?),
        None => None,
    };
    Ok(AugmentedState {
        design,
        blocks,
        pseudo,
    })
}

fn draw_pseudo(
    blocks: &[Block],
    lf: &LfSetup<'_>,
    model: &dyn SimulatorModel,
    rng: &mut Stream,
) -> Result<Vec<PseudoBlock>> {
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let replicates: Vec<ObservationSet> = (0..lf.replicates)
            .map(|_| model.simulate(&b.theta, &lf.y.at, rng))
            .collect();
        let kernel_sum = kernel_mass(lf.kernel, lf.y, &replicates)?;
        out.push(PseudoBlock {
            replicates,
            kernel_sum,
        });
    }
    Ok(out)
}

/// Fresh blocks proposed at a design, with pseudo-data when configured.
/// `dead` marks a draw the target gives zero mass: a nonpositive utility
/// under the reject mode, or a zero kernel sum. Block draws stop early at a
/// dead utility; pseudo-data is drawn afterwards for all finished blocks.
pub(crate) struct BlocksDraw {
    pub blocks: Vec<Block>,
    pub pseudo: Option<Vec<PseudoBlock>>,
    pub attempts: u64,
    pub dead: bool,
}

impl BlocksDraw {
    /// Sum of log utility, correction, and log kernel sum factors.
    /// Negative infinity when dead.
    pub fn log_target_terms(&self) -> f64 {
        if self.dead {
            return f64::NEG_INFINITY;
        }
        let mut total: f64 = self
            .blocks
            .iter()
            .map(|b| b.utility.ln() + b.correction)
            .sum();
        if let Some(ps) = &self.pseudo {
            total += ps.iter().map(|p| p.kernel_sum.ln()).sum::<f64>();
        }
        total
    }
}

pub(crate) fn propose_blocks(
    setup: &SamplerSetup<'_>,
    ctx: &crate::utility::UtilityContext<'_>,
    design: &Design,
    j: usize,
    rngs: &mut ChainRng,
) -> Result<BlocksDraw> {
    let mut blocks = Vec::with_capacity(j);
    let mut attempts: u64 = 0;
    for _ in 0..j {
        let drawn = draw_positive(&setup.positivity, || {
            let theta = setup.theta.draw(setup.model, &mut rngs.main);
            let z = setup.model.simulate(&theta, design, &mut rngs.main);
            let u = ctx.raw(&z.values, &theta, &mut rngs.main)?;
            Ok((z, theta, u))
        })?;
        attempts += drawn.attempts as u64;
        let dead = drawn.utility <= 0.0;
        blocks.push(Block {
            correction: setup.theta.correction(&drawn.theta),
            z: drawn.z,
            theta: drawn.theta,
            utility: drawn.utility,
        });
        if dead {
            return Ok(BlocksDraw {
                blocks,
                pseudo: None,
                attempts,
                dead: true,
            });
        }
    }
    let pseudo = match &setup.lf {
        Some(lf) => {
            let ps = draw_pseudo(&blocks, lf, setup.model, &mut rngs.aux)?;
            let dead = ps.iter().any(|p| p.kernel_sum <= 0.0);
            if dead {
                return Ok(BlocksDraw {
                    blocks,
                    pseudo: Some(ps),
                    attempts,
                    dead: true,
                });
            }
            Some(ps)
        }
        None => None,
    };
    Ok(BlocksDraw {
        blocks,
        pseudo,
        attempts,
        dead: false,
    })
}

/// One Metropolis-Hastings step at the state's current block count.
pub fn annealed_step(
    state: &mut AugmentedState,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
) -> Result<StepOutcome> {
    let proposed_design = match setup
        .proposal
        .propose(&state.design, setup.region, &mut rngs.main)
    {
        Some(d) => d,
        None => return Ok(StepOutcome::rejected_oob()),
    };
    let j = state.blocks.len();
    let ctx = setup.utility.context(&proposed_design)?;
    let draw = propose_blocks(setup, &ctx, &proposed_design, j, rngs)?;
    if draw.dead {
        // Zero target mass at the proposal: a nonpositive utility under the
        // reject mode, or a zero kernel sum. Rejected outright.
        return Ok(StepOutcome {
            accepted: false,
            oob: false,
            positivity_attempts: draw.attempts,
        });
    }
    let attempts = draw.attempts;
    let proposed_log = draw.log_target_terms();
    let BlocksDraw { blocks, pseudo, .. } = draw;
    let current_log = state.log_target_terms();
    let log_alpha =
        proposed_log - current_log + setup.proposal.log_ratio(&state.design, &proposed_design);
    let accepted = if current_log == f64::NEG_INFINITY {
        true
    } else {
        log_alpha >= 0.0 || rngs.main.random::<f64>().ln() < log_alpha
    };
    if accepted {
        state.design = proposed_design;
        state.blocks = blocks;
        state.pseudo = pseudo;
    }
    Ok(StepOutcome {
        accepted,
        oob: false,
        positivity_attempts: attempts,
    })
}

/// Single-block sampler over designs: the original one-block form of the
/// augmented chain.
pub fn muller_step(
    state: &mut AugmentedState,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
) -> Result<StepOutcome> {
    if state.blocks.len() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: state.blocks.len(),
        });
    }
    annealed_step(state, setup, rngs)
}

/// Step with prior-observation corrections. Identical machinery; the
/// correction factors live in the blocks and flow through the ratio.
pub fn prior_obs_step(
    state: &mut AugmentedState,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
) -> Result<StepOutcome> {
    annealed_step(state, setup, rngs)
}

/// Step of the likelihood-free augmented chain. Requires `setup.lf`.
pub fn lf_augmented_step(
    state: &mut AugmentedState,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
) -> Result<StepOutcome> {
    if setup.lf.is_none() {
        return Err(Error::config("likelihood-free step needs a kernel setup"));
    }
    annealed_step(state, setup, rngs)
}

/// Grows the state to `j` blocks by cloning uniformly chosen existing blocks
/// with replacement, pseudo-data included.
pub fn grow_blocks(state: &mut AugmentedState, j: usize, rng: &mut Stream) {
    let old = state.blocks.len();
    if j <= old {
        return;
    }
    for _ in old..j {
        let idx = rng.random_range(0..old);
        state.blocks.push(state.blocks[idx].clone());
        if let Some(ps) = &mut state.pseudo {
            let copy = ps[idx].clone();
            ps.push(copy);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub iterations: u64,
    pub thin: u64,
    pub schedule: JSchedule,
    /// Record the mean block utility alongside each stored draw.
    pub record_utilities: bool,
    /// Print a progress line every this many iterations.
    pub progress_every: Option<u64>,
}

impl ChainConfig {
    pub fn new(iterations: u64, thin: u64, schedule: JSchedule) -> Self {
        ChainConfig {
            iterations,
            thin,
            schedule,
            record_utilities: false,
            progress_every: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Thinned design draws, one row per stored iteration.
    pub draws: Vec<Vec<f64>>,
    /// Mean block utility per stored draw, if recorded.
    pub utilities: Vec<f64>,
    pub accepted: u64,
    pub proposals: u64,
    pub oob: u64,
    pub positivity_attempts: u64,
    pub final_state: AugmentedState,
    pub wall_clock: Duration,
}

impl ChainOutput {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// True when the chain made proposals and accepted none of them.
    pub fn frozen(&self) -> bool {
        self.proposals > 0 && self.accepted == 0
    }

    /// True when the run was asked for zero iterations.
    pub fn no_proposals(&self) -> bool {
        self.proposals == 0
    }

    /// Column `c` of the stored draws.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[c]).collect()
    }
}

/// Runs a full chain under a block count schedule. When the schedule grows,
/// new blocks are cloned from existing ones before the step, keeping the
/// chain on the sequence of sharpening targets.
pub fn run_chain(
    setup: &SamplerSetup<'_>,
    cfg: &ChainConfig,
    rngs: &mut ChainRng,
) -> Result<ChainOutput> {
    if cfg.thin == 0 {
        return Err(Error::config("thin must be at least 1"));
    }
    cfg.schedule.validate()?;
    setup.validate()?;
    let start = Instant::now();
    let mut state = init_state(setup, cfg.schedule.at(1), rngs)?;
    let mut out = ChainOutput {
        draws: Vec::new(),
        utilities: Vec::new(),
        accepted: 0,
        proposals: 0,
        oob: 0,
        positivity_attempts: 0,
        final_state: state.clone(),
        wall_clock: Duration::ZERO,
    };
    for t in 1..=cfg.iterations {
        let j = cfg.schedule.at(t);
        grow_blocks(&mut state, j, &mut rngs.main);
        let step = annealed_step(&mut state, setup, rngs)?;
        out.proposals += 1;
        out.accepted += step.accepted as u64;
        out.oob += step.oob as u64;
        out.positivity_attempts += step.positivity_attempts;
        if (t - 1) % cfg.thin == 0 {
            out.draws.push(state.design.coords().to_vec());
            if cfg.record_utilities {
                out.utilities.push(state.mean_utility());
            }
        }
        if let Some(every) = cfg.progress_every {
            if t % every == 0 {
                eprintln!(
                    "iteration {t}/{} accepted {} rate {:.4} j {}",
                    cfg.iterations,
                    out.accepted,
                    out.accepted as f64 / t as f64,
                    state.j(),
                );
            }
        }
    }
    out.final_state = state;
    out.wall_clock = start.elapsed();
    Ok(out)
}

/// Chain with the logarithmic block growth J(t) = min(max, 1 + floor(delta
/// ln(1 + t))).
pub fn inhomogeneous_run(
    setup: &SamplerSetup<'_>,
    iterations: u64,
    thin: u64,
    delta: f64,
    max: usize,
    rngs: &mut ChainRng,
) -> Result<ChainOutput> {
    run_chain(
        setup,
        &ChainConfig::new(iterations, thin, JSchedule::Logarithmic { delta, max }),
        rngs,
    )
}
