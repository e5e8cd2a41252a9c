//! Particle-system design optimizers over the same augmented targets the
//! chains sample: sampling importance resampling, the resampling-Markov
//! scheme that reuses blocks, and an SMC sampler with fractional annealing.
//!
//! All three carry N weighted augmented states. SIR refreshes every particle
//! by importance sampling and pays the full block cost per iteration; the
//! resampling-Markov scheme keeps existing blocks and weights by the new
//! ones only; the SMC sampler moves through a (J, nu) schedule where nu
//! tempers the newest block in, resampling only when the effective sample
//! size degrades.

use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::mcmc::{annealed_step, init_state, propose_blocks, ChainRng, SamplerSetup};
use crate::mcmc::{AugmentedState, JSchedule};
use crate::model::{DensityModel, Design, DesignRegion};
use crate::rng::Stream;
use crate::stats::TruncatedNormal;

/// Weighted particle system over augmented states. Weights are kept in log
/// space and normalized on demand.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub states: Vec<AugmentedState>,
    pub log_weights: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Normalized weights. Errors when every weight is zero.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let m = self
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        if !m.is_finite() {
            return Err(Error::WeightCollapse);
        }
        let unnorm: Vec<f64> = self.log_weights.iter().map(|lw| (lw - m).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(unnorm.iter().map(|w| w / total).collect())
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.normalized_weights()?)
    }

    /// Weighted mean of the design coordinates.
    pub fn weighted_mean_design(&self) -> Result<Vec<f64>> {
        let weights = self.normalized_weights()?;
        let dim = self.states[0].design.coords().len();
        let mut mean = vec![0.0; dim];
        for (s, w) in self.states.iter().zip(&weights) {
            for (m, c) in mean.iter_mut().zip(s.design.coords()) {
                *m += w * c;
            }
        }
        Ok(mean)
    }

    pub fn designs(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.design.coords().to_vec())
            .collect()
    }

    fn reset_weights(&mut self) {
        self.log_weights.iter_mut().for_each(|w| *w = 0.0);
    }
}

/// Effective sample size 1 / sum W^2 of normalized weights. The input must
/// already be normalized; anything else is a caller bug worth surfacing.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-8 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::config(format!(
            "effective sample size needs normalized weights, got sum {total}"
        )));
    }
    Ok(1.0 / weights.iter().map(|w| w * w).sum::<f64>())
}

/// Multinomial resampling to equal weights.
pub fn multinomial_resample(set: &mut ParticleSet, rng: &mut Stream) -> Result<()> {
    let weights = set.normalized_weights()?;
    let index = WeightedIndex::new(&weights).map_err(|_| Error::WeightCollapse)?;
    let states: Vec<AugmentedState> = (0..set.len())
        .map(|_| set.states[index.sample(rng)].clone())
        .collect();
    set.states = states;
    set.reset_weights();
    Ok(())
}

/// Importance proposal for a particle's fresh design.
#[derive(Debug, Clone, PartialEq)]
pub enum ImportanceProposal {
    /// Per-coordinate normal around the current design, truncated to the
    /// region, with SD scale/sqrt(J) so the proposal tightens as the target
    /// sharpens. Density is exact, truncation normalizer included.
    TruncatedWalk { scale: f64 },
    /// Uniform over the region, independent of the current design.
    Uniform,
}

impl ImportanceProposal {
    fn validate(&self) -> Result<()> {
        if let ImportanceProposal::TruncatedWalk { scale } = self {
            if !(scale > &0.0) {
                return Err(Error::config(format!(
                    "importance proposal scale must be positive, got {scale}"
                )));
            }
        }
        Ok(())
    }

    /// Draws a design and returns it with its log proposal density.
    fn draw(
        &self,
        current: &Design,
        region: &DesignRegion,
        j: usize,
        rng: &mut Stream,
    ) -> (Design, f64) {
        match self {
            ImportanceProposal::Uniform => (region.sample(rng), -region.log_volume()),
            ImportanceProposal::TruncatedWalk { scale } => {
                let sd = scale / (j as f64).sqrt();
                let mut coords = Vec::with_capacity(current.coords().len());
                let mut log_g = 0.0;
                for ((c, lo), hi) in current
                    .coords()
                    .iter()
                    .zip(region.lower())
                    .zip(region.upper())
                {
                    let tn = TruncatedNormal::new(*c, sd, *lo, *hi);
                    let x = tn.sample(rng);
                    log_g += tn.log_pdf(x);
                    coords.push(x);
                }
                (Design::unchecked(coords), log_g)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SirConfig {
    pub particles: usize,
    pub iterations: u64,
    pub schedule: JSchedule,
    pub gis: ImportanceProposal,
}

impl SirConfig {
    pub fn new(particles: usize, iterations: u64, schedule: JSchedule) -> Self {
        SirConfig {
            particles,
            iterations,
            schedule,
            gis: ImportanceProposal::TruncatedWalk { scale: 0.5 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmConfig {
    pub particles: usize,
    pub iterations: u64,
    pub schedule: JSchedule,
}

#[derive(Debug, Clone)]
pub struct ParticleRunOutput {
    pub set: ParticleSet,
    /// ESS immediately after each weight update, before any resampling.
    pub ess_history: Vec<f64>,
    /// Weighted mean design at the same instants as `ess_history`. Reading
    /// the estimate here avoids the extra multinomial noise of the resampled
    /// set.
    pub mean_history: Vec<Vec<f64>>,
    pub resamples: u64,
    pub enrich_accepted: u64,
    pub enrich_proposals: u64,
    pub wall_clock: Duration,
}

impl ParticleRunOutput {
    pub fn enrich_acceptance_rate(&self) -> f64 {
        if self.enrich_proposals == 0 {
            0.0
        } else {
            self.enrich_accepted as f64 / self.enrich_proposals as f64
        }
    }
}

fn init_particles(
    setup: &SamplerSetup<'_>,
    n: usize,
    j: usize,
    rngs: &mut ChainRng,
) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::config("particle count must be at least 1"));
    }
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        states.push(init_state(setup, j, rngs)?);
    }
    Ok(ParticleSet {
        states,
        log_weights: vec![0.0; n],
    })
}

/// One Metropolis-Hastings enrichment pass over all particles.
fn enrich(
    set: &mut ParticleSet,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
    accepted: &mut u64,
    proposals: &mut u64,
) -> Result<()> {
    for state in &mut set.states {
        let out = annealed_step(state, setup, rngs)?;
        *accepted += out.accepted as u64;
        *proposals += 1;
    }
    Ok(())
}

/// One sampling importance resampling iteration at block count `j`: draw a
/// fresh design and fresh blocks per particle, weight by the block factors
/// over the design proposal density, resample to equal weights, then enrich
/// each particle with one Metropolis-Hastings step.
pub fn sir_iteration(
    set: &mut ParticleSet,
    j: usize,
    setup: &SamplerSetup<'_>,
    gis: &ImportanceProposal,
    rngs: &mut ChainRng,
    out: &mut ParticleRunOutput,
) -> Result<()> {
    for i in 0..set.len() {
        let (design, log_g) = gis.draw(&set.states[i].design, setup.region, j, &mut rngs.main);
        let ctx = setup.utility.context(&design)?;
        let draw = propose_blocks(setup, &ctx, &design, j, rngs)?;
        set.log_weights[i] = draw.log_target_terms() - log_g;
        if !draw.dead {
            set.states[i] = AugmentedState {
                design,
                blocks: draw.blocks,
                pseudo: draw.pseudo,
            };
        }
    }
    out.ess_history.push(set.ess()?);
    out.mean_history.push(set.weighted_mean_design()?);
    multinomial_resample(set, &mut rngs.main)?;
    out.resamples += 1;
    enrich(
        set,
        setup,
        rngs,
        &mut out.enrich_accepted,
        &mut out.enrich_proposals,
    )
}

pub fn sir_run(
    setup: &SamplerSetup<'_>,
    cfg: &SirConfig,
    rngs: &mut ChainRng,
) -> Result<ParticleRunOutput> {
    setup.validate()?;
    cfg.schedule.validate()?;
    cfg.gis.validate()?;
    let start = Instant::now();
    let mut set = init_particles(setup, cfg.particles, cfg.schedule.at(1), rngs)?;
    let mut out = ParticleRunOutput {
        set: set.clone(),
        ess_history: Vec::new(),
        mean_history: Vec::new(),
        resamples: 0,
        enrich_accepted: 0,
        enrich_proposals: 0,
        wall_clock: Duration::ZERO,
    };
    for t in 1..=cfg.iterations {
        sir_iteration(&mut set, cfg.schedule.at(t), setup, &cfg.gis, rngs, &mut out)?;
    }
    out.set = set;
    out.wall_clock = start.elapsed();
    Ok(out)
}

/// One resampling-Markov iteration: grow each particle from `j_prev` to `j`
/// blocks at its own design, multiply its weight by the new block factors
/// only, then resample and enrich as in SIR.
pub fn rm_iteration(
    set: &mut ParticleSet,
    j_prev: usize,
    j: usize,
    setup: &SamplerSetup<'_>,
    rngs: &mut ChainRng,
    out: &mut ParticleRunOutput,
) -> Result<()> {
    if j < j_prev {
        return Err(Error::config(format!(
            "block schedule must not decrease, got {j_prev} then {j}"
        )));
    }
    for i in 0..set.len() {
        let state = &mut set.states[i];
        if j > j_prev {
            let ctx = setup.utility.context(&state.design)?;
            let draw = propose_blocks(setup, &ctx, &state.design, j - j_prev, rngs)?;
            set.log_weights[i] += draw.log_target_terms();
            if !draw.dead {
                state.blocks.extend(draw.blocks);
                match (&mut state.pseudo, draw.pseudo) {
                    (Some(ps), Some(new)) => ps.extend(new),
                    _ => {}
                }
            }
        }
    }
    out.ess_history.push(set.ess()?);
    out.mean_history.push(set.weighted_mean_design()?);
    multinomial_resample(set, &mut rngs.main)?;
    out.resamples += 1;
    enrich(
        set,
        setup,
        rngs,
        &mut out.enrich_accepted,
        &mut out.enrich_proposals,
    )
}

pub fn rm_run(
    setup: &SamplerSetup<'_>,
    cfg: &RmConfig,
    rngs: &mut ChainRng,
) -> Result<ParticleRunOutput> {
    setup.validate()?;
    cfg.schedule.validate()?;
    let start = Instant::now();
    let mut j_prev = cfg.schedule.at(1);
    let mut set = init_particles(setup, cfg.particles, j_prev, rngs)?;
    let mut out = ParticleRunOutput {
        set: set.clone(),
        ess_history: Vec::new(),
        mean_history: Vec::new(),
        resamples: 0,
        enrich_accepted: 0,
        enrich_proposals: 0,
        wall_clock: Duration::ZERO,
    };
    for t in 1..=cfg.iterations {
        let j = cfg.schedule.at(t);
        rm_iteration(&mut set, j_prev, j, setup, rngs, &mut out)?;
        j_prev = j;
    }
    out.set = set;
    out.wall_clock = start.elapsed();
    Ok(out)
}

/// Annealing schedule for the SMC sampler: a sequence of (J, nu) targets
/// where nu in [0, 1] tempers the newest block in. The run starts from the
/// implicit (1, 1) initialization; J grows by at most one per step, nu
/// resets to zero exactly at each growth, and each J segment ends at nu = 1.
#[derive(Debug, Clone)]
pub struct SmcSchedule {
    pub steps: Vec<(usize, f64)>,
    pub ess_threshold_fraction: f64,
}

impl SmcSchedule {
    /// Integer-only schedule: nu jumps straight from 0 to 1 at each J.
    pub fn integer(j_max: usize) -> Self {
        let mut steps = Vec::new();
        for j in 2..=j_max {
            steps.push((j, 0.0));
            steps.push((j, 1.0));
        }
        SmcSchedule {
            steps,
            ess_threshold_fraction: 0.5,
        }
    }

    /// Fractional schedule climbing nu by `dnu` per step within each J.
    pub fn fractional(j_max: usize, dnu: f64) -> Self {
        let mut steps = Vec::new();
        for j in 2..=j_max {
            steps.push((j, 0.0));
            let mut nu = dnu;
            while nu < 1.0 - 1e-12 {
                steps.push((j, nu));
                nu += dnu;
            }
            steps.push((j, 1.0));
        }
        SmcSchedule {
            steps,
            ess_threshold_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
            return Err(Error::config(format!(
                "resampling threshold fraction must lie in (0, 1], got {}",
                self.ess_threshold_fraction
            )));
        }
        let mut prev = (1usize, 1.0f64);
        for &(j, nu) in &self.steps {
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::config(format!("nu must lie in [0, 1], got {nu}")));
            }
            if j == prev.0 {
                if nu <= prev.1 {
                    return Err(Error::config(format!(
                        "nu must increase within a block count, got {} then {nu} at J={j}",
                        prev.1
                    )));
                }
            } else if j == prev.0 + 1 {
                if prev.1 != 1.0 {
                    return Err(Error::config(format!(
                        "block count can only grow from nu = 1, got nu = {} at J={}",
                        prev.1, prev.0
                    )));
                }
                if nu != 0.0 {
                    return Err(Error::config(format!(
                        "nu must reset to 0 when the block count grows, got {nu} at J={j}"
                    )));
                }
            } else {
                return Err(Error::config(format!(
                    "block count must grow by at most one per step, got {} then {j}",
                    prev.0
                )));
            }
            prev = (j, nu);
        }
        if let Some(&(_, nu)) = self.steps.last() {
            if nu != 1.0 {
                return Err(Error::config(format!(
                    "schedule must end at nu = 1, got {nu}"
                )));
            }
        }
        Ok(())
    }

    /// Whether any step needs density evaluations (nu strictly between 0
    /// and 1).
    pub fn has_fractional(&self) -> bool {
        self.steps.iter().any(|&(_, nu)| nu > 0.0 && nu < 1.0)
    }
}

/// One SMC step to the target (j, nu). The first j - 1 blocks and the design
/// move under a Metropolis-Hastings kernel for the integer-J target; the
/// block j slot is filled with a fresh draw. At nu = 0 the fresh block
/// enters free of weight; otherwise the incremental weight is the tempered
/// block factor over its proposal density, which collapses to the utility
/// (times correction and kernel-sum factors) at nu = 1.
pub fn smc_iteration(
    set: &mut ParticleSet,
    j: usize,
    nu: f64,
    setup: &SamplerSetup<'_>,
    density: Option<&dyn DensityModel>,
    threshold_fraction: f64,
    rngs: &mut ChainRng,
    out: &mut ParticleRunOutput,
) -> Result<()> {
    let fractional = nu > 0.0 && nu < 1.0;
    if fractional && density.is_none() {
        return Err(Error::config(
            "fractional annealing steps need an evaluable data density",
        ));
    }
    for i in 0..set.len() {
        let state = &mut set.states[i];
        // At nu = 0 the block j slot is new; otherwise the previous step's
        // tempered block is discarded before the move and redrawn after it.
        if nu > 0.0 {
            if state.blocks.len() != j {
                return Err(Error::Dimension {
                    expected: j,
                    got: state.blocks.len(),
                });
            }
            state.blocks.pop();
            if let Some(ps) = &mut state.pseudo {
                ps.pop();
            }
        } else if state.blocks.len() != j - 1 {
            return Err(Error::Dimension {
                expected: j - 1,
                got: state.blocks.len(),
            });
        }
        annealed_step(state, setup, rngs)?;
        let ctx = setup.utility.context(&state.design)?;
        let draw = propose_blocks(setup, &ctx, &state.design, 1, rngs)?;
        if nu > 0.0 {
            let increment = if draw.dead {
                f64::NEG_INFINITY
            } else if nu == 1.0 {
                draw.log_target_terms()
            } else {
                let block = &draw.blocks[0];
                let model = density.expect("validated above");
                let log_p = model.log_density(&block.z, &block.theta);
                let log_q = setup
                    .theta
                    .log_source_density(setup.model, &block.theta)
                    .ok_or_else(|| {
                        Error::config(
                            "fractional annealing steps need an evaluable parameter \
                             source density",
                        )
                    })?;
                nu * (block.utility.ln() + block.correction) + (nu - 1.0) * (log_p + log_q)
            };
            set.log_weights[i] += increment;
        }
        let state = &mut set.states[i];
        state.blocks.extend(draw.blocks);
        if setup.lf.is_some() {
            // Keep pseudo-data aligned with blocks even for a dead draw,
            // whose slot gets a zero-mass placeholder; it carries no weight
            // and is discarded before the next move.
            let ps = state.pseudo.get_or_insert_with(Vec::new);
            match draw.pseudo {
                Some(new) => ps.extend(new),
                None => ps.push(crate::mcmc::PseudoBlock {
                    replicates: Vec::new(),
                    kernel_sum: 0.0,
                }),
            }
        }
    }
    let ess_now = set.ess()?;
    out.ess_history.push(ess_now);
    out.mean_history.push(set.weighted_mean_design()?);
    if ess_now < threshold_fraction * set.len() as f64 {
        multinomial_resample(set, &mut rngs.main)?;
        out.resamples += 1;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SmcConfig {
    pub particles: usize,
    pub schedule: SmcSchedule,
}

/// Full SMC run from the (1, 1) initialization through the schedule.
/// `density` is required when the schedule has fractional steps.
pub fn smc_run(
    setup: &SamplerSetup<'_>,
    cfg: &SmcConfig,
    density: Option<&dyn DensityModel>,
    rngs: &mut ChainRng,
) -> Result<ParticleRunOutput> {
    setup.validate()?;
    cfg.schedule.validate()?;
    if cfg.schedule.has_fractional() {
        if density.is_none() {
            return Err(Error::config(
                "fractional annealing steps need an evaluable data density",
            ));
        }
        if setup.lf.is_some() {
            return Err(Error::config(
                "likelihood-free runs must use integer annealing jumps",
            ));
        }
    }
    let start = Instant::now();
    if cfg.particles == 0 {
        return Err(Error::config("particle count must be at least 1"));
    }
    // Initialization at (1, 1): design from the region, one block from its
    // proposal law, weight equal to the block's target factors.
    let mut states = Vec::with_capacity(cfg.particles);
    let mut log_weights = Vec::with_capacity(cfg.particles);
    for _ in 0..cfg.particles {
        let design = setup.region.sample(&mut rngs.main);
        let ctx = setup.utility.context(&design)?;
        let draw = propose_blocks(setup, &ctx, &design, 1, rngs)?;
        log_weights.push(draw.log_target_terms());
        states.push(AugmentedState {
            design,
            blocks: draw.blocks,
            pseudo: draw.pseudo,
        });
    }
    let mut set = ParticleSet {
        states,
        log_weights,
    };
    let mut out = ParticleRunOutput {
        set: set.clone(),
        ess_history: Vec::new(),
        mean_history: Vec::new(),
        resamples: 0,
        enrich_accepted: 0,
        enrich_proposals: 0,
        wall_clock: Duration::ZERO,
    };
    let threshold = cfg.schedule.ess_threshold_fraction;
    let ess_now = set.ess()?;
    out.ess_history.push(ess_now);
    out.mean_history.push(set.weighted_mean_design()?);
    if ess_now < threshold * set.len() as f64 {
        multinomial_resample(&mut set, &mut rngs.main)?;
        out.resamples += 1;
    }
    for &(j, nu) in &cfg.schedule.steps {
        smc_iteration(&mut set, j, nu, setup, density, threshold, rngs, &mut out)?;
    }
    out.set = set;
    out.wall_clock = start.elapsed();
    Ok(out)
}
