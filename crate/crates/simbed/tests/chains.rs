//! Behavioral checks for the augmented-space design chains: exact reduction
//! identities between sampler variants, the design marginal against closed
//! forms on a finite design set, and bookkeeping of a full run.

use simbed::abc::AbcKernel;
use simbed::diagnostics::{kde_mode, KdeConfig};
use simbed::mcmc::{
    grow_blocks, init_state, muller_step, run_chain, ChainConfig, ChainOutput, ChainRng,
    DesignProposal, JSchedule, LfSetup, SamplerSetup, ThetaSource,
};
use simbed::model::{
    builtin_scenario, LinearGaussianScenario, ObservationSet, ParamVector, ScenarioDef,
};
use simbed::utility::{DesignUtility, KldBaseline, Positivity};

fn s1() -> LinearGaussianScenario {
    builtin_scenario("s1-quadratic").unwrap()
}

/// Scenario with a tight prior and mild prior observation, so that
/// prior-source corrections stay well conditioned.
fn tame() -> LinearGaussianScenario {
    LinearGaussianScenario::from_def(ScenarioDef {
        sigma2: 1.0,
        ridge: 1.0,
        prior_xi: vec![0.2],
        prior_y: vec![1.0],
        ..ScenarioDef::default()
    })
    .unwrap()
}

#[test]
fn run_chain_matches_manual_single_block_steps() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let iterations = 300;
    let auto = run_chain(
        &setup,
        &ChainConfig::new(iterations, 1, JSchedule::Fixed(1)),
        &mut ChainRng::new(7),
    )
    .unwrap();

    let mut rngs = ChainRng::new(7);
    let mut state = init_state(&setup, 1, &mut rngs).unwrap();
    let mut manual = Vec::new();
    let mut accepted = 0u64;
    for _ in 0..iterations {
        let out = muller_step(&mut state, &setup, &mut rngs).unwrap();
        accepted += out.accepted as u64;
        manual.push(state.design.coords().to_vec());
    }
    assert_eq!(auto.draws, manual);
    assert_eq!(auto.accepted, accepted);
    assert_eq!(auto.proposals, iterations);
}

#[test]
fn wide_kernel_pseudo_data_reduces_to_plain_chain() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let theta = ThetaSource::prior();
    let y = scen.prior_data().unwrap();
    // Kernel so wide that every replicate is inside it: each kernel sum is
    // exactly the replicate count, so those factors cancel in every ratio.
    let kernel = AbcKernel::uniform(1e12).unwrap();
    let plain_setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let lf_setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: Some(LfSetup {
            kernel: &kernel,
            replicates: 3,
            y,
        }),
    };
    let cfg = ChainConfig::new(400, 1, JSchedule::Fixed(2));
    let plain = run_chain(&plain_setup, &cfg, &mut ChainRng::new(42)).unwrap();
    let augmented = run_chain(&lf_setup, &cfg, &mut ChainRng::new(42)).unwrap();
    assert_eq!(plain.draws, augmented.draws);
    assert_eq!(plain.accepted, augmented.accepted);
}

#[test]
fn exact_posterior_source_correction_is_inert() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let y = scen.prior_data().unwrap();
    let plain_source = ThetaSource::law(scen.posterior());
    let corrected_source = ThetaSource::law(scen.posterior()).with_prior_observations(&scen, y);
    let mk = |theta| SamplerSetup {
        model: &scen,
        utility: &utility,
        theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let cfg = ChainConfig::new(500, 1, JSchedule::Fixed(2));
    let plain = run_chain(&mk(&plain_source), &cfg, &mut ChainRng::new(11)).unwrap();
    let corrected = run_chain(&mk(&corrected_source), &cfg, &mut ChainRng::new(11)).unwrap();
    // The correction factor is the model evidence, constant in theta, so it
    // cancels in every acceptance ratio and the chains coincide draw for draw.
    assert_eq!(plain.draws, corrected.draws);
    assert_eq!(plain.accepted, corrected.accepted);
}

fn finite_frequencies(out: &ChainOutput, points: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; points.len()];
    for d in &out.draws {
        let i = points
            .iter()
            .position(|p| (p - d[0]).abs() < 1e-12)
            .expect("draw off the finite set");
        counts[i] += 1;
    }
    counts
        .iter()
        .map(|c| *c as f64 / out.draws.len() as f64)
        .collect()
}

#[test]
fn prior_source_with_correction_matches_posterior_source() {
    let scen = tame();
    let y = scen.prior_data().unwrap();
    // Nonnegative utility, so no positivity handling perturbs either target.
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let points = [-0.8, 0.1, 0.9];
    let proposal = DesignProposal::FiniteUniform(points.iter().map(|p| vec![*p]).collect());
    let corrected = ThetaSource::prior().with_prior_observations(&scen, y);
    let posterior = ThetaSource::law(scen.posterior());
    let mk = |theta| SamplerSetup {
        model: &scen,
        utility: &utility,
        theta,
        positivity: Positivity::default(),
        proposal: proposal.clone(),
        region: scen.region(),
        lf: None,
    };
    let cfg = ChainConfig::new(40_000, 1, JSchedule::Fixed(1));
    let a = run_chain(&mk(&corrected), &cfg, &mut ChainRng::new(5)).unwrap();
    let b = run_chain(&mk(&posterior), &cfg, &mut ChainRng::new(6)).unwrap();
    let fa = finite_frequencies(&a, &points);
    let fb = finite_frequencies(&b, &points);
    for (x, y) in fa.iter().zip(&fb) {
        assert!((x - y).abs() < 0.025, "frequencies {fa:?} vs {fb:?}");
    }
}

#[test]
fn finite_marginal_follows_utility_power() {
    let scen = s1();
    let a = 0.02;
    let u = move |z: &ObservationSet, _: &ParamVector| (a * z.values[0]).exp();
    let utility = DesignUtility::Custom(&u);
    let theta = ThetaSource::law(scen.posterior());
    let points = [-1.0, 0.0, 1.0];
    let proposal = DesignProposal::FiniteUniform(points.iter().map(|p| vec![*p]).collect());

    // E[exp(a z) | d] in closed form: z is Gaussian given theta and theta is
    // Gaussian, so log E = a f'mu + a^2 (sigma2 + f'Sigma f) / 2.
    let log_expected: Vec<f64> = points
        .iter()
        .map(|&d| {
            let f = scen.feature_map(d);
            let mu = scen.posterior().mean();
            let sig = scen.posterior().covariance();
            a * f.dot(mu) + 0.5 * a * a * (scen.sigma2() + (sig * &f).dot(&f))
        })
        .collect();

    for j in [1usize, 3] {
        let probs: Vec<f64> = {
            let weights: Vec<f64> = log_expected.iter().map(|l| (l * j as f64).exp()).collect();
            let total: f64 = weights.iter().sum();
            weights.iter().map(|w| w / total).collect()
        };
        let setup = SamplerSetup {
            model: &scen,
            utility: &utility,
            theta: &theta,
            positivity: Positivity::default(),
            proposal: proposal.clone(),
            region: scen.region(),
            lf: None,
        };
        let cfg = ChainConfig::new(60_000, 1, JSchedule::Fixed(j));
        let out = run_chain(&setup, &cfg, &mut ChainRng::new(21 + j as u64)).unwrap();
        let freq = finite_frequencies(&out, &points);
        let tv: f64 = freq
            .iter()
            .zip(&probs)
            .map(|(f, p)| (f - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "J={j}: tv {tv:.4} freq {freq:?} expected {probs:?}");
    }
}

#[test]
fn log_schedule_grows_blocks_during_run() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let schedule = JSchedule::Logarithmic { delta: 1.0, max: 4 };
    let out = run_chain(
        &setup,
        &ChainConfig::new(100, 10, schedule),
        &mut ChainRng::new(3),
    )
    .unwrap();
    assert_eq!(out.final_state.j(), schedule.at(100));
    assert_eq!(out.draws.len(), 10);
    assert_eq!(out.proposals, 100);
}

#[test]
fn grown_blocks_clone_existing_ones() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let mut rngs = ChainRng::new(17);
    let mut state = init_state(&setup, 2, &mut rngs).unwrap();
    let design = state.design.clone();
    let originals: Vec<f64> = state.blocks.iter().map(|b| b.utility).collect();
    grow_blocks(&mut state, 5, &mut rngs.main);
    assert_eq!(state.j(), 5);
    assert_eq!(state.design.coords(), design.coords());
    for b in &state.blocks[2..] {
        assert!(
            originals.iter().any(|u| *u == b.utility),
            "grown block is not a clone"
        );
    }
    // Growing to a smaller or equal count is a no-op.
    grow_blocks(&mut state, 3, &mut rngs.main);
    assert_eq!(state.j(), 5);
}

#[test]
fn zero_iteration_run_reports_no_proposals() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let out = run_chain(
        &setup,
        &ChainConfig::new(0, 1, JSchedule::Fixed(1)),
        &mut ChainRng::new(1),
    )
    .unwrap();
    assert!(out.no_proposals());
    assert!(!out.frozen());
    assert_eq!(out.acceptance_rate(), 0.0);
    assert!(out.draws.is_empty());
}

#[test]
fn same_seed_replays_identically() {
    let scen = s1();
    let utility = DesignUtility::ShannonLogRatio(&scen);
    let theta = ThetaSource::prior();
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::Mixture {
            uniform_weight: 0.3,
            step: 0.25,
        },
        region: scen.region(),
        lf: None,
    };
    let cfg = ChainConfig::new(300, 1, JSchedule::Fixed(1));
    let a = run_chain(&setup, &cfg, &mut ChainRng::new(99)).unwrap();
    let b = run_chain(&setup, &cfg, &mut ChainRng::new(99)).unwrap();
    let c = run_chain(&setup, &cfg, &mut ChainRng::new(100)).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn random_walk_out_of_bounds_is_counted() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::GaussianRandomWalk { step: 1.5 },
        region: scen.region(),
        lf: None,
    };
    let out = run_chain(
        &setup,
        &ChainConfig::new(2_000, 1, JSchedule::Fixed(1)),
        &mut ChainRng::new(13),
    )
    .unwrap();
    assert!(out.oob > 0);
    assert!(out.accepted > 0);
    assert!(out.accepted + out.oob <= out.proposals);
}

#[test]
fn annealing_concentrates_draws_near_the_optimum() {
    let scen = s1();
    let (best, _) = scen.grid_search_optimum(0.01).unwrap();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let out = run_chain(
        &setup,
        &ChainConfig::new(15_000, 1, JSchedule::Fixed(10)),
        &mut ChainRng::new(31),
    )
    .unwrap();
    let draws = out.coordinate(0);
    let mode = kde_mode(&draws, None, &KdeConfig::auto(-1.0, 1.0)).unwrap();
    assert!(
        (mode - best.coords()[0]).abs() < 0.1,
        "mode {mode} vs optimum {}",
        best.coords()[0]
    );
}
