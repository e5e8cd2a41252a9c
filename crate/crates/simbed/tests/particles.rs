//! Behavioral checks for the particle-system optimizers: resampling laws,
//! weight bookkeeping against injected vectors, collapse errors, and
//! small-scale agreement of all three samplers on the conjugate scenario.

use simbed::mcmc::{
    init_state, ChainRng, DesignProposal, JSchedule, SamplerSetup, ThetaSource,
};
use simbed::model::{
    builtin_scenario, Design, LinearGaussianScenario, ObservationSet, ParamVector,
};
use simbed::particle::{
    ess, multinomial_resample, rm_iteration, rm_run, sir_iteration, sir_run, smc_iteration,
    smc_run, ImportanceProposal, ParticleRunOutput, ParticleSet, RmConfig, SirConfig, SmcConfig,
    SmcSchedule,
};
use simbed::rng;
use simbed::utility::{DesignUtility, KldBaseline, Positivity};
use simbed::Error;
use std::time::Duration;

fn s1() -> LinearGaussianScenario {
    builtin_scenario("s1-quadratic").unwrap()
}

fn empty_output(set: &ParticleSet) -> ParticleRunOutput {
    ParticleRunOutput {
        set: set.clone(),
        ess_history: Vec::new(),
        mean_history: Vec::new(),
        resamples: 0,
        enrich_accepted: 0,
        enrich_proposals: 0,
        wall_clock: Duration::ZERO,
    }
}

/// Bare states distinguished only by design coordinate, for resampling laws.
fn labeled_set(weights: &[f64]) -> ParticleSet {
    ParticleSet {
        states: (0..weights.len())
            .map(|i| simbed::mcmc::AugmentedState {
                design: Design::unchecked(vec![i as f64]),
                blocks: Vec::new(),
                pseudo: None,
            })
            .collect(),
        log_weights: weights.iter().map(|w| w.ln()).collect(),
    }
}

#[test]
fn resampling_offspring_counts_follow_the_multinomial_law() {
    let n = 10;
    let reps = 10_000;
    let mut r = rng::root(401);
    let mut counts = vec![0u64; n];
    for _ in 0..reps {
        let mut set = labeled_set(&vec![1.0 / n as f64; n]);
        multinomial_resample(&mut set, &mut r).unwrap();
        for s in &set.states {
            counts[s.design.coords()[0] as usize] += 1;
        }
    }
    let expected = reps as f64;
    let chi2: f64 = counts
        .iter()
        .map(|c| {
            let d = *c as f64 - expected;
            d * d / expected
        })
        .sum();
    // 0.99 quantile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 {chi2:.3}");
}

#[test]
fn resampling_preserves_weighted_means() {
    let weights = [0.4, 0.3, 0.2, 0.1];
    let target: f64 = weights
        .iter()
        .enumerate()
        .map(|(i, w)| i as f64 * w)
        .sum();
    let mut r = rng::root(402);
    let reps = 1_000;
    let mut means = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut set = labeled_set(&weights);
        multinomial_resample(&mut set, &mut r).unwrap();
        let m: f64 = set
            .states
            .iter()
            .map(|s| s.design.coords()[0])
            .sum::<f64>()
            / set.len() as f64;
        means.push(m);
    }
    let grand = means.iter().sum::<f64>() / reps as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(
        (grand - target).abs() < 3.0 * se + 1e-12,
        "grand {grand:.4} target {target:.4} se {se:.5}"
    );
}

#[test]
fn degenerate_weight_copies_one_ancestor() {
    let mut set = labeled_set(&[1.0, 0.0, 0.0]);
    let mut r = rng::root(403);
    multinomial_resample(&mut set, &mut r).unwrap();
    for s in &set.states {
        assert_eq!(s.design.coords(), [0.0]);
    }
    let w = set.normalized_weights().unwrap();
    assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn constant_utility_gives_equal_weights_and_full_ess() {
    let scen = s1();
    let u = |_: &ObservationSet, _: &ParamVector| 2.0;
    let utility = DesignUtility::Custom(&u);
    let theta = ThetaSource::prior();
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let mut rngs = ChainRng::new(404);
    let n = 64;
    let mut states = Vec::new();
    for _ in 0..n {
        states.push(init_state(&setup, 1, &mut rngs).unwrap());
    }
    let mut set = ParticleSet {
        states,
        log_weights: vec![0.0; n],
    };
    let mut out = empty_output(&set);
    sir_iteration(
        &mut set,
        1,
        &setup,
        &ImportanceProposal::Uniform,
        &mut rngs,
        &mut out,
    )
    .unwrap();
    assert!((out.ess_history[0] - n as f64).abs() < 1e-8);
    let w = set.normalized_weights().unwrap();
    assert!(w.iter().all(|x| (x - 1.0 / n as f64).abs() < 1e-12));
}

#[test]
fn single_particle_resampling_is_identity() {
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
    let out = sir_run(
        &setup,
        &SirConfig::new(1, 5, JSchedule::Fixed(2)),
        &mut ChainRng::new(405),
    )
    .unwrap();
    assert_eq!(out.set.len(), 1);
    assert_eq!(out.ess_history, vec![1.0; 5]);
}

#[test]
fn all_dead_draws_collapse_with_an_error() {
    let scen = s1();
    let u = |_: &ObservationSet, _: &ParamVector| -1.0;
    let utility = DesignUtility::Custom(&u);
    let theta = ThetaSource::prior();
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::RejectNegative,
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let mut set = labeled_set(&[0.5, 0.5]);
    let mut out = empty_output(&set);
    let err = sir_iteration(
        &mut set,
        1,
        &setup,
        &ImportanceProposal::Uniform,
        &mut ChainRng::new(406),
        &mut out,
    )
    .unwrap_err();
    assert!(matches!(err, Error::WeightCollapse), "got {err}");
}

#[test]
fn rm_without_new_blocks_keeps_weights_until_resampling() {
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
    let mut rngs = ChainRng::new(407);
    let weights: [f64; 3] = [0.7, 0.2, 0.1];
    let mut states = Vec::new();
    for _ in 0..weights.len() {
        states.push(init_state(&setup, 2, &mut rngs).unwrap());
    }
    let mut set = ParticleSet {
        states,
        log_weights: weights.iter().map(|w| w.ln()).collect(),
    };
    let mut out = empty_output(&set);
    rm_iteration(&mut set, 2, 2, &setup, &mut rngs, &mut out).unwrap();
    let expected = ess(&weights).unwrap();
    assert!(
        (out.ess_history[0] - expected).abs() < 1e-10,
        "ess {} vs {expected}",
        out.ess_history[0]
    );
    // Resampling then reset the weights to equal.
    let w = set.normalized_weights().unwrap();
    assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn smc_resamples_exactly_when_ess_drops_below_half() {
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
    // A nu = 0 step adds the new block weight-free, so the injected weights
    // pass through to the resampling decision unchanged.
    for (weights, should_resample) in [
        (vec![0.97, 0.01, 0.01, 0.01], true),
        (vec![0.25, 0.25, 0.25, 0.25], false),
    ] {
        let mut rngs = ChainRng::new(408);
        let mut states = Vec::new();
        for _ in 0..weights.len() {
            states.push(init_state(&setup, 1, &mut rngs).unwrap());
        }
        let mut set = ParticleSet {
            states,
            log_weights: weights.iter().map(|w: &f64| w.ln()).collect(),
        };
        let mut out = empty_output(&set);
        smc_iteration(&mut set, 2, 0.0, &setup, None, 0.5, &mut rngs, &mut out).unwrap();
        assert_eq!(
            out.resamples,
            should_resample as u64,
            "weights {weights:?}"
        );
        assert!((out.ess_history[0] - ess(&weights).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn constant_utility_keeps_sir_and_rm_weights_in_lockstep() {
    let scen = s1();
    let u = |_: &ObservationSet, _: &ParamVector| 3.0;
    let utility = DesignUtility::Custom(&u);
    let theta = ThetaSource::prior();
    let setup = SamplerSetup {
        model: &scen,
        utility: &utility,
        theta: &theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    };
    let n = 16;
    let mut rngs_sir = ChainRng::new(409);
    let mut rngs_rm = ChainRng::new(410);
    let mut sir_set = {
        let mut states = Vec::new();
        for _ in 0..n {
            states.push(init_state(&setup, 1, &mut rngs_sir).unwrap());
        }
        ParticleSet {
            states,
            log_weights: vec![0.0; n],
        }
    };
    let mut rm_set = {
        let mut states = Vec::new();
        for _ in 0..n {
            states.push(init_state(&setup, 1, &mut rngs_rm).unwrap());
        }
        ParticleSet {
            states,
            log_weights: vec![0.0; n],
        }
    };
    let mut sir_out = empty_output(&sir_set);
    let mut rm_out = empty_output(&rm_set);
    // Block count grows by one per iteration; with constant utility both
    // weight updates are flat, so the per-step weight ratios agree at one.
    for t in 1..=5usize {
        sir_iteration(
            &mut sir_set,
            t,
            &setup,
            &ImportanceProposal::Uniform,
            &mut rngs_sir,
            &mut sir_out,
        )
        .unwrap();
        rm_iteration(&mut rm_set, t - 1, t, &setup, &mut rngs_rm, &mut rm_out).unwrap();
        let ws = sir_set.normalized_weights().unwrap();
        let wr = rm_set.normalized_weights().unwrap();
        for (a, b) in ws.iter().zip(&wr) {
            assert!((a - b).abs() < 1e-8, "sir {a} rm {b} at t={t}");
        }
        assert!((sir_out.ess_history[t - 1] - n as f64).abs() < 1e-8);
        assert!((rm_out.ess_history[t - 1] - n as f64).abs() < 1e-8);
    }
}

fn agreement_setup<'a>(
    scen: &'a LinearGaussianScenario,
    utility: &'a DesignUtility<'a>,
    theta: &'a ThetaSource<'a>,
) -> SamplerSetup<'a> {
    SamplerSetup {
        model: scen,
        utility,
        theta,
        positivity: Positivity::default(),
        proposal: DesignProposal::UniformIndependence,
        region: scen.region(),
        lf: None,
    }
}

fn terminal_mean(set: &ParticleSet) -> f64 {
    set.weighted_mean_design().unwrap()[0]
}

#[test]
fn sir_terminal_mean_approaches_the_boundary_optimum() {
    let scen = s1();
    let (best, _) = scen.grid_search_optimum(0.01).unwrap();
    let target = best.coords()[0];
    assert!((target - 1.0).abs() < 1e-9);
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = agreement_setup(&scen, &utility, &theta);
    let out = sir_run(
        &setup,
        &SirConfig::new(
            2000,
            30,
            JSchedule::Logarithmic {
                delta: 15.0,
                max: 50,
            },
        ),
        &mut ChainRng::new(421),
    )
    .unwrap();
    // The last five iterations all run at the terminal block count, so each
    // weighted mean estimates the same marginal; their average is the
    // terminal estimate.
    let plateau = &out.mean_history[25..];
    let mean = plateau.iter().map(|m| m[0]).sum::<f64>() / plateau.len() as f64;
    assert!((mean - target).abs() < 0.1, "terminal mean {mean:.3}");
    for m in plateau {
        assert!((m[0] - target).abs() < 0.15, "plateau entry {:.3}", m[0]);
    }
}

#[test]
fn all_three_samplers_agree_on_the_design_marginal() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = agreement_setup(&scen, &utility, &theta);

    let schedule = JSchedule::Logarithmic {
        delta: 9.0,
        max: 30,
    };
    let sir = sir_run(
        &setup,
        &SirConfig::new(600, 30, schedule),
        &mut ChainRng::new(412),
    )
    .unwrap();
    let rm = rm_run(
        &setup,
        &RmConfig {
            particles: 600,
            iterations: 30,
            schedule,
        },
        &mut ChainRng::new(413),
    )
    .unwrap();
    let smc = smc_run(
        &setup,
        &SmcConfig {
            particles: 600,
            schedule: SmcSchedule::integer(30),
        },
        None,
        &mut ChainRng::new(414),
    )
    .unwrap();

    let means = [
        ("sir", terminal_mean(&sir.set)),
        ("rm", terminal_mean(&rm.set)),
        ("smc", terminal_mean(&smc.set)),
    ];
    for (name, m) in &means {
        // All mass should sit in the boundary lobe, far from the prior mean
        // at zero and the secondary lobe near -0.5.
        assert!(*m > 0.7, "{name} mean {m:.3}");
    }
    for (a, am) in &means {
        for (b, bm) in &means {
            assert!((am - bm).abs() < 0.12, "{a} {am:.3} vs {b} {bm:.3}");
        }
    }
}

#[test]
fn fractional_annealing_agrees_with_integer_jumps() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = agreement_setup(&scen, &utility, &theta);
    let frac = smc_run(
        &setup,
        &SmcConfig {
            particles: 400,
            schedule: SmcSchedule::fractional(8, 0.25),
        },
        Some(&scen),
        &mut ChainRng::new(414),
    )
    .unwrap();
    let int = smc_run(
        &setup,
        &SmcConfig {
            particles: 400,
            schedule: SmcSchedule::integer(8),
        },
        None,
        &mut ChainRng::new(415),
    )
    .unwrap();
    let m_frac = terminal_mean(&frac.set);
    let m_int = terminal_mean(&int.set);
    assert!(
        (m_frac - m_int).abs() < 0.12,
        "fractional {m_frac:.3} vs integer {m_int:.3}"
    );
}

#[test]
fn fractional_schedule_without_density_is_a_config_error() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = agreement_setup(&scen, &utility, &theta);
    let err = smc_run(
        &setup,
        &SmcConfig {
            particles: 10,
            schedule: SmcSchedule::fractional(3, 0.5),
        },
        None,
        &mut ChainRng::new(416),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "got {err}");
}

#[test]
fn particle_runs_replay_exactly_under_a_seed() {
    let scen = s1();
    let utility = DesignUtility::Kld {
        scen: &scen,
        baseline: KldBaseline::Prior,
    };
    let theta = ThetaSource::law(scen.posterior());
    let setup = agreement_setup(&scen, &utility, &theta);
    let cfg = SirConfig::new(50, 8, JSchedule::Logarithmic { delta: 2.0, max: 6 });
    let a = sir_run(&setup, &cfg, &mut ChainRng::new(417)).unwrap();
    let b = sir_run(&setup, &cfg, &mut ChainRng::new(417)).unwrap();
    let c = sir_run(&setup, &cfg, &mut ChainRng::new(418)).unwrap();
    assert_eq!(a.set.designs(), b.set.designs());
    assert_eq!(a.ess_history, b.ess_history);
    assert_ne!(a.set.designs(), c.set.designs());
}
