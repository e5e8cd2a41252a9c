//! Flag parsing, defaulting, and validation.
//!
//! Validation is all-at-once: every violation is collected and reported in a
//! fixed order, so a bad invocation is fixed in one round trip.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use simbed::model::{builtin_scenario, LinearGaussianScenario, ScenarioDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    /// Augmented-space MCMC at a fixed utility power.
    Muller,
    /// Fixed high utility power so draws concentrate at the optimum.
    Annealed,
    /// Logarithmically growing utility power.
    Inhomogeneous,
    /// Sampling-importance-resampling particle system.
    Sir,
    /// Resampling-Markov particle system.
    Rm,
    /// Sequential Monte Carlo over utility powers.
    Smc,
    /// Likelihood-free posterior chain over parameters.
    LfMcmc,
    /// Design chain with likelihood-free block acceptance.
    LfAugmented,
    /// ABC population Monte Carlo posterior sample.
    PmcPosterior,
    /// Posterior first, then the annealed design chain.
    TwoStage,
    /// Closed-form criterion over a design grid.
    Oracle,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Muller => "muller",
            Algo::Annealed => "annealed",
            Algo::Inhomogeneous => "inhomogeneous",
            Algo::Sir => "sir",
            Algo::Rm => "rm",
            Algo::Smc => "smc",
            Algo::LfMcmc => "lf-mcmc",
            Algo::LfAugmented => "lf-augmented",
            Algo::PmcPosterior => "pmc-posterior",
            Algo::TwoStage => "two-stage",
            Algo::Oracle => "oracle",
        }
    }

    fn is_chain(self) -> bool {
        matches!(
            self,
            Algo::Muller | Algo::Annealed | Algo::Inhomogeneous | Algo::LfMcmc | Algo::LfAugmented
        )
    }

    fn needs_epsilon(self) -> bool {
        matches!(self, Algo::LfMcmc | Algo::LfAugmented)
    }
}

/// Simulation-based optimal experimental design runner.
#[derive(Debug, Parser)]
#[command(name = "simbed", version, about)]
pub struct Cli {
    /// Built-in scenario name (s1-quadratic, s2-quadratic) or a TOML file.
    #[arg(long, default_value = "s1-quadratic")]
    pub scenario: String,
    /// Algorithm to run.
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Chain iterations, or sweeps for particle systems.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Keep every k-th draw.
    #[arg(long)]
    pub thin: Option<u64>,
    /// Utility power (fixed, or the cap for growing schedules).
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Power growth rate for log schedules; fractional step for smc.
    #[arg(long = "J-delta")]
    pub j_delta: Option<f64>,
    /// Pseudo-observation replicates per likelihood-free block.
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Kernel tolerance for the likelihood-free algorithms.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated decreasing tolerance ladder for pmc-posterior and
    /// two-stage; defaults to (16,8,4,2,1) x sigma of the scenario.
    #[arg(long = "epsilon-schedule")]
    pub epsilon_schedule: Option<String>,
    /// Particle count (particle systems and posterior samplers).
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 keeps runs bit-reproducible.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Grid resolution for the oracle.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Paper-scale run: 10^8 likelihood-free iterations, 20000 particles.
    #[arg(long, default_value_t = false)]
    pub full: bool,
    /// Suppress progress lines on standard error.
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

/// Fully-resolved run settings; every field is usable as-is.
#[derive(Debug)]
pub struct RunConfig {
    pub scenario_label: String,
    pub scenario: LinearGaussianScenario,
    pub algo: Algo,
    pub iterations: u64,
    pub thin: u64,
    pub j: usize,
    pub j_delta: Option<f64>,
    pub m: usize,
    pub epsilon: Option<f64>,
    pub schedule: Vec<f64>,
    pub particles: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub resolution: f64,
    pub full: bool,
    pub quiet: bool,
}

impl RunConfig {
    /// Ordered key-value echo of everything that determines the run.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut e = vec![
            ("scenario".into(), self.scenario_label.clone()),
            ("algo".into(), self.algo.name().into()),
            ("iterations".into(), self.iterations.to_string()),
            ("thin".into(), self.thin.to_string()),
            ("J".into(), self.j.to_string()),
        ];
        if let Some(d) = self.j_delta {
            e.push(("J-delta".into(), d.to_string()));
        }
        e.push(("M".into(), self.m.to_string()));
        if let Some(eps) = self.epsilon {
            e.push(("epsilon".into(), eps.to_string()));
        }
        if !self.schedule.is_empty() {
            let s: Vec<String> = self.schedule.iter().map(|v| v.to_string()).collect();
            e.push(("epsilon-schedule".into(), s.join(",")));
        }
        e.push(("particles".into(), self.particles.to_string()));
        e.push(("seed".into(), self.seed.to_string()));
        e.push(("threads".into(), self.threads.to_string()));
        if self.algo == Algo::Oracle {
            e.push(("resolution".into(), self.resolution.to_string()));
        }
        e.push(("full".into(), self.full.to_string()));
        e
    }
}

fn load_scenario(label: &str, errs: &mut Vec<String>) -> Option<LinearGaussianScenario> {
    if let Ok(s) = builtin_scenario(label) {
        return Some(s);
    }
    let path = PathBuf::from(label);
    if !path.exists() {
        errs.push(format!(
            "--scenario: '{label}' is neither a built-in scenario (s1-quadratic, \
             s2-quadratic) nor an existing file"
        ));
        return None;
    }
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            errs.push(format!("--scenario: cannot read '{label}': {e}"));
            return None;
        }
    };
    let def: ScenarioDef = match toml::from_str(&text) {
        Ok(d) => d,
        Err(e) => {
            errs.push(format!("--scenario: '{label}' is not a valid scenario: {e}"));
            return None;
        }
    };
    match LinearGaussianScenario::from_def(def) {
        Ok(s) => Some(s),
        Err(e) => {
            errs.push(format!("--scenario: '{label}': {e}"));
            None
        }
    }
}

fn parse_schedule(text: &str, errs: &mut Vec<String>) -> Vec<f64> {
    let mut vals = Vec::new();
    for part in text.split(',') {
        match part.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => vals.push(v),
            _ => {
                errs.push(format!(
                    "--epsilon-schedule: '{part}' is not a positive finite number"
                ));
                return Vec::new();
            }
        }
    }
    if vals.windows(2).any(|w| w[1] >= w[0]) {
        errs.push(format!(
            "--epsilon-schedule: values must strictly decrease, got {text}"
        ));
    }
    vals
}

/// Applies per-algorithm defaults and reports every violation at once.
pub fn resolve(cli: Cli) -> Result<RunConfig, Vec<String>> {
    let mut errs = Vec::new();
    let scenario = load_scenario(&cli.scenario, &mut errs);

    let algo = cli.algo;
    let iterations = cli.iterations.unwrap_or(match algo {
        Algo::Sir | Algo::Rm | Algo::Smc => 50,
        Algo::LfAugmented if cli.full => 100_000_000,
        _ if cli.full && algo.is_chain() => 1_000_000,
        _ => 100_000,
    });
    let thin = cli.thin.unwrap_or(10);
    let j = cli.j.unwrap_or(match algo {
        Algo::Muller | Algo::LfMcmc | Algo::LfAugmented | Algo::Oracle | Algo::PmcPosterior => 1,
        Algo::Smc => 30,
        Algo::TwoStage => 100,
        _ => 50,
    });
    let j_delta = cli.j_delta.or(match algo {
        Algo::Inhomogeneous => Some(4.0),
        Algo::Sir | Algo::Rm => Some(15.0),
        _ => None,
    });
    let m = cli.m.unwrap_or(1);
    let particles = cli.particles.unwrap_or(match algo {
        Algo::Sir | Algo::Rm | Algo::Smc => 2000,
        _ if cli.full => 20_000,
        _ => 5000,
    });

    if iterations == 0 {
        errs.push("--iterations: must be at least 1".into());
    }
    if thin == 0 {
        errs.push("--thin: must be at least 1".into());
    }
    if j == 0 {
        errs.push("--J: must be at least 1".into());
    }
    if let Some(d) = j_delta {
        if !(d > 0.0) || !d.is_finite() {
            errs.push(format!("--J-delta: must be positive and finite, got {d}"));
        }
    }
    if m == 0 {
        errs.push("--M: must be at least 1".into());
    }
    if algo.needs_epsilon() && cli.epsilon.is_none() {
        errs.push(format!("--epsilon: required for --algo {}", algo.name()));
    }
    if let Some(eps) = cli.epsilon {
        if !(eps > 0.0) || !eps.is_finite() {
            errs.push(format!("--epsilon: must be positive and finite, got {eps}"));
        }
    }
    if particles == 0 {
        errs.push("--particles: must be at least 1".into());
    }
    if cli.threads == 0 {
        errs.push("--threads: must be at least 1".into());
    }

    let schedule = match (&cli.epsilon_schedule, &scenario) {
        (Some(text), _) => parse_schedule(text, &mut errs),
        (None, Some(scen)) if matches!(algo, Algo::PmcPosterior | Algo::TwoStage) => {
            let sigma = scen.sigma2().sqrt();
            [16.0, 8.0, 4.0, 2.0, 1.0].iter().map(|v| v * sigma).collect()
        }
        _ => Vec::new(),
    };

    let resolution = cli.resolution.unwrap_or_else(|| {
        match scenario.as_ref().map(|s| s.region().dim()) {
            Some(1) => 0.01,
            _ => 0.05,
        }
    });
    if !(resolution > 0.0) || !resolution.is_finite() {
        errs.push(format!(
            "--resolution: must be positive and finite, got {resolution}"
        ));
    }

    match (errs.is_empty(), scenario) {
        (true, Some(scenario)) => Ok(RunConfig {
            scenario_label: cli.scenario,
            scenario,
            algo,
            iterations,
            thin,
            j,
            j_delta,
            m,
            epsilon: cli.epsilon,
            schedule,
            particles,
            seed: cli.seed,
            threads: cli.threads,
            out: cli.out,
            resolution,
            full: cli.full,
            quiet: cli.quiet,
        }),
        _ => Err(errs),
    }
}
