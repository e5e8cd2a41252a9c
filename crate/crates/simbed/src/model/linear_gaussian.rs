use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Design, DesignRegion, GaussianLaw, ObservationSet, ParamVector};
use super::{DensityModel, SimulatorModel};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::stats::{normal_log_pdf, normal_sample, LN_2PI};

/// Hard cap on grid evaluation work in [`LinearGaussianScenario::grid_search_optimum`].
pub const GRID_CELL_LIMIT: u128 = 5_000_000;

/// Scenario parameters before cache construction. Field meanings follow the
/// polynomial regression model
///
/// ```text
/// z_i = theta' f(d_i) + e_i,   e_i ~ N(0, sigma2),   f(d) = (1, d, .., d^degree),
/// theta ~ N(theta0, sigma2 * R^{-1}),   R = sum_p f(p) f(p)' + ridge * I.
/// ```
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDef {
    pub degree: usize,
    pub sigma2: f64,
    /// Prior mean; empty means zero.
    pub theta0: Vec<f64>,
    /// Abscissae whose feature outer products build the prior information R.
    pub prior_points: Vec<f64>,
    pub ridge: f64,
    /// Designs of observations already in hand.
    pub prior_xi: Vec<f64>,
    /// Values of observations already in hand.
    pub prior_y: Vec<f64>,
    /// Number of future trials a candidate design allocates.
    pub n_trials: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for ScenarioDef {
    fn default() -> Self {
        ScenarioDef {
            degree: 2,
            sigma2: 2.0,
            theta0: Vec::new(),
            prior_points: vec![0.0],
            ridge: 1e-4,
            prior_xi: Vec::new(),
            prior_y: Vec::new(),
            n_trials: 1,
            lower: -1.0,
            upper: 1.0,
        }
    }
}

/// Conjugate linear-Gaussian scenario with closed-form posterior, updated
/// posterior, and expected utility. Serves both as a model for the samplers
/// and as the oracle they are checked against.
#[derive(Debug, Clone)]
pub struct LinearGaussianScenario {
    def: ScenarioDef,
    region: DesignRegion,
    prior_data: Option<ObservationSet>,
    r: DMatrix<f64>,
    /// R theta0 + K' y, the constant part of every posterior solve.
    rhs0: DVector<f64>,
    /// Information of the prior observations, K' K.
    l: DMatrix<f64>,
    prior: GaussianLaw,
    posterior: GaussianLaw,
}

impl LinearGaussianScenario {
    pub fn from_def(def: ScenarioDef) -> Result<Self> {
        if def.degree == 0 && def.prior_points.is_empty() {
            return Err(Error::config("degree 0 with no prior points"));
        }
        if !(def.sigma2 > 0.0) {
            return Err(Error::config(format!("sigma2 must be positive, got {}", def.sigma2)));
        }
        if !(def.ridge > 0.0) {
            return Err(Error::config(format!("ridge must be positive, got {}", def.ridge)));
        }
        if def.n_trials == 0 {
            return Err(Error::config("n_trials must be at least 1"));
        }
        if def.prior_xi.len() != def.prior_y.len() {
            return Err(Error::Dimension {
                expected: def.prior_xi.len(),
                got: def.prior_y.len(),
            });
        }
        let k = def.degree + 1;
        let theta0 = if def.theta0.is_empty() {
            DVector::zeros(k)
        } else if def.theta0.len() == k {
            DVector::from_vec(def.theta0.clone())
        } else {
            return Err(Error::Dimension {
                expected: k,
                got: def.theta0.len(),
            });
        };
        let region = DesignRegion::cube(def.lower, def.upper, def.n_trials)?;

        let mut r = DMatrix::<f64>::identity(k, k) * def.ridge;
        for p in &def.prior_points {
            let f = feature_map(*p, k);
            r += &f * f.transpose();
        }
        let prior = GaussianLaw::from_mean_precision(theta0.clone(), &r / def.sigma2)?;

        let mut l = DMatrix::<f64>::zeros(k, k);
        let mut rhs0 = &r * &theta0;
        let prior_data = if def.prior_xi.is_empty() {
            None
        } else {
            let at = Design::unchecked(def.prior_xi.clone());
            let obs = ObservationSet::new(def.prior_y.clone(), at)?;
            for (xi, y) in def.prior_xi.iter().zip(&def.prior_y) {
                let f = feature_map(*xi, k);
                l += &f * f.transpose();
                rhs0 += f * *y;
            }
            Some(obs)
        };
        let a0 = &l + &r;
        let a0_chol = Cholesky::new(a0.clone()).ok_or(Error::NotPositiveDefinite)?;
        let mean = a0_chol.solve(&rhs0);
        let posterior = GaussianLaw::from_mean_precision(mean, &a0 / def.sigma2)?;

        Ok(LinearGaussianScenario {
            def,
            region,
            prior_data,
            r,
            rhs0,
            l,
            prior,
            posterior,
        })
    }

    pub fn k(&self) -> usize {
        self.def.degree + 1
    }

    pub fn sigma2(&self) -> f64 {
        self.def.sigma2
    }

    pub fn region(&self) -> &DesignRegion {
        &self.region
    }

    pub fn n_trials(&self) -> usize {
        self.def.n_trials
    }

    pub fn def(&self) -> &ScenarioDef {
        &self.def
    }

    pub fn prior_data(&self) -> Option<&ObservationSet> {
        self.prior_data.as_ref()
    }

    /// Prior law of theta.
    pub fn prior(&self) -> &GaussianLaw {
        &self.prior
    }

    /// Posterior after conditioning on the prior observations. Equals the
    /// prior when there are none.
    pub fn posterior(&self) -> &GaussianLaw {
        &self.posterior
    }

    pub fn feature_map(&self, d: f64) -> DVector<f64> {
        feature_map(d, self.k())
    }

    /// Rows are feature vectors at each design coordinate.
    pub fn design_matrix(&self, design: &Design) -> DMatrix<f64> {
        let k = self.k();
        let n = design.dim();
        let mut m = DMatrix::zeros(n, k);
        for (i, d) in design.coords().iter().enumerate() {
            m.row_mut(i).copy_from(&feature_map(*d, k).transpose());
        }
        m
    }

    /// Posterior after the prior observations plus the given extra sets, in
    /// any order.
    pub fn posterior_given(&self, extra: &[&ObservationSet]) -> Result<GaussianLaw> {
        let k = self.k();
        let mut a = &self.l + &self.r;
        let mut rhs = self.rhs0.clone();
        for obs in extra {
            for (d, z) in obs.at.coords().iter().zip(&obs.values) {
                let f = feature_map(*d, k);
                a += &f * f.transpose();
                rhs += f * *z;
            }
        }
        let chol = Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
        let mean = chol.solve(&rhs);
        GaussianLaw::from_mean_precision(mean, &a / self.def.sigma2)
    }

    /// Posterior updated with one future observation set.
    pub fn updated_posterior(&self, z: &ObservationSet) -> Result<GaussianLaw> {
        self.posterior_given(&[z])
    }

    /// Bayesian D-criterion det(M(d) + L + R) where M(d) is the information
    /// of the candidate design.
    pub fn db_criterion(&self, design: &Design) -> Result<f64> {
        Ok(self.utility_cache(design)?.log_det_a().exp())
    }

    /// Closed-form expected Shannon utility of the design, the expectation of
    /// the updated posterior log density at theta.
    pub fn analytic_expected_utility(&self, design: &Design) -> Result<f64> {
        Ok(self.utility_cache(design)?.analytic_expected_utility())
    }

    /// Exhaustive search over an axis-aligned grid with the given resolution.
    /// Ties resolve to the lexicographically smallest design. Errors when the
    /// grid would exceed [`GRID_CELL_LIMIT`] cells.
    pub fn grid_search_optimum(&self, resolution: f64) -> Result<(Design, f64)> {
        if !(resolution > 0.0) {
            return Err(Error::config(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        let n = self.region.dim();
        let mut steps = Vec::with_capacity(n);
        let mut cells: u128 = 1;
        for (lo, hi) in self.region.lower().iter().zip(self.region.upper()) {
            let s = ((hi - lo) / resolution).round().max(1.0) as u128;
            steps.push(s);
            cells = cells.saturating_mul(s + 1);
            if cells > GRID_CELL_LIMIT {
                return Err(Error::GridTooLarge {
                    cells,
                    limit: GRID_CELL_LIMIT,
                });
            }
        }
        let mut idx = vec![0u128; n];
        let mut best: Option<(Vec<f64>, f64)> = None;
        loop {
            let coords: Vec<f64> = idx
                .iter()
                .zip(steps.iter())
                .zip(self.region.lower().iter().zip(self.region.upper()))
                .map(|((i, s), (lo, hi))| lo + (*i as f64) * (hi - lo) / (*s as f64))
                .collect();
            let design = Design::unchecked(coords.clone());
            let value = self.utility_cache(&design)?.log_det_a();
            // Strict improvement keeps the first, lexicographically smallest,
            // design among exact ties. The tolerance absorbs roundoff between
            // permuted but mathematically identical designs.
            let better = match &best {
                None => true,
                Some((_, b)) => value > *b + 1e-12 * value.abs().max(1.0),
            };
            if better {
                best = Some((coords, value));
            }
            // Odometer increment, last coordinate fastest; lexicographic order
            // of visits makes the tie rule deterministic.
            let mut pos = n;
            while pos > 0 {
                pos -= 1;
                if idx[pos] < steps[pos] {
                    idx[pos] += 1;
                    break;
                }
                idx[pos] = 0;
                if pos == 0 {
                    let (coords, _) = best.unwrap();
                    let design = Design::unchecked(coords);
                    let value = self.analytic_expected_utility(&design)?;
                    return Ok((design, value));
                }
            }
        }
    }

    /// Per-design cache for repeated utility evaluations at the same design.
    pub fn utility_cache(&self, design: &Design) -> Result<UtilityCache<'_>> {
        let k = self.k();
        let rows: Vec<DVector<f64>> = design
            .coords()
            .iter()
            .map(|d| feature_map(*d, k))
            .collect();
        let mut a = &self.l + &self.r;
        for f in &rows {
            a += f * f.transpose();
        }
        let chol = Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det_a = chol_log_det(&chol);
        Ok(UtilityCache {
            scen: self,
            rows,
            a,
            chol,
            log_det_a,
        })
    }
}

impl SimulatorModel for LinearGaussianScenario {
    fn theta_dim(&self) -> usize {
        self.k()
    }

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector {
        ParamVector(self.prior.sample(rng))
    }

    fn prior_log_density(&self, theta: &ParamVector) -> f64 {
        self.prior.log_density(&theta.0)
    }

    fn simulate(&self, theta: &ParamVector, at: &Design, rng: &mut Stream) -> ObservationSet {
        let sd = self.def.sigma2.sqrt();
        let values = at
            .coords()
            .iter()
            .map(|d| {
                let mean = self.feature_map(*d).dot(&theta.0);
                normal_sample(mean, sd, rng)
            })
            .collect();
        ObservationSet {
            values,
            at: at.clone(),
        }
    }
}

impl DensityModel for LinearGaussianScenario {
    fn log_density(&self, obs: &ObservationSet, theta: &ParamVector) -> f64 {
        obs.at
            .coords()
            .iter()
            .zip(&obs.values)
            .map(|(d, z)| {
                let mean = self.feature_map(*d).dot(&theta.0);
                normal_log_pdf(*z, mean, self.def.sigma2)
            })
            .sum()
    }
}

/// Everything that depends on the design alone, factored out so block
/// utilities at a fixed design cost one solve each instead of one
/// factorization each.
pub struct UtilityCache<'a> {
    scen: &'a LinearGaussianScenario,
    rows: Vec<DVector<f64>>,
    a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det_a: f64,
}

impl UtilityCache<'_> {
    pub fn log_det_a(&self) -> f64 {
        self.log_det_a
    }

    fn updated_mean(&self, values: &[f64]) -> DVector<f64> {
        let mut rhs = self.scen.rhs0.clone();
        for (f, z) in self.rows.iter().zip(values) {
            rhs += f * *z;
        }
        self.chol.solve(&rhs)
    }

    /// Mean of the updated posterior given simulated values at this design.
    pub fn posterior_mean_given(&self, values: &[f64]) -> DVector<f64> {
        self.updated_mean(values)
    }

    /// Log density of the updated posterior at theta.
    pub fn updated_log_density(&self, values: &[f64], theta: &ParamVector) -> f64 {
        let k = self.scen.k() as f64;
        let m = self.updated_mean(values);
        let d = &theta.0 - &m;
        let quad = (&self.a * &d).dot(&d);
        -0.5 * k * (LN_2PI + self.scen.def.sigma2.ln()) + 0.5 * self.log_det_a
            - quad / (2.0 * self.scen.def.sigma2)
    }

    /// Shannon information gain read off at theta: updated posterior log
    /// density minus prior log density.
    pub fn log_ratio(&self, values: &[f64], theta: &ParamVector) -> f64 {
        self.updated_log_density(values, theta) - self.scen.prior.log_density(&theta.0)
    }

    /// Updated posterior as a full law. Costs a factorization per call.
    pub fn updated_law(&self, values: &[f64]) -> Result<GaussianLaw> {
        GaussianLaw::from_mean_precision(self.updated_mean(values), &self.a / self.scen.def.sigma2)
    }

    /// Expectation of `log_ratio` under the scenario, in closed form up to
    /// the prior entropy term which cancels in comparisons across designs.
    pub fn analytic_expected_utility(&self) -> f64 {
        let k = self.scen.k() as f64;
        -0.5 * k * (LN_2PI + 1.0) + 0.5 * (self.log_det_a - k * self.scen.def.sigma2.ln())
    }
}

pub(crate) fn feature_map(d: f64, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |i, _| d.powi(i as i32))
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
