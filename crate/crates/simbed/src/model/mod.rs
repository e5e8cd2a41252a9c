//! Model layer: designs, parameters, observations, Gaussian laws, and the
//! conjugate linear-Gaussian scenario used as the analytic test bed.

mod gaussian;
mod linear_gaussian;
mod scenario_file;

pub use gaussian::GaussianLaw;
pub use linear_gaussian::{LinearGaussianScenario, ScenarioDef, UtilityCache, GRID_CELL_LIMIT};
pub use scenario_file::{builtin_scenario, ScenarioFile, BUILTIN_SCENARIOS};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Rectangular design region, one bound pair per trial coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::config("design region must have at least one coordinate"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!(
                    "invalid design bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(DesignRegion { lower, upper })
    }

    /// Same scalar bounds in every coordinate.
    pub fn cube(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        DesignRegion::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.dim()
            && coords
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(c, (lo, hi))| c >= lo && c <= hi)
    }

    pub fn log_volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum()
    }

    /// Uniform draw from the region.
    pub fn sample(&self, rng: &mut Stream) -> Design {
        use rand::Rng;
        let coords = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        Design { coords }
    }
}

/// A design: the controllable coordinates of a future experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    coords: Vec<f64>,
}

impl Design {
    /// Validates every coordinate against the region.
    pub fn new(coords: Vec<f64>, region: &DesignRegion) -> Result<Self> {
        if coords.len() != region.dim() {
            return Err(Error::Dimension {
                expected: region.dim(),
                got: coords.len(),
            });
        }
        for (c, (lo, hi)) in coords.iter().zip(region.lower.iter().zip(&region.upper)) {
            if !(c >= lo && c <= hi) {
                return Err(Error::DesignOutOfBounds {
                    value: *c,
                    lower: *lo,
                    upper: *hi,
                });
            }
        }
        Ok(Design { coords })
    }

    /// Skips region validation. For designs whose coordinates are data
    /// locations of past observations rather than candidates.
    pub fn unchecked(coords: Vec<f64>) -> Self {
        Design { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Parameter vector of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub DVector<f64>);

impl ParamVector {
    pub fn from_vec(v: Vec<f64>) -> Self {
        ParamVector(DVector::from_vec(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Observations tied to the design they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub values: Vec<f64>,
    pub at: Design,
}

impl ObservationSet {
    pub fn new(values: Vec<f64>, at: Design) -> Result<Self> {
        if values.len() != at.dim() {
            return Err(Error::Dimension {
                expected: at.dim(),
                got: values.len(),
            });
        }
        Ok(ObservationSet { values, at })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A model the samplers can draw synthetic data from. This is the minimal
/// contract: likelihood-free algorithms compile against it alone.
pub trait SimulatorModel {
    fn theta_dim(&self) -> usize;

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector;

    fn prior_log_density(&self, theta: &ParamVector) -> f64;

    fn simulate(&self, theta: &ParamVector, at: &Design, rng: &mut Stream) -> ObservationSet;
}

/// A model that can also evaluate its observation density. Required by exact
/// acceptance ratios and by fractional annealing weights.
pub trait DensityModel: SimulatorModel {
    fn log_density(&self, obs: &ObservationSet, theta: &ParamVector) -> f64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_rejects_bad_bounds() {
        assert!(DesignRegion::new(vec![0.0], vec![0.0]).is_err());
        assert!(DesignRegion::new(vec![1.0], vec![-1.0]).is_err());
        assert!(DesignRegion::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(DesignRegion::cube(-1.0, 1.0, 2).is_ok());
    }

    #[test]
    fn design_validates_against_region() {
        let region = DesignRegion::cube(-1.0, 1.0, 2).unwrap();
        assert!(Design::new(vec![0.0, 1.0], &region).is_ok());
        let err = Design::new(vec![0.0, 1.5], &region).unwrap_err();
        assert!(matches!(err, Error::DesignOutOfBounds { .. }));
        let err = Design::new(vec![0.0], &region).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn observations_match_design_dim() {
        let region = DesignRegion::cube(-1.0, 1.0, 2).unwrap();
        let d = Design::new(vec![0.0, 0.5], &region).unwrap();
        assert!(ObservationSet::new(vec![1.0, 2.0], d.clone()).is_ok());
        assert!(ObservationSet::new(vec![1.0], d).is_err());
    }

    #[test]
    fn region_volume_and_membership() {
        let region = DesignRegion::cube(-1.0, 1.0, 2).unwrap();
        assert!((region.log_volume() - (4.0f64).ln()).abs() < 1e-12);
        assert!(region.contains(&[0.0, -1.0]));
        assert!(!region.contains(&[0.0, -1.001]));
        assert!(!region.contains(&[0.0]));
    }
}
