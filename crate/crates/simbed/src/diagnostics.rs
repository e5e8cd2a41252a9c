//! Chain and density diagnostics: integrated autocorrelation time, kernel
//! density estimates with boundary reflection, and binned 2-D frequencies.

use crate::error::{Error, Result};

pub const MIN_IAT_LEN: usize = 100;

/// Integrated autocorrelation time by the initial monotone positive pair
/// sequence. Pairs of autocovariances are accumulated while their sum stays
/// positive, clipped to be nonincreasing, and the tail is truncated.
pub fn iat_geyer(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < MIN_IAT_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_IAT_LEN,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let gamma = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    loop {
        let lag = 2 * m;
        if lag + 1 >= n {
            break;
        }
        let pair = gamma(lag) + gamma(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let clipped = pair.min(prev);
        sum_pairs += clipped;
        prev = clipped;
        m += 1;
    }
    Ok(-1.0 + 2.0 * sum_pairs / g0)
}

/// Keeps indices 0, k, 2k, .. of the series.
pub fn thin<T: Clone>(xs: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return Err(Error::config("thin factor must be at least 1"));
    }
    Ok(xs.iter().step_by(k).cloned().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// 0.9 min(sd, iqr / 1.34) n^{-1/5}.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    pub grid_points: usize,
    pub support: (f64, f64),
    /// Reflect kernel mass at the support bounds so density is not starved
    /// where the target piles up against a boundary.
    pub reflect: bool,
}

impl KdeConfig {
    pub fn auto(lower: f64, upper: f64) -> Self {
        KdeConfig {
            bandwidth: Bandwidth::Silverman,
            grid_points: 512,
            support: (lower, upper),
            reflect: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_points < 16 {
            return Err(Error::config(format!(
                "kde grid needs at least 16 points, got {}",
                self.grid_points
            )));
        }
        let (lo, hi) = self.support;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!("invalid kde support [{lo}, {hi}]")));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::config(format!("kde bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Gaussian kernel density on an even grid over the support. Weights default
/// to uniform; draws outside the support are clamped onto it. Returns (x,
/// density) pairs.
pub fn kde(draws: &[f64], weights: Option<&[f64]>, cfg: &KdeConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if draws.is_empty() {
        return Err(Error::config("kde needs at least one draw"));
    }
    if let Some(w) = weights {
        if w.len() != draws.len() {
            return Err(Error::Dimension {
                expected: draws.len(),
                got: w.len(),
            });
        }
    }
    let (lo, hi) = cfg.support;
    let g = cfg.grid_points;
    let step = (hi - lo) / (g - 1) as f64;

    let total: f64 = match weights {
        Some(w) => {
            let t: f64 = w.iter().sum();
            if !(t > 0.0) {
                return Err(Error::WeightCollapse);
            }
            t
        }
        None => draws.len() as f64,
    };

    // Linear binning onto grid nodes. Keeps the smoothing pass quadratic in
    // the grid rather than in the sample.
    let mut mass = vec![0.0; g];
    for (i, x) in draws.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]) / total;
        let pos = ((x.clamp(lo, hi)) - lo) / step;
        let left = (pos.floor() as usize).min(g - 1);
        let frac = pos - left as f64;
        mass[left] += w * (1.0 - frac);
        if left + 1 < g {
            mass[left + 1] += w * frac;
        }
    }

    let h = match cfg.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Silverman => {
            let mean: f64 = draws
                .iter()
                .enumerate()
                .map(|(i, x)| weights.map_or(1.0, |w| w[i]) / total * x)
                .sum();
            let var: f64 = draws
                .iter()
                .enumerate()
                .map(|(i, x)| weights.map_or(1.0, |w| w[i]) / total * (x - mean) * (x - mean))
                .sum();
            let sd = var.sqrt();
            let spread = match iqr(draws) {
                Some(r) if r > 0.0 => sd.min(r / 1.34),
                _ => sd,
            };
            let n_eff = match weights {
                Some(w) => {
                    let ss: f64 = w.iter().map(|x| (x / total) * (x / total)).sum();
                    1.0 / ss
                }
                None => draws.len() as f64,
            };
            0.9 * spread * n_eff.powf(-0.2)
        }
    };
    if !(h > 0.0) || !h.is_finite() {
        // Degenerate sample: all mass at one point. Represent it as a spike
        // at the nearest grid node.
        let mut out: Vec<(f64, f64)> = (0..g).map(|i| (lo + i as f64 * step, 0.0)).collect();
        let best = mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        out[best].1 = 1.0 / step;
        return Ok(out);
    }

    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel = |dx: f64| -> f64 {
        let t = dx / h;
        if t.abs() > 8.0 {
            0.0
        } else {
            norm * (-0.5 * t * t).exp()
        }
    };
    let node = |i: usize| lo + i as f64 * step;
    let mut out = Vec::with_capacity(g);
    for i in 0..g {
        let x = node(i);
        let mut dens = 0.0;
        for (j, m) in mass.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let xj = node(j);
            dens += m * kernel(x - xj);
            if cfg.reflect {
                dens += m * (kernel(x - (2.0 * lo - xj)) + kernel(x - (2.0 * hi - xj)));
            }
        }
        out.push((x, dens));
    }
    Ok(out)
}

fn iqr(draws: &[f64]) -> Option<f64> {
    if draws.len() < 4 {
        return None;
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        let idx = p * (sorted.len() - 1) as f64;
        let left = idx.floor() as usize;
        let frac = idx - left as f64;
        if left + 1 < sorted.len() {
            sorted[left] * (1.0 - frac) + sorted[left + 1] * frac
        } else {
            sorted[left]
        }
    };
    Some(q(0.75) - q(0.25))
}

/// Abscissa of the density maximum; exact ties resolve to the smallest.
pub fn kde_mode(draws: &[f64], weights: Option<&[f64]>, cfg: &KdeConfig) -> Result<f64> {
    let grid = kde(draws, weights, cfg)?;
    let mut best = grid[0];
    for point in &grid[1..] {
        if point.1 > best.1 {
            best = *point;
        }
    }
    Ok(best.0)
}

/// All local density maxima whose height clears `frac` of the global
/// maximum, in increasing abscissa order.
pub fn kde_modes_above(
    draws: &[f64],
    weights: Option<&[f64]>,
    cfg: &KdeConfig,
    frac: f64,
) -> Result<Vec<f64>> {
    let grid = kde(draws, weights, cfg)?;
    let peak = grid.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..grid.len() {
        let v = grid[i].1;
        let left_ok = i == 0 || grid[i - 1].1 < v;
        let right_ok = i + 1 == grid.len() || grid[i + 1].1 <= v;
        if left_ok && right_ok && v >= frac * peak && v > 0.0 {
            out.push(grid[i].0);
        }
    }
    Ok(out)
}

/// Binned relative frequencies of paired draws, normalized by the fullest
/// cell.
#[derive(Debug, Clone)]
pub struct Freq2d {
    pub bins: usize,
    pub support_x: (f64, f64),
    pub support_y: (f64, f64),
    /// Row-major, x fastest; values in [0, 1].
    pub rel: Vec<f64>,
}

impl Freq2d {
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (lx, hx) = self.support_x;
        let (ly, hy) = self.support_y;
        let sx = (hx - lx) / self.bins as f64;
        let sy = (hy - ly) / self.bins as f64;
        (lx + (ix as f64 + 0.5) * sx, ly + (iy as f64 + 0.5) * sy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.rel[iy * self.bins + ix]
    }

    /// Cells strictly denser than all eight neighbors and at least `frac` of
    /// the densest cell.
    pub fn modes_above(&self, frac: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for iy in 0..self.bins {
            for ix in 0..self.bins {
                let v = self.at(ix, iy);
                if v < frac || v == 0.0 {
                    continue;
                }
                let mut is_peak = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = ix as i64 + dx;
                        let ny = iy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= self.bins as i64 || ny >= self.bins as i64 {
                            continue;
                        }
                        if self.at(nx as usize, ny as usize) > v {
                            is_peak = false;
                        }
                    }
                }
                if is_peak {
                    out.push(self.cell_center(ix, iy));
                }
            }
        }
        out
    }
}

pub fn freq2d(
    points: &[(f64, f64)],
    bins: usize,
    support_x: (f64, f64),
    support_y: (f64, f64),
) -> Result<Freq2d> {
    if bins < 2 {
        return Err(Error::config("freq2d needs at least 2 bins per axis"));
    }
    if points.is_empty() {
        return Err(Error::config("freq2d needs at least one point"));
    }
    let (lx, hx) = support_x;
    let (ly, hy) = support_y;
    if !(lx < hx) || !(ly < hy) {
        return Err(Error::config("invalid freq2d support"));
    }
    let mut counts = vec![0f64; bins * bins];
    let place = |v: f64, lo: f64, hi: f64| -> usize {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        (t.max(0.0) as usize).min(bins - 1)
    };
    for (x, y) in points {
        let ix = place(*x, lx, hx);
        let iy = place(*y, ly, hy);
        counts[iy * bins + ix] += 1.0;
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    let rel = counts.iter().map(|c| c / max).collect();
    Ok(Freq2d {
        bins,
        support_x,
        support_y,
        rel,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand_distr::Distribution;

    use super::*;
    use crate::rng;

    #[test]
    fn iat_white_noise_is_near_one() {
        let mut r = rng::root(1);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rand_distr::StandardNormal.sample(&mut r))
            .collect();
        let iat = iat_geyer(&xs).unwrap();
        assert!((iat - 1.0).abs() < 0.1, "iat {iat}");
    }

    #[test]
    fn iat_ar1_matches_closed_form() {
        // AR(1) with coefficient rho has IAT (1 + rho) / (1 - rho).
        let rho: f64 = 0.5;
        let mut r = rng::root(2);
        let innovation = (1.0 - rho * rho).sqrt();
        let mut x = 0.0;
        let xs: Vec<f64> = (0..400_000)
            .map(|_| {
                let e: f64 = rand_distr::StandardNormal.sample(&mut r);
                x = rho * x + innovation * e;
                x
            })
            .collect();
        let iat = iat_geyer(&xs).unwrap();
        assert!((iat - 3.0).abs() < 0.3, "iat {iat}");
    }

    #[test]
    fn iat_input_validation() {
        assert!(matches!(
            iat_geyer(&vec![1.0; 99]),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(matches!(
            iat_geyer(&vec![2.5; 500]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn thin_keeps_multiples() {
        let xs: Vec<i32> = (0..10).collect();
        assert_eq!(thin(&xs, 3).unwrap(), vec![0, 3, 6, 9]);
        assert_eq!(thin(&xs, 1).unwrap().len(), 10);
        assert!(thin(&xs, 0).is_err());
    }

    #[test]
    fn kde_integrates_to_one_with_reflection() {
        let mut r = rng::root(3);
        // Mass piled against the upper boundary.
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let e: f64 = rand_distr::StandardNormal.sample(&mut r);
                (1.0 - 0.15 * e.abs()).clamp(-1.0, 1.0)
            })
            .collect();
        let cfg = KdeConfig::auto(-1.0, 1.0);
        let grid = kde(&draws, None, &cfg).unwrap();
        let step = grid[1].0 - grid[0].0;
        let integral: f64 = grid.iter().map(|p| p.1 * step).sum();
        assert_abs_diff_eq!(integral, 1.0, epsilon = 0.02);

        let no_reflect = KdeConfig {
            reflect: false,
            ..cfg.clone()
        };
        let grid2 = kde(&draws, None, &no_reflect).unwrap();
        let integral2: f64 = grid2.iter().map(|p| p.1 * step).sum();
        // Without reflection part of the boundary kernel mass leaks out.
        assert!(integral2 < integral - 0.005, "integrals {integral2} vs {integral}");
    }

    #[test]
    fn kde_mode_recovers_interior_and_boundary_peaks() {
        let mut r = rng::root(4);
        let interior: Vec<f64> = (0..20_000)
            .map(|_| {
                let e: f64 = rand_distr::StandardNormal.sample(&mut r);
                (0.3 + 0.2 * e).clamp(-1.0, 1.0)
            })
            .collect();
        let cfg = KdeConfig::auto(-1.0, 1.0);
        let m = kde_mode(&interior, None, &cfg).unwrap();
        assert_abs_diff_eq!(m, 0.3, epsilon = 0.05);

        let boundary: Vec<f64> = (0..20_000)
            .map(|_| {
                let e: f64 = rand_distr::StandardNormal.sample(&mut r);
                (1.0 - 0.1 * e.abs()).clamp(-1.0, 1.0)
            })
            .collect();
        let m = kde_mode(&boundary, None, &cfg).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 0.02);
    }

    #[test]
    fn kde_weighted_mode_shifts_with_weights() {
        // Two spikes; weights pick the winner.
        let draws = vec![-0.5; 100]
            .into_iter()
            .chain(vec![0.5; 100])
            .collect::<Vec<f64>>();
        let mut weights = vec![1.0; 100];
        weights.extend(vec![3.0; 100]);
        let cfg = KdeConfig {
            bandwidth: Bandwidth::Fixed(0.05),
            ..KdeConfig::auto(-1.0, 1.0)
        };
        let m = kde_mode(&draws, Some(&weights), &cfg).unwrap();
        assert_abs_diff_eq!(m, 0.5, epsilon = 0.02);
    }

    #[test]
    fn kde_modes_above_finds_both_peaks() {
        let mut r = rng::root(5);
        let draws: Vec<f64> = (0..30_000)
            .map(|i| {
                let e: f64 = rand_distr::StandardNormal.sample(&mut r);
                let c = if i % 2 == 0 { -0.6 } else { 0.6 };
                (c + 0.1 * e).clamp(-1.0, 1.0)
            })
            .collect();
        let cfg = KdeConfig::auto(-1.0, 1.0);
        let modes = kde_modes_above(&draws, None, &cfg, 0.5).unwrap();
        assert_eq!(modes.len(), 2, "modes {modes:?}");
        assert_abs_diff_eq!(modes[0], -0.6, epsilon = 0.05);
        assert_abs_diff_eq!(modes[1], 0.6, epsilon = 0.05);
    }

    #[test]
    fn kde_of_constant_sample_spikes_at_value() {
        let draws = vec![0.25; 1_000];
        let cfg = KdeConfig::auto(-1.0, 1.0);
        let m = kde_mode(&draws, None, &cfg).unwrap();
        assert_abs_diff_eq!(m, 0.25, epsilon = 0.01);
    }

    #[test]
    fn kde_validates_config() {
        let draws = vec![0.0; 10];
        let mut cfg = KdeConfig::auto(-1.0, 1.0);
        cfg.grid_points = 8;
        assert!(kde(&draws, None, &cfg).is_err());
        let cfg = KdeConfig {
            bandwidth: Bandwidth::Fixed(0.0),
            ..KdeConfig::auto(-1.0, 1.0)
        };
        assert!(kde(&draws, None, &cfg).is_err());
        let cfg = KdeConfig::auto(1.0, -1.0);
        assert!(kde(&draws, None, &cfg).is_err());
    }

    #[test]
    fn freq2d_normalizes_by_max_cell() {
        let points = vec![(0.5, 0.5), (0.5, 0.5), (-0.5, -0.5)];
        let f = freq2d(&points, 4, (-1.0, 1.0), (-1.0, 1.0)).unwrap();
        let max = f.rel.iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        let sum: f64 = f.rel.iter().sum();
        assert_abs_diff_eq!(sum, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn freq2d_modes_found_at_clusters() {
        let mut points = Vec::new();
        let mut r = rng::root(6);
        for i in 0..4_000 {
            let ex: f64 = rand_distr::StandardNormal.sample(&mut r);
            let ey: f64 = rand_distr::StandardNormal.sample(&mut r);
            let (cx, cy) = if i % 2 == 0 { (0.0, 1.0) } else { (1.0, 0.0) };
            points.push((
                (cx + 0.08 * ex).clamp(-1.0, 1.0),
                (cy + 0.08 * ey).clamp(-1.0, 1.0),
            ));
        }
        let f = freq2d(&points, 41, (-1.0, 1.0), (-1.0, 1.0)).unwrap();
        let modes = f.modes_above(0.5);
        assert!(modes.len() >= 2, "modes {modes:?}");
        for (mx, my) in &modes {
            let near_a = (mx - 0.0).abs() < 0.1 && (my - 1.0).abs() < 0.1;
            let near_b = (mx - 1.0).abs() < 0.1 && (my - 0.0).abs() < 0.1;
            assert!(near_a || near_b, "stray mode at ({mx}, {my})");
        }
    }
}
