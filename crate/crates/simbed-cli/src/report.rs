//! Turns a finished run into files: draws, summary, and plot-ready data.

use std::fmt::Write as _;
use std::path::PathBuf;

use simbed::diagnostics::{freq2d, kde, kde_mode, KdeConfig};
use simbed::error::Result;
use simbed::model::DesignRegion;
use simbed::pipeline::{write_atomic, OracleRow, StageReport};

use crate::config::RunConfig;

/// Everything a run produced, normalized across algorithms. Empty fields are
/// simply not written.
pub struct Outcome {
    /// Stored draws with their iteration number: designs for design
    /// algorithms, parameters for posterior chains.
    pub draws: Vec<(u64, Vec<f64>)>,
    /// One utility value per stored draw, when recorded.
    pub utilities: Vec<f64>,
    /// Column labels for the draws, e.g. d_1 or theta_1.
    pub columns: Vec<String>,
    /// Per-draw weights for density estimates; empty means equal.
    pub weights: Vec<f64>,
    pub acceptance_rate: Option<f64>,
    pub iat: Vec<f64>,
    pub ess_final: Option<f64>,
    pub modes: Vec<Vec<f64>>,
    pub posterior: Option<(Vec<Vec<f64>>, Vec<f64>)>,
    pub posterior_mean: Vec<f64>,
    pub oracle: Vec<OracleRow>,
    pub stages: Vec<StageReport>,
    pub warnings: Vec<String>,
    pub frozen: bool,
    pub wall_clock_seconds: f64,
    /// Density support per draw column, for the KDE files.
    pub support: Vec<(f64, f64)>,
}

impl Outcome {
    pub fn empty() -> Self {
        Outcome {
            draws: Vec::new(),
            utilities: Vec::new(),
            columns: Vec::new(),
            weights: Vec::new(),
            acceptance_rate: None,
            iat: Vec::new(),
            ess_final: None,
            modes: Vec::new(),
            posterior: None,
            posterior_mean: Vec::new(),
            oracle: Vec::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
            frozen: false,
            wall_clock_seconds: 0.0,
            support: Vec::new(),
        }
    }

    pub fn design_columns(region: &DesignRegion) -> (Vec<String>, Vec<(f64, f64)>) {
        let cols = (1..=region.dim()).map(|k| format!("d_{k}")).collect();
        let sup = (0..region.dim())
            .map(|k| (region.lower()[k], region.upper()[k]))
            .collect();
        (cols, sup)
    }

    /// Highest-density point of the stored draws: KDE argmax per coordinate,
    /// joint frequency peak in two dimensions.
    pub fn global_mode(&self) -> Vec<f64> {
        if self.draws.len() < 100 {
            return Vec::new();
        }
        let w = if self.weights.is_empty() {
            None
        } else {
            Some(self.weights.as_slice())
        };
        match self.columns.len() {
            2 => {
                let pts: Vec<(f64, f64)> = self.draws.iter().map(|(_, d)| (d[0], d[1])).collect();
                let (sx, sy) = (self.support[0], self.support[1]);
                let bins = (((sx.1 - sx.0) / 0.05).round() as usize).max(2);
                match freq2d(&pts, bins, sx, sy) {
                    Ok(f) => {
                        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
                        for (i, v) in f.rel.iter().enumerate() {
                            if *v > bv {
                                bv = *v;
                                bi = i;
                            }
                        }
                        let wx = (sx.1 - sx.0) / bins as f64;
                        let wy = (sy.1 - sy.0) / bins as f64;
                        vec![
                            sx.0 + ((bi % bins) as f64 + 0.5) * wx,
                            sy.0 + ((bi / bins) as f64 + 0.5) * wy,
                        ]
                    }
                    Err(_) => Vec::new(),
                }
            }
            _ => {
                let mut mode = Vec::new();
                for k in 0..self.columns.len() {
                    let col: Vec<f64> = self.draws.iter().map(|(_, d)| d[k]).collect();
                    let cfg = KdeConfig::auto(self.support[k].0, self.support[k].1);
                    match kde_mode(&col, w, &cfg) {
                        Ok(m) => mode.push(m),
                        Err(_) => return Vec::new(),
                    }
                }
                mode
            }
        }
    }
}

fn fmt_list(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn toml_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Writes every applicable file atomically and returns their paths.
pub fn write_all(cfg: &RunConfig, out: &Outcome) -> Result<Vec<PathBuf>> {
    let dir = &cfg.out;
    let mut written = Vec::new();

    if !out.draws.is_empty() {
        let mut csv = String::from("iter");
        for c in &out.columns {
            csv.push(',');
            csv.push_str(c);
        }
        if !out.utilities.is_empty() {
            csv.push_str(",utility");
        }
        csv.push('\n');
        for (i, (iter, row)) in out.draws.iter().enumerate() {
            let _ = write!(csv, "{iter}");
            for v in row {
                let _ = write!(csv, ",{v}");
            }
            if let Some(u) = out.utilities.get(i) {
                let _ = write!(csv, ",{u}");
            }
            csv.push('\n');
        }
        let path = dir.join("draws.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    if out.draws.len() >= 100 {
        let w = if out.weights.is_empty() {
            None
        } else {
            Some(out.weights.as_slice())
        };
        for (k, name) in out.columns.iter().enumerate() {
            let col: Vec<f64> = out.draws.iter().map(|(_, d)| d[k]).collect();
            let grid = kde(&col, w, &KdeConfig::auto(out.support[k].0, out.support[k].1))?;
            let mut csv = String::from("x,density\n");
            for (x, dens) in grid {
                let _ = writeln!(csv, "{x},{dens}");
            }
            let path = dir.join(format!("kde_{name}.csv"));
            write_atomic(&path, csv.as_bytes())?;
            written.push(path);
        }
        if out.columns.len() == 2 {
            let pts: Vec<(f64, f64)> = out.draws.iter().map(|(_, d)| (d[0], d[1])).collect();
            let (sx, sy) = (out.support[0], out.support[1]);
            let bins = (((sx.1 - sx.0) / 0.05).round() as usize).max(2);
            let f = freq2d(&pts, bins, sx, sy)?;
            let wx = (sx.1 - sx.0) / bins as f64;
            let wy = (sy.1 - sy.0) / bins as f64;
            let mut csv = String::from("cx,cy,relfreq\n");
            for (i, rel) in f.rel.iter().enumerate() {
                if *rel > 0.0 {
                    let cx = sx.0 + ((i % bins) as f64 + 0.5) * wx;
                    let cy = sy.0 + ((i / bins) as f64 + 0.5) * wy;
                    let _ = writeln!(csv, "{cx},{cy},{rel}");
                }
            }
            let path = dir.join("bubble.csv");
            write_atomic(&path, csv.as_bytes())?;
            written.push(path);
        }
    }

    if let Some((thetas, weights)) = &out.posterior {
        let k = thetas.first().map(|t| t.len()).unwrap_or(0);
        let mut csv = String::new();
        for i in 1..=k {
            let _ = write!(csv, "theta_{i},");
        }
        csv.push_str("weight\n");
        for (t, w) in thetas.iter().zip(weights) {
            for v in t {
                let _ = write!(csv, "{v},");
            }
            let _ = writeln!(csv, "{w}");
        }
        let path = dir.join("particles.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    if !out.oracle.is_empty() {
        let n = out.oracle[0].design.len();
        let mut csv = String::new();
        for i in 1..=n {
            let _ = write!(csv, "d_{i},");
        }
        csv.push_str("criterion,expected_utility\n");
        for row in &out.oracle {
            for v in &row.design {
                let _ = write!(csv, "{v},");
            }
            let _ = writeln!(csv, "{},{}", row.criterion, row.expected_utility);
        }
        let path = dir.join("oracle.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }

    let mut s = String::new();
    let _ = writeln!(s, "algo = \"{}\"", cfg.algo.name());
    let _ = writeln!(s, "scenario = \"{}\"", toml_escape(&cfg.scenario_label));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    if let Some(a) = out.acceptance_rate {
        let _ = writeln!(s, "acceptance_rate = {a}");
    }
    if !out.iat.is_empty() {
        let _ = writeln!(s, "iat = {}", fmt_list(&out.iat));
    }
    if let Some(e) = out.ess_final {
        let _ = writeln!(s, "ess_final = {e}");
    }
    let mode = out.global_mode();
    if !mode.is_empty() {
        let _ = writeln!(s, "mode = {}", fmt_list(&mode));
    }
    if !out.modes.is_empty() {
        let parts: Vec<String> = out.modes.iter().map(|m| fmt_list(m)).collect();
        let _ = writeln!(s, "modes = [{}]", parts.join(", "));
    }
    if !out.posterior_mean.is_empty() {
        let _ = writeln!(s, "posterior_mean = {}", fmt_list(&out.posterior_mean));
    }
    let _ = writeln!(s, "frozen = {}", out.frozen);
    let _ = writeln!(s, "wall_clock_seconds = {}", out.wall_clock_seconds);
    if !out.warnings.is_empty() {
        let parts: Vec<String> = out
            .warnings
            .iter()
            .map(|w| format!("\"{}\"", toml_escape(w)))
            .collect();
        let _ = writeln!(s, "warnings = [{}]", parts.join(", "));
    }
    if !out.stages.is_empty() {
        let _ = writeln!(s, "\n[stages]");
        for st in &out.stages {
            let _ = writeln!(
                s,
                "\"{}\" = {}",
                toml_escape(&st.name),
                st.wall_clock.as_secs_f64()
            );
        }
    }
    let _ = writeln!(s, "\n[config]");
    for (k, v) in cfg.echo() {
        let _ = writeln!(s, "\"{}\" = \"{}\"", toml_escape(&k), toml_escape(&v));
    }
    let path = dir.join("summary.toml");
    write_atomic(&path, s.as_bytes())?;
    written.push(path);

    Ok(written)
}
