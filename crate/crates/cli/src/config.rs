use std::path::Path;

use anyhow::{ensure, Context, Result};
use qlhyp_core::{EstimateOptions, GridParams, ProblemSpec, SolveOptions};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    #[serde(default)]
    pub numerics: Numerics,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub lambda: Vec<String>,
    pub h: Vec<String>,
    pub u0: Vec<String>,
}

/// Every field falls back to the library default when absent.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dx: Option<f64>,
    pub dt_levels: Option<usize>,
    pub substeps: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub safety_factor: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        let p = &cfg.problem;
        for (what, len) in [("lambda", p.lambda.len()), ("h", p.h.len()), ("u0", p.u0.len())] {
            ensure!(len == p.n, "problem.n = {} but {what} has {len} entries", p.n);
        }
        let num = &cfg.numerics;
        if let Some(dx) = num.dx {
            ensure!(dx > 0.0 && dx.is_finite(), "numerics.dx must be positive, got {dx}");
        }
        ensure!(num.dt_levels != Some(0), "numerics.dt_levels must be at least 1");
        ensure!(num.substeps != Some(0), "numerics.substeps must be at least 1");
        if let Some(tol) = num.tol {
            ensure!(tol > 0.0, "numerics.tol must be positive, got {tol}");
        }
        if let Some(sf) = num.safety_factor {
            ensure!(sf >= 1.0 && sf.is_finite(), "numerics.safety_factor must be at least 1, got {sf}");
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        Ok(ProblemSpec::parse(p.a, p.b, &p.lambda, &p.h, &p.u0)?)
    }

    pub fn grid_params(&self, spec: &ProblemSpec) -> GridParams {
        let d = GridParams::default_for(spec);
        GridParams {
            dx: self.numerics.dx.unwrap_or(d.dx),
            dt_levels: self.numerics.dt_levels.unwrap_or(d.dt_levels),
            substeps: self.numerics.substeps.unwrap_or(d.substeps),
        }
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        let d = EstimateOptions::default();
        EstimateOptions { safety_factor: self.numerics.safety_factor.unwrap_or(d.safety_factor), ..d }
    }

    pub fn solve_options(&self) -> SolveOptions {
        let d = SolveOptions::default();
        SolveOptions {
            tol: self.numerics.tol.unwrap_or(d.tol),
            max_iter: self.numerics.max_iter.unwrap_or(d.max_iter),
            ..d
        }
    }
}
